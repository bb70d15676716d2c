//! When the policy density equals the normalized energy density, the
//! contrastive-loss gradient equals a scaled difference of data and model
//! moments of the energy gradient. Both sides are estimated by Monte Carlo.

use timegci::theory::{gradeq, GradEqConfig};

fn main() -> timegci::Result<()> {
    let r = gradeq(&GradEqConfig::default())?;
    for (name, (c, m)) in ["mean", "log_std", "log_z"].iter().zip(r.contrastive.iter().zip(&r.moment)) {
        println!(
            "{name:<8} contrastive {:+.5} ± {:.5}   moment {:+.5} ± {:.5}",
            c.value, c.std_error, m.value, m.std_error
        );
    }
    Ok(())
}
