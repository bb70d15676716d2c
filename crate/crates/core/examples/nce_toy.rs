//! Fit an energy model to a two-step analytic source by logistic
//! discrimination against a fixed noise policy, and compare the fitted
//! normalized energy with the true log-density on a grid.

use timegci::theory::{fit_nce, NceConfig};

fn main() -> timegci::Result<()> {
    let (_, r) = fit_nce(&NceConfig::default())?;
    println!("r² {:.4}, slope {:.4}, final loss {:.4}, log Z {:.4}", r.r_squared, r.slope, r.final_loss, r.log_z);
    Ok(())
}
