//! Perturb one step of a clean sinusoid, let a model continue open-loop from
//! the noisy history and measure how the forecast error grows with the noise
//! scale and the horizon. Trains both models on a small budget first.

use timegci::data::SinesConfig;
use timegci::eval::PerturbConfig;
use timegci::theory::{perturb_suite, PerturbSuiteConfig};
use timegci::trainer::TrainConfig;

fn main() -> timegci::Result<()> {
    let cfg = PerturbSuiteConfig {
        sines: SinesConfig { n: 2000, ..Default::default() },
        train: TrainConfig {
            pretrain_policy_steps: 500,
            pretrain_energy_steps: 300,
            pretrain_critic_steps: 1000,
            max_joint_steps: 300,
            early_stop_interval: 100,
            val_rollouts: 300,
            val_predictor_steps: 300,
            ..TrainConfig::default()
        },
        perturb: PerturbConfig { episodes: 500, ..Default::default() },
        seed: 0,
    };
    let (report, cmp) = perturb_suite(&cfg)?;
    print!("{}{}", cmp.tforcing.to_text("t-forcing"), cmp.timegci.to_text("timegci"));
    print!("{}", report.to_text());
    Ok(())
}
