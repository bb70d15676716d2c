//! Train a small generator on Sines and print the stage losses and the
//! validation curve. Pass `tforcing` to train the maximum-likelihood baseline.
//!
//! cargo run --release --example train -- [timegci|tforcing]

use timegci::data::{generate_sines, Normalizer, SinesConfig};
use timegci::trainer::{Event, Method, TrainConfig, Trainer};

fn main() -> timegci::Result<()> {
    let method: Method = std::env::args().nth(1).as_deref().unwrap_or("timegci").parse()?;
    let raw = generate_sines(&SinesConfig { n: 2000, ..Default::default() }, 0)?;
    let norm = Normalizer::fit(&raw)?;
    let data = norm.apply_dataset(&raw)?;
    let cfg = TrainConfig {
        pretrain_policy_steps: 500,
        pretrain_energy_steps: 300,
        pretrain_critic_steps: 1000,
        max_joint_steps: 300,
        early_stop_interval: 100,
        val_rollouts: 300,
        val_predictor_steps: 300,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg, method, &data, norm)?;
    loop {
        match trainer.advance()? {
            Event::Pretrain { stage, step, loss } if (step + 1) % 100 == 0 => {
                println!("{stage:?} {:>5} loss {loss:.4}", step + 1)
            }
            Event::Joint { step, metrics: Some(m), improved } => println!(
                "joint {step:>5} val {:.4}{} mle {:.3}",
                m.val_predictive_score,
                if improved { " *" } else { "" },
                m.loss_mle
            ),
            Event::Finished => break,
            _ => {}
        }
    }
    if let (Some(v), Some(s)) = (trainer.state.best_val, trainer.state.best_step) {
        println!("best validation score {v:.4} at step {s}");
    }
    Ok(())
}
