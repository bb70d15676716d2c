//! Save a run mid-way, restore it, and check that both copies continue
//! identically.

use timegci::data::{generate_sines, Normalizer, SinesConfig};
use timegci::trainer::{Checkpoint, Event, Method, TrainConfig, Trainer};

fn main() -> timegci::Result<()> {
    let raw = generate_sines(&SinesConfig { n: 300, horizon: 8, ..Default::default() }, 0)?;
    let norm = Normalizer::fit(&raw)?;
    let data = norm.apply_dataset(&raw)?;
    let cfg = TrainConfig {
        pretrain_policy_steps: 20,
        pretrain_energy_steps: 20,
        pretrain_critic_steps: 20,
        max_joint_steps: 30,
        hidden_size: 16,
        early_stop_interval: 10,
        val_rollouts: 100,
        val_predictor_steps: 50,
        ..TrainConfig::default()
    };
    let mut a = Trainer::new(cfg, Method::TimeGci, &data, norm)?;
    while a.state.joint_step < 10 {
        a.advance()?;
    }
    let path = std::env::temp_dir().join("timegci-example.ckpt");
    a.checkpoint().save(&path)?;
    let mut b = Trainer::from_state(Checkpoint::load(&path)?.state, &data)?;
    loop {
        let (ea, eb) = (a.advance()?, b.advance()?);
        assert_eq!(ea, eb);
        if ea == Event::Finished {
            break;
        }
    }
    println!("identical after resume: {}", a.checkpoint() == b.checkpoint());
    Ok(())
}
