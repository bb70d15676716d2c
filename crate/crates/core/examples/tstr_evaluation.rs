//! Train-on-synthetic, test-on-real: fit a teacher-forcing model, sample from
//! it and score the samples against held-out real data, next to the
//! real-on-real reference.

use timegci::data::{generate_sines, Dataset, Normalizer, SinesConfig};
use timegci::eval::{evaluate, EvalReport, PredictorConfig};
use timegci::trainer::{train, Method, TrainConfig};

fn main() -> timegci::Result<()> {
    let raw = generate_sines(&SinesConfig { n: 3000, ..Default::default() }, 1)?;
    let (test, train_raw) = raw.split(0.2, 1)?;
    let norm = Normalizer::fit(&train_raw)?;
    let cfg = TrainConfig {
        pretrain_policy_steps: 1500,
        max_joint_steps: 0,
        ..TrainConfig::default()
    };
    let out = train(cfg, Method::TForcing, &norm.apply_dataset(&train_raw)?, norm.clone())?;

    let mut rng = timegci::seeded_rng(2);
    let synth = out.best.state.policy.sample_trajectories(train_raw.len(), raw.horizon(), &mut rng)?;
    let synth = norm.invert_dataset(&Dataset::new("synthetic", synth)?)?;
    let pcfg = PredictorConfig::default();
    let report = EvalReport {
        dataset: "sines".into(),
        rows: vec![
            evaluate("real", &train_raw, &test, &pcfg, 0)?,
            evaluate("t-forcing", &synth, &test, &pcfg, 0)?,
        ],
        runtime_secs: 0.0,
    };
    print!("{}", report.to_text());
    Ok(())
}
