use timegci::data::{generate_sines, Dataset, Normalizer, SinesConfig};
use timegci::energy::classifier_prob;
use timegci::eval::{predictive_score, PredictorConfig};
use timegci::nd::{Module, Tensor};
use timegci::trainer::{train, Checkpoint, Event, Method, Stage, TrainConfig, Trainer};
use timegci::{seeded_rng, Error};

/// Normalized Sines data and its normalizer.
fn sines(n: usize, horizon: usize, seed: u64) -> (Dataset, Normalizer) {
    let raw = generate_sines(&SinesConfig { n, horizon, dim: 5, ..Default::default() }, seed).unwrap();
    let norm = Normalizer::fit(&raw).unwrap();
    (norm.apply_dataset(&raw).unwrap(), norm)
}

fn small(pp: usize, pe: usize, pc: usize, joint: usize) -> TrainConfig {
    TrainConfig {
        pretrain_policy_steps: pp,
        pretrain_energy_steps: pe,
        pretrain_critic_steps: pc,
        max_joint_steps: joint,
        hidden_size: 16,
        buffer_capacity: 512,
        early_stop_interval: 10,
        val_rollouts: 100,
        val_predictor_steps: 50,
        ..TrainConfig::default()
    }
}

/// Losses of every pretraining event of `stage`.
fn stage_losses(trainer: &mut Trainer, stage: Stage) -> Vec<f64> {
    let mut out = Vec::new();
    loop {
        match trainer.advance().unwrap() {
            Event::Pretrain { stage: s, loss, .. } if s == stage => out.push(loss),
            Event::Pretrain { .. } => {}
            _ => return out,
        }
        if trainer.state.stage != stage && !out.is_empty() {
            return out;
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn defaults_are_the_published_hyperparameters() {
    let c = TrainConfig::default();
    assert_eq!(c.batch_size, 64);
    assert_eq!((c.lr_energy, c.lr_policy, c.lr_critic, c.lr_discrim), (1e-4, 1e-4, 1e-3, 1e-3));
    assert_eq!((c.alpha, c.polyak_rate), (1.0, 0.005));
    assert_eq!(c.buffer_capacity, 10_000);
    assert_eq!(
        (c.pretrain_policy_steps, c.pretrain_energy_steps, c.pretrain_critic_steps, c.max_joint_steps),
        (2000, 4000, 20_000, 50_000)
    );
    assert_eq!(c.early_stop_interval, 1000);
    assert_eq!((c.kappa, c.rollouts_per_iter, c.critic_updates_per_actor_update), (0.1, 16, 4));
    c.validate().unwrap();
}

#[test]
fn config_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    let mut cfg = small(1, 2, 3, 4);
    cfg.kappa = f64::INFINITY;
    std::fs::write(&path, format!("# comment\n{}", cfg.to_text())).unwrap();
    assert_eq!(TrainConfig::load(&path).unwrap(), cfg);
    std::fs::write(&path, "lr_policy = -1").unwrap();
    assert!(matches!(TrainConfig::load(&path), Err(Error::Config(_))));
}

#[test]
fn stages_run_in_order() {
    let (data, norm) = sines(200, 8, 1);
    let cfg = TrainConfig { early_stop_interval: 3, ..small(3, 2, 4, 5) };
    let mut trainer = Trainer::new(cfg.clone(), Method::TimeGci, &data, norm.clone()).unwrap();
    let mut seen = Vec::new();
    trainer
        .run(|_, e| {
            seen.push(match e {
                Event::Pretrain { stage, .. } => format!("{stage:?}"),
                Event::Joint { .. } => "Joint".into(),
                Event::Finished => "Finished".into(),
            });
            Ok(())
        })
        .unwrap();
    let expect: Vec<String> = [("PretrainPolicy", 3), ("PretrainEnergy", 2), ("PretrainCritic", 4), ("Joint", 5), ("Finished", 1)]
        .iter()
        .flat_map(|&(s, n)| std::iter::repeat_n(s.to_string(), n))
        .collect();
    assert_eq!(seen, expect);

    let mut tf = Trainer::new(cfg, Method::TForcing, &data, norm).unwrap();
    let mut stages = Vec::new();
    tf.run(|t, e| {
        if !matches!(e, Event::Finished) {
            stages.push(t.state.stage);
        }
        assert!(t.contrastive().is_none());
        Ok(())
    })
    .unwrap();
    assert_eq!(stages.iter().filter(|&&s| s == Stage::Joint).count(), 5);
    assert!(!stages.contains(&Stage::PretrainEnergy) && !stages.contains(&Stage::PretrainCritic));
}

#[test]
fn policy_pretraining_fits_the_marginals() {
    let (data, norm) = sines(1000, 24, 2);
    let cfg = TrainConfig { hidden_size: 32, ..small(1500, 0, 0, 0) };
    let mut trainer = Trainer::new(cfg, Method::TForcing, &data, norm).unwrap();
    let losses = stage_losses(&mut trainer, Stage::PretrainPolicy);
    assert_eq!(losses.len(), 1500);
    assert!(mean(&losses[1400..]) < mean(&losses[..100]));

    let rollouts = trainer.policy().sample_trajectories(2000, 24, &mut seeded_rng(3)).unwrap();
    let synth = Dataset::new("s", rollouts).unwrap().feature_means();
    for (s, d) in synth.iter().zip(data.feature_means()) {
        assert!((s - d).abs() <= 0.15, "{s} vs {d}");
    }
}

#[test]
fn training_is_seed_deterministic() {
    let (data, norm) = sines(200, 8, 4);
    let run = |seed| {
        let cfg = TrainConfig { seed, ..small(20, 10, 10, 10) };
        let out = train(cfg, Method::TimeGci, &data, norm.clone()).unwrap();
        out.last.state
    };
    let a = run(5);
    assert_eq!(a, run(5));
    assert_ne!(a.policy, run(6).policy);
}

#[test]
fn energy_pretraining_beats_chance() {
    let (data, norm) = sines(2000, 12, 7);
    let mut trainer = Trainer::new(small(600, 1500, 0, 0), Method::TimeGci, &data, norm.clone()).unwrap();
    stage_losses(&mut trainer, Stage::PretrainPolicy);
    let losses = stage_losses(&mut trainer, Stage::PretrainEnergy);
    assert!(mean(&losses[losses.len() - 200..]) <= 2.0 * 2f64.ln() + 0.01, "{}", mean(&losses[losses.len() - 200..]));

    let held_out = {
        let raw = generate_sines(&SinesConfig { n: 500, horizon: 12, dim: 5, ..Default::default() }, 8).unwrap();
        norm.apply_dataset(&raw).unwrap().map(|t| Ok(t.clipped(1e-6))).unwrap()
    };
    let policy = trainer.policy();
    let energy = &trainer.contrastive().unwrap().energy;
    let fakes = policy.sample_trajectories(500, 12, &mut seeded_rng(9)).unwrap();
    let mut correct = 0;
    for t in held_out.trajectories() {
        correct += (classifier_prob(energy, policy, t).unwrap() > 0.5) as usize;
    }
    for t in &fakes {
        correct += (classifier_prob(energy, policy, t).unwrap() < 0.5) as usize;
    }
    let accuracy = correct as f64 / 1000.0;
    assert!(accuracy > 0.55, "{accuracy}");
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn critic_pretraining_reduces_the_bellman_residual() {
    let (data, norm) = sines(500, 8, 10);
    let mut trainer = Trainer::new(small(200, 500, 3000, 0), Method::TimeGci, &data, norm).unwrap();
    stage_losses(&mut trainer, Stage::PretrainPolicy);
    stage_losses(&mut trainer, Stage::PretrainEnergy);
    let mut losses = Vec::new();
    let mut target_to_final = Vec::new();
    let mut targets = Vec::new();
    loop {
        match trainer.advance().unwrap() {
            Event::Pretrain { stage: Stage::PretrainCritic, loss, .. } => {
                losses.push(loss);
                if losses.len() % 100 == 1 {
                    targets.push(trainer.contrastive().unwrap().target.net.flat_params());
                }
            }
            _ => break,
        }
    }
    let chunks: Vec<f64> = losses.chunks(100).map(mean).collect();
    assert!(chunks.last() < chunks.first(), "{chunks:?}");
    let online = trainer.contrastive().unwrap().critic.flat_params();
    for t in &targets {
        target_to_final.push(distance(t, &online));
    }
    let last = trainer.contrastive().unwrap().target.net.flat_params();
    target_to_final.push(distance(&last, &online));
    assert!(target_to_final.last() < target_to_final.first(), "{target_to_final:?}");
    assert!(target_to_final.windows(2).filter(|w| w[1] < w[0]).count() >= target_to_final.len() * 3 / 4);
}

#[test]
fn one_step_critic_converges_to_the_energy() {
    let (data, norm) = sines(500, 1, 11);
    let cfg = TrainConfig { hidden_size: 8, ..small(100, 0, 4000, 0) };
    let mut trainer = Trainer::new(cfg, Method::TimeGci, &data, norm).unwrap();
    trainer.run(|_, _| Ok(())).unwrap();
    let cs = trainer.contrastive().unwrap();
    let (h_q, h_f) = (cs.critic.init_history(1), cs.energy.init_history(1));
    let mut worst: f64 = 0.0;
    for t in trainer.policy().sample_trajectories(200, 1, &mut seeded_rng(12)).unwrap() {
        let x = t.step(0);
        let err = cs.critic.q_value(&h_q, x).unwrap() - cs.energy.transition_energy(&h_f, x).unwrap();
        worst = worst.max(err.abs());
    }
    assert!(worst <= 0.05, "{worst}");
}

#[test]
fn resuming_from_a_checkpoint_continues_bit_exactly() {
    let (data, norm) = sines(300, 8, 13);
    let cfg = small(10, 10, 10, 40);
    let mut a = Trainer::new(cfg, Method::TimeGci, &data, norm).unwrap();
    while a.state.joint_step < 15 {
        a.advance().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    a.checkpoint().save(&path).unwrap();
    let restored = Checkpoint::load(&path).unwrap();
    assert_eq!(restored, a.checkpoint());
    let mut b = Trainer::from_state(restored.state, &data).unwrap();

    let mut compared = 0;
    loop {
        let (ea, eb) = (a.advance().unwrap(), b.advance().unwrap());
        match (&ea, &eb) {
            (Event::Joint { metrics: Some(ma), .. }, Event::Joint { metrics: Some(mb), .. }) => {
                for (x, y) in [
                    (ma.loss_actor.unwrap(), mb.loss_actor.unwrap()),
                    (ma.loss_energy.unwrap(), mb.loss_energy.unwrap()),
                    (ma.loss_critic.unwrap(), mb.loss_critic.unwrap()),
                    (ma.loss_mle, mb.loss_mle),
                    (ma.val_predictive_score, mb.val_predictive_score),
                ] {
                    assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
                }
                compared += 1;
            }
            _ => assert_eq!(ea, eb),
        }
        if ea == Event::Finished {
            break;
        }
    }
    assert!(compared >= 2);
    assert_eq!(a.checkpoint(), b.checkpoint());
}

#[test]
fn updates_touch_only_their_own_parameters() {
    let (data, norm) = sines(300, 8, 14);
    let cfg = TrainConfig { check_isolation: true, early_stop_patience: 0, ..small(5, 5, 5, 301) };
    let mut trainer = Trainer::new(cfg, Method::TimeGci, &data, norm).unwrap();
    trainer.run(|_, _| Ok(())).unwrap();
    assert_eq!(trainer.state.joint_step, 301);
}

#[test]
fn early_stopping_keeps_the_best_validation() {
    let (data, norm) = sines(300, 8, 15);
    let cfg = TrainConfig { early_stop_patience: 2, ..small(5, 5, 5, 200) };
    let out = train(cfg, Method::TimeGci, &data, norm).unwrap();
    let scores: Vec<f64> = out.metrics.iter().map(|m| m.val_predictive_score).collect();
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(out.best.state.best_val, Some(min));
    let best = Trainer::from_state(out.best.state.clone(), &data).unwrap();
    assert_eq!(best.validation_score().unwrap(), min);
    let stale = scores.len() - 1 - scores.iter().position(|&s| s == min).unwrap();
    assert!(stale <= 2);
    if out.last.state.joint_step < 200 {
        assert_eq!(stale, 2);
    }
}

#[test]
fn infinite_kappa_reduces_to_teacher_forcing() {
    let raw = generate_sines(&SinesConfig { n: 2000, horizon: 12, dim: 5, ..Default::default() }, 16).unwrap();
    let (test, train_raw) = raw.split(0.25, 1).unwrap();
    let norm = Normalizer::fit(&train_raw).unwrap();
    let data = norm.apply_dataset(&train_raw).unwrap();
    let base = TrainConfig { early_stop_interval: 1000, ..small(500, 0, 0, 500) };
    let score = |method, kappa| {
        let cfg = TrainConfig { kappa, ..base.clone() };
        let out = train(cfg, method, &data, norm.clone()).unwrap();
        if method == Method::TimeGci {
            let cs = out.last.state.contrastive.as_ref().unwrap();
            let fresh = Trainer::new(base.clone(), method, &data, norm.clone()).unwrap();
            // energy and critic are never updated in this limit
            assert_eq!(cs.energy, fresh.contrastive().unwrap().energy);
            assert_eq!(cs.critic, fresh.contrastive().unwrap().critic);
        }
        let st = &out.last.state;
        let synth = st.policy.sample_trajectories(2000, 12, &mut seeded_rng(17)).unwrap();
        let synth = norm.invert_dataset(&Dataset::new("s", synth).unwrap()).unwrap();
        let cfg = PredictorConfig { steps: 2000, ..Default::default() };
        predictive_score(&synth, &test, 1, &cfg, 18).unwrap()
    };
    let (gci, tf) = (score(Method::TimeGci, f64::INFINITY), score(Method::TForcing, 0.1));
    assert!((gci - tf).abs() <= 0.01, "{gci} vs {tf}");
}

#[test]
fn non_finite_losses_abort_with_their_name() {
    let (data, norm) = sines(200, 8, 19);
    let mut t = Trainer::new(small(5, 5, 5, 5), Method::TimeGci, &data, norm.clone()).unwrap();
    t.state.policy.head.output_bias_mut().data_mut()[0] = f64::NAN;
    let err = t.advance().unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { loss: "mle", step: 0 }), "{err}");
    assert!(err.to_string().contains("mle"));

    let mut t = Trainer::new(small(0, 5, 5, 5), Method::TimeGci, &data, norm).unwrap();
    t.state.contrastive.as_mut().unwrap().energy.log_z = Tensor::scalar(f64::NAN);
    let err = t.advance().unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { loss: "energy", .. }), "{err}");
}

#[test]
fn checkpoints_reject_mismatched_data() {
    let (data, norm) = sines(200, 8, 20);
    let t = Trainer::new(small(1, 1, 1, 1), Method::TForcing, &data, norm).unwrap();
    let bytes = t.checkpoint().to_bytes().unwrap();
    assert_eq!(bytes[0], timegci::trainer::CHECKPOINT_VERSION);
    let state = Checkpoint::from_bytes(&bytes).unwrap().state;
    let (other, _) = sines(200, 6, 21);
    assert!(Trainer::from_state(state, &other).is_err());
}
