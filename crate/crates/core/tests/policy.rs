mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use timegci::critic::CriticNet;
use timegci::data::Trajectory;
use timegci::nd::{Adam, AdamConfig, LstmState, Module, Tape, Tensor};
use timegci::policy::{
    actor_loss, actor_loss_on, log_jacobian, mle_loss_on, normal_matrix, squash, squashed_log_prob, PolicyNet,
    PolicyVars, LOG_STD_MAX, LOG_STD_MIN,
};
use timegci::replay::HistorySample;
use timegci::{seeded_rng, Error};

#[test]
fn init_history_is_zero_and_repeatable() {
    let net = PolicyNet::new(3, 8, &mut seeded_rng(0));
    let a = net.init_history(5);
    let b = net.init_history(5);
    assert!(a.hidden.data().iter().all(|&v| v == 0.0));
    assert_eq!(a.t, 1);
    assert_eq!(a, b);
    let x = [0.2, 0.5, 0.9];
    assert_eq!(net.advance(&a, &x).unwrap(), net.advance(&b, &x).unwrap());
}

#[test]
fn advance_is_one_lstm_step_from_zero() {
    let net = PolicyNet::new(2, 6, &mut seeded_rng(1));
    let x = [0.3, 0.7];
    let h = net.advance(&net.init_history(4), &x).unwrap();
    let mut tape = Tape::new();
    let vars = net.encoder.bind(&mut tape, false);
    let input = tape.constant(Tensor::row(&x));
    let zero = vars.zero_state(&mut tape, 1);
    let LstmState { hidden, cell } = vars.step(&mut tape, input, zero).unwrap();
    assert_eq!(tape.value(hidden), &h.hidden);
    assert_eq!(tape.value(cell), &h.cell);
    assert_eq!(h.t, 2);
}

#[test]
fn history_is_order_sensitive() {
    let net = PolicyNet::new(1, 8, &mut seeded_rng(2));
    let h0 = net.init_history(3);
    let ab = net.advance(&net.advance(&h0, &[0.2]).unwrap(), &[0.8]).unwrap();
    let ba = net.advance(&net.advance(&h0, &[0.8]).unwrap(), &[0.2]).unwrap();
    assert_ne!(ab.hidden, ba.hidden);
}

#[test]
fn advancing_past_the_horizon_fails() {
    let net = PolicyNet::new(1, 4, &mut seeded_rng(3));
    let mut h = net.init_history(3);
    for _ in 0..3 {
        h = net.advance(&h, &[0.5]).unwrap();
    }
    assert!(matches!(net.advance(&h, &[0.5]), Err(Error::HorizonExceeded(_))));
}

#[test]
fn zero_head_gives_bias_and_clamped_log_std() {
    let mut net = PolicyNet::zeros(2, 4);
    net.head.output_bias_mut().data_mut().copy_from_slice(&[0.3, -0.4, 7.0, -9.0]);
    let (mean, log_std) = net.action_dist(&net.init_history(2)).unwrap();
    assert_eq!(mean, vec![0.3, -0.4]);
    assert_eq!(log_std, vec![LOG_STD_MAX, LOG_STD_MIN]);
}

#[test]
fn action_dist_is_finite_for_random_histories() {
    let mut rng = seeded_rng(4);
    let net = PolicyNet::new(3, 8, &mut rng);
    let mut h = net.init_history(10);
    for _ in 0..10 {
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(0.001..0.999)).collect();
        h = net.advance(&h, &x).unwrap();
        let (m, s) = net.action_dist(&h).unwrap();
        assert!(m.iter().chain(&s).all(|v| v.is_finite()));
    }
}

#[test]
fn tiny_std_samples_squashed_mean() {
    let mut net = PolicyNet::zeros(1, 4);
    net.head.output_bias_mut().data_mut().copy_from_slice(&[0.4, LOG_STD_MIN - 10.0]);
    let mut rng = seeded_rng(5);
    let (x, _) = net.sample_action(&net.init_history(1), &mut rng).unwrap();
    assert!((x[0] - squash(0.4)).abs() < 1e-2 * (1.0 - squash(0.4).powi(2)) + 1e-3);
}

#[test]
fn latent_sample_mean_matches() {
    let mut net = PolicyNet::zeros(1, 4);
    let (mean, log_std) = (0.3, 0.2f64.ln());
    net.head.output_bias_mut().data_mut().copy_from_slice(&[mean, log_std]);
    let mut rng = seeded_rng(6);
    let n = 100_000;
    let hidden = Tensor::zeros(&[n, 4]);
    let (x, _) = net.sample_batch(&hidden, &mut rng).unwrap();
    let zbar = x.data().iter().map(|&v| timegci::policy::unsquash(v)).sum::<f64>() / n as f64;
    assert!((zbar - mean).abs() <= 3.0 * 0.2 / (n as f64).sqrt(), "{zbar}");
}

#[test]
fn sample_log_prob_matches_log_density() {
    let mut rng = seeded_rng(7);
    let net = PolicyNet::new(3, 8, &mut rng);
    let mut h = net.init_history(6);
    for _ in 0..6 {
        let (x, lp) = net.sample_action(&h, &mut rng).unwrap();
        assert!((net.log_density(&h, &x).unwrap() - lp).abs() <= 1e-10);
        h = net.advance(&h, &x).unwrap();
    }
}

#[test]
fn boundary_values_have_no_density() {
    let net = PolicyNet::new(2, 4, &mut seeded_rng(8));
    let h = net.init_history(2);
    assert!(matches!(net.log_density(&h, &[0.0, 0.5]), Err(Error::Boundary { .. })));
    assert!(net.log_density(&h, &[0.5, 1.0]).is_err());
}

/// Midpoint rule in latent space; the squash Jacobian turns `dx` into `dz`.
fn quadrature(net: &PolicyNet, h: &timegci::encode::HistoryState) -> f64 {
    let (mean, log_std) = net.action_dist(h).unwrap();
    let (lo, hi) = (mean[0] - 12.0 * log_std[0].exp(), mean[0] + 12.0 * log_std[0].exp());
    let n = 40_000;
    let dz = (hi - lo) / n as f64;
    (0..n)
        .map(|i| {
            let z = lo + (i as f64 + 0.5) * dz;
            let x = squash(z);
            if x <= 0.0 || x >= 1.0 {
                return 0.0;
            }
            (net.log_density(h, &[x]).unwrap() + log_jacobian(z)).exp() * dz
        })
        .sum()
}

#[test]
fn density_integrates_to_one() {
    let mut rng = seeded_rng(9);
    for _ in 0..10 {
        let net = PolicyNet::new(1, 6, &mut rng);
        let mut h = net.init_history(4);
        for _ in 0..rng.gen_range(0..4) {
            h = net.advance(&h, &[rng.gen_range(0.05..0.95)]).unwrap();
        }
        let total = quadrature(&net, &h);
        assert!((total - 1.0).abs() <= 1e-3, "{total}");
    }
}

#[test]
fn direct_grid_quadrature_in_data_space() {
    let mut net = PolicyNet::zeros(1, 4);
    net.head.output_bias_mut().data_mut().copy_from_slice(&[0.2, 0.5f64.ln()]);
    let h = net.init_history(1);
    let n = 200_000;
    let dx = 1.0 / n as f64;
    let total: f64 = (0..n)
        .map(|i| net.log_density(&h, &[(i as f64 + 0.5) * dx]).unwrap().exp() * dx)
        .sum();
    assert!((total - 1.0).abs() <= 1e-3, "{total}");
}

#[test]
fn base_gaussian_term_is_symmetric() {
    let (m, s) = (0.4, -0.3);
    for d in [0.1, 0.7, 2.0] {
        let a = squashed_log_prob(m + d, m, s) + log_jacobian(m + d);
        let b = squashed_log_prob(m - d, m, s) + log_jacobian(m - d);
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn rollouts_are_interior_and_seeded() {
    let net = PolicyNet::new(3, 8, &mut seeded_rng(10));
    let (a, _) = net.rollout(24, &mut seeded_rng(11)).unwrap();
    let (b, _) = net.rollout(24, &mut seeded_rng(11)).unwrap();
    assert_eq!(a, b);
    assert!(a.values().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn teacher_forced_log_prob_matches_rollout() {
    let mut rng = seeded_rng(12);
    for horizon in [1, 5, 24] {
        let net = PolicyNet::new(3, 8, &mut rng);
        let (traj, lps) = net.rollout(horizon, &mut rng).unwrap();
        let forced = net.log_prob_trajectories(&[&traj]).unwrap()[0];
        let total: f64 = lps.iter().sum();
        assert!((forced - total).abs() <= 1e-10, "T={horizon}: {forced} vs {total}");
    }
}

#[test]
fn mle_training_lowers_the_loss() {
    let data = sines(50, 24, 5, 13);
    let batch = refs(data.trajectories());
    let mut rng = seeded_rng(14);
    let mut net = PolicyNet::new(5, 16, &mut rng);
    let mut adam = Adam::new(AdamConfig::with_lr(1e-3));
    let initial = net.mle_loss(&batch).unwrap();
    for _ in 0..200 {
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape, true);
        let loss = mle_loss_on(&mut tape, &vars, &batch).unwrap();
        let g = tape.backward(loss).unwrap();
        let grads: Vec<Tensor> = vars.vars().iter().map(|&v| g.wrt(v)).collect();
        adam.step(net.params_mut(), &grads).unwrap();
    }
    assert!(net.mle_loss(&batch).unwrap() < initial);
}

#[test]
fn mle_loss_ignores_batch_duplication() {
    let data = sines(6, 8, 2, 15);
    let net = PolicyNet::new(2, 8, &mut seeded_rng(16));
    let once = refs(data.trajectories());
    let twice: Vec<&Trajectory> = once.iter().chain(&once).copied().collect();
    assert!((net.mle_loss(&once).unwrap() - net.mle_loss(&twice).unwrap()).abs() < 1e-12);
}

#[test]
fn mean_and_density_gradients() {
    let mut rng = seeded_rng(17);
    let net = PolicyNet::new(2, 4, &mut rng);
    let data = sines(3, 4, 2, 18);
    let trajs = refs(data.trajectories());
    // mean head output at a non-trivial history
    let err = module_grad_error(&net, |n, tape| {
        let vars = n.bind(tape, true);
        let states = timegci::encode::unroll(tape, &vars.encoder, &trajs, 2).unwrap();
        let (mean, _) = vars.dist(tape, states[2].hidden).unwrap();
        let w = tape.constant(tensor(3, 2, vec![0.3, -1.1, 0.7, 0.2, 1.5, -0.4]));
        let m = tape.mul(mean, w).unwrap();
        (tape.sum(m), vars.vars())
    });
    assert!(err <= GRAD_TOL, "mean: {err}");
    // log density of fixed data
    let x = tensor(3, 2, vec![0.2, 0.9, 0.5, 0.4, 0.05, 0.6]);
    let err = module_grad_error(&net, |n, tape| {
        let vars = n.bind(tape, true);
        let states = timegci::encode::unroll(tape, &vars.encoder, &trajs, 3).unwrap();
        let lp = vars.log_prob_data(tape, states[3].hidden, &x).unwrap();
        (tape.sum(lp), vars.vars())
    });
    assert!(err <= GRAD_TOL, "log density: {err}");
    let err = module_grad_error(&net, |n, tape| {
        let vars = n.bind(tape, true);
        (mle_loss_on(tape, &vars, &trajs).unwrap(), vars.vars())
    });
    assert!(err <= GRAD_TOL, "mle: {err}");
}

#[test]
fn actor_gradient_with_frozen_noise() {
    let mut rng = seeded_rng(19);
    let net = PolicyNet::new(2, 4, &mut rng);
    let critic = CriticNet::new(2, 4, &mut rng);
    let data = sines(4, 5, 2, 20);
    let hist: Vec<HistorySample> = data
        .trajectories()
        .iter()
        .zip([1, 3, 5, 2])
        .map(|(t, c)| HistorySample::new(t, c))
        .collect();
    let eps = normal_matrix(hist.len(), 2, &mut rng);
    let err = module_grad_error(&net, |n, tape| {
        let vars = n.bind(tape, true);
        (actor_loss_on(tape, &vars, &critic, &hist, 0.2, &eps).unwrap(), vars.vars())
    });
    assert!(err <= GRAD_TOL, "actor: {err}");
}

#[test]
fn actor_loss_with_zero_critic_is_scaled_log_prob() {
    let mut rng = seeded_rng(21);
    let net = PolicyNet::new(2, 4, &mut rng);
    let critic = CriticNet::zeros(2, 4);
    let data = sines(8, 5, 2, 22);
    let hist: Vec<HistorySample> = data.trajectories().iter().map(|t| HistorySample::new(t, 1)).collect();
    let eps = normal_matrix(hist.len(), 2, &mut rng);
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, false);
    let loss = actor_loss_on(&mut tape, &vars, &critic, &hist, 0.5, &eps).unwrap();
    let h = tape.constant(Tensor::zeros(&[hist.len(), 4]));
    let (_, lp) = vars.reparam_sample(&mut tape, h, &eps).unwrap();
    let mean_lp = tape.value(lp).data().iter().sum::<f64>() / hist.len() as f64;
    assert!((tape.value(loss).item() - 0.5 * mean_lp).abs() < 1e-12);
}

#[test]
fn constant_critic_without_entropy_gives_no_gradient() {
    let mut rng = seeded_rng(23);
    let net = PolicyNet::new(2, 4, &mut rng);
    let mut critic = CriticNet::zeros(2, 4);
    critic.head.output_bias_mut().data_mut()[0] = 3.0;
    let data = sines(16, 5, 2, 24);
    let hist: Vec<HistorySample> = data.trajectories().iter().map(|t| HistorySample::new(t, 3)).collect();
    let eps = normal_matrix(hist.len(), 2, &mut rng);
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, true);
    let loss = actor_loss_on(&mut tape, &vars, &critic, &hist, 0.0, &eps).unwrap();
    assert!((tape.value(loss).item() + 3.0).abs() < 1e-12);
    let g = tape.backward(loss).unwrap();
    let norm: f64 = vars.vars().iter().map(|&v| g.wrt(v).norm()).sum();
    assert!(norm < 1e-12, "{norm}");
    assert!(actor_loss(&net, &critic, &hist, 0.0, &mut rng).is_ok());
}

/// Monte Carlo entropy of the data-space conditionals after actor-only training
/// against a fixed random critic.
fn entropy_after_actor_training(alpha: f64) -> f64 {
    let mut rng = seeded_rng(25);
    let mut net = PolicyNet::new(1, 8, &mut rng);
    let critic = CriticNet::new(1, 8, &mut rng);
    let data = sines(64, 4, 1, 26);
    let mut adam = Adam::new(AdamConfig::with_lr(1e-2));
    for _ in 0..500 {
        let hist: Vec<HistorySample> = data
            .trajectories()
            .iter()
            .map(|t| HistorySample::new(t, rng.gen_range(1..=4)))
            .collect();
        let eps = normal_matrix(hist.len(), 1, &mut rng);
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape, true);
        let loss = actor_loss_on(&mut tape, &vars, &critic, &hist, alpha, &eps).unwrap();
        let g = tape.backward(loss).unwrap();
        let grads: Vec<Tensor> = vars.vars().iter().map(|&v| g.wrt(v)).collect();
        adam.step(net.params_mut(), &grads).unwrap();
    }
    let mut total = 0.0;
    let mut count = 0.0;
    for traj in data.trajectories() {
        let mut h = net.init_history(4);
        for t in 0..4 {
            for _ in 0..50 {
                total -= net.sample_action(&h, &mut rng).unwrap().1;
                count += 1.0;
            }
            h = net.advance(&h, traj.step(t)).unwrap();
        }
    }
    total / count
}

#[test]
fn larger_alpha_keeps_wider_policies() {
    let s: Vec<f64> = [0.05, 0.2, 1.0].iter().map(|&a| entropy_after_actor_training(a)).collect();
    assert!(s[0] < s[1] && s[1] < s[2], "{s:?}");
}

#[test]
fn empty_batches_are_rejected() {
    let net = PolicyNet::new(1, 4, &mut seeded_rng(27));
    let critic = CriticNet::zeros(1, 4);
    assert!(net.mle_loss(&[]).is_err());
    assert!(actor_loss(&net, &critic, &[], 0.2, &mut seeded_rng(0)).is_err());
}

#[test]
fn latent_log_prob_on_tape_matches_scalar_formula() {
    let mut tape = Tape::new();
    let (m, s, z) = (0.1, -0.7, 1.3);
    let mv = tape.constant(Tensor::scalar(m));
    let sv = tape.constant(Tensor::scalar(s));
    let zv = tape.constant(Tensor::scalar(z));
    let lp = PolicyVars::log_prob_latent(&mut tape, mv, sv, zv).unwrap();
    assert!((tape.value(lp).item() - squashed_log_prob(z, m, s)).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sample_and_density_agree(seed in 0u64..10_000, dim in 1usize..4, steps in 1usize..6) {
        let mut rng = seeded_rng(seed);
        let net = PolicyNet::new(dim, 4, &mut rng);
        let (traj, lps) = net.rollout(steps, &mut rng).unwrap();
        let mut h = net.init_history(steps);
        for (t, lp) in lps.iter().enumerate() {
            let d = net.log_density(&h, traj.step(t)).unwrap();
            prop_assert!((d - lp).abs() <= 1e-10);
            h = net.advance(&h, traj.step(t)).unwrap();
        }
    }
}
