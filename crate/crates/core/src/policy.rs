//! The transition policy `pi(x | h)`: an LSTM history encoder feeding a
//! squashed-Gaussian head.
//!
//! A latent `z ~ N(mean, diag(std^2))` is mapped onto the open unit cube by
//! `x = (tanh(z) + 1) / 2`, and densities carry the exact change-of-variable
//! correction, so `pi(. | h)` is a proper density on `(0, 1)^D`.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use timegci_nd::layers::{LstmVars, MlpVars};
use timegci_nd::{softplus, Lstm, MlpHead, Module, Tape, Tensor, Var};

use crate::critic::CriticNet;
use crate::data::{Trajectory, BOUNDARY_EPS};
use crate::encode::{self, HistoryState};
use crate::replay::HistorySample;
use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Samples are drawn with `|z|` at most this, so every generated value stays
/// inside the same `[eps, 1 - eps]` band that real data is clipped into.
pub fn z_limit() -> f64 {
    (1.0 - 2.0 * BOUNDARY_EPS).atanh()
}

pub fn squash(z: f64) -> f64 {
    (z.tanh() + 1.0) / 2.0
}

pub fn unsquash(x: f64) -> f64 {
    (2.0 * x - 1.0).atanh()
}

/// `ln |dx/dz|` for `x = (tanh(z) + 1) / 2`.
pub fn log_jacobian(z: f64) -> f64 {
    LN_2 - 2.0 * z - 2.0 * softplus(-2.0 * z)
}

/// Log-density of `x = squash(z)` for one feature.
pub fn squashed_log_prob(z: f64, mean: f64, log_std: f64) -> f64 {
    let u = (z - mean) * (-log_std).exp();
    -0.5 * u * u - log_std - 0.5 * (2.0 * PI).ln() - log_jacobian(z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub encoder: Lstm,
    /// Emits `2 D` values: the means, then the unclamped log-stds.
    pub head: MlpHead,
}

/// A [`PolicyNet`] placed on a tape.
#[derive(Debug, Clone, Copy)]
pub struct PolicyVars {
    pub encoder: LstmVars,
    pub head: MlpVars,
    dim: usize,
}

impl PolicyNet {
    pub fn new(dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            encoder: Lstm::new(dim, hidden, rng),
            head: MlpHead::new(hidden, 32, 2 * dim, rng),
        }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            encoder: Lstm::zeros(dim, hidden),
            head: MlpHead::zeros(hidden, 32, 2 * dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.hidden_dim()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> PolicyVars {
        PolicyVars {
            encoder: self.encoder.bind(tape, trainable),
            head: self.head.bind(tape, trainable),
            dim: self.dim(),
        }
    }

    pub fn init_history(&self, horizon: usize) -> HistoryState {
        HistoryState::init(self.hidden_dim(), horizon)
    }

    pub fn advance(&self, h: &HistoryState, x: &[f64]) -> Result<HistoryState> {
        h.advance(&self.encoder, x)
    }

    /// Means and clamped log-stds for a `[B, H]` batch of encoder states.
    pub fn dist_batch(&self, hidden: &Tensor) -> Result<(Tensor, Tensor)> {
        let out = self.head.apply(hidden)?;
        let (b, d) = (out.rows(), self.dim());
        let mut mean = Tensor::zeros(&[b, d]);
        let mut log_std = Tensor::zeros(&[b, d]);
        for r in 0..b {
            let row = out.row_slice(r);
            mean.row_slice_mut(r).copy_from_slice(&row[..d]);
            for (dst, &v) in log_std.row_slice_mut(r).iter_mut().zip(&row[d..]) {
                *dst = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
            }
        }
        Ok((mean, log_std))
    }

    pub fn action_dist(&self, h: &HistoryState) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mean, log_std) = self.dist_batch(&h.hidden)?;
        Ok((mean.into_data(), log_std.into_data()))
    }

    /// One reparameterized draw per row; returns `[B, D]` values and per-row log-densities.
    pub fn sample_batch(&self, hidden: &Tensor, rng: &mut impl Rng) -> Result<(Tensor, Vec<f64>)> {
        let (mean, log_std) = self.dist_batch(hidden)?;
        let lim = z_limit();
        let mut x = Tensor::zeros(mean.shape());
        let mut log_probs = Vec::with_capacity(mean.rows());
        for r in 0..mean.rows() {
            let mut lp = 0.0;
            for (j, slot) in x.row_slice_mut(r).iter_mut().enumerate() {
                let (m, s) = (mean.get(r, j), log_std.get(r, j));
                let eps: f64 = rng.sample(StandardNormal);
                let z = (m + s.exp() * eps).clamp(-lim, lim);
                *slot = squash(z);
                lp += squashed_log_prob(z, m, s);
            }
            log_probs.push(lp);
        }
        Ok((x, log_probs))
    }

    pub fn sample_action(&self, h: &HistoryState, rng: &mut impl Rng) -> Result<(Vec<f64>, f64)> {
        let (x, lp) = self.sample_batch(&h.hidden, rng)?;
        Ok((x.into_data(), lp[0]))
    }

    /// Exact `ln pi(x | h)`; `x` must lie strictly inside the unit cube.
    pub fn log_density(&self, h: &HistoryState, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!("action of length {} for D = {}", x.len(), self.dim())));
        }
        let (mean, log_std) = self.action_dist(h)?;
        let mut lp = 0.0;
        for (j, &v) in x.iter().enumerate() {
            let z = checked_unsquash(v, h.t, j)?;
            lp += squashed_log_prob(z, mean[j], log_std[j]);
        }
        Ok(lp)
    }

    /// Open-loop generation of one trajectory and its per-step log-densities.
    pub fn rollout(&self, horizon: usize, rng: &mut impl Rng) -> Result<(Trajectory, Vec<f64>)> {
        Ok(self.rollout_batch(1, horizon, rng)?.pop().expect("one rollout"))
    }

    /// `n` rollouts advanced together. Row `i` consumes the generator before
    /// row `i + 1` at every step, so `n = 1` reproduces [`PolicyNet::rollout`].
    pub fn rollout_batch(&self, n: usize, horizon: usize, rng: &mut impl Rng) -> Result<Vec<(Trajectory, Vec<f64>)>> {
        if horizon == 0 {
            return Err(Error::Invalid("rollout horizon must be >= 1".into()));
        }
        let h = self.hidden_dim();
        let state = (Tensor::zeros(&[n, h]), Tensor::zeros(&[n, h]));
        let (steps, log_probs) = self.continue_batch(state, horizon, rng)?;
        let d = self.dim();
        (0..n)
            .map(|i| {
                let mut values = Vec::with_capacity(horizon * d);
                for s in &steps {
                    values.extend_from_slice(s.row_slice(i));
                }
                let lps = log_probs.iter().map(|lp| lp[i]).collect();
                Ok((Trajectory::new(horizon, d, values)?, lps))
            })
            .collect()
    }

    pub fn sample_trajectories(&self, n: usize, horizon: usize, rng: &mut impl Rng) -> Result<Vec<Trajectory>> {
        Ok(self.rollout_batch(n, horizon, rng)?.into_iter().map(|(t, _)| t).collect())
    }

    /// Samples `steps` further values from encoder state `(hidden, cell)`,
    /// feeding each draw back in. Returns one `[B, D]` matrix per step.
    pub fn continue_batch(
        &self,
        state: (Tensor, Tensor),
        steps: usize,
        rng: &mut impl Rng,
    ) -> Result<(Vec<Tensor>, Vec<Vec<f64>>)> {
        let (mut hidden, mut cell) = state;
        let mut xs = Vec::with_capacity(steps);
        let mut lps = Vec::with_capacity(steps);
        for k in 0..steps {
            let (x, lp) = self.sample_batch(&hidden, rng)?;
            if k + 1 < steps {
                (hidden, cell) = self.encoder.step_eval(&x, &hidden, &cell)?;
            }
            xs.push(x);
            lps.push(lp);
        }
        Ok((xs, lps))
    }

    /// Teacher-forced `ln pi(x_t | h_t)` for every step of every trajectory.
    pub fn step_log_probs(&self, trajs: &[&Trajectory]) -> Result<Vec<Vec<f64>>> {
        let Some(first) = trajs.first() else {
            return Ok(Vec::new());
        };
        let horizon = first.horizon();
        let states = encode::unroll_eval(&self.encoder, trajs, horizon - 1)?;
        let mut out = vec![Vec::with_capacity(horizon); trajs.len()];
        for (t, (hidden, _)) in states.iter().enumerate() {
            let (mean, log_std) = self.dist_batch(hidden)?;
            for (i, tr) in trajs.iter().enumerate() {
                let mut lp = 0.0;
                for (j, &v) in tr.step(t).iter().enumerate() {
                    let z = checked_unsquash(v, t + 1, j)?;
                    lp += squashed_log_prob(z, mean.get(i, j), log_std.get(i, j));
                }
                out[i].push(lp);
            }
        }
        Ok(out)
    }

    /// `ln p(tau)` for each trajectory.
    pub fn log_prob_trajectories(&self, trajs: &[&Trajectory]) -> Result<Vec<f64>> {
        Ok(self.step_log_probs(trajs)?.iter().map(|s| s.iter().sum()).collect())
    }

    /// Negative mean teacher-forced log-likelihood per step.
    pub fn mle_loss(&self, batch: &[&Trajectory]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let loss = mle_loss_on(&mut tape, &vars, batch)?;
        Ok(tape.value(loss).item())
    }
}

impl Module for PolicyNet {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.head.params_mut());
        p
    }
}

fn checked_unsquash(v: f64, step: usize, feature: usize) -> Result<f64> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::Boundary { step, feature, value: v });
    }
    Ok(unsquash(v))
}

impl PolicyVars {
    /// Parameter handles in [`Module::params`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.encoder.vars().to_vec();
        v.extend(self.head.vars());
        v
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `(mean, clamped log_std)`, each `[B, D]`.
    pub fn dist(&self, tape: &mut Tape, hidden: Var) -> Result<(Var, Var)> {
        let out = self.head.forward(tape, hidden)?;
        let mean = tape.slice_cols(out, 0, self.dim)?;
        let raw = tape.slice_cols(out, self.dim, self.dim)?;
        Ok((mean, tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX)))
    }

    /// Per-row `ln pi` of the squashed value of latent `z`, `[B, 1]`.
    pub fn log_prob_latent(tape: &mut Tape, mean: Var, log_std: Var, z: Var) -> Result<Var> {
        let inv_std = tape.neg(log_std);
        let inv_std = tape.exp(inv_std);
        let diff = tape.sub(z, mean)?;
        let u = tape.mul(diff, inv_std)?;
        let u2 = tape.square(u);
        let base = tape.scale(u2, -0.5);
        let base = tape.sub(base, log_std)?;
        let base = tape.add_scalar(base, -0.5 * (2.0 * PI).ln());
        // ln|dx/dz| = ln 2 - 2z - 2 softplus(-2z)
        let m2z = tape.scale(z, -2.0);
        let sp = tape.softplus(m2z);
        let sp = tape.scale(sp, -2.0);
        let jac = tape.add(m2z, sp)?;
        let jac = tape.add_scalar(jac, LN_2);
        let per = tape.sub(base, jac)?;
        Ok(tape.sum_cols(per))
    }

    /// Per-row `ln pi(x | h)` for fixed data `x` strictly inside the unit cube.
    pub fn log_prob_data(&self, tape: &mut Tape, hidden: Var, x: &Tensor) -> Result<Var> {
        let mut z = Tensor::zeros(x.shape());
        for r in 0..x.rows() {
            for (j, (dst, &v)) in z.row_slice_mut(r).iter_mut().zip(x.row_slice(r)).enumerate() {
                *dst = checked_unsquash(v, r, j)?;
            }
        }
        let (mean, log_std) = self.dist(tape, hidden)?;
        let z = tape.constant(z);
        Self::log_prob_latent(tape, mean, log_std, z)
    }

    /// Reparameterized draw `z = mean + std * eps` with fixed noise `eps`.
    /// Returns the squashed sample `[B, D]` and its log-density `[B, 1]`.
    pub fn reparam_sample(&self, tape: &mut Tape, hidden: Var, eps: &Tensor) -> Result<(Var, Var)> {
        let (mean, log_std) = self.dist(tape, hidden)?;
        let std = tape.exp(log_std);
        let eps = tape.constant(eps.clone());
        let noise = tape.mul(std, eps)?;
        let z = tape.add(mean, noise)?;
        let lim = z_limit();
        let z = tape.clamp(z, -lim, lim);
        let t = tape.tanh(z);
        let t = tape.add_scalar(t, 1.0);
        let x = tape.scale(t, 0.5);
        let lp = Self::log_prob_latent(tape, mean, log_std, z)?;
        Ok((x, lp))
    }
}

/// Teacher-forced negative log-likelihood, averaged over `M * T` steps.
pub fn mle_loss_on(tape: &mut Tape, vars: &PolicyVars, batch: &[&Trajectory]) -> Result<Var> {
    let Some(first) = batch.first() else {
        return Err(Error::Invalid("mle loss needs a non-empty batch".into()));
    };
    let horizon = first.horizon();
    let states = encode::unroll(tape, &vars.encoder, batch, horizon - 1)?;
    let hidden: Vec<Var> = states.iter().map(|s| s.hidden).collect();
    let stacked = tape.concat_rows(&hidden)?;
    let xs: Vec<Tensor> = (0..horizon).map(|t| encode::step_matrix(batch, t)).collect();
    let mut x = Tensor::zeros(&[horizon * batch.len(), vars.dim]);
    for (t, m) in xs.iter().enumerate() {
        let off = t * batch.len();
        x.data_mut()[off * vars.dim..(off + batch.len()) * vars.dim].copy_from_slice(m.data());
    }
    let lp = vars.log_prob_data(tape, stacked, &x)?;
    let mean = tape.mean(lp);
    Ok(tape.neg(mean))
}

/// Soft policy-improvement objective `mean(alpha ln pi(x|h) - Q(h, x))` with
/// one reparameterized action per history. The critic is recorded as
/// constants, so gradients reach only the policy.
pub fn actor_loss_on(
    tape: &mut Tape,
    vars: &PolicyVars,
    critic: &CriticNet,
    histories: &[HistorySample<'_>],
    alpha: f64,
    eps: &Tensor,
) -> Result<Var> {
    if histories.is_empty() {
        return Err(Error::Invalid("actor loss needs a non-empty batch".into()));
    }
    let trajs: Vec<&Trajectory> = histories.iter().map(|h| h.trajectory).collect();
    let index: Vec<usize> = histories.iter().map(|h| h.cutoff - 1).collect();
    let steps = index.iter().copied().max().unwrap_or(0);

    let states = encode::unroll(tape, &vars.encoder, &trajs, steps)?;
    let hidden: Vec<Var> = states.iter().map(|s| s.hidden).collect();
    let h = tape.gather_rows(&hidden, &index)?;
    let (x, log_prob) = vars.reparam_sample(tape, h, eps)?;

    let q = critic.q_on(tape, &trajs, &index, x)?;
    let ent = tape.scale(log_prob, alpha);
    let obj = tape.sub(ent, q)?;
    Ok(tape.mean(obj))
}

/// Evaluates [`actor_loss_on`] with fresh standard-normal noise.
pub fn actor_loss(
    net: &PolicyNet,
    critic: &CriticNet,
    histories: &[HistorySample<'_>],
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let eps = normal_matrix(histories.len(), net.dim(), rng);
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, false);
    let loss = actor_loss_on(&mut tape, &vars, critic, histories, alpha, &eps)?;
    Ok(tape.value(loss).item())
}

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_vec(vec![rows, cols], data).expect("noise shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn jacobian_matches_direct_formula() {
        for z in [-6.0, -1.3, 0.0, 0.4, 5.5] {
            let direct = ((1.0 - f64::tanh(z).powi(2)) / 2.0).ln();
            assert!((log_jacobian(z) - direct).abs() < 1e-9, "{z}");
        }
        // stays finite where the direct form underflows
        assert!(log_jacobian(400.0).is_finite());
    }

    #[test]
    fn zero_head_gives_bias() {
        let mut net = PolicyNet::zeros(2, 8);
        net.head.output_bias_mut().data_mut().copy_from_slice(&[0.3, -0.2, -9.0, 4.0]);
        let (m, s) = net.action_dist(&net.init_history(5)).unwrap();
        assert_eq!(m, vec![0.3, -0.2]);
        assert_eq!(s, vec![-5.0, 2.0]);
    }

    #[test]
    fn boundary_values_rejected() {
        let mut rng = seeded_rng(0);
        let net = PolicyNet::new(1, 8, &mut rng);
        let h = net.init_history(3);
        assert!(matches!(net.log_density(&h, &[1.0]), Err(Error::Boundary { .. })));
        assert!(net.log_density(&h, &[0.0]).is_err());
        assert!(net.log_density(&h, &[0.5]).is_ok());
    }

    #[test]
    fn horizon_limits_advance() {
        let mut rng = seeded_rng(1);
        let net = PolicyNet::new(1, 8, &mut rng);
        let mut h = net.init_history(3);
        for _ in 0..3 {
            h = net.advance(&h, &[0.5]).unwrap();
        }
        assert!(matches!(net.advance(&h, &[0.5]), Err(Error::HorizonExceeded(3))));
    }
}
