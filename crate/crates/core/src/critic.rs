//! Soft Q-function, bootstrapped state value and the soft Bellman residual.
//!
//! The reward for taking `x` after history `h` is the stepwise energy
//! `f(h, x)`. The horizon is finite and undiscounted: the state value after
//! the last step is exactly zero.

use rand::Rng;
use serde::{Deserialize, Serialize};
use timegci_nd::layers::{LstmVars, MlpVars};
use timegci_nd::{polyak_update, Lstm, MlpHead, Module, Tape, Tensor, Var};

use crate::data::Trajectory;
use crate::encode::{self, HistoryState};
use crate::energy::EnergyNet;
use crate::policy::PolicyNet;
use crate::replay::HistorySample;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticNet {
    pub encoder: Lstm,
    /// Scores `concat(hidden, x)`.
    pub head: MlpHead,
}

#[derive(Debug, Clone, Copy)]
pub struct CriticVars {
    pub encoder: LstmVars,
    pub head: MlpVars,
}

impl CriticNet {
    pub fn new(dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            encoder: Lstm::new(dim, hidden, rng),
            head: MlpHead::new(hidden + dim, 32, 1, rng),
        }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            encoder: Lstm::zeros(dim, hidden),
            head: MlpHead::zeros(hidden + dim, 32, 1),
        }
    }

    pub fn dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.hidden_dim()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> CriticVars {
        CriticVars {
            encoder: self.encoder.bind(tape, trainable),
            head: self.head.bind(tape, trainable),
        }
    }

    pub fn init_history(&self, horizon: usize) -> HistoryState {
        HistoryState::init(self.hidden_dim(), horizon)
    }

    pub fn advance(&self, h: &HistoryState, x: &[f64]) -> Result<HistoryState> {
        h.advance(&self.encoder, x)
    }

    pub fn q_value(&self, h: &HistoryState, x: &[f64]) -> Result<f64> {
        let mut input = h.hidden.data().to_vec();
        input.extend_from_slice(x);
        Ok(self.head.apply(&Tensor::row(&input))?.item())
    }

    /// Encoder states `index[i]` of `trajs[i]`, `[B, H]`, without a tape.
    pub fn states(&self, trajs: &[&Trajectory], index: &[usize]) -> Result<Tensor> {
        let steps = index.iter().copied().max().unwrap_or(0);
        let states: Vec<Tensor> = encode::unroll_eval(&self.encoder, trajs, steps)?
            .into_iter()
            .map(|s| s.0)
            .collect();
        Ok(encode::gather(&states, index))
    }

    /// Batched `Q` without a tape.
    pub fn q_batch(&self, trajs: &[&Trajectory], index: &[usize], x: &Tensor) -> Result<Vec<f64>> {
        let h = self.states(trajs, index)?;
        let mut input = Tensor::zeros(&[h.rows(), h.cols() + x.cols()]);
        for r in 0..h.rows() {
            let row = input.row_slice_mut(r);
            row[..h.cols()].copy_from_slice(h.row_slice(r));
            row[h.cols()..].copy_from_slice(x.row_slice(r));
        }
        Ok(self.head.apply(&input)?.into_data())
    }

    /// `Q` on a tape with this critic frozen; gradients flow only into `x`.
    pub fn q_on(&self, tape: &mut Tape, trajs: &[&Trajectory], index: &[usize], x: Var) -> Result<Var> {
        let h = self.states(trajs, index)?;
        let h = tape.constant(h);
        let head = self.head.bind(tape, false);
        let input = tape.concat_cols(&[h, x])?;
        Ok(head.forward(tape, input)?)
    }
}

impl Module for CriticNet {
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

impl CriticVars {
    /// Parameter handles in [`Module::params`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.encoder.vars().to_vec();
        v.extend(self.head.vars());
        v
    }

    /// Trainable `Q(h_t, x)` for state `index[i]` of `trajs[i]`, `[B, 1]`.
    pub fn q(&self, tape: &mut Tape, trajs: &[&Trajectory], index: &[usize], x: &Tensor) -> Result<Var> {
        let steps = index.iter().copied().max().unwrap_or(0);
        let states = encode::unroll(tape, &self.encoder, trajs, steps)?;
        let hidden: Vec<Var> = states.iter().map(|s| s.hidden).collect();
        let h = tape.gather_rows(&hidden, index)?;
        let x = tape.constant(x.clone());
        let input = tape.concat_cols(&[h, x])?;
        Ok(self.head.forward(tape, input)?)
    }
}

/// Lagged copy of the critic used only for bootstrap targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetCritic {
    pub net: CriticNet,
}

impl TargetCritic {
    pub fn from_online(online: &CriticNet) -> Self {
        Self { net: online.clone() }
    }

    pub fn update(&mut self, online: &CriticNet, rate: f64) -> Result<()> {
        polyak_update(self.net.params_mut(), online.params(), rate)?;
        Ok(())
    }
}

/// Single-sample soft value of the history `prefix` (row-major, `t' - 1`
/// steps): `Q_target(h', x') - alpha ln pi(x' | h')` with `x' ~ pi(. | h')`,
/// and exactly zero once the prefix spans the whole horizon.
pub fn soft_state_value(
    target: &TargetCritic,
    policy: &PolicyNet,
    prefix: &[f64],
    horizon: usize,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    Ok(soft_state_value_k(target, policy, prefix, horizon, alpha, 1, rng)?.0)
}

/// Mean and standard error of `k` independent single-sample estimates,
/// drawn as one batch.
pub fn soft_state_value_k(
    target: &TargetCritic,
    policy: &PolicyNet,
    prefix: &[f64],
    horizon: usize,
    alpha: f64,
    k: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let d = policy.dim();
    let len = prefix.len() / d;
    if len >= horizon {
        return Ok((0.0, 0.0));
    }
    let hp = HistoryState::from_prefix(&policy.encoder, prefix, horizon)?;
    let hq = HistoryState::from_prefix(&target.net.encoder, prefix, horizon)?;
    let rep = |h: &Tensor| {
        let mut t = Tensor::zeros(&[k, h.cols()]);
        for r in 0..k {
            t.row_slice_mut(r).copy_from_slice(h.data());
        }
        t
    };
    let (x, lp) = policy.sample_batch(&rep(&hp.hidden), rng)?;
    let hq = rep(&hq.hidden);
    let mut input = Tensor::zeros(&[k, hq.cols() + d]);
    for r in 0..k {
        let row = input.row_slice_mut(r);
        row[..hq.cols()].copy_from_slice(hq.row_slice(r));
        row[hq.cols()..].copy_from_slice(x.row_slice(r));
    }
    let q = target.net.head.apply(&input)?;
    let values: Vec<f64> = q.data().iter().zip(&lp).map(|(q, lp)| q - alpha * lp).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Regression targets `f(h_t, x_t) + V(h_{t+1})` for a batch of transitions.
pub fn bellman_targets(
    target: &TargetCritic,
    policy: &PolicyNet,
    energy: &EnergyNet,
    transitions: &[HistorySample<'_>],
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let trajs: Vec<&Trajectory> = transitions.iter().map(|s| s.trajectory).collect();
    let index: Vec<usize> = transitions.iter().map(|s| s.cutoff - 1).collect();
    let next: Vec<usize> = transitions.iter().map(|s| s.cutoff).collect();
    let actions = encode::step_matrix_at(&trajs, &index);
    let reward = energy.transition_batch(&trajs, &index, &actions)?;

    let steps = next.iter().copied().max().unwrap_or(0);
    let policy_states: Vec<Tensor> = encode::unroll_eval(&policy.encoder, &trajs, steps)?
        .into_iter()
        .map(|s| s.0)
        .collect();
    let (x_next, lp_next) = policy.sample_batch(&encode::gather(&policy_states, &next), rng)?;
    let q_next = target.net.q_batch(&trajs, &next, &x_next)?;
    Ok(transitions
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let v = if s.is_terminal() {
                0.0
            } else {
                q_next[i] - alpha * lp_next[i]
            };
            reward[i] + v
        })
        .collect())
}

/// Mean squared soft Bellman residual; only the online critic is trainable.
pub fn critic_loss_on(
    tape: &mut Tape,
    vars: &CriticVars,
    targets: &[f64],
    transitions: &[HistorySample<'_>],
) -> Result<Var> {
    if transitions.is_empty() {
        return Err(Error::Invalid("critic loss needs a non-empty batch".into()));
    }
    let trajs: Vec<&Trajectory> = transitions.iter().map(|s| s.trajectory).collect();
    let index: Vec<usize> = transitions.iter().map(|s| s.cutoff - 1).collect();
    let actions = encode::step_matrix_at(&trajs, &index);
    let q = vars.q(tape, &trajs, &index, &actions)?;
    let y = tape.constant(Tensor::from_vec(vec![targets.len(), 1], targets.to_vec())?);
    let r = tape.sub(q, y)?;
    let r2 = tape.square(r);
    Ok(tape.mean(r2))
}

pub fn critic_loss(
    net: &CriticNet,
    target: &TargetCritic,
    policy: &PolicyNet,
    energy: &EnergyNet,
    transitions: &[HistorySample<'_>],
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    if transitions.is_empty() {
        return Err(Error::Invalid("critic loss needs a non-empty batch".into()));
    }
    let targets = bellman_targets(target, policy, energy, transitions, alpha, rng)?;
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, false);
    let loss = critic_loss_on(&mut tape, &vars, &targets, transitions)?;
    Ok(tape.value(loss).item())
}
