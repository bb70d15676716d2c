//! Stepwise energy `f(h, x)`, trajectory energy `F(tau) = sum_t f(h_t, x_t)`,
//! the learnable log-partition and the structured real-vs-synthetic
//! classifier built from them.
//!
//! The classifier's log-odds are `F(tau) - log Z - ln p(tau)` where `p` is the
//! policy's trajectory density. Everything is kept in log space.

use rand::Rng;
use serde::{Deserialize, Serialize};
use timegci_nd::layers::{LstmVars, MlpVars};
use timegci_nd::{sigmoid, Lstm, MlpHead, Module, Tape, Tensor, Var};

use crate::data::Trajectory;
use crate::encode::{self, HistoryState};
use crate::policy::PolicyNet;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyNet {
    pub encoder: Lstm,
    /// Scores `concat(hidden, x)`.
    pub head: MlpHead,
    /// `[1, 1]` learnable log-partition.
    pub log_z: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct EnergyVars {
    pub encoder: LstmVars,
    pub head: MlpVars,
    pub log_z: Var,
}

impl EnergyNet {
    pub fn new(dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            encoder: Lstm::new(dim, hidden, rng),
            head: MlpHead::new(hidden + dim, 32, 1, rng),
            log_z: Tensor::scalar(0.0),
        }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            encoder: Lstm::zeros(dim, hidden),
            head: MlpHead::zeros(hidden + dim, 32, 1),
            log_z: Tensor::scalar(0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.hidden_dim()
    }

    pub fn log_z(&self) -> f64 {
        self.log_z.item()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> EnergyVars {
        EnergyVars {
            encoder: self.encoder.bind(tape, trainable),
            head: self.head.bind(tape, trainable),
            log_z: if trainable {
                tape.param(self.log_z.clone())
            } else {
                tape.constant(self.log_z.clone())
            },
        }
    }

    pub fn init_history(&self, horizon: usize) -> HistoryState {
        HistoryState::init(self.hidden_dim(), horizon)
    }

    pub fn advance(&self, h: &HistoryState, x: &[f64]) -> Result<HistoryState> {
        h.advance(&self.encoder, x)
    }

    /// `f(h, x)` for one history state built by this network's encoder.
    pub fn transition_energy(&self, h: &HistoryState, x: &[f64]) -> Result<f64> {
        let input = concat_rows_cols(&h.hidden, &Tensor::row(x))?;
        Ok(self.head.apply(&input)?.item())
    }

    /// `f(h_t, x)` where `h_t` for row `i` is state `index[i]` of `trajs[i]`.
    pub fn transition_batch(&self, trajs: &[&Trajectory], index: &[usize], x: &Tensor) -> Result<Vec<f64>> {
        let steps = index.iter().copied().max().unwrap_or(0);
        let states: Vec<Tensor> = encode::unroll_eval(&self.encoder, trajs, steps)?
            .into_iter()
            .map(|s| s.0)
            .collect();
        let h = encode::gather(&states, index);
        Ok(self.head.apply(&concat_rows_cols(&h, x)?)?.into_data())
    }

    pub fn trajectory_energy(&self, traj: &Trajectory) -> Result<f64> {
        Ok(self.trajectory_energies(&[traj])?[0])
    }

    /// Teacher-forced `F(tau)` for each trajectory.
    pub fn trajectory_energies(&self, trajs: &[&Trajectory]) -> Result<Vec<f64>> {
        let Some(first) = trajs.first() else {
            return Ok(Vec::new());
        };
        self.check_shape(first)?;
        let horizon = first.horizon();
        let states = encode::unroll_eval(&self.encoder, trajs, horizon - 1)?;
        let mut energy = vec![0.0; trajs.len()];
        for (t, (hidden, _)) in states.iter().enumerate() {
            let out = self.head.apply(&concat_rows_cols(hidden, &encode::step_matrix(trajs, t))?)?;
            for (e, &v) in energy.iter_mut().zip(out.data()) {
                *e += v;
            }
        }
        Ok(energy)
    }

    /// Per-trajectory quality scores `F(tau) - log Z`.
    pub fn quality_scores(&self, trajs: &[&Trajectory]) -> Result<Vec<f64>> {
        let log_z = self.log_z();
        Ok(self.trajectory_energies(trajs)?.into_iter().map(|f| f - log_z).collect())
    }

    fn check_shape(&self, traj: &Trajectory) -> Result<()> {
        if traj.dim() != self.dim() {
            return Err(Error::Shape(format!(
                "energy model expects D = {}, got {}",
                self.dim(),
                traj.dim()
            )));
        }
        Ok(())
    }
}

impl Module for EnergyNet {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.params();
        p.extend(self.head.params());
        p.push(&self.log_z);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.head.params_mut());
        p.push(&mut self.log_z);
        p
    }
}

impl EnergyVars {
    /// Parameter handles in [`Module::params`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.encoder.vars().to_vec();
        v.extend(self.head.vars());
        v.push(self.log_z);
        v
    }

    /// `F(tau)` for each trajectory, `[B, 1]`.
    pub fn trajectory_energy(&self, tape: &mut Tape, trajs: &[&Trajectory]) -> Result<Var> {
        let b = trajs.len();
        let horizon = trajs.first().map_or(0, |t| t.horizon());
        if b == 0 {
            return Err(Error::Invalid("energy of an empty batch".into()));
        }
        let states = encode::unroll(tape, &self.encoder, trajs, horizon - 1)?;
        let hidden: Vec<Var> = states.iter().map(|s| s.hidden).collect();
        let hidden = tape.concat_rows(&hidden)?;
        let xs: Vec<Var> = (0..horizon)
            .map(|t| tape.constant(encode::step_matrix(trajs, t)))
            .collect();
        let xs = tape.concat_rows(&xs)?;
        let input = tape.concat_cols(&[hidden, xs])?;
        let f = self.head.forward(tape, input)?;
        // rows are time-major; a 0/1 matrix sums each trajectory's steps
        let mut sum = Tensor::zeros(&[b, horizon * b]);
        for i in 0..b {
            for t in 0..horizon {
                sum.row_slice_mut(i)[t * b + i] = 1.0;
            }
        }
        let sum = tape.constant(sum);
        Ok(tape.matmul(sum, f)?)
    }

    /// Structured-classifier log-odds `F - log Z - ln p`, `[B, 1]`, given the
    /// policy log-densities `log_p` as constants.
    pub fn log_odds(&self, tape: &mut Tape, trajs: &[&Trajectory], log_p: &[f64]) -> Result<Var> {
        let f = self.trajectory_energy(tape, trajs)?;
        let neg_z = tape.neg(self.log_z);
        let shifted = tape.add_row(f, neg_z)?;
        let lp = tape.constant(Tensor::from_vec(vec![log_p.len(), 1], log_p.to_vec())?);
        Ok(tape.sub(shifted, lp)?)
    }
}

fn concat_rows_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows() != b.rows() {
        return Err(Error::Shape(format!("{} states for {} actions", a.rows(), b.rows())));
    }
    let cols = a.cols() + b.cols();
    let mut out = Tensor::zeros(&[a.rows(), cols]);
    for r in 0..a.rows() {
        let row = out.row_slice_mut(r);
        row[..a.cols()].copy_from_slice(a.row_slice(r));
        row[a.cols()..].copy_from_slice(b.row_slice(r));
    }
    Ok(out)
}

/// `F - log Z - ln p`.
pub fn log_odds(energy: f64, log_z: f64, log_p: f64) -> f64 {
    energy - log_z - log_p
}

pub fn classifier_log_odds(energy: &EnergyNet, policy: &PolicyNet, traj: &Trajectory) -> Result<f64> {
    let f = energy.trajectory_energy(traj)?;
    let lp = policy.log_prob_trajectories(&[traj])?[0];
    Ok(log_odds(f, energy.log_z(), lp))
}

/// Posterior probability that `traj` is real.
pub fn classifier_prob(energy: &EnergyNet, policy: &PolicyNet, traj: &Trajectory) -> Result<f64> {
    Ok(sigmoid(classifier_log_odds(energy, policy, traj)?))
}

/// Binary logistic loss `mean(-ln s(l_real)) + mean(-ln s(-l_fake))` on
/// `[N, 1]` log-odds, computed with log-sigmoid throughout.
pub fn contrastive_loss(tape: &mut Tape, real_logits: Var, fake_logits: Var) -> Var {
    let lr = tape.log_sigmoid(real_logits);
    let lr = tape.mean(lr);
    let nf = tape.neg(fake_logits);
    let lf = tape.log_sigmoid(nf);
    let lf = tape.mean(lf);
    let total = tape.add(lr, lf).expect("scalar shapes");
    tape.neg(total)
}

/// Contrastive energy loss with the policy held fixed.
pub fn energy_loss_on(
    tape: &mut Tape,
    vars: &EnergyVars,
    policy: &PolicyNet,
    real: &[&Trajectory],
    fake: &[&Trajectory],
) -> Result<Var> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Invalid("energy loss needs non-empty real and fake batches".into()));
    }
    let lp_real = policy.log_prob_trajectories(real)?;
    let lp_fake = policy.log_prob_trajectories(fake)?;
    let lr = vars.log_odds(tape, real, &lp_real)?;
    let lf = vars.log_odds(tape, fake, &lp_fake)?;
    Ok(contrastive_loss(tape, lr, lf))
}

pub fn energy_loss(energy: &EnergyNet, policy: &PolicyNet, real: &[&Trajectory], fake: &[&Trajectory]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = energy.bind(&mut tape, false);
    let loss = energy_loss_on(&mut tape, &vars, policy, real, fake)?;
    Ok(tape.value(loss).item())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contrastive_loss_at_chance_and_separation() {
        let mut tape = Tape::new();
        let zero = tape.constant(Tensor::zeros(&[4, 1]));
        let l = contrastive_loss(&mut tape, zero, zero);
        assert!((tape.value(l).item() - 2.0 * 2f64.ln()).abs() < 1e-15);

        let pos = tape.constant(Tensor::full(&[4, 1], 50.0));
        let neg = tape.constant(Tensor::full(&[4, 1], -50.0));
        let l = contrastive_loss(&mut tape, pos, neg);
        assert!(tape.value(l).item() < 1e-20);

        let big = tape.constant(Tensor::full(&[1, 1], 700.0));
        let small = tape.constant(Tensor::full(&[1, 1], -700.0));
        let l = contrastive_loss(&mut tape, small, big);
        assert!((tape.value(l).item() - 1400.0).abs() < 1e-9);
    }

    #[test]
    fn zero_head_transition_energy_is_bias() {
        let mut net = EnergyNet::zeros(2, 8);
        net.head.output_bias_mut().data_mut()[0] = 1.25;
        let h = net.init_history(4);
        assert_eq!(net.transition_energy(&h, &[0.1, 0.9]).unwrap(), 1.25);
        let traj = Trajectory::new(4, 2, vec![0.5; 8]).unwrap();
        assert_eq!(net.trajectory_energy(&traj).unwrap(), 5.0);
    }
}
