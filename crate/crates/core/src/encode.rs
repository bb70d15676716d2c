//! Teacher-forced recurrent encoding of trajectory prefixes.
//!
//! Every network owns its own LSTM encoder. The helpers here turn a batch of
//! trajectories into the sequence of encoder states `h_1, ..., h_{steps+1}`,
//! where state `k` has consumed the first `k` feature vectors.

use serde::{Deserialize, Serialize};
use timegci_nd::layers::LstmVars;
use timegci_nd::{Lstm, LstmState, Tape, Tensor};

use crate::data::Trajectory;
use crate::{Error, Result};

/// Rows of step `t` (zero-based) from each trajectory, as a `[B, D]` matrix.
pub fn step_matrix(trajs: &[&Trajectory], t: usize) -> Tensor {
    let d = trajs.first().map_or(0, |tr| tr.dim());
    let mut data = Vec::with_capacity(trajs.len() * d);
    for tr in trajs {
        data.extend_from_slice(tr.step(t));
    }
    Tensor::from_vec(vec![trajs.len(), d], data).expect("step matrix")
}

/// Row `i` is step `index[i]` (zero-based) of `trajs[i]`.
pub fn step_matrix_at(trajs: &[&Trajectory], index: &[usize]) -> Tensor {
    let d = trajs.first().map_or(0, |tr| tr.dim());
    let mut data = Vec::with_capacity(trajs.len() * d);
    for (tr, &t) in trajs.iter().zip(index) {
        data.extend_from_slice(tr.step(t));
    }
    Tensor::from_vec(vec![trajs.len(), d], data).expect("step matrix")
}

/// Encoder states on a tape: `steps + 1` entries, the first being zero.
pub fn unroll(tape: &mut Tape, lstm: &LstmVars, trajs: &[&Trajectory], steps: usize) -> Result<Vec<LstmState>> {
    let mut state = lstm.zero_state(tape, trajs.len());
    let mut out = Vec::with_capacity(steps + 1);
    out.push(state);
    for t in 0..steps {
        let x = tape.constant(step_matrix(trajs, t));
        state = lstm.step(tape, x, state)?;
        out.push(state);
    }
    Ok(out)
}

/// Tape-free counterpart of [`unroll`], returning `(hidden, cell)` pairs.
pub fn unroll_eval(lstm: &Lstm, trajs: &[&Trajectory], steps: usize) -> Result<Vec<(Tensor, Tensor)>> {
    let h = lstm.hidden_dim();
    let mut state = (Tensor::zeros(&[trajs.len(), h]), Tensor::zeros(&[trajs.len(), h]));
    let mut out = Vec::with_capacity(steps + 1);
    out.push(state.clone());
    for t in 0..steps {
        state = lstm.step_eval(&step_matrix(trajs, t), &state.0, &state.1)?;
        out.push(state.clone());
    }
    Ok(out)
}

/// Row `i` of the result is row `i` of `states[index[i]]`.
pub fn gather(states: &[Tensor], index: &[usize]) -> Tensor {
    let cols = states[0].cols();
    let mut out = Tensor::zeros(&[index.len(), cols]);
    for (i, &k) in index.iter().enumerate() {
        out.row_slice_mut(i).copy_from_slice(states[k].row_slice(i));
    }
    out
}

/// Encoder state for one history `h_t = (x_1, ..., x_{t-1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryState {
    pub hidden: Tensor,
    pub cell: Tensor,
    /// One-based index of the next step; `t = 1` is the empty history.
    pub t: usize,
    pub horizon: usize,
}

impl HistoryState {
    pub fn init(hidden_dim: usize, horizon: usize) -> Self {
        Self {
            hidden: Tensor::zeros(&[1, hidden_dim]),
            cell: Tensor::zeros(&[1, hidden_dim]),
            t: 1,
            horizon,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.t > self.horizon
    }

    pub fn advance(&self, lstm: &Lstm, x: &[f64]) -> Result<Self> {
        if self.t > self.horizon {
            return Err(Error::HorizonExceeded(self.horizon));
        }
        let (hidden, cell) = lstm.step_eval(&Tensor::row(x), &self.hidden, &self.cell)?;
        Ok(Self {
            hidden,
            cell,
            t: self.t + 1,
            horizon: self.horizon,
        })
    }

    /// State after consuming `prefix`, a row-major run of feature vectors.
    pub fn from_prefix(lstm: &Lstm, prefix: &[f64], horizon: usize) -> Result<Self> {
        let d = lstm.input_dim();
        let mut h = Self::init(lstm.hidden_dim(), horizon);
        for x in prefix.chunks(d) {
            h = h.advance(lstm, x)?;
        }
        Ok(h)
    }
}
