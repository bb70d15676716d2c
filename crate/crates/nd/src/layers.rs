//! Layer primitives shared by every network.
//!
//! Each layer owns plain [`Tensor`] parameters and is placed on a [`Tape`]
//! with `bind`, which returns handles for the forward pass. `bind` takes a
//! `trainable` flag: frozen copies are recorded as constants so that no
//! gradient is routed into them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tape::{elu, sigmoid};
use crate::{NdError, Result, Tape, Tensor, Var};

/// Anything holding an ordered list of parameter tensors.
pub trait Module {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Copies every parameter value from `other`, which must have the same layout.
    fn copy_from(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            dst.data_mut().copy_from_slice(src.data());
        }
    }

    /// All parameters flattened in declaration order.
    fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.data().iter().copied()).collect()
    }
}

fn bind_tensor(tape: &mut Tape, t: &Tensor, trainable: bool) -> Var {
    if trainable {
        tape.param(t.clone())
    } else {
        tape.constant(t.clone())
    }
}

fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.gen_range(-bound..=bound);
    }
    t
}

/// Affine map `x W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: uniform(&[input, output], bound, rng),
            bias: Tensor::zeros(&[1, output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[1, output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> LinearVars {
        LinearVars {
            weight: bind_tensor(tape, &self.weight, trainable),
            bias: bind_tensor(tape, &self.bias, trainable),
        }
    }
}

impl Linear {
    /// Tape-free forward pass for a `[B, in]` batch.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.matmul(&self.weight)?;
        let b = self.bias.data();
        for r in 0..y.rows() {
            for (v, &bv) in y.row_slice_mut(r).iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(y)
    }
}

impl LinearVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.weight)?;
        tape.add_row(xw, self.bias)
    }

    pub fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Single-layer LSTM cell. Gate columns are laid out as `[input, forget, cell, output]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
    hidden_dim: usize,
}

/// Recurrent state on a tape: `[B, H]` hidden and cell matrices.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub hidden: Var,
    pub cell: Var,
}

impl Lstm {
    /// Uniform `±1/sqrt(input + hidden)` weights, zero biases except the
    /// forget gate, which starts at `+1`.
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((input + hidden) as f64).sqrt();
        let mut bias = Tensor::zeros(&[1, 4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        Self {
            w_input: uniform(&[input, 4 * hidden], bound, rng),
            w_hidden: uniform(&[hidden, 4 * hidden], bound, rng),
            bias,
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_input: Tensor::zeros(&[input, 4 * hidden]),
            w_hidden: Tensor::zeros(&[hidden, 4 * hidden]),
            bias: Tensor::zeros(&[1, 4 * hidden]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_hidden.rows()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> LstmVars {
        LstmVars {
            w_input: bind_tensor(tape, &self.w_input, trainable),
            w_hidden: bind_tensor(tape, &self.w_hidden, trainable),
            bias: bind_tensor(tape, &self.bias, trainable),
            hidden_dim: self.hidden_dim(),
        }
    }
}

impl Lstm {
    /// Tape-free recurrence step; matches [`LstmVars::step`] bit for bit.
    pub fn step_eval(&self, input: &Tensor, hidden: &Tensor, cell: &Tensor) -> Result<(Tensor, Tensor)> {
        let h = self.hidden_dim();
        let xi = input.matmul(&self.w_input)?;
        let hh = hidden.matmul(&self.w_hidden)?;
        if cell.shape() != hidden.shape() || xi.rows() != hh.rows() {
            return Err(NdError::Shape {
                op: "lstm_step",
                lhs: hidden.shape().to_vec(),
                rhs: cell.shape().to_vec(),
            });
        }
        let b = self.bias.data();
        let rows = xi.rows();
        let mut new_h = Tensor::zeros(&[rows, h]);
        let mut new_c = Tensor::zeros(&[rows, h]);
        for r in 0..rows {
            let (xr, hr, cr) = (xi.row_slice(r), hh.row_slice(r), cell.row_slice(r));
            let pre = |j: usize| (xr[j] + hr[j]) + b[j];
            for j in 0..h {
                let i = sigmoid(pre(j));
                let f = sigmoid(pre(h + j));
                let g = pre(2 * h + j).tanh();
                let o = sigmoid(pre(3 * h + j));
                let c = f * cr[j] + i * g;
                new_c.row_slice_mut(r)[j] = c;
                new_h.row_slice_mut(r)[j] = o * c.tanh();
            }
        }
        Ok((new_h, new_c))
    }
}

impl Module for Lstm {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.w_input, &self.w_hidden, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }
}

impl LstmVars {
    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    /// Zero state for a batch of `batch` sequences.
    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> LstmState {
        LstmState {
            hidden: tape.constant(Tensor::zeros(&[batch, self.hidden_dim])),
            cell: tape.constant(Tensor::zeros(&[batch, self.hidden_dim])),
        }
    }

    /// One recurrence step for a `[B, D_in]` input.
    pub fn step(&self, tape: &mut Tape, input: Var, state: LstmState) -> Result<LstmState> {
        let h = self.hidden_dim;
        let xi = tape.matmul(input, self.w_input)?;
        let hh = tape.matmul(state.hidden, self.w_hidden)?;
        let pre = tape.add(xi, hh)?;
        let pre = tape.add_row(pre, self.bias)?;
        let i = tape.slice_cols(pre, 0, h)?;
        let f = tape.slice_cols(pre, h, h)?;
        let g = tape.slice_cols(pre, 2 * h, h)?;
        let o = tape.slice_cols(pre, 3 * h, h)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, state.cell)?;
        let ig = tape.mul(i, g)?;
        let cell = tape.add(fc, ig)?;
        let tc = tape.tanh(cell);
        let hidden = tape.mul(o, tc)?;
        Ok(LstmState { hidden, cell })
    }

    pub fn vars(&self) -> [Var; 3] {
        [self.w_input, self.w_hidden, self.bias]
    }
}

/// Two ELU hidden layers followed by a linear output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpHead {
    pub layers: [Linear; 3],
}

#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub layers: [LinearVars; 3],
}

impl MlpHead {
    pub fn new(input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            layers: [
                Linear::new(input, hidden, rng),
                Linear::new(hidden, hidden, rng),
                Linear::new(hidden, output, rng),
            ],
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            layers: [
                Linear::zeros(input, hidden),
                Linear::zeros(hidden, hidden),
                Linear::zeros(hidden, output),
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[2].output_dim()
    }

    pub fn output_bias_mut(&mut self) -> &mut Tensor {
        &mut self.layers[2].bias
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> MlpVars {
        MlpVars {
            layers: [
                self.layers[0].bind(tape, trainable),
                self.layers[1].bind(tape, trainable),
                self.layers[2].bind(tape, trainable),
            ],
        }
    }
}

impl MlpHead {
    /// Tape-free forward pass; matches [`MlpVars::forward`] bit for bit.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let a = self.layers[0].apply(x)?.map(elu);
        let b = self.layers[1].apply(&a)?.map(elu);
        self.layers[2].apply(&b)
    }
}

impl MlpVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let a = self.layers[0].forward(tape, x)?;
        let a = tape.elu(a);
        let b = self.layers[1].forward(tape, a)?;
        let b = tape.elu(b);
        self.layers[2].forward(tape, b)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| l.vars()).collect()
    }
}

impl Module for MlpHead {
    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
