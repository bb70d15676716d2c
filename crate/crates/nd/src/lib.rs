//! Dense `f64` numerics for the time-series generation models.
//!
//! The crate is deliberately small: a row-major [`Tensor`], a [`Tape`] that
//! records differentiable operations and replays them in reverse, the layer
//! primitives the three networks are built from ([`Linear`], [`Lstm`],
//! [`MlpHead`]), the [`Adam`] optimizer and Polyak averaging.
//!
//! ```
//! use timegci_nd::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let p = tape.param(Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap());
//! let sq = tape.mul(p, p).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(p).data(), &[2.0, 4.0]);
//! ```

pub mod check;
mod error;
pub mod layers;
pub mod optim;
mod tape;
mod tensor;

pub use error::NdError;
pub use layers::{Linear, Lstm, LstmState, MlpHead, Module};
pub use optim::{polyak_update, Adam, AdamConfig};
pub use tape::{elu, sigmoid, softplus, Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, NdError>;
