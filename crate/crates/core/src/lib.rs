//! Time-series generation by contrastive imitation.
//!
//! An explicit autoregressive policy (an LSTM with a squashed-Gaussian head)
//! generates trajectories step by step. A trajectory-level energy model,
//! normalized by a learnable log-partition, is fitted against the policy by
//! logistic discrimination, and the policy is improved with soft actor-critic
//! using the stepwise energy as its reward. The policy and energy never play
//! a minimax game: each one's loss treats the other as fixed.
//!
//! ```
//! use timegci::data::{generate_sines, SinesConfig};
//! use timegci::policy::PolicyNet;
//!
//! let data = generate_sines(&SinesConfig { n: 8, horizon: 6, dim: 2, ..Default::default() }, 1).unwrap();
//! let mut rng = timegci::seeded_rng(0);
//! let policy = PolicyNet::new(2, 32, &mut rng);
//! let (traj, log_probs) = policy.rollout(data.horizon(), &mut rng).unwrap();
//! assert_eq!(traj.horizon(), 6);
//! assert_eq!(log_probs.len(), 6);
//! ```

pub mod cli;
pub mod critic;
pub mod data;
pub mod encode;
pub mod energy;
mod error;
pub mod eval;
pub mod policy;
pub mod replay;
pub mod theory;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
pub use timegci_nd as nd;

use rand::SeedableRng;

/// The generator used everywhere a seed is accepted.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
