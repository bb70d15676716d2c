//! A one-dimensional source with an analytic transition density, used to
//! check the estimators against known ground truth.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::policy::{squash, squashed_log_prob, unsquash, z_limit, PolicyNet};
use crate::{Error, Result};

/// Anything that can draw whole trajectories.
pub trait SequenceSampler {
    fn horizon(&self) -> usize;
    fn sample(&self, n: usize, rng: &mut dyn rand::RngCore) -> Result<Vec<Trajectory>>;
}

/// Squashed-Gaussian autoregression in one dimension. The latent at step `t`
/// is `N(mean0 + coef * (2 x_{t-1} - 1), std^2)` (no `coef` term at `t = 1`),
/// and `x_t = (tanh(z_t) + 1) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToySource {
    pub horizon: usize,
    pub mean0: f64,
    pub coef: f64,
    pub std: f64,
}

impl Default for ToySource {
    fn default() -> Self {
        Self {
            horizon: 2,
            mean0: 0.2,
            coef: 1.0,
            std: 0.5,
        }
    }
}

impl ToySource {
    /// Latent mean at a step whose predecessor is `prev` (`None` at `t = 1`).
    pub fn latent_mean(&self, prev: Option<f64>) -> f64 {
        self.mean0 + prev.map_or(0.0, |x| self.coef * (2.0 * x - 1.0))
    }

    /// Same source with every latent mean moved by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            mean0: self.mean0 + delta,
            ..*self
        }
    }

    /// `ln pi(x | prev)`.
    pub fn step_log_density(&self, prev: Option<f64>, x: f64) -> Result<f64> {
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::Boundary {
                step: 0,
                feature: 0,
                value: x,
            });
        }
        Ok(squashed_log_prob(unsquash(x), self.latent_mean(prev), self.std.ln()))
    }

    /// `ln p(tau)`, the sum of the step log-densities.
    pub fn log_density(&self, traj: &Trajectory) -> Result<f64> {
        let mut prev = None;
        let mut total = 0.0;
        for t in 0..traj.horizon() {
            let x = traj.get(t, 0);
            total += self.step_log_density(prev, x)?;
            prev = Some(x);
        }
        Ok(total)
    }
}

impl SequenceSampler for ToySource {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn sample(&self, n: usize, rng: &mut dyn rand::RngCore) -> Result<Vec<Trajectory>> {
        let lim = z_limit();
        (0..n)
            .map(|_| {
                let mut prev = None;
                let mut values = Vec::with_capacity(self.horizon);
                for _ in 0..self.horizon {
                    let eps: f64 = rng.sample(StandardNormal);
                    let z = (self.latent_mean(prev) + self.std * eps).clamp(-lim, lim);
                    let x = squash(z);
                    values.push(x);
                    prev = Some(x);
                }
                Trajectory::new(self.horizon, 1, values)
            })
            .collect()
    }
}

/// A policy bound to a fixed horizon.
pub struct PolicySampler<'a> {
    pub policy: &'a PolicyNet,
    pub horizon: usize,
}

impl SequenceSampler for PolicySampler<'_> {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn sample(&self, n: usize, mut rng: &mut dyn rand::RngCore) -> Result<Vec<Trajectory>> {
        self.policy.sample_trajectories(n, self.horizon, &mut rng)
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let (mean, sd) = crate::eval::mean_std(values);
        Self {
            value: mean,
            std_error: sd / (values.len() as f64).sqrt(),
        }
    }

    /// Difference of two independent estimates.
    pub fn minus(&self, other: &Estimate) -> Self {
        Self {
            value: self.value - other.value,
            std_error: self.std_error.hypot(other.std_error),
        }
    }
}

/// `E_source F_s(tau) - E_model F_s(tau)` where `F_s` is the source's own
/// trajectory log-density, from `n_mc` independent draws of each.
pub fn expected_quality_difference(
    source: &ToySource,
    model: &dyn SequenceSampler,
    n_mc: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<Estimate> {
    if n_mc < 2 {
        return Err(Error::Invalid("expected quality difference needs n_mc >= 2".into()));
    }
    if model.horizon() != source.horizon {
        return Err(Error::Shape("model and source horizons differ".into()));
    }
    let score = |trajs: Vec<Trajectory>| -> Result<Vec<f64>> { trajs.iter().map(|t| source.log_density(t)).collect() };
    let real = score(source.sample(n_mc, rng)?)?;
    let fake = score(model.sample(n_mc, rng)?)?;
    Ok(Estimate::from_samples(&real).minus(&Estimate::from_samples(&fake)))
}
