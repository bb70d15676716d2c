//! Self-contained property suites on toy constructions with known answers.
//!
//! * [`nce_suite`]: an energy model fitted contrastively against a fixed
//!   noise policy recovers the true log-density of the source.
//! * [`gradeq_suite`]: when the policy equals the normalized energy model,
//!   the contrastive energy gradient equals half the moment-matching
//!   (maximum-likelihood) gradient.
//! * [`eqd_suite`]: the expected quality difference vanishes for the source
//!   itself and is positive for a corrupted copy.
//! * [`perturb_suite`]: noise-perturbation forecasts of a teacher-forced
//!   baseline against a contrastively trained model.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use timegci_nd::{Adam, AdamConfig, Module, Tape, Tensor};

use crate::data::{generate_sines, Normalizer, SinesConfig, Trajectory};
use crate::energy::{contrastive_loss, energy_loss_on, EnergyNet};
use crate::eval::{perturbation_forecast_mse, PerturbConfig, PerturbGrid};
use crate::policy::{log_jacobian, unsquash, PolicyNet};
use crate::toy::{expected_quality_difference, Estimate, SequenceSampler, ToySource};
use crate::trainer::{train, Method, TrainConfig};
use crate::{seeded_rng, Result};

/// Outcome of one suite: named checks with their verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl SuiteReport {
    fn new(suite: &str) -> Self {
        Self {
            suite: suite.to_string(),
            checks: Vec::new(),
        }
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("suite {}\n", self.suite);
        for c in &self.checks {
            let _ = writeln!(s, "  [{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NceConfig {
    pub source: ToySource,
    /// Latent mean and log-std of the fixed noise policy at every step.
    pub noise_mean: f64,
    pub noise_log_std: f64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub grid: usize,
    /// Grid half-width in source standard deviations.
    pub grid_width: f64,
    pub seed: u64,
}

impl Default for NceConfig {
    fn default() -> Self {
        Self {
            // kept away from the boundary, where the squashing Jacobian
            // dominates the density and is hard for a small LSTM to fit
            source: ToySource {
                horizon: 2,
                mean0: 0.0,
                coef: 0.5,
                std: 0.3,
            },
            noise_mean: 0.0,
            noise_log_std: 0.8f64.ln(),
            steps: 4000,
            batch: 256,
            lr: 1e-3,
            grid: 30,
            grid_width: 2.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NceResult {
    pub r_squared: f64,
    pub slope: f64,
    pub final_loss: f64,
    pub log_z: f64,
}

/// A policy whose every step is `N(mean, exp(log_std)^2)` in latent space.
pub fn constant_policy(dim: usize, hidden: usize, mean: f64, log_std: f64) -> PolicyNet {
    let mut p = PolicyNet::zeros(dim, hidden);
    let bias = p.head.output_bias_mut().data_mut();
    bias[..dim].fill(mean);
    bias[dim..].fill(log_std);
    p
}

/// Trajectories on a sheared grid around the source: the first latent spans
/// `mean0 +- width * std`, and the second spans the same width around its
/// conditional mean.
pub fn nce_grid(src: &ToySource, n: usize, width: f64) -> Result<Vec<Trajectory>> {
    let u: Vec<f64> = (0..n).map(|i| -width + 2.0 * width * i as f64 / (n - 1) as f64).collect();
    let mut out = Vec::with_capacity(n * n);
    for &u1 in &u {
        let x1 = crate::policy::squash(src.latent_mean(None) + src.std * u1);
        for &u2 in &u {
            let x2 = crate::policy::squash(src.latent_mean(Some(x1)) + src.std * u2);
            out.push(Trajectory::new(2, 1, vec![x1, x2])?);
        }
    }
    Ok(out)
}

/// Least-squares slope of `y` on `x` and the squared Pearson correlation.
pub fn regression(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxy / sxx, sxy * sxy / (sxx * syy))
}

/// Fits an energy model on a two-step source against fixed noise and
/// compares `F - log Z` with the true log-density over a trajectory grid.
pub fn fit_nce(cfg: &NceConfig) -> Result<(EnergyNet, NceResult)> {
    let src = &cfg.source;
    let mut rng = seeded_rng(cfg.seed);
    let noise = constant_policy(1, 8, cfg.noise_mean, cfg.noise_log_std);
    let mut energy = EnergyNet::new(1, 32, &mut rng);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let mut final_loss = f64::NAN;
    for _ in 0..cfg.steps {
        let real = src.sample(cfg.batch, &mut rng)?;
        let fake = noise.sample_trajectories(cfg.batch, src.horizon, &mut rng)?;
        let mut tape = Tape::new();
        let vars = energy.bind(&mut tape, true);
        let loss = energy_loss_on(
            &mut tape,
            &vars,
            &noise,
            &real.iter().collect::<Vec<_>>(),
            &fake.iter().collect::<Vec<_>>(),
        )?;
        final_loss = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor> = vars.vars().iter().map(|&v| grads.wrt(v)).collect();
        adam.step(energy.params_mut(), &g)?;
    }
    let grid = nce_grid(src, cfg.grid, cfg.grid_width)?;
    let refs: Vec<&Trajectory> = grid.iter().collect();
    let fitted = energy.quality_scores(&refs)?;
    let truth: Vec<f64> = grid.iter().map(|t| src.log_density(t)).collect::<Result<_>>()?;
    let (slope, r_squared) = regression(&truth, &fitted);
    let log_z = energy.log_z();
    Ok((
        energy,
        NceResult {
            r_squared,
            slope,
            final_loss,
            log_z,
        },
    ))
}

pub fn nce_suite(cfg: &NceConfig) -> Result<SuiteReport> {
    let (_, r) = fit_nce(cfg)?;
    let mut rep = SuiteReport::new("nce");
    rep.check("r_squared >= 0.95", r.r_squared >= 0.95, format!("r² = {:.4}", r.r_squared));
    rep.check(
        "slope in [0.9, 1.1]",
        (0.9..=1.1).contains(&r.slope),
        format!("slope = {:.4}", r.slope),
    );
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEqConfig {
    /// Latent mean and log-std shared by the policy and the energy model.
    pub mean: f64,
    pub log_std: f64,
    /// The data source (one step).
    pub source: ToySource,
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradEqConfig {
    fn default() -> Self {
        Self {
            mean: 0.0,
            log_std: 0.6f64.ln(),
            source: ToySource {
                horizon: 1,
                mean0: 0.5,
                coef: 0.0,
                std: 0.4,
            },
            samples: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradEqResult {
    /// Gradient of the contrastive loss w.r.t. `(mean, log_std, log Z)`.
    pub contrastive: Vec<Estimate>,
    /// `-(T/2) (E_data grad F - E_model grad F)` on independent samples.
    pub moment: Vec<Estimate>,
}

/// Gradient of the one-step energy `F(x) = ln N(z; mean, std) - ln|dx/dz|`
/// with respect to `(mean, log_std)`.
fn energy_grad(z: f64, mean: f64, log_std: f64) -> [f64; 2] {
    let inv_var = (-2.0 * log_std).exp();
    let d = z - mean;
    [d * inv_var, d * d * inv_var - 1.0]
}

/// Contrastive-loss gradient through the tape, against the analytic
/// moment-difference gradient, on a one-step model where the policy density
/// equals the normalized energy density.
pub fn gradeq(cfg: &GradEqConfig) -> Result<GradEqResult> {
    let mut rng = seeded_rng(cfg.seed);
    let policy = constant_policy(1, 4, cfg.mean, cfg.log_std);
    let n = cfg.samples;
    let draw = |rng: &mut crate::Rng| -> Result<(Vec<f64>, Vec<f64>)> {
        let real: Vec<f64> = cfg.source.sample(n, rng)?.iter().map(|t| t.get(0, 0)).collect();
        let fake: Vec<f64> = policy.sample_trajectories(n, 1, rng)?.iter().map(|t| t.get(0, 0)).collect();
        Ok((real, fake))
    };

    // route 1: the shared contrastive loss on a tape with (mean, log_std, log Z)
    let (real, fake) = draw(&mut rng)?;
    let mut tape = Tape::new();
    let mean = tape.param(Tensor::scalar(cfg.mean));
    let log_std = tape.param(Tensor::scalar(cfg.log_std));
    let log_z = tape.param(Tensor::scalar(0.0));
    let logits = |tape: &mut Tape, xs: &[f64]| -> Result<timegci_nd::Var> {
        let z: Vec<f64> = xs.iter().map(|&x| unsquash(x)).collect();
        let lj: Vec<f64> = z.iter().map(|&z| log_jacobian(z) + 0.5 * (2.0 * PI).ln()).collect();
        let lp: Vec<f64> = policy
            .log_prob_trajectories(&xs.iter().map(|&x| Trajectory::new(1, 1, vec![x])).collect::<Result<Vec<_>>>()?.iter().collect::<Vec<_>>())?;
        let zt = tape.constant(Tensor::from_vec(vec![z.len(), 1], z)?);
        let ones = tape.constant(Tensor::full(&[xs.len(), 1], 1.0));
        let mean_col = tape.matmul(ones, mean)?;
        let ls_col = tape.matmul(ones, log_std)?;
        let inv = tape.neg(ls_col);
        let inv = tape.exp(inv);
        let d = tape.sub(zt, mean_col)?;
        let u = tape.mul(d, inv)?;
        let u2 = tape.square(u);
        let f = tape.scale(u2, -0.5);
        let f = tape.sub(f, ls_col)?;
        let c = tape.constant(Tensor::from_vec(vec![lj.len(), 1], lj)?);
        let f = tape.sub(f, c)?;
        let neg_z = tape.neg(log_z);
        let f = tape.add_row(f, neg_z)?;
        let lp = tape.constant(Tensor::from_vec(vec![lp.len(), 1], lp)?);
        Ok(tape.sub(f, lp)?)
    };
    let lr = logits(&mut tape, &real)?;
    let lf = logits(&mut tape, &fake)?;
    let loss = contrastive_loss(&mut tape, lr, lf);
    let grads = tape.backward(loss)?;
    let tape_grad = [grads.wrt(mean).item(), grads.wrt(log_std).item(), grads.wrt(log_z).item()];

    // the per-sample terms of route 1, for its standard error
    let per_sample = |xs: &[f64], sign: f64| -> Vec<[f64; 3]> {
        xs.iter()
            .map(|&x| {
                let g = energy_grad(unsquash(x), cfg.mean, cfg.log_std);
                // at d = 1/2 each sample contributes -(1/2) grad l (real) or +(1/2) grad l (fake)
                [sign * 0.5 * g[0], sign * 0.5 * g[1], -sign * 0.5]
            })
            .collect()
    };
    let r1_real = per_sample(&real, -1.0);
    let r1_fake = per_sample(&fake, 1.0);

    // route 2: independent samples, analytic moment difference
    let (real2, fake2) = draw(&mut rng)?;
    let grads_of = |xs: &[f64]| -> Vec<[f64; 2]> { xs.iter().map(|&x| energy_grad(unsquash(x), cfg.mean, cfg.log_std)).collect() };
    let (g_real, g_fake) = (grads_of(&real2), grads_of(&fake2));

    let mut contrastive = Vec::with_capacity(3);
    let mut moment = Vec::with_capacity(3);
    for k in 0..3 {
        let a = Estimate::from_samples(&r1_real.iter().map(|g| g[k]).collect::<Vec<_>>());
        let b = Estimate::from_samples(&r1_fake.iter().map(|g| g[k]).collect::<Vec<_>>());
        contrastive.push(Estimate {
            value: tape_grad[k],
            std_error: a.std_error.hypot(b.std_error),
        });
        if k < 2 {
            let er = Estimate::from_samples(&g_real.iter().map(|g| g[k]).collect::<Vec<_>>());
            let ef = Estimate::from_samples(&g_fake.iter().map(|g| g[k]).collect::<Vec<_>>());
            let diff = er.minus(&ef);
            moment.push(Estimate {
                value: -0.5 * diff.value,
                std_error: 0.5 * diff.std_error,
            });
        } else {
            // log Z does not enter F
            moment.push(Estimate {
                value: 0.0,
                std_error: 0.0,
            });
        }
    }
    Ok(GradEqResult { contrastive, moment })
}

pub fn gradeq_suite(cfg: &GradEqConfig) -> Result<SuiteReport> {
    let r = gradeq(cfg)?;
    let mut rep = SuiteReport::new("gradeq");
    for (k, name) in ["mean", "log_std", "log_z"].iter().enumerate() {
        let (a, b) = (r.contrastive[k], r.moment[k]);
        let se = a.std_error.hypot(b.std_error);
        let gap = (a.value - b.value).abs();
        rep.check(
            &format!("d/d{name} within 3 SE"),
            gap <= 3.0 * se + 1e-12,
            format!(
                "contrastive {:+.5}, moment {:+.5}, |diff| {:.2e}, 3 SE {:.2e}",
                a.value,
                b.value,
                gap,
                3.0 * se
            ),
        );
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqdConfig {
    pub source: ToySource,
    /// Latent-mean shift of the corrupted model.
    pub shift: f64,
    pub n_mc: usize,
    pub seed: u64,
}

impl Default for EqdConfig {
    fn default() -> Self {
        Self {
            // narrow enough that the Gaussian term, not the squashing
            // Jacobian, dominates the log-density
            source: ToySource {
                horizon: 5,
                std: 0.1,
                ..ToySource::default()
            },
            shift: 0.5,
            n_mc: 20_000,
            seed: 0,
        }
    }
}

pub fn eqd_suite(cfg: &EqdConfig) -> Result<SuiteReport> {
    let mut rng = seeded_rng(cfg.seed);
    let src = &cfg.source;
    let same = expected_quality_difference(src, src, cfg.n_mc, &mut rng)?;
    let bad = expected_quality_difference(src, &src.shifted(cfg.shift), cfg.n_mc, &mut rng)?;
    let doubled = expected_quality_difference(src, src, 2 * cfg.n_mc, &mut rng)?;
    let ratio = doubled.std_error / same.std_error;
    let mut rep = SuiteReport::new("eqd");
    rep.check(
        "identity within 3 SE of 0",
        same.value.abs() <= 3.0 * same.std_error,
        format!("{:+.5} ± {:.5}", same.value, same.std_error),
    );
    rep.check(
        "corrupted model above 3 SE",
        bad.value > 3.0 * bad.std_error,
        format!("{:+.5} ± {:.5}", bad.value, bad.std_error),
    );
    let expected = std::f64::consts::FRAC_1_SQRT_2;
    rep.check(
        "doubling n_mc scales SE by 1/sqrt(2) within 20%",
        (ratio / expected - 1.0).abs() <= 0.2,
        format!("ratio {ratio:.4}"),
    );
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbSuiteConfig {
    pub sines: SinesConfig,
    pub train: TrainConfig,
    pub perturb: PerturbConfig,
    pub seed: u64,
}

impl Default for PerturbSuiteConfig {
    fn default() -> Self {
        Self {
            sines: SinesConfig::default(),
            train: TrainConfig::default(),
            perturb: PerturbConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbComparison {
    pub tforcing: PerturbGrid,
    pub timegci: PerturbGrid,
}

impl PerturbComparison {
    /// Teacher-forcing MSE minus contrastive MSE at noise scale index `c`
    /// and one-based horizon `t`, with the combined standard error.
    pub fn advantage(&self, c: usize, t: usize) -> Estimate {
        Estimate {
            value: self.tforcing.mse[c][t - 1] - self.timegci.mse[c][t - 1],
            std_error: self.tforcing.std_error[c][t - 1].hypot(self.timegci.std_error[c][t - 1]),
        }
    }
}

/// Trains both models on simulator data and runs the ablation with the same
/// episodes for each.
pub fn perturb_compare(cfg: &PerturbSuiteConfig) -> Result<PerturbComparison> {
    let raw = generate_sines(&cfg.sines, cfg.seed)?;
    let norm = Normalizer::fit(&raw)?;
    let data = norm.apply_dataset(&raw)?;
    let tf = train(cfg.train.clone(), Method::TForcing, &data, norm.clone())?;
    let gci = train(cfg.train.clone(), Method::TimeGci, &data, norm.clone())?;
    let eval_seed = cfg.seed.wrapping_add(1);
    Ok(PerturbComparison {
        tforcing: perturbation_forecast_mse(&tf.best.state.policy, &norm, &cfg.sines, &cfg.perturb, eval_seed)?,
        timegci: perturbation_forecast_mse(&gci.best.state.policy, &norm, &cfg.sines, &cfg.perturb, eval_seed)?,
    })
}

pub fn perturb_report(cmp: &PerturbComparison) -> SuiteReport {
    let mut rep = SuiteReport::new("perturb");
    let a1 = cmp.advantage(0, 1);
    rep.check(
        "t=1 MSEs within 2 SE",
        a1.value.abs() <= 2.0 * a1.std_error,
        format!("difference {:+.5}, SE {:.5}", a1.value, a1.std_error),
    );
    let (a2, a5) = (cmp.advantage(0, 2), cmp.advantage(0, 5));
    rep.check(
        "advantage at t=5 exceeds advantage at t=2",
        a5.value > a2.value,
        format!("t=2 {:+.5}, t=5 {:+.5}", a2.value, a5.value),
    );
    let monotone = [&cmp.tforcing, &cmp.timegci]
        .iter()
        .all(|g| (0..g.mse[0].len()).all(|t| g.mse.windows(2).all(|w| w[1][t] >= w[0][t])));
    rep.check("MSE non-decreasing in noise scale", monotone, String::new());
    rep
}

pub fn perturb_suite(cfg: &PerturbSuiteConfig) -> Result<(SuiteReport, PerturbComparison)> {
    let cmp = perturb_compare(cfg)?;
    Ok((perturb_report(&cmp), cmp))
}
