//! Sample-quality metrics: train-on-synthetic/test-on-real predictive scores,
//! the cross-correlation score and the noise-perturbation forecast ablation.

use std::fmt::Write as _;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use timegci_nd::{Adam, AdamConfig, Linear, Lstm, Module, Tape, Tensor, Var};

use crate::data::{pearson, Dataset, Normalizer, SinesConfig, Trajectory};
use crate::encode::HistoryState;
use crate::policy::PolicyNet;
use crate::{seeded_rng, Error, Result};

/// Training budget of the post-hoc predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            lr: 1e-3,
            batch: 128,
        }
    }
}

/// Which columns feed the predictor and which one it predicts. With `D > 1`
/// the last feature is predicted from the others; with `D = 1` the single
/// feature predicts its own future.
fn predictor_columns(dim: usize) -> (Vec<usize>, usize) {
    if dim == 1 {
        (vec![0], 0)
    } else {
        ((0..dim - 1).collect(), dim - 1)
    }
}

/// One-layer LSTM regressor with a sigmoid read-out at every step.
#[derive(Debug, Clone)]
struct Predictor {
    lstm: Lstm,
    out: Linear,
}

impl Predictor {
    fn inputs(trajs: &[&Trajectory], cols: &[usize], t: usize) -> Tensor {
        let mut m = Tensor::zeros(&[trajs.len(), cols.len()]);
        for (i, tr) in trajs.iter().enumerate() {
            let step = tr.step(t);
            for (dst, &c) in m.row_slice_mut(i).iter_mut().zip(cols) {
                *dst = step[c];
            }
        }
        m
    }

    /// Targets stacked time-major, `[(T - k) B, 1]`.
    fn targets(trajs: &[&Trajectory], target: usize, k: usize) -> Tensor {
        let len = trajs[0].horizon() - k;
        let mut data = Vec::with_capacity(len * trajs.len());
        for t in 0..len {
            data.extend(trajs.iter().map(|tr| tr.get(t + k, target)));
        }
        Tensor::from_vec(vec![data.len(), 1], data).expect("targets")
    }

    fn loss(&self, tape: &mut Tape, trajs: &[&Trajectory], cols: &[usize], target: usize, k: usize) -> Result<(Var, Vec<Var>)> {
        let lstm = self.lstm.bind(tape, true);
        let out = self.out.bind(tape, true);
        let mut state = lstm.zero_state(tape, trajs.len());
        let len = trajs[0].horizon() - k;
        let mut hidden = Vec::with_capacity(len);
        for t in 0..len {
            let x = tape.constant(Self::inputs(trajs, cols, t));
            state = lstm.step(tape, x, state)?;
            hidden.push(state.hidden);
        }
        let h = tape.concat_rows(&hidden)?;
        let y = out.forward(tape, h)?;
        let y = tape.sigmoid(y);
        let truth = tape.constant(Self::targets(trajs, target, k));
        let err = tape.sub(y, truth)?;
        let err = tape.abs(err);
        let loss = tape.mean(err);
        let mut vars = lstm.vars().to_vec();
        vars.extend(out.vars());
        Ok((loss, vars))
    }

    /// Sum of absolute errors and the number of predictions.
    fn abs_error(&self, trajs: &[&Trajectory], cols: &[usize], target: usize, k: usize) -> Result<(f64, usize)> {
        let len = trajs[0].horizon() - k;
        let hd = self.lstm.hidden_dim();
        let (mut h, mut c) = (Tensor::zeros(&[trajs.len(), hd]), Tensor::zeros(&[trajs.len(), hd]));
        let mut total = 0.0;
        for t in 0..len {
            (h, c) = self.lstm.step_eval(&Self::inputs(trajs, cols, t), &h, &c)?;
            let y = self.out.apply(&h)?;
            for (i, tr) in trajs.iter().enumerate() {
                let pred = timegci_nd::sigmoid(y.get(i, 0));
                total += (pred - tr.get(t + k, target)).abs();
            }
        }
        Ok((total, len * trajs.len()))
    }
}

/// Train-on-synthetic, test-on-real mean absolute error of a `k`-step-ahead
/// predictor. The predictor regresses the target feature at `t + k` directly
/// from the prefix up to `t`.
pub fn predictive_score(
    synthetic: &Dataset,
    real_test: &Dataset,
    k: usize,
    cfg: &PredictorConfig,
    seed: u64,
) -> Result<f64> {
    let horizon = real_test.horizon();
    if synthetic.horizon() != horizon || synthetic.dim() != real_test.dim() {
        return Err(Error::Shape(format!(
            "synthetic {} x {} vs real {} x {}",
            synthetic.horizon(),
            synthetic.dim(),
            horizon,
            real_test.dim()
        )));
    }
    if k == 0 || k >= horizon {
        return Err(Error::Invalid(format!("horizon {k} must lie in 1..{horizon}")));
    }
    if synthetic.is_empty() || real_test.is_empty() {
        return Err(Error::Invalid("predictive score needs non-empty datasets".into()));
    }
    let (cols, target) = predictor_columns(real_test.dim());
    for ds in [synthetic, real_test] {
        let out_of_range = ds
            .trajectories()
            .iter()
            .flat_map(|t| (0..horizon).map(move |s| t.get(s, target)))
            .any(|v| !(0.0..=1.0).contains(&v));
        if out_of_range {
            return Err(Error::Invalid(format!(
                "dataset {:?}: predicted feature leaves [0, 1]; evaluate on the normalized scale",
                ds.name
            )));
        }
    }

    let mut rng = seeded_rng(seed);
    let hidden = (real_test.dim() / 2).max(1);
    let mut model = Predictor {
        lstm: Lstm::new(cols.len(), hidden, &mut rng),
        out: Linear::new(hidden, 1, &mut rng),
    };
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr));
    let pool = synthetic.trajectories();
    let batch = cfg.batch.min(pool.len());
    for _ in 0..cfg.steps {
        let picks: Vec<&Trajectory> = index::sample(&mut rng, pool.len(), batch).into_iter().map(|i| &pool[i]).collect();
        let mut tape = Tape::new();
        let (loss, vars) = model.loss(&mut tape, &picks, &cols, target, k)?;
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
        let mut params = model.lstm.params_mut();
        params.extend(model.out.params_mut());
        adam.step(params, &g)?;
    }

    let test: Vec<&Trajectory> = real_test.trajectories().iter().collect();
    let mut total = 0.0;
    let mut count = 0;
    for chunk in test.chunks(1024) {
        let (s, n) = model.abs_error(chunk, &cols, target, k)?;
        total += s;
        count += n;
    }
    Ok(total / count as f64)
}

/// Cross-correlation score with the number of zero-variance entries skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XcorrScore {
    pub score: f64,
    pub zero_variance: usize,
}

/// Per-step Pearson correlation matrix across samples; features with
/// (near-)zero variance get all-zero rows and columns.
pub fn correlation_matrix(ds: &Dataset, t: usize) -> (Vec<f64>, usize) {
    let d = ds.dim();
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|i| ds.trajectories().iter().map(|tr| tr.get(t, i)).collect())
        .collect();
    let mut m = vec![0.0; d * d];
    let mut zero = 0;
    for i in 0..d {
        for j in 0..d {
            match pearson(&cols[i], &cols[j]) {
                Some(r) => m[i * d + j] = r,
                None => zero += 1,
            }
        }
    }
    (m, zero)
}

/// `(1/T) sum_t sum_ij |C_real(t)_ij - C_synth(t)_ij|`.
pub fn xcorr_score(real: &Dataset, synthetic: &Dataset) -> Result<XcorrScore> {
    if (real.horizon(), real.dim()) != (synthetic.horizon(), synthetic.dim()) {
        return Err(Error::Shape("real and synthetic datasets differ in (T, D)".into()));
    }
    if real.len() < 30 || synthetic.len() < 30 {
        return Err(Error::Invalid(format!(
            "cross-correlation needs >= 30 samples each, got {} and {}",
            real.len(),
            synthetic.len()
        )));
    }
    let horizon = real.horizon();
    let mut total = 0.0;
    let mut zero = 0;
    for t in 0..horizon {
        let (a, za) = correlation_matrix(real, t);
        let (b, zb) = correlation_matrix(synthetic, t);
        total += a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        zero += za + zb;
    }
    Ok(XcorrScore {
        score: total / horizon as f64,
        zero_variance: zero,
    })
}

/// Scores for one generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    pub seed: u64,
    pub predictive_1: f64,
    pub predictive_3: f64,
    pub predictive_5: f64,
    pub xcorr: f64,
}

pub fn evaluate(
    label: &str,
    synthetic: &Dataset,
    real_test: &Dataset,
    cfg: &PredictorConfig,
    seed: u64,
) -> Result<EvalRow> {
    let p = |k| predictive_score(synthetic, real_test, k, cfg, seed);
    Ok(EvalRow {
        label: label.to_string(),
        seed,
        predictive_1: p(1)?,
        predictive_3: p(3)?,
        predictive_5: p(5)?,
        xcorr: xcorr_score(real_test, synthetic)?.score,
    })
}

/// A set of [`EvalRow`]s, one per (method, seed).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub rows: Vec<EvalRow>,
    pub runtime_secs: f64,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn labels(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.label.as_str()) {
                out.push(&r.label);
            }
        }
        out
    }

    /// Mean and standard deviation of a column over one label's rows.
    pub fn summary(&self, label: &str, column: impl Fn(&EvalRow) -> f64) -> (f64, f64) {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.label == label).map(column).collect();
        mean_std(&v)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,seed,predictive_1,predictive_3,predictive_5,xcorr\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.label, r.seed, r.predictive_1, r.predictive_3, r.predictive_5, r.xcorr
            );
        }
        s
    }

    /// Metric-by-method table with `mean ± std` cells.
    pub fn to_text(&self) -> String {
        let labels = self.labels();
        let mut s = String::new();
        let _ = write!(s, "{:<24}", format!("{} metric", self.dataset));
        for l in &labels {
            let _ = write!(s, "{l:>20}");
        }
        s.push('\n');
        let metrics: [(&str, fn(&EvalRow) -> f64); 4] = [
            ("predictive score", |r| r.predictive_1),
            ("+3 steps ahead", |r| r.predictive_3),
            ("+5 steps ahead", |r| r.predictive_5),
            ("x-corr score", |r| r.xcorr),
        ];
        for (name, f) in metrics {
            let _ = write!(s, "{name:<24}");
            for l in &labels {
                let (m, sd) = self.summary(l, f);
                let _ = write!(s, "{:>20}", format!("{m:.3} ± {sd:.3}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Settings for the noise-perturbation forecast ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbConfig {
    pub sigma: f64,
    /// Noise multipliers `c`; the perturbation has standard deviation `c sigma`.
    pub scales: Vec<f64>,
    pub max_ahead: usize,
    pub episodes: usize,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            sigma: 0.1,
            scales: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            max_ahead: 5,
            episodes: 1000,
        }
    }
}

/// Forecast mean squared errors, `mse[c][t - 1]`, with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbGrid {
    pub scales: Vec<f64>,
    pub mse: Vec<Vec<f64>>,
    pub std_error: Vec<Vec<f64>>,
}

impl PerturbGrid {
    pub fn to_text(&self, label: &str) -> String {
        let mut s = format!("{label:<12}");
        for t in 1..=self.mse.first().map_or(0, |r| r.len()) {
            let _ = write!(s, "{:>10}", format!("t={t}"));
        }
        s.push('\n');
        for (c, row) in self.scales.iter().zip(&self.mse) {
            let _ = write!(s, "{:<12}", format!("{c}σ"));
            for v in row {
                let _ = write!(s, "{v:>10.4}");
            }
            s.push('\n');
        }
        s
    }
}

/// For each episode: draw a noise-free sinusoid from `sim`, add Gaussian
/// noise to every feature of one uniformly chosen step `K`, and sample the
/// model open-loop for `max_ahead` steps from the perturbed history. The
/// squared error against the unperturbed continuation is taken on the raw
/// scale, averaged over features, and then over episodes.
pub fn perturbation_forecast_mse(
    model: &PolicyNet,
    normalizer: &Normalizer,
    sim: &SinesConfig,
    cfg: &PerturbConfig,
    seed: u64,
) -> Result<PerturbGrid> {
    let horizon = sim.horizon;
    if cfg.max_ahead == 0 || cfg.max_ahead >= horizon {
        return Err(Error::Invalid(format!(
            "forecast length {} must lie in 1..{horizon}",
            cfg.max_ahead
        )));
    }
    if cfg.episodes < 2 {
        return Err(Error::Invalid("perturbation ablation needs >= 2 episodes".into()));
    }
    let d = sim.dim;
    let mut rng = seeded_rng(seed);
    let mut mse = Vec::with_capacity(cfg.scales.len());
    let mut std_error = Vec::with_capacity(cfg.scales.len());
    for &c in &cfg.scales {
        let mut errs = vec![Vec::with_capacity(cfg.episodes); cfg.max_ahead];
        for _ in 0..cfg.episodes {
            let truth = sim.sample_params(&mut rng).trajectory(horizon);
            // K is one-based and leaves room for every forecast step
            let k = rng.gen_range(1..=horizon - cfg.max_ahead);
            let mut prefix = truth.prefix(k).to_vec();
            for v in &mut prefix[(k - 1) * d..] {
                *v += c * cfg.sigma * rng.sample::<f64, _>(StandardNormal);
            }
            let raw_prefix = Trajectory::new(k, d, prefix)?;
            let norm_prefix = normalizer.apply(&raw_prefix)?;
            let h = HistoryState::from_prefix(&model.encoder, norm_prefix.values(), horizon)?;
            let (xs, _) = model.continue_batch((h.hidden, h.cell), cfg.max_ahead, &mut rng)?;
            let values: Vec<f64> = xs.iter().flat_map(|x| x.data().iter().copied()).collect();
            let forecast = normalizer.invert(&Trajectory::new(cfg.max_ahead, d, values)?)?;
            for (t, slot) in errs.iter_mut().enumerate() {
                let err = forecast
                    .step(t)
                    .iter()
                    .zip(truth.step(k + t))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    / d as f64;
                slot.push(err);
            }
        }
        let stats: Vec<(f64, f64)> = errs.iter().map(|e| mean_std(e)).collect();
        mse.push(stats.iter().map(|s| s.0).collect());
        std_error.push(stats.iter().map(|s| s.1 / (cfg.episodes as f64).sqrt()).collect());
    }
    Ok(PerturbGrid {
        scales: cfg.scales.clone(),
        mse,
        std_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predictor_columns_follow_convention() {
        assert_eq!(predictor_columns(1), (vec![0], 0));
        assert_eq!(predictor_columns(5), (vec![0, 1, 2, 3], 4));
    }

    #[test]
    fn xcorr_identity_and_one_dimension() {
        let cfg = SinesConfig { n: 40, horizon: 6, dim: 3, ..Default::default() };
        let ds = crate::data::generate_sines(&cfg, 2).unwrap();
        assert_eq!(xcorr_score(&ds, &ds).unwrap().score, 0.0);
        let one = SinesConfig { dim: 1, ..cfg };
        let a = crate::data::generate_sines(&one, 3).unwrap();
        let b = crate::data::generate_sines(&one, 4).unwrap();
        assert_eq!(xcorr_score(&a, &b).unwrap().score, 0.0);
    }

    #[test]
    fn xcorr_needs_thirty_samples() {
        let cfg = SinesConfig { n: 29, horizon: 6, dim: 2, ..Default::default() };
        let ds = crate::data::generate_sines(&cfg, 2).unwrap();
        assert!(xcorr_score(&ds, &ds).is_err());
    }
}
