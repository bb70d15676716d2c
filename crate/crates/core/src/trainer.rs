//! Training orchestration: maximum-likelihood, energy and critic
//! pretraining, interleaved joint updates, validation-based early stopping,
//! checkpoints, and the teacher-forcing baseline.
//!
//! A [`Trainer`] advances one gradient step at a time through its stages, so
//! a run can be checkpointed after any step and resumed exactly.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use timegci_nd::{Adam, AdamConfig, Module, Tape, Tensor};

use crate::critic::{self, CriticNet, TargetCritic};
use crate::data::{Dataset, Normalizer, Trajectory, BOUNDARY_EPS};
use crate::energy::{self, EnergyNet};
use crate::eval::{predictive_score, PredictorConfig};
use crate::policy::{self, PolicyNet};
use crate::replay::ReplayBuffer;
use crate::{seeded_rng, Error, Result, Rng};

macro_rules! train_config {
    ($($(#[$meta:meta])* $name:ident: $ty:ty = $default:expr,)*) => {
        /// Every knob of a training run. The flat `key = value` config file
        /// format uses exactly these field names.
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        pub struct TrainConfig {
            $($(#[$meta])* pub $name: $ty,)*
        }

        impl Default for TrainConfig {
            fn default() -> Self {
                Self { $($name: $default,)* }
            }
        }

        impl TrainConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($name)),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($name) => {
                        self.$name = value.trim().parse::<$ty>().map_err(|e| {
                            Error::Config(format!("{key} = {value:?}: {e}"))
                        })?;
                    })*
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            /// `(key, value)` pairs in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($name), self.$name.to_string()),)*]
            }
        }
    };
}

train_config! {
    /// Minibatch size `M` for every loss.
    batch_size: usize = 64,
    lr_energy: f64 = 1e-4,
    lr_policy: f64 = 1e-4,
    lr_critic: f64 = 1e-3,
    /// Discriminator learning rate for adversarial baselines; unused here.
    lr_discrim: f64 = 1e-3,
    /// Entropy temperature in the actor loss and the critic bootstrap.
    alpha: f64 = 1.0,
    polyak_rate: f64 = 0.005,
    buffer_capacity: usize = 10_000,
    pretrain_policy_steps: usize = 2000,
    pretrain_energy_steps: usize = 4000,
    pretrain_critic_steps: usize = 20_000,
    /// Joint (actor, energy, critic) update triplets.
    max_joint_steps: usize = 50_000,
    early_stop_interval: usize = 1000,
    /// Validations without improvement before stopping; 0 never stops early.
    early_stop_patience: usize = 5,
    /// Weight of the maximum-likelihood term in the policy loss. `inf`
    /// reduces joint training to pure maximum likelihood.
    kappa: f64 = 0.1,
    rollouts_per_iter: usize = 16,
    gradient_steps_per_iter: usize = 1,
    critic_updates_per_actor_update: usize = 4,
    /// Reparameterized samples per history in the actor loss.
    actor_samples: usize = 1,
    /// Draw energy-loss fakes from fresh rollouts instead of the buffer.
    fresh_fakes: bool = false,
    hidden_size: usize = 32,
    val_fraction: f64 = 0.2,
    val_rollouts: usize = 1000,
    val_predictor_steps: usize = 1000,
    /// Assert every 100 joint steps that each update touches only its own parameters.
    check_isolation: bool = false,
    seed: u64 = 0,
}

impl TrainConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg = Self::parse(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, lr) in [
            ("lr_energy", self.lr_energy),
            ("lr_policy", self.lr_policy),
            ("lr_critic", self.lr_critic),
            ("lr_discrim", self.lr_discrim),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be a positive number, got {lr}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.polyak_rate > 0.0 && self.polyak_rate <= 1.0) {
            return bad(format!("polyak_rate must lie in (0, 1], got {}", self.polyak_rate));
        }
        if self.kappa.is_nan() || self.kappa < 0.0 {
            return bad(format!("kappa must be >= 0, got {}", self.kappa));
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity must be >= batch_size".into());
        }
        for (name, v) in [
            ("early_stop_interval", self.early_stop_interval),
            ("rollouts_per_iter", self.rollouts_per_iter),
            ("gradient_steps_per_iter", self.gradient_steps_per_iter),
            ("critic_updates_per_actor_update", self.critic_updates_per_actor_update),
            ("actor_samples", self.actor_samples),
            ("hidden_size", self.hidden_size),
            ("val_rollouts", self.val_rollouts),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    TimeGci,
    /// Maximum likelihood with ground-truth conditioning only.
    TForcing,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "timegci" => Ok(Self::TimeGci),
            "tforcing" => Ok(Self::TForcing),
            _ => Err(Error::Config(format!("unknown method `{s}` (expected timegci or tforcing)"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::TimeGci => "timegci",
            Self::TForcing => "tforcing",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    PretrainPolicy,
    PretrainEnergy,
    PretrainCritic,
    Joint,
    Done,
}

/// Serializable generator position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    seed: [u8; 32],
    stream: u64,
    word_pos: [u64; 2],
}

impl RngState {
    pub fn capture(rng: &Rng) -> Self {
        let pos = rng.get_word_pos();
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: [pos as u64, (pos >> 64) as u64],
        }
    }

    pub fn restore(&self) -> Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos[0] as u128 | (self.word_pos[1] as u128) << 64);
        rng
    }
}

/// Energy model, critics, their optimizers and the replay buffer. Absent
/// for the teacher-forcing baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveState {
    pub energy: EnergyNet,
    pub critic: CriticNet,
    pub target: TargetCritic,
    pub opt_energy: Adam,
    pub opt_critic: Adam,
    pub buffer: ReplayBuffer,
}

/// Loss sums over the current validation interval.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct LossAccumulator {
    actor: f64,
    energy: f64,
    critic: f64,
    mle: f64,
    steps: usize,
}

/// Every piece of mutable training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    pub method: Method,
    pub horizon: usize,
    pub dim: usize,
    pub normalizer: Normalizer,
    pub policy: PolicyNet,
    pub opt_policy: Adam,
    pub contrastive: Option<ContrastiveState>,
    pub stage: Stage,
    /// Steps completed within the current stage.
    pub stage_step: usize,
    pub joint_step: usize,
    pub best_val: Option<f64>,
    pub best_step: Option<usize>,
    pub stale_validations: usize,
    rng: RngState,
    acc: LossAccumulator,
}

pub const CHECKPOINT_VERSION: u8 = 1;
const CHECKPOINT_MAGIC: &[u8; 4] = b"TGCI";

/// A [`TrainState`] on disk: one version byte, the magic `TGCI`, then the
/// bincode encoding of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = vec![CHECKPOINT_VERSION];
        out.extend_from_slice(CHECKPOINT_MAGIC);
        bincode::serialize_into(&mut out, &self.state).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match bytes.first() {
            None => return Err(Error::Checkpoint("empty file".into())),
            Some(&v) if v != CHECKPOINT_VERSION => {
                return Err(Error::Checkpoint(format!(
                    "unsupported version {v} (this build reads version {CHECKPOINT_VERSION})"
                )))
            }
            _ => {}
        }
        if bytes.get(1..5) != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(Error::Checkpoint("missing TGCI magic".into()));
        }
        let state = bincode::deserialize(&bytes[5..]).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Self { state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub loss_actor: Option<f64>,
    pub loss_energy: Option<f64>,
    pub loss_critic: Option<f64>,
    pub loss_mle: f64,
    pub val_predictive_score: f64,
}

impl MetricsRow {
    pub const HEADER: &'static str = "step,loss_actor,loss_energy,loss_critic,loss_mle,val_predictive_score";

    pub fn to_csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        format!(
            "{},{},{},{},{},{}",
            self.step,
            opt(self.loss_actor),
            opt(self.loss_energy),
            opt(self.loss_critic),
            self.loss_mle,
            self.val_predictive_score
        )
    }
}

/// What one call to [`Trainer::advance`] did.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    /// A pretraining step with its loss.
    Pretrain { stage: Stage, step: usize, loss: f64 },
    /// A joint step; `metrics` is set when it ended a validation interval.
    Joint { step: usize, metrics: Option<MetricsRow>, improved: bool },
    Finished,
}

pub struct Trainer {
    pub state: TrainState,
    train: Dataset,
    val_raw: Dataset,
    rng: Rng,
}

impl Trainer {
    /// `data` must already be normalized with `normalizer`. It is split into
    /// training and validation parts; training values are pulled inside the
    /// open unit interval.
    pub fn new(config: TrainConfig, method: Method, data: &Dataset, normalizer: Normalizer) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Invalid("training data is empty".into()));
        }
        let mut rng = seeded_rng(config.seed);
        let (horizon, dim) = (data.horizon(), data.dim());
        let policy = PolicyNet::new(dim, config.hidden_size, &mut rng);
        let contrastive = match method {
            Method::TimeGci => {
                let energy = EnergyNet::new(dim, config.hidden_size, &mut rng);
                let critic = CriticNet::new(dim, config.hidden_size, &mut rng);
                Some(ContrastiveState {
                    target: TargetCritic::from_online(&critic),
                    energy,
                    critic,
                    opt_energy: Adam::new(AdamConfig::with_lr(config.lr_energy)),
                    opt_critic: Adam::new(AdamConfig::with_lr(config.lr_critic)),
                    buffer: ReplayBuffer::new(config.buffer_capacity, horizon, dim)?,
                })
            }
            Method::TForcing => None,
        };
        let state = TrainState {
            opt_policy: Adam::new(AdamConfig::with_lr(config.lr_policy)),
            config,
            method,
            horizon,
            dim,
            normalizer,
            policy,
            contrastive,
            stage: Stage::PretrainPolicy,
            stage_step: 0,
            joint_step: 0,
            best_val: None,
            best_step: None,
            stale_validations: 0,
            rng: RngState::capture(&rng),
            acc: LossAccumulator::default(),
        };
        Self::from_state(state, data)
    }

    /// Rebuilds a trainer from saved state and the same normalized data.
    pub fn from_state(state: TrainState, data: &Dataset) -> Result<Self> {
        if (data.horizon(), data.dim()) != (state.horizon, state.dim) {
            return Err(Error::Shape(format!(
                "checkpoint was trained on {} x {} data, got {} x {}",
                state.horizon,
                state.dim,
                data.horizon(),
                data.dim()
            )));
        }
        let (val, train) = data.split(state.config.val_fraction, state.config.seed ^ 0x5eed)?;
        if train.len() < state.config.batch_size || val.is_empty() {
            return Err(Error::Invalid(format!(
                "{} trajectories are too few for batch_size {} with a validation split",
                data.len(),
                state.config.batch_size
            )));
        }
        let train = train.map(|t| Ok(t.clipped(BOUNDARY_EPS)))?;
        let val_raw = state.normalizer.invert_dataset(&val)?;
        let rng = state.rng.restore();
        Ok(Self {
            state,
            train,
            val_raw,
            rng,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut state = self.state.clone();
        state.rng = RngState::capture(&self.rng);
        Checkpoint { state }
    }

    pub fn train_data(&self) -> &Dataset {
        &self.train
    }

    pub fn policy(&self) -> &PolicyNet {
        &self.state.policy
    }

    pub fn contrastive(&self) -> Option<&ContrastiveState> {
        self.state.contrastive.as_ref()
    }

    fn stage_budget(&self, stage: Stage) -> usize {
        let c = &self.state.config;
        match stage {
            Stage::PretrainPolicy => c.pretrain_policy_steps,
            Stage::PretrainEnergy => c.pretrain_energy_steps,
            Stage::PretrainCritic => c.pretrain_critic_steps,
            Stage::Joint => c.max_joint_steps,
            Stage::Done => 0,
        }
    }

    fn next_stage(&self, stage: Stage) -> Stage {
        match (stage, self.state.method) {
            (Stage::PretrainPolicy, Method::TimeGci) => Stage::PretrainEnergy,
            (Stage::PretrainPolicy, Method::TForcing) => Stage::Joint,
            (Stage::PretrainEnergy, _) => Stage::PretrainCritic,
            (Stage::PretrainCritic, _) => Stage::Joint,
            (Stage::Joint | Stage::Done, _) => Stage::Done,
        }
    }

    /// Performs one gradient step of the current stage.
    pub fn advance(&mut self) -> Result<Event> {
        while self.state.stage != Stage::Done && self.state.stage_step >= self.stage_budget(self.state.stage) {
            self.state.stage = self.next_stage(self.state.stage);
            self.state.stage_step = 0;
        }
        let stage = self.state.stage;
        let step = self.state.stage_step;
        let event = match stage {
            Stage::Done => return Ok(Event::Finished),
            Stage::PretrainPolicy => Event::Pretrain {
                stage,
                step,
                loss: self.policy_mle_step(step as u64)?,
            },
            Stage::PretrainEnergy => Event::Pretrain {
                stage,
                step,
                loss: self.pretrain_energy_step(step as u64)?,
            },
            Stage::PretrainCritic => {
                if step == 0 {
                    self.seed_buffer()?;
                }
                let loss = self.critic_step(step as u64)?;
                if loss > 1e6 {
                    return Err(Error::Diverged {
                        value: loss,
                        step: step as u64,
                    });
                }
                Event::Pretrain { stage, step, loss }
            }
            Stage::Joint => self.joint_step()?,
        };
        self.state.stage_step += 1;
        if self.state.stage == Stage::Done {
            self.state.stage_step = 0;
        }
        Ok(event)
    }

    /// Runs to completion, passing every event to `on_event`.
    pub fn run(&mut self, mut on_event: impl FnMut(&Trainer, &Event) -> Result<()>) -> Result<()> {
        loop {
            let event = self.advance()?;
            on_event(self, &event)?;
            if event == Event::Finished {
                return Ok(());
            }
        }
    }

    fn real_batch(&mut self) -> Vec<Trajectory> {
        let pool = self.train.trajectories();
        index::sample(&mut self.rng, pool.len(), self.state.config.batch_size)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect()
    }

    fn policy_mle_step(&mut self, step: u64) -> Result<f64> {
        let batch: Vec<Trajectory> = self.real_batch();
        let refs: Vec<&Trajectory> = batch.iter().collect();
        let mut tape = Tape::new();
        let vars = self.state.policy.bind(&mut tape, true);
        let loss = policy::mle_loss_on(&mut tape, &vars, &refs)?;
        let value = finite(tape.value(loss).item(), "mle", step)?;
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor> = vars.vars().iter().map(|&v| grads.wrt(v)).collect();
        self.state.opt_policy.step(self.state.policy.params_mut(), &g)?;
        Ok(value)
    }

    fn pretrain_energy_step(&mut self, step: u64) -> Result<f64> {
        let (m, horizon) = (self.state.config.batch_size, self.state.horizon);
        let real: Vec<Trajectory> = self.real_batch();
        let fake = self.state.policy.sample_trajectories(m, horizon, &mut self.rng)?;
        self.energy_update(&real.iter().collect::<Vec<_>>(), &fake.iter().collect::<Vec<_>>(), step)
    }

    fn energy_update(&mut self, real: &[&Trajectory], fake: &[&Trajectory], step: u64) -> Result<f64> {
        let st = &mut self.state;
        let cs = st.contrastive.as_mut().expect("contrastive state");
        let mut tape = Tape::new();
        let vars = cs.energy.bind(&mut tape, true);
        let loss = energy::energy_loss_on(&mut tape, &vars, &st.policy, real, fake)?;
        let value = finite(tape.value(loss).item(), "energy", step)?;
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor> = vars.vars().iter().map(|&v| grads.wrt(v)).collect();
        cs.opt_energy.step(cs.energy.params_mut(), &g)?;
        Ok(value)
    }

    /// Fills the replay buffer with rollouts of the current policy.
    fn seed_buffer(&mut self) -> Result<()> {
        let horizon = self.state.horizon;
        let cs = self.state.contrastive.as_mut().expect("contrastive state");
        let n = cs.buffer.capacity() - cs.buffer.len();
        for chunk in (0..n).collect::<Vec<_>>().chunks(1024) {
            for t in self.state.policy.sample_trajectories(chunk.len(), horizon, &mut self.rng)? {
                cs.buffer.push(t)?;
            }
        }
        Ok(())
    }

    fn critic_step(&mut self, step: u64) -> Result<f64> {
        let c = self.state.config.clone();
        let st = &mut self.state;
        let cs = st.contrastive.as_mut().expect("contrastive state");
        let transitions = cs.buffer.sample_transitions(c.batch_size, &mut self.rng)?;
        let targets = critic::bellman_targets(&cs.target, &st.policy, &cs.energy, &transitions, c.alpha, &mut self.rng)?;
        let mut tape = Tape::new();
        let vars = cs.critic.bind(&mut tape, true);
        let loss = critic::critic_loss_on(&mut tape, &vars, &targets, &transitions)?;
        let value = finite(tape.value(loss).item(), "critic", step)?;
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor> = vars.vars().iter().map(|&v| grads.wrt(v)).collect();
        cs.opt_critic.step(cs.critic.params_mut(), &g)?;
        cs.target.update(&cs.critic, c.polyak_rate)?;
        Ok(value)
    }

    /// Actor loss plus `kappa` times the MLE loss, or the MLE loss alone when
    /// `kappa` is infinite. Returns `(actor, mle)`.
    fn policy_step(&mut self, step: u64) -> Result<(Option<f64>, f64)> {
        let c = self.state.config.clone();
        let real: Vec<Trajectory> = self.real_batch();
        let real: Vec<&Trajectory> = real.iter().collect();
        let st = &mut self.state;
        let mut tape = Tape::new();
        let vars = st.policy.bind(&mut tape, true);
        let mle = policy::mle_loss_on(&mut tape, &vars, &real)?;
        let mle_value = finite(tape.value(mle).item(), "mle", step)?;
        let (loss, actor_value) = match (&st.contrastive, c.kappa.is_finite()) {
            (Some(cs), true) => {
                let histories = cs.buffer.sample_histories(c.batch_size, &mut self.rng)?;
                let mut actor_terms = Vec::with_capacity(c.actor_samples);
                for _ in 0..c.actor_samples {
                    let eps = policy::normal_matrix(histories.len(), st.dim, &mut self.rng);
                    actor_terms.push(policy::actor_loss_on(&mut tape, &vars, &cs.critic, &histories, c.alpha, &eps)?);
                }
                let mut actor = actor_terms[0];
                for &a in &actor_terms[1..] {
                    actor = tape.add(actor, a)?;
                }
                let actor = tape.scale(actor, 1.0 / c.actor_samples as f64);
                let actor_value = finite(tape.value(actor).item(), "actor", step)?;
                let reg = tape.scale(mle, c.kappa);
                (tape.add(actor, reg)?, Some(actor_value))
            }
            _ => (mle, None),
        };
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor> = vars.vars().iter().map(|&v| grads.wrt(v)).collect();
        st.opt_policy.step(st.policy.params_mut(), &g)?;
        Ok((actor_value, mle_value))
    }

    fn joint_step(&mut self) -> Result<Event> {
        let c = self.state.config.clone();
        let step = self.state.joint_step as u64;
        let contrastive = self.state.contrastive.is_some() && c.kappa.is_finite();

        if contrastive && self.state.joint_step % c.gradient_steps_per_iter == 0 {
            let fresh = self.state.policy.sample_trajectories(c.rollouts_per_iter, self.state.horizon, &mut self.rng)?;
            let cs = self.state.contrastive.as_mut().expect("contrastive state");
            for t in fresh {
                cs.buffer.push(t)?;
            }
        }

        let check = c.check_isolation && self.state.joint_step % 100 == 0;
        let before = check.then(|| self.snapshot());
        let (actor, mle) = self.policy_step(step)?;
        if let Some(b) = &before {
            self.assert_changed(b, [true, false, false, false], "actor")?;
        }

        let mut energy_loss = None;
        let mut critic_loss = None;
        if contrastive {
            let before = check.then(|| self.snapshot());
            let real: Vec<Trajectory> = self.real_batch();
            let fake: Vec<Trajectory> = if c.fresh_fakes {
                self.state.policy.sample_trajectories(c.batch_size, self.state.horizon, &mut self.rng)?
            } else {
                let cs = self.state.contrastive.as_ref().expect("contrastive state");
                cs.buffer.sample_trajectories(c.batch_size, &mut self.rng)?.into_iter().cloned().collect()
            };
            energy_loss = Some(self.energy_update(&real.iter().collect::<Vec<_>>(), &fake.iter().collect::<Vec<_>>(), step)?);
            if let Some(b) = &before {
                self.assert_changed(b, [false, true, false, false], "energy")?;
            }

            let before = check.then(|| self.snapshot());
            let mut total = 0.0;
            for _ in 0..c.critic_updates_per_actor_update {
                total += self.critic_step(step)?;
            }
            critic_loss = Some(total / c.critic_updates_per_actor_update as f64);
            if let Some(b) = &before {
                self.assert_changed(b, [false, false, true, true], "critic")?;
            }
        }

        let acc = &mut self.state.acc;
        acc.actor += actor.unwrap_or(0.0);
        acc.energy += energy_loss.unwrap_or(0.0);
        acc.critic += critic_loss.unwrap_or(0.0);
        acc.mle += mle;
        acc.steps += 1;
        self.state.joint_step += 1;

        let done = self.state.joint_step;
        let mut metrics = None;
        let mut improved = false;
        if done % c.early_stop_interval == 0 || done == c.max_joint_steps {
            let val = self.validation_score()?;
            let acc = std::mem::take(&mut self.state.acc);
            let n = acc.steps.max(1) as f64;
            metrics = Some(MetricsRow {
                step: done,
                loss_actor: actor.map(|_| acc.actor / n),
                loss_energy: energy_loss.map(|_| acc.energy / n),
                loss_critic: critic_loss.map(|_| acc.critic / n),
                loss_mle: acc.mle / n,
                val_predictive_score: val,
            });
            if self.state.best_val.is_none_or(|b| val < b) {
                self.state.best_val = Some(val);
                self.state.best_step = Some(done);
                self.state.stale_validations = 0;
                improved = true;
            } else {
                self.state.stale_validations += 1;
                if c.early_stop_patience > 0 && self.state.stale_validations >= c.early_stop_patience {
                    self.state.stage = Stage::Done;
                }
            }
        }
        Ok(Event::Joint {
            step: done,
            metrics,
            improved,
        })
    }

    /// One-step predictive score of rollouts against the held-out split, on
    /// the raw data scale. Uses its own generator so that validation does not
    /// perturb training.
    pub fn validation_score(&self) -> Result<f64> {
        let c = &self.state.config;
        let mut rng = seeded_rng(c.seed ^ (self.state.joint_step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let synth = self.state.policy.sample_trajectories(c.val_rollouts, self.state.horizon, &mut rng)?;
        let synth = self.state.normalizer.invert_dataset(&Dataset::new("synthetic", synth)?)?;
        let cfg = PredictorConfig {
            steps: c.val_predictor_steps,
            ..PredictorConfig::default()
        };
        predictive_score(&synth, &self.val_raw, 1, &cfg, c.seed)
    }

    fn snapshot(&self) -> [Vec<f64>; 4] {
        let st = &self.state;
        let cs = st.contrastive.as_ref();
        [
            st.policy.flat_params(),
            cs.map_or(Vec::new(), |c| c.energy.flat_params()),
            cs.map_or(Vec::new(), |c| c.critic.flat_params()),
            cs.map_or(Vec::new(), |c| c.target.net.flat_params()),
        ]
    }

    fn assert_changed(&self, before: &[Vec<f64>; 4], allowed: [bool; 4], update: &str) -> Result<()> {
        let after = self.snapshot();
        let names = ["policy", "energy", "critic", "target critic"];
        for i in 0..4 {
            if !allowed[i] && before[i] != after[i] {
                return Err(Error::Invalid(format!("{update} update modified the {} parameters", names[i])));
            }
        }
        Ok(())
    }
}

fn finite(value: f64, loss: &'static str, step: u64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss { loss, step })
    }
}

/// Output of a complete run.
pub struct TrainOutcome {
    /// Checkpoint at the best validation score (the final state if no
    /// validation happened).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub metrics: Vec<MetricsRow>,
}

/// Runs every stage of `method` and returns the best checkpoint.
pub fn train(config: TrainConfig, method: Method, data: &Dataset, normalizer: Normalizer) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, method, data, normalizer)?;
    let mut metrics = Vec::new();
    let mut best = None;
    trainer.run(|t, e| {
        if let Event::Joint { metrics: Some(m), improved, .. } = e {
            metrics.push(m.clone());
            if *improved {
                best = Some(t.checkpoint());
            }
        }
        Ok(())
    })?;
    let last = trainer.checkpoint();
    Ok(TrainOutcome {
        best: best.unwrap_or_else(|| last.clone()),
        last,
        metrics,
    })
}

pub fn train_joint(config: TrainConfig, data: &Dataset, normalizer: Normalizer) -> Result<TrainOutcome> {
    train(config, Method::TimeGci, data, normalizer)
}

/// Teacher forcing: maximum likelihood for the pretraining budget plus the
/// joint budget, validated on the same schedule as the joint stage.
pub fn train_tforcing(config: TrainConfig, data: &Dataset, normalizer: Normalizer) -> Result<TrainOutcome> {
    train(config, Method::TForcing, data, normalizer)
}
