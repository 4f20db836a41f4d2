//! Training loop: rollout collection, joint encoder and policy updates,
//! evaluation, checkpointing, and the two comparison baselines.

mod checkpoint;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::citysim::{Action, Environment};
use crate::config::ExperimentConfig;
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::metrics::{MetricsRecord, Phase};
use crate::preproc::{encode_observation, feature_count, ObservationWindow};
use crate::rlcore::{
    greedy_action, Agent, Objective, PPOConfig, PolicyValueParams, RolloutBuffer, Transition,
};
use crate::rng::CounterRng;

pub use checkpoint::{CheckpointMeta, CHECKPOINT_VERSION};

/// Environment episode index offset used by evaluation episodes, keeping
/// their streams disjoint from training episodes.
pub const EVAL_EPISODE_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Transformer state encoder, clipped-surrogate PPO.
    TransformerPpo,
    /// Newest observation row fed straight to the policy trunk.
    MlpPpo,
    /// Transformer encoder with one unclipped policy-gradient pass per
    /// rollout.
    TransformerPg,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Self::TransformerPpo, Self::MlpPpo, Self::TransformerPg];

    pub fn tag(self) -> &'static str {
        match self {
            Self::TransformerPpo => "transformer-ppo",
            Self::MlpPpo => "mlp-ppo",
            Self::TransformerPg => "transformer-pg",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.tag() == tag)
            .ok_or_else(|| Error::Config {
                violations: vec![format!(
                    "train.variant must be transformer-ppo, mlp-ppo or transformer-pg, got {tag:?}"
                )],
            })
    }

    pub fn uses_encoder(self) -> bool {
        self != Self::MlpPpo
    }

    pub fn objective(self) -> Objective {
        match self {
            Self::TransformerPg => Objective::PolicyGradient,
            _ => Objective::ClippedSurrogate,
        }
    }

    /// PPO settings actually used by this variant.
    pub fn effective_ppo(self, ppo: &PPOConfig) -> PPOConfig {
        match self {
            Self::TransformerPg => PPOConfig { epochs: 1, ..*ppo },
            _ => *ppo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    /// An update runs at the first episode boundary with at least this many
    /// stored transitions.
    pub steps_per_update: usize,
    /// Run a greedy evaluation episode after every `eval_interval` training
    /// episodes; `0` disables.
    pub eval_interval: usize,
    pub seed: u64,
    pub variant: Variant,
    pub hidden: usize,
    /// Checkpoint file stem relative to the output directory; empty disables.
    pub checkpoint: String,
    pub checkpoint_interval: usize,
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            steps_per_update: 48,
            eval_interval: 0,
            seed: 0,
            variant: Variant::TransformerPpo,
            hidden: 64,
            checkpoint: String::new(),
            checkpoint_interval: 0,
            wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.episodes == 0 {
            v.push("train.episodes must be >= 1".to_string());
        }
        if self.steps_per_update == 0 {
            v.push("train.steps_per_update must be >= 1".to_string());
        }
        if self.hidden == 0 {
            v.push("train.hidden must be >= 1".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { violations: v })
        }
    }
}

/// Totals for one [`collect_rollout`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutSummary {
    pub steps: usize,
    /// Sum of the rewards collected in this call.
    pub reward: f64,
    pub done: bool,
}

/// Collects up to `steps` transitions into `buffer`, stopping early at the
/// end of the episode.
///
/// `window` must hold the current observation as its newest row. If the
/// environment has finished (or the window is empty) the environment is
/// reset into its next episode first.
pub fn collect_rollout(
    env: &mut Environment,
    agent: &Agent,
    window: &mut ObservationWindow,
    steps: usize,
    rng: &mut CounterRng,
    buffer: &mut RolloutBuffer,
) -> Result<RolloutSummary> {
    let specs = env.sensor_specs().to_vec();
    if env.is_done() || window.valid_rows() == 0 {
        let obs = env.reset();
        window.clear();
        window.push(encode_observation(&obs, &specs)?)?;
    }
    let mut summary = RolloutSummary {
        steps: 0,
        reward: 0.0,
        done: false,
    };
    for _ in 0..steps {
        let (a, log_prob, value) = agent.act(window, rng)?;
        let out = env.step(Action::from_index(a)?)?;
        buffer.push(Transition {
            window: window.clone(),
            action: a,
            reward: out.reward,
            done: out.done,
            log_prob,
            value,
        })?;
        summary.steps += 1;
        summary.reward += out.reward;
        if out.done {
            summary.done = true;
            break;
        }
        window.push(encode_observation(&out.observation, &specs)?)?;
    }
    Ok(summary)
}

/// A training run in progress.
#[derive(Debug)]
pub struct Trainer {
    cfg: ExperimentConfig,
    env: Environment,
    agent: Agent,
    buffer: RolloutBuffer,
    window: ObservationWindow,
    episode: usize,
    action_rng: CounterRng,
    update_rng: CounterRng,
}

impl Trainer {
    /// Validates `cfg` and initializes all parameters from `train.seed`.
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let env = Environment::new(cfg.scenario.clone())?;
        let features = feature_count(env.sensor_specs());
        let seed = cfg.train.seed;
        let variant = cfg.train.variant;
        let ppo = variant.effective_ppo(&cfg.ppo);

        let encoder = if variant.uses_encoder() {
            let mut rng = CounterRng::stream(seed, "init.encoder", 0);
            Some(EncoderParams::init(cfg.resolved_encoder()?, &mut rng)?)
        } else {
            None
        };
        let input = encoder.as_ref().map_or(features, |e| e.config().d_model);
        let mut rng = CounterRng::stream(seed, "init.policy", 0);
        let policy = PolicyValueParams::init(input, cfg.train.hidden, Action::COUNT, &mut rng)?;
        let agent = Agent::new(encoder, policy, &ppo)?;

        let capacity = cfg.train.steps_per_update + cfg.scenario.steps;
        Ok(Self {
            window: ObservationWindow::new(cfg.encoder.window, features)?,
            buffer: RolloutBuffer::new(capacity),
            action_rng: CounterRng::stream(seed, "actions", 0),
            update_rng: CounterRng::stream(seed, "updates", 0),
            episode: 0,
            env,
            agent,
            cfg,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    /// Episodes completed so far.
    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn is_finished(&self) -> bool {
        self.episode >= self.cfg.train.episodes
    }

    pub fn run_id(&self) -> String {
        format!("{}-s{}", self.cfg.train.variant.tag(), self.cfg.train.seed)
    }

    fn record(&self, episode: usize, phase: Phase) -> Result<MetricsRecord> {
        let m = self.env.metrics()?;
        Ok(MetricsRecord {
            run_id: self.run_id(),
            variant: self.cfg.train.variant.tag().to_string(),
            seed: self.cfg.train.seed,
            episode,
            phase,
            total_reward: m.total_reward,
            completion_mean: m.completion_mean,
            completion_p95: m.completion_p95,
            response: m.response_mean,
            latency_mean: m.latency_mean,
            update: None,
            wall_clock: None,
        })
    }

    /// Runs one training episode (plus the update and evaluation it
    /// triggers) and returns its records.
    pub fn train_episode(&mut self) -> Result<Vec<MetricsRecord>> {
        if self.is_finished() {
            return Err(Error::usage("training already finished"));
        }
        let started = Instant::now();
        let ep = self.episode;
        let specs = self.env.sensor_specs().to_vec();
        let obs = self.env.reset_episode(ep as u64);
        self.window.clear();
        self.window.push(encode_observation(&obs, &specs)?)?;
        let steps = self.cfg.scenario.steps;
        let summary = collect_rollout(
            &mut self.env,
            &self.agent,
            &mut self.window,
            steps,
            &mut self.action_rng,
            &mut self.buffer,
        )?;
        debug_assert!(summary.done);

        let mut rec = self.record(ep, Phase::Train)?;
        if self.buffer.len() >= self.cfg.train.steps_per_update {
            let variant = self.cfg.train.variant;
            let ppo = variant.effective_ppo(&self.cfg.ppo);
            self.buffer.compute_advantages(0.0, ppo.gamma, ppo.lambda)?;
            let stats = self.agent.update(
                &mut self.buffer,
                &ppo,
                variant.objective(),
                &mut self.update_rng,
            )?;
            rec.update = Some(stats);
        }
        self.episode += 1;
        if self.cfg.train.wall_clock {
            rec.wall_clock = Some(started.elapsed().as_secs_f64());
        }
        let mut out = vec![rec];

        let k = self.cfg.train.eval_interval;
        if k > 0 && self.episode.is_multiple_of(k) {
            out.push(self.evaluate(EVAL_EPISODE_BASE + ep as u64, ep)?);
        }
        Ok(out)
    }

    /// Plays one greedy episode on environment episode `env_episode`.
    fn evaluate(&mut self, env_episode: u64, label: usize) -> Result<MetricsRecord> {
        let specs = self.env.sensor_specs().to_vec();
        let mut window = ObservationWindow::new(self.cfg.encoder.window, feature_count(&specs))?;
        let obs = self.env.reset_episode(env_episode);
        window.push(encode_observation(&obs, &specs)?)?;
        loop {
            let (logits, _) = self.agent.evaluate(&window)?;
            let out = self.env.step(Action::from_index(greedy_action(&logits))?)?;
            if out.done {
                break;
            }
            window.push(encode_observation(&out.observation, &specs)?)?;
        }
        self.record(label, Phase::Eval)
    }

    /// Trains until `train.episodes`, handing every record to `sink`.
    ///
    /// With `checkpoint_dir` set and a non-empty `train.checkpoint`, a
    /// checkpoint is written every `checkpoint_interval` episodes and at the
    /// end.
    pub fn run(
        &mut self,
        checkpoint_dir: Option<&Path>,
        mut sink: impl FnMut(&MetricsRecord) -> Result<()>,
    ) -> Result<()> {
        while !self.is_finished() {
            for r in self.train_episode()? {
                sink(&r)?;
            }
            if let Some(dir) = checkpoint_dir {
                let t = &self.cfg.train;
                let due = self.is_finished()
                    || (t.checkpoint_interval > 0
                        && self.episode.is_multiple_of(t.checkpoint_interval));
                if !t.checkpoint.is_empty() && due && self.buffer.is_empty() {
                    self.save_checkpoint(&dir.join(&t.checkpoint))?;
                }
            }
        }
        Ok(())
    }

    /// Extends the run to `episodes` total episodes.
    pub fn set_episodes(&mut self, episodes: usize) -> Result<()> {
        if episodes == 0 {
            return Err(Error::Config {
                violations: vec!["train.episodes must be >= 1".into()],
            });
        }
        self.cfg.train.episodes = episodes;
        Ok(())
    }
}

/// Runs a full training job and returns its metrics stream.
pub fn train_loop(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    let mut t = Trainer::new(cfg.clone())?;
    let mut out = Vec::new();
    t.run(None, |r| {
        out.push(r.clone());
        Ok(())
    })?;
    Ok(out)
}

/// [`train_loop`] with the encoder replaced by the newest observation row.
pub fn baseline_mlp(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    let mut c = cfg.clone();
    c.train.variant = Variant::MlpPpo;
    train_loop(&c)
}

/// [`train_loop`] with a single unclipped policy-gradient pass per rollout.
pub fn baseline_transformer_pg(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    let mut c = cfg.clone();
    c.train.variant = Variant::TransformerPg;
    train_loop(&c)
}
