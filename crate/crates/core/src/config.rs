//! Flat `section.key = value` experiment configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Unknown or repeated keys are errors. Keys not present keep their
//! defaults.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::citysim::ScenarioConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::preproc::feature_count;
use crate::rlcore::PPOConfig;
use crate::train::{TrainConfig, Variant};

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("encoder.d_model", "embedding width"),
    ("encoder.heads", "attention heads; must divide d_model"),
    ("encoder.layers", "encoder blocks"),
    ("encoder.d_ff", "feed-forward hidden width"),
    ("encoder.window", "observation window length W"),
    ("encoder.dropout", "dropout rate during updates, in [0, 1)"),
    (
        "encoder.positional",
        "add sinusoidal positional encodings (true/false)",
    ),
    ("ppo.clip", "clip range epsilon, in (0, 1)"),
    ("ppo.gamma", "discount factor"),
    ("ppo.lambda", "GAE lambda"),
    ("ppo.epochs", "optimization epochs per update"),
    ("ppo.minibatch", "minibatch size"),
    ("ppo.value_coef", "value-loss coefficient"),
    ("ppo.entropy_coef", "entropy-bonus coefficient"),
    (
        "ppo.max_grad_norm",
        "global gradient-norm ceiling; 0 disables",
    ),
    ("ppo.learning_rate", "Adam step size"),
    (
        "ppo.normalize_advantages",
        "standardize advantages per update (true/false)",
    ),
    ("scenario.traffic_devices", "traffic flow sensors"),
    ("scenario.environmental_devices", "environmental monitors"),
    ("scenario.safety_devices", "public-safety units"),
    ("scenario.steps", "decision steps per episode T"),
    ("scenario.step_seconds", "simulated seconds per step"),
    (
        "scenario.traffic_rate",
        "task arrivals per traffic device per step",
    ),
    (
        "scenario.environmental_rate",
        "task arrivals per environmental device per step",
    ),
    (
        "scenario.safety_rate",
        "task arrivals per safety device per step",
    ),
    ("scenario.modulation", "daily load amplitude, in [0, 1]"),
    ("scenario.capacity", "tasks served per step"),
    (
        "scenario.queue_limit",
        "per-class queue bound; excess arrivals are rejected",
    ),
    ("scenario.completion_weight", "reward per completed task"),
    (
        "scenario.latency_weight",
        "penalty per second of mean queue wait",
    ),
    ("scenario.backlog_weight", "penalty per pending task"),
    (
        "scenario.alert_probability",
        "per-device chance of a critical safety reading",
    ),
    (
        "scenario.memory_variant",
        "enable delayed incident rewards (true/false)",
    ),
    (
        "scenario.memory_bonus",
        "reward for a timely incident dispatch",
    ),
    ("scenario.traffic_max", "traffic flow calibration maximum"),
    ("scenario.aqi_max", "air-quality calibration maximum"),
    (
        "scenario.queue_gauge_max",
        "queue gauge calibration maximum",
    ),
    ("scenario.seed", "environment master seed"),
    ("train.episodes", "training episodes N"),
    ("train.steps_per_update", "minimum transitions per update"),
    (
        "train.eval_interval",
        "greedy evaluation episode every k episodes; 0 disables",
    ),
    ("train.seed", "parameter, action and shuffle seed"),
    (
        "train.variant",
        "transformer-ppo | mlp-ppo | transformer-pg",
    ),
    ("train.hidden", "policy trunk width"),
    (
        "train.checkpoint",
        "checkpoint file stem inside the output directory; empty disables",
    ),
    (
        "train.checkpoint_interval",
        "episodes between checkpoints; 0 saves only at the end",
    ),
    (
        "train.wall_clock",
        "record wall-clock seconds in metrics (breaks byte determinism)",
    ),
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub encoder: EncoderConfig,
    pub ppo: PPOConfig,
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: Display,
{
    v.parse::<T>()
        .map_err(|e| format!("invalid value {v:?}: {e}"))
}

impl ExperimentConfig {
    /// Assigns one key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        let (e, p, s, t) = (
            &mut self.encoder,
            &mut self.ppo,
            &mut self.scenario,
            &mut self.train,
        );
        match key {
            "encoder.d_model" => e.d_model = parse(v)?,
            "encoder.heads" => e.heads = parse(v)?,
            "encoder.layers" => e.layers = parse(v)?,
            "encoder.d_ff" => e.d_ff = parse(v)?,
            "encoder.window" => e.window = parse(v)?,
            "encoder.dropout" => e.dropout = parse(v)?,
            "encoder.positional" => e.positional = parse(v)?,
            "ppo.clip" => p.clip = parse(v)?,
            "ppo.gamma" => p.gamma = parse(v)?,
            "ppo.lambda" => p.lambda = parse(v)?,
            "ppo.epochs" => p.epochs = parse(v)?,
            "ppo.minibatch" => p.minibatch = parse(v)?,
            "ppo.value_coef" => p.value_coef = parse(v)?,
            "ppo.entropy_coef" => p.entropy_coef = parse(v)?,
            "ppo.max_grad_norm" => p.max_grad_norm = parse(v)?,
            "ppo.learning_rate" => p.learning_rate = parse(v)?,
            "ppo.normalize_advantages" => p.normalize_advantages = parse(v)?,
            "scenario.traffic_devices" => s.traffic_devices = parse(v)?,
            "scenario.environmental_devices" => s.environmental_devices = parse(v)?,
            "scenario.safety_devices" => s.safety_devices = parse(v)?,
            "scenario.steps" => s.steps = parse(v)?,
            "scenario.step_seconds" => s.step_seconds = parse(v)?,
            "scenario.traffic_rate" => s.traffic_rate = parse(v)?,
            "scenario.environmental_rate" => s.environmental_rate = parse(v)?,
            "scenario.safety_rate" => s.safety_rate = parse(v)?,
            "scenario.modulation" => s.modulation = parse(v)?,
            "scenario.capacity" => s.capacity = parse(v)?,
            "scenario.queue_limit" => s.queue_limit = parse(v)?,
            "scenario.completion_weight" => s.completion_weight = parse(v)?,
            "scenario.latency_weight" => s.latency_weight = parse(v)?,
            "scenario.backlog_weight" => s.backlog_weight = parse(v)?,
            "scenario.alert_probability" => s.alert_probability = parse(v)?,
            "scenario.memory_variant" => s.memory_variant = parse(v)?,
            "scenario.memory_bonus" => s.memory_bonus = parse(v)?,
            "scenario.traffic_max" => s.traffic_max = parse(v)?,
            "scenario.aqi_max" => s.aqi_max = parse(v)?,
            "scenario.queue_gauge_max" => s.queue_gauge_max = parse(v)?,
            "scenario.seed" => s.seed = parse(v)?,
            "train.episodes" | "train.n_episodes" => t.episodes = parse(v)?,
            "train.steps_per_update" => t.steps_per_update = parse(v)?,
            "train.eval_interval" => t.eval_interval = parse(v)?,
            "train.seed" => t.seed = parse(v)?,
            "train.variant" => t.variant = Variant::from_tag(v).map_err(|e| e.to_string())?,
            "train.hidden" => t.hidden = parse(v)?,
            "train.checkpoint" => t.checkpoint = v.to_string(),
            "train.checkpoint_interval" => t.checkpoint_interval = parse(v)?,
            "train.wall_clock" => t.wall_clock = parse(v)?,
            _ => return Err("unknown key".to_string()),
        }
        Ok(())
    }

    /// All keys with their current values, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (e, p, s, t) = (&self.encoder, &self.ppo, &self.scenario, &self.train);
        let values: Vec<String> = vec![
            e.d_model.to_string(),
            e.heads.to_string(),
            e.layers.to_string(),
            e.d_ff.to_string(),
            e.window.to_string(),
            e.dropout.to_string(),
            e.positional.to_string(),
            p.clip.to_string(),
            p.gamma.to_string(),
            p.lambda.to_string(),
            p.epochs.to_string(),
            p.minibatch.to_string(),
            p.value_coef.to_string(),
            p.entropy_coef.to_string(),
            p.max_grad_norm.to_string(),
            p.learning_rate.to_string(),
            p.normalize_advantages.to_string(),
            s.traffic_devices.to_string(),
            s.environmental_devices.to_string(),
            s.safety_devices.to_string(),
            s.steps.to_string(),
            s.step_seconds.to_string(),
            s.traffic_rate.to_string(),
            s.environmental_rate.to_string(),
            s.safety_rate.to_string(),
            s.modulation.to_string(),
            s.capacity.to_string(),
            s.queue_limit.to_string(),
            s.completion_weight.to_string(),
            s.latency_weight.to_string(),
            s.backlog_weight.to_string(),
            s.alert_probability.to_string(),
            s.memory_variant.to_string(),
            s.memory_bonus.to_string(),
            s.traffic_max.to_string(),
            s.aqi_max.to_string(),
            s.queue_gauge_max.to_string(),
            s.seed.to_string(),
            t.episodes.to_string(),
            t.steps_per_update.to_string(),
            t.eval_interval.to_string(),
            t.seed.to_string(),
            t.variant.tag().to_string(),
            t.hidden.to_string(),
            t.checkpoint.clone(),
            t.checkpoint_interval.to_string(),
            t.wall_clock.to_string(),
        ];
        KEYS.iter().map(|(k, _)| *k).zip(values).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (k, v) in self.entries() {
            let s = k.split('.').next().unwrap_or("");
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = s;
            }
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Parses config text; `origin` names the source in diagnostics.
    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |key: &str, msg: String| Error::ConfigParse {
                file: origin.to_path_buf(),
                line: i + 1,
                key: key.to_string(),
                msg,
            };
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(line, "expected `section.key = value`".into()));
            };
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(err(key, "duplicate key".into()));
            }
            cfg.set(key, value).map_err(|m| err(key, m))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    /// Applies `section.key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for (i, o) in overrides.iter().enumerate() {
            let o = o.as_ref();
            let err = |key: &str, msg: String| Error::ConfigParse {
                file: PathBuf::from("--override"),
                line: i + 1,
                key: key.to_string(),
                msg,
            };
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| err(o, "expected `section.key=value`".into()))?;
            self.set(key.trim(), value)
                .map_err(|m| err(key.trim(), m))?;
        }
        Ok(())
    }

    /// Sets both the training and the environment seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.scenario.seed = seed;
    }

    /// The encoder config with its feature count taken from the scenario
    /// schema.
    pub fn resolved_encoder(&self) -> Result<EncoderConfig> {
        Ok(EncoderConfig {
            features: feature_count(&self.scenario.sensor_specs()?),
            ..self.encoder
        })
    }

    /// Checks every section and reports all violations together.
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        let mut collect = |r: Result<()>| match r {
            Ok(()) => {}
            Err(Error::Config { violations }) => v.extend(violations),
            Err(e) => v.push(e.to_string()),
        };
        collect(self.scenario.validate());
        if self.scenario.validate().is_ok() {
            collect(self.resolved_encoder().and_then(|e| e.validate()));
        } else {
            collect(self.encoder.validate().map_err(|e| {
                match e {
                    Error::Config { violations } => Error::Config {
                        violations: violations
                            .into_iter()
                            .filter(|m| !m.starts_with("encoder feature count"))
                            .collect(),
                    },
                    other => other,
                }
            }));
        }
        collect(self.ppo.validate());
        collect(self.train.validate());
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { violations: v })
        }
    }

    /// Stable hash of every setting that shapes a training trajectory
    /// (everything except episode count, checkpoint and clock settings).
    pub fn fingerprint(&self) -> String {
        let mut text = String::new();
        for (k, v) in self.entries() {
            if matches!(
                k,
                "train.episodes"
                    | "train.checkpoint"
                    | "train.checkpoint_interval"
                    | "train.wall_clock"
            ) {
                continue;
            }
            text.push_str(k);
            text.push('=');
            text.push_str(&v);
            text.push('\n');
        }
        format!("{:016x}", crate::rng::fnv1a(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn origin() -> PathBuf {
        PathBuf::from("exp.cfg")
    }

    #[test]
    fn every_key_is_documented_and_assignable() {
        let cfg = ExperimentConfig::default();
        let entries = cfg.entries();
        assert_eq!(entries.len(), KEYS.len());
        let mut copy = ExperimentConfig::default();
        for (k, v) in &entries {
            copy.set(k, v).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
        assert_eq!(copy, cfg);
    }

    #[test]
    fn parse_reports_file_line_and_key() {
        let text = "# header\nppo.clip = 0.1\n\nppo.bogus = 3\n";
        let err = ExperimentConfig::from_text(text, &origin()).unwrap_err();
        assert_eq!(err.to_string(), "exp.cfg:4: ppo.bogus: unknown key");
        let err = ExperimentConfig::from_text("ppo.epochs = many", &origin()).unwrap_err();
        assert!(err
            .to_string()
            .starts_with("exp.cfg:1: ppo.epochs: invalid value"));
        let err = ExperimentConfig::from_text("ppo.clip=0.1\nppo.clip=0.2", &origin()).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        let err = ExperimentConfig::from_text("just words", &origin()).unwrap_err();
        assert!(err.to_string().starts_with("exp.cfg:1:"));
    }

    #[test]
    fn comments_and_overrides() {
        let mut cfg =
            ExperimentConfig::from_text("train.episodes = 7 # short run\n", &origin()).unwrap();
        assert_eq!(cfg.train.episodes, 7);
        cfg.apply_overrides(&["train.episodes=1", "train.variant=mlp-ppo"])
            .unwrap();
        assert_eq!(cfg.train.episodes, 1);
        assert_eq!(cfg.train.variant, Variant::MlpPpo);
        assert!(cfg.apply_overrides(&["nope=1"]).is_err());
        assert!(cfg.apply_overrides(&["train.episodes"]).is_err());
    }

    #[test]
    fn validation_collects_all_sections() {
        let mut cfg = ExperimentConfig::default();
        cfg.encoder.heads = 5;
        cfg.ppo.clip = 2.0;
        cfg.train.episodes = 0;
        match cfg.validate() {
            Err(Error::Config { violations }) => assert_eq!(violations.len(), 3, "{violations:?}"),
            other => panic!("{other:?}"),
        }
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn fingerprint_ignores_run_length() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.train.episodes = 3;
        b.train.checkpoint = "ck".into();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.ppo.clip = 0.3;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    proptest! {
        #[test]
        fn text_round_trip(
            d in 1usize..64, w in 1usize..16, clip in 0.01f64..0.99, lr in 0.0f64..1.0,
            lw in 0.0f64..1e-2, seed in any::<u64>(), memory in any::<bool>(),
            variant in 0usize..3, ck in "[a-z0-9_]{0,8}",
        ) {
            let mut cfg = ExperimentConfig::default();
            cfg.encoder.d_model = d;
            cfg.encoder.window = w;
            cfg.ppo.clip = clip;
            cfg.ppo.learning_rate = lr;
            cfg.scenario.latency_weight = lw;
            cfg.scenario.memory_variant = memory;
            cfg.set_seed(seed);
            cfg.train.variant = Variant::ALL[variant];
            cfg.train.checkpoint = ck;
            let back = ExperimentConfig::from_text(&cfg.to_text(), &origin()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
