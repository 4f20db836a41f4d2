//! Checkpoints: `<stem>.params` holds every parameter and Adam moment as a
//! tensor archive; `<stem>.json` holds counters, stream states and the
//! config fingerprint.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Trainer;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::{read_archive, write_archive, AdamConfig, AdamState, ParamSet, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub fingerprint: String,
    /// Episodes completed when the checkpoint was taken.
    pub episode: usize,
    pub action_rng: CounterRng,
    pub update_rng: CounterRng,
    pub encoder_adam_step: Option<u64>,
    pub policy_adam_step: u64,
}

fn with_suffix(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn moment_tensors(prefix: &str, params: &ParamSet, adam: &AdamState) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for (tag, moments) in [("m", adam.first_moments()), ("v", adam.second_moments())] {
        for ((name, t), m) in params.iter().zip(moments) {
            let tensor = Tensor::new(t.shape(), m.clone()).expect("moments match parameter shapes");
            out.push((format!("{prefix}.adam_{tag}/{name}"), tensor));
        }
    }
    out
}

fn take_group(entries: &mut Vec<(String, Tensor)>, prefix: &str) -> Vec<(String, Tensor)> {
    let p = format!("{prefix}/");
    let (group, rest): (Vec<_>, Vec<_>) = entries.drain(..).partition(|(n, _)| n.starts_with(&p));
    *entries = rest;
    group
        .into_iter()
        .map(|(n, t)| (n[p.len()..].to_string(), t))
        .collect()
}

fn restore(
    params: &mut ParamSet,
    config: AdamConfig,
    entries: &mut Vec<(String, Tensor)>,
    prefix: &str,
    step: u64,
) -> Result<AdamState> {
    params.load_from(&take_group(entries, prefix))?;
    let moments = |entries: &mut Vec<(String, Tensor)>, tag: &str| -> Result<Vec<Vec<f64>>> {
        let group = take_group(entries, &format!("{prefix}.adam_{tag}"));
        params
            .names()
            .iter()
            .map(|n| {
                group
                    .iter()
                    .find(|(g, _)| g == n)
                    .map(|(_, t)| t.data().to_vec())
                    .ok_or_else(|| Error::Archive(format!("missing {prefix}.adam_{tag}/{n}")))
            })
            .collect()
    };
    let first = moments(entries, "m")?;
    let second = moments(entries, "v")?;
    AdamState::from_parts(params, config, first, second, step)
}

impl Trainer {
    /// Writes `<stem>.params` and `<stem>.json`. Only valid between updates.
    pub fn save_checkpoint(&self, stem: &Path) -> Result<()> {
        if !self.buffer.is_empty() {
            return Err(Error::usage(
                "checkpoint with transitions waiting for an update",
            ));
        }
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        if let (Some(enc), Some(opt)) = (&self.agent.encoder, &self.agent.encoder_opt) {
            for (n, t) in enc.params.iter() {
                tensors.push((format!("encoder/{n}"), t.clone()));
            }
            tensors.extend(moment_tensors("encoder", &enc.params, opt));
        }
        for (n, t) in self.agent.policy.params.iter() {
            tensors.push((format!("policy/{n}"), t.clone()));
        }
        tensors.extend(moment_tensors(
            "policy",
            &self.agent.policy.params,
            &self.agent.policy_opt,
        ));

        let params_path = with_suffix(stem, ".params");
        let mut w =
            BufWriter::new(File::create(&params_path).map_err(|e| Error::io(&params_path, e))?);
        write_archive(&mut w, tensors.iter().map(|(n, t)| (n.as_str(), t)))?;
        w.flush().map_err(|e| Error::io(&params_path, e))?;

        let meta = CheckpointMeta {
            version: CHECKPOINT_VERSION,
            fingerprint: self.cfg.fingerprint(),
            episode: self.episode,
            action_rng: self.action_rng,
            update_rng: self.update_rng,
            encoder_adam_step: self.agent.encoder_opt.as_ref().map(AdamState::step_count),
            policy_adam_step: self.agent.policy_opt.step_count(),
        };
        let meta_path = with_suffix(stem, ".json");
        let text = serde_json::to_string_pretty(&meta)? + "\n";
        std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
        Ok(())
    }

    /// Rebuilds a trainer for `cfg` from a checkpoint written by
    /// [`save_checkpoint`](Self::save_checkpoint). `cfg` may differ from the
    /// saved run only in episode count, checkpoint and clock settings.
    pub fn resume(cfg: ExperimentConfig, stem: &Path) -> Result<Self> {
        let meta_path = with_suffix(stem, ".json");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        if meta.version != CHECKPOINT_VERSION {
            return Err(Error::Archive(format!(
                "unsupported checkpoint version {}",
                meta.version
            )));
        }
        if meta.fingerprint != cfg.fingerprint() {
            return Err(Error::Archive(format!(
                "checkpoint fingerprint {} does not match config {}",
                meta.fingerprint,
                cfg.fingerprint()
            )));
        }
        let mut t = Trainer::new(cfg)?;

        let params_path = with_suffix(stem, ".params");
        let file = File::open(&params_path).map_err(|e| Error::io(&params_path, e))?;
        let mut entries = read_archive(BufReader::new(file))?;

        let agent = &mut t.agent;
        if let (Some(enc), Some(opt)) = (
            &mut agent.encoder,
            agent.encoder_opt.as_ref().map(|o| o.config),
        ) {
            let step = meta
                .encoder_adam_step
                .ok_or_else(|| Error::Archive("checkpoint has no encoder optimizer".into()))?;
            agent.encoder_opt = Some(restore(
                &mut enc.params,
                opt,
                &mut entries,
                "encoder",
                step,
            )?);
        }
        agent.policy_opt = restore(
            &mut agent.policy.params,
            agent.policy_opt.config,
            &mut entries,
            "policy",
            meta.policy_adam_step,
        )?;
        if let Some((name, _)) = entries.first() {
            return Err(Error::Archive(format!(
                "unexpected tensor {name} in checkpoint"
            )));
        }
        t.episode = meta.episode;
        t.action_rng = meta.action_rng;
        t.update_rng = meta.update_rng;
        Ok(t)
    }
}
