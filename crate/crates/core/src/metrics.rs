//! Per-episode metrics records and their CSV form.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rlcore::UpdateStats;

/// Value of the leading `schema` column; bumped whenever the column list
/// changes.
pub const SCHEMA_VERSION: u32 = 1;

pub const COLUMNS: [&str; 19] = [
    "schema",
    "run_id",
    "variant",
    "seed",
    "episode",
    "phase",
    "total_reward",
    "completion_mean_s",
    "completion_p95_s",
    "response_traffic_s",
    "response_environmental_s",
    "response_safety_s",
    "latency_mean_s",
    "policy_loss",
    "value_loss",
    "entropy",
    "clip_fraction",
    "grad_norm",
    "wall_clock_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Train,
    Eval,
}

impl Phase {
    pub fn tag(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Eval => "eval",
        }
    }
}

/// One row per (run, episode, phase). `None` fields are written empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub variant: String,
    pub seed: u64,
    pub episode: usize,
    pub phase: Phase,
    pub total_reward: f64,
    pub completion_mean: Option<f64>,
    pub completion_p95: Option<f64>,
    pub response: [Option<f64>; 3],
    pub latency_mean: Option<f64>,
    /// Present when an update followed this episode.
    pub update: Option<UpdateStats>,
    pub wall_clock: Option<f64>,
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl MetricsRecord {
    pub fn fields(&self) -> Vec<String> {
        let u = self.update.as_ref();
        vec![
            SCHEMA_VERSION.to_string(),
            self.run_id.clone(),
            self.variant.clone(),
            self.seed.to_string(),
            self.episode.to_string(),
            self.phase.tag().to_string(),
            self.total_reward.to_string(),
            opt(self.completion_mean),
            opt(self.completion_p95),
            opt(self.response[0]),
            opt(self.response[1]),
            opt(self.response[2]),
            opt(self.latency_mean),
            opt(u.map(|u| u.policy_loss)),
            opt(u.map(|u| u.value_loss)),
            opt(u.map(|u| u.entropy)),
            opt(u.map(|u| u.clip_fraction)),
            opt(u.map(|u| u.grad_norm)),
            opt(self.wall_clock),
        ]
    }
}

/// Streams records as CSV with the [`COLUMNS`] header.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        inner.write_record(COLUMNS)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, r: &MetricsRecord) -> Result<()> {
        self.inner.write_record(r.fields())?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner
            .flush()
            .map_err(|e| crate::Error::io("<metrics>", e))
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| crate::Error::io("<metrics>", e.into_error()))
    }
}

/// Renders records to a CSV string.
pub fn to_csv(records: &[MetricsRecord]) -> Result<String> {
    let mut w = MetricsWriter::new(Vec::new())?;
    for r in records {
        w.write(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?).expect("csv output is utf-8"))
}
