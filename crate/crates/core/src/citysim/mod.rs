//! Discrete-event smart-city IoT environment.
//!
//! Three device classes (traffic flow sensors, environmental monitors and
//! public-safety units) emit readings and generate processing tasks. Each
//! decision step the agent picks which class receives the step's processing
//! capacity. Rewards trade completed work against queue wait and backlog.
//!
//! Randomness: device `i` of class `c` in episode `e` draws from
//! `CounterRng::stream(stream_key(seed, "episode", e), c.tag(), i)`.

mod env;
mod events;
mod metrics;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preproc::SensorSpec;

pub use env::{Environment, StepInfo, StepOutcome};
pub use events::{EventKind, EventQueue, SimEvent};
pub use metrics::{mean, nearest_rank_percentile, EpisodeMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviceClass {
    Traffic,
    Environmental,
    Safety,
}

impl DeviceClass {
    pub const ALL: [DeviceClass; 3] = [Self::Traffic, Self::Environmental, Self::Safety];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::Traffic => "traffic",
            Self::Environmental => "environmental",
            Self::Safety => "safety",
        }
    }
}

/// Which class receives this step's processing capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Prioritize(DeviceClass),
    /// `capacity / 3` slots per class, remainder to the longest queue.
    Balanced,
}

impl Action {
    pub const COUNT: usize = 4;

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0..=2 => Ok(Self::Prioritize(DeviceClass::ALL[i])),
            3 => Ok(Self::Balanced),
            _ => Err(Error::Domain(format!("action index {i} out of range 0..4"))),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Self::Prioritize(c) => c.index(),
            Self::Balanced => 3,
        }
    }
}

/// Safety alert levels, in category order.
pub const ALERT_LEVELS: [&str; 3] = ["normal", "elevated", "critical"];
pub const CRITICAL: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub traffic_devices: usize,
    pub environmental_devices: usize,
    pub safety_devices: usize,
    /// Decision steps per episode.
    pub steps: usize,
    pub step_seconds: f64,
    /// Expected task arrivals per device per step, by class.
    pub traffic_rate: f64,
    pub environmental_rate: f64,
    pub safety_rate: f64,
    /// Amplitude `a` of the daily factor `1 - a·cos(2π(k + ½)/T)`.
    pub modulation: f64,
    /// Tasks served per step.
    pub capacity: usize,
    /// Admitted tasks per class queue; arrivals beyond it are rejected.
    pub queue_limit: usize,
    pub completion_weight: f64,
    /// Per second of mean queue wait.
    pub latency_weight: f64,
    /// Per pending task.
    pub backlog_weight: f64,
    /// Per-step, per-device probability of a critical safety reading.
    pub alert_probability: f64,
    pub memory_variant: bool,
    /// Paid once per incident when safety is prioritized 1 to 7 steps after
    /// the critical reading that opened it.
    pub memory_bonus: f64,
    /// Calibration upper bounds of the continuous sensors.
    pub traffic_max: f64,
    pub aqi_max: f64,
    pub queue_gauge_max: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            traffic_devices: 6,
            environmental_devices: 4,
            safety_devices: 2,
            steps: 48,
            step_seconds: 1800.0,
            traffic_rate: 0.3,
            environmental_rate: 0.25,
            safety_rate: 0.2,
            modulation: 0.5,
            capacity: 4,
            queue_limit: 10_000,
            completion_weight: 0.1,
            latency_weight: 1.0 / 36_000.0,
            backlog_weight: 0.01,
            alert_probability: 0.06,
            memory_variant: false,
            memory_bonus: 0.5,
            traffic_max: 100.0,
            aqi_max: 200.0,
            queue_gauge_max: 20.0,
            seed: 0,
        }
    }
}

/// Steps after an alert during which a safety dispatch earns the bonus.
pub const INCIDENT_HORIZON: usize = 7;

impl ScenarioConfig {
    pub fn devices(&self, class: DeviceClass) -> usize {
        match class {
            DeviceClass::Traffic => self.traffic_devices,
            DeviceClass::Environmental => self.environmental_devices,
            DeviceClass::Safety => self.safety_devices,
        }
    }

    pub fn total_devices(&self) -> usize {
        self.traffic_devices + self.environmental_devices + self.safety_devices
    }

    pub fn rate(&self, class: DeviceClass) -> f64 {
        match class {
            DeviceClass::Traffic => self.traffic_rate,
            DeviceClass::Environmental => self.environmental_rate,
            DeviceClass::Safety => self.safety_rate,
        }
    }

    pub fn horizon_seconds(&self) -> f64 {
        self.steps as f64 * self.step_seconds
    }

    /// Daily load factor for step `k`; peaks mid-episode.
    pub fn load_factor(&self, k: usize) -> f64 {
        let phase = (k as f64 + 0.5) / self.steps as f64;
        1.0 - self.modulation * (2.0 * std::f64::consts::PI * phase).cos()
    }

    /// Upper bound on `|R_t|` for any step.
    pub fn reward_bound(&self) -> f64 {
        let bonus = if self.memory_variant {
            self.memory_bonus
        } else {
            0.0
        };
        self.completion_weight * self.capacity as f64
            + bonus
            + self.latency_weight * self.horizon_seconds()
            + self.backlog_weight * (3 * self.queue_limit) as f64
    }

    /// Sensor schema in observation order: traffic flow, air quality,
    /// safety alert level per device, then three queue gauges and the clock.
    pub fn sensor_specs(&self) -> Result<Vec<SensorSpec>> {
        let mut specs = Vec::with_capacity(self.total_devices() + 4);
        for i in 0..self.traffic_devices {
            specs.push(SensorSpec::continuous(
                format!("traffic{i}.flow"),
                0.0,
                self.traffic_max,
            )?);
        }
        for i in 0..self.environmental_devices {
            specs.push(SensorSpec::continuous(
                format!("environmental{i}.aqi"),
                0.0,
                self.aqi_max,
            )?);
        }
        for i in 0..self.safety_devices {
            specs.push(SensorSpec::categorical(
                format!("safety{i}.alert"),
                ALERT_LEVELS.len(),
            )?);
        }
        for c in DeviceClass::ALL {
            specs.push(SensorSpec::continuous(
                format!("queue.{}", c.tag()),
                0.0,
                self.queue_gauge_max,
            )?);
        }
        specs.push(SensorSpec::continuous("clock", 0.0, 1.0)?);
        Ok(specs)
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.steps == 0 {
            v.push("scenario.steps must be >= 1".to_string());
        }
        if self.total_devices() == 0 {
            v.push("scenario needs at least one device".to_string());
        }
        if !(self.step_seconds.is_finite() && self.step_seconds > 0.0) {
            v.push(format!(
                "scenario.step_seconds must be > 0, got {}",
                self.step_seconds
            ));
        }
        for c in DeviceClass::ALL {
            let r = self.rate(c);
            if !(r.is_finite() && r >= 0.0) {
                v.push(format!("scenario.{}_rate must be >= 0, got {r}", c.tag()));
            }
        }
        if !(0.0..=1.0).contains(&self.modulation) {
            v.push(format!(
                "scenario.modulation must be in [0, 1], got {}",
                self.modulation
            ));
        }
        if self.capacity == 0 {
            v.push("scenario.capacity must be >= 1".to_string());
        }
        if self.queue_limit == 0 {
            v.push("scenario.queue_limit must be >= 1".to_string());
        }
        for (name, w) in [
            ("completion_weight", self.completion_weight),
            ("latency_weight", self.latency_weight),
            ("backlog_weight", self.backlog_weight),
            ("memory_bonus", self.memory_bonus),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                v.push(format!("scenario.{name} must be finite and >= 0, got {w}"));
            }
        }
        if !(0.0..=1.0).contains(&self.alert_probability) {
            v.push(format!(
                "scenario.alert_probability must be in [0, 1], got {}",
                self.alert_probability
            ));
        }
        for (name, m) in [
            ("traffic_max", self.traffic_max),
            ("aqi_max", self.aqi_max),
            ("queue_gauge_max", self.queue_gauge_max),
        ] {
            if !(m.is_finite() && m > 0.0) {
                v.push(format!("scenario.{name} must be > 0, got {m}"));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { violations: v })
        }
    }
}
