use std::collections::VecDeque;
use std::io::Write;

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::events::{EventKind, EventQueue, SimEvent};
use super::metrics::{mean, nearest_rank_percentile, EpisodeMetrics};
use super::{Action, DeviceClass, ScenarioConfig, CRITICAL, INCIDENT_HORIZON};
use crate::error::{Error, Result};
use crate::preproc::{Observation, Reading, SensorSpec};
use crate::rng::{stream_key, CounterRng};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Task {
    arrival: f64,
    device: usize,
}

#[derive(Debug, Clone)]
struct Device {
    class: DeviceClass,
    local: usize,
    rng: CounterRng,
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Arrival to service start of tasks started this step, by class.
    pub response_times: [Vec<f64>; 3],
    /// Mean time in system of tasks completed this step or still pending at
    /// its end; `None` when there were none.
    pub step_latency: Option<f64>,
    pub completed: usize,
    pub arrivals: usize,
    pub queue_lengths: [usize; 3],
    pub bonus: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Default)]
struct Accumulators {
    total_reward: f64,
    completion_times: Vec<f64>,
    response_times: [Vec<f64>; 3],
    step_latencies: Vec<f64>,
    arrived: [u64; 3],
    completed: [u64; 3],
    rejected: [u64; 3],
}

#[derive(Debug)]
pub struct Environment {
    cfg: ScenarioConfig,
    specs: Vec<SensorSpec>,
    devices: Vec<Device>,
    episode: u64,
    step: usize,
    started: bool,
    queues: [VecDeque<Task>; 3],
    readings: Vec<Reading>,
    events: EventQueue,
    trace: Option<Vec<SimEvent>>,
    acc: Accumulators,
    /// Steps at which still-open incidents were raised.
    incidents: VecDeque<usize>,
}

impl Environment {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let specs = cfg.sensor_specs()?;
        let mut devices = Vec::with_capacity(cfg.total_devices());
        for class in DeviceClass::ALL {
            for local in 0..cfg.devices(class) {
                devices.push(Device {
                    class,
                    local,
                    rng: CounterRng::from_key(0),
                });
            }
        }
        let readings = devices
            .iter()
            .map(|d| match d.class {
                DeviceClass::Safety => Reading::Category(0),
                _ => Reading::Value(0.0),
            })
            .collect();
        Ok(Self {
            cfg,
            specs,
            devices,
            episode: 0,
            step: 0,
            started: false,
            queues: Default::default(),
            readings,
            events: EventQueue::new(),
            trace: None,
            acc: Accumulators::default(),
            incidents: VecDeque::new(),
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn sensor_specs(&self) -> &[SensorSpec] {
        &self.specs
    }

    pub fn current_step(&self) -> usize {
        self.step
    }

    /// Index of the current (or next, before any reset) episode.
    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn is_done(&self) -> bool {
        self.started && self.step == self.cfg.steps
    }

    pub fn queue_lengths(&self) -> [usize; 3] {
        [0, 1, 2].map(|c| self.queues[c].len())
    }

    /// Starts recording delivered events (or stops and discards them).
    pub fn set_trace(&mut self, on: bool) {
        self.trace = on.then(Vec::new);
    }

    pub fn trace(&self) -> &[SimEvent] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// One JSON object per delivered event.
    pub fn write_trace_jsonl(&self, mut w: impl Write) -> Result<()> {
        for e in self.trace() {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
        }
        Ok(())
    }

    /// Resets into the next episode index (0 for the first call).
    pub fn reset(&mut self) -> Observation {
        let e = if self.started {
            self.episode + 1
        } else {
            self.episode
        };
        self.reset_episode(e)
    }

    /// Resets into episode `episode`; streams depend only on
    /// `(seed, episode, class, device index)`.
    pub fn reset_episode(&mut self, episode: u64) -> Observation {
        self.episode = episode;
        self.step = 0;
        self.started = true;
        let episode_key = stream_key(self.cfg.seed, "episode", episode);
        for d in &mut self.devices {
            d.rng = CounterRng::stream(episode_key, d.class.tag(), d.local as u64);
        }
        for q in &mut self.queues {
            q.clear();
        }
        self.events.clear();
        if let Some(t) = &mut self.trace {
            t.clear();
        }
        self.acc = Accumulators::default();
        self.incidents.clear();

        let zeros = vec![0; self.devices.len()];
        self.schedule_readings(0.0, self.cfg.load_factor(0), &zeros);
        self.drain(&mut StepInfo::default(), &mut Vec::new());
        self.open_incidents(0);
        self.observation(0.0)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if !self.started {
            return Err(Error::usage("step before reset"));
        }
        if self.step >= self.cfg.steps {
            return Err(Error::usage("step after the episode finished"));
        }
        let k = self.step;
        let dt = self.cfg.step_seconds;
        let t0 = k as f64 * dt;
        let t1 = t0 + dt;
        let load = self.cfg.load_factor(k);

        let bonus = self.incident_bonus(k, action);

        // arrivals
        let mut counts = vec![0usize; self.devices.len()];
        for (id, d) in self.devices.iter_mut().enumerate() {
            let lambda = self.cfg.rate(d.class) * load;
            if lambda <= 0.0 {
                continue;
            }
            let n = Poisson::new(lambda)
                .map_err(|e| Error::Domain(format!("poisson rate {lambda}: {e}")))?
                .sample(&mut d.rng) as usize;
            counts[id] = n;
            for _ in 0..n {
                let at = t0 + d.rng.uniform() * dt;
                self.events
                    .push(at, Some(id), EventKind::TaskArrival { class: d.class });
            }
        }

        // service slots
        let slot_len = dt / self.cfg.capacity as f64;
        for (slot, class) in self.slot_plan(action).into_iter().enumerate() {
            self.events.push(
                t0 + slot as f64 * slot_len,
                None,
                EventKind::ServiceStart { class, slot },
            );
        }

        self.schedule_readings(t1, load, &counts);

        let mut info = StepInfo {
            arrivals: counts.iter().sum(),
            bonus,
            ..StepInfo::default()
        };
        let mut in_system = Vec::new();
        self.drain(&mut info, &mut in_system);

        let mut waits = Vec::new();
        for q in &self.queues {
            waits.extend(q.iter().map(|t| t1 - t.arrival));
        }
        in_system.extend_from_slice(&waits);
        info.step_latency = mean(&in_system);
        info.queue_lengths = self.queue_lengths();
        if let Some(l) = info.step_latency {
            self.acc.step_latencies.push(l);
        }

        let backlog = waits.len() as f64;
        let mean_wait = mean(&waits).unwrap_or(0.0);
        let reward = self.cfg.completion_weight * info.completed as f64 + bonus
            - self.cfg.latency_weight * mean_wait
            - self.cfg.backlog_weight * backlog;
        let bound = self.cfg.reward_bound();
        assert!(
            reward.abs() <= bound * (1.0 + 1e-12),
            "step reward {reward} exceeds bound {bound}"
        );
        self.acc.total_reward += reward;

        self.step += 1;
        self.open_incidents(self.step);
        Ok(StepOutcome {
            observation: self.observation(t1),
            reward,
            done: self.step == self.cfg.steps,
            info,
        })
    }

    pub fn metrics(&self) -> Result<EpisodeMetrics> {
        if !self.is_done() {
            return Err(Error::usage(
                "metrics requested before the episode finished",
            ));
        }
        let a = &self.acc;
        Ok(EpisodeMetrics {
            total_reward: a.total_reward,
            completion_mean: mean(&a.completion_times),
            completion_p95: nearest_rank_percentile(&a.completion_times, 0.95),
            response_mean: [0, 1, 2].map(|c| mean(&a.response_times[c])),
            latency_mean: mean(&a.step_latencies),
            arrived: a.arrived,
            completed: a.completed,
            pending: self.queue_lengths().map(|n| n as u64),
            rejected: a.rejected,
        })
    }

    /// Slot-by-slot class assignment for one step.
    fn slot_plan(&self, action: Action) -> Vec<DeviceClass> {
        let c = self.cfg.capacity;
        match action {
            Action::Prioritize(class) => vec![class; c],
            Action::Balanced => {
                let mut plan = Vec::with_capacity(c);
                for _ in 0..c / 3 {
                    plan.extend(DeviceClass::ALL);
                }
                let lengths = self.queue_lengths();
                let mut longest = 0;
                for i in 1..3 {
                    if lengths[i] > lengths[longest] {
                        longest = i;
                    }
                }
                plan.extend(std::iter::repeat_n(DeviceClass::ALL[longest], c % 3));
                plan
            }
        }
    }

    fn schedule_readings(&mut self, at: f64, load: f64, arrivals: &[usize]) {
        let p_alert = self.cfg.alert_probability;
        for (id, d) in self.devices.iter_mut().enumerate() {
            let n = arrivals[id] as f64;
            let value = match d.class {
                DeviceClass::Traffic => {
                    Reading::Value(40.0 * load + 15.0 * n + d.rng.uniform_in(-5.0, 5.0))
                }
                DeviceClass::Environmental => {
                    Reading::Value(80.0 * load + 20.0 * n + d.rng.uniform_in(-10.0, 10.0))
                }
                DeviceClass::Safety => {
                    let u = d.rng.uniform();
                    let level = if u < p_alert {
                        CRITICAL
                    } else if n > 0.0 {
                        1
                    } else {
                        0
                    };
                    Reading::Category(level)
                }
            };
            self.events.push(at, Some(id), EventKind::Reading { value });
        }
    }

    fn drain(&mut self, info: &mut StepInfo, in_system: &mut Vec<f64>) {
        let slot_len = self.cfg.step_seconds / self.cfg.capacity as f64;
        while let Some(ev) = self.events.pop() {
            match ev.kind {
                EventKind::Reading { value } => {
                    self.readings[ev.device.expect("readings carry a device")] = value;
                }
                EventKind::TaskArrival { class } => {
                    let c = class.index();
                    if self.queues[c].len() >= self.cfg.queue_limit {
                        self.acc.rejected[c] += 1;
                    } else {
                        self.acc.arrived[c] += 1;
                        self.queues[c].push_back(Task {
                            arrival: ev.timestamp,
                            device: ev.device.expect("arrivals carry a device"),
                        });
                    }
                }
                EventKind::ServiceStart { class, .. } => {
                    let c = class.index();
                    if let Some(task) = self.queues[c].pop_front() {
                        let response = ev.timestamp - task.arrival;
                        info.response_times[c].push(response);
                        self.acc.response_times[c].push(response);
                        self.events.push(
                            ev.timestamp + slot_len,
                            Some(task.device),
                            EventKind::TaskCompletion {
                                class,
                                arrival: task.arrival,
                                started: ev.timestamp,
                            },
                        );
                    }
                }
                EventKind::TaskCompletion { class, arrival, .. } => {
                    let c = class.index();
                    let t = ev.timestamp - arrival;
                    self.acc.completed[c] += 1;
                    self.acc.completion_times.push(t);
                    in_system.push(t);
                    info.completed += 1;
                }
            }
            if let Some(trace) = &mut self.trace {
                trace.push(ev);
            }
        }
    }

    fn open_incidents(&mut self, step: usize) {
        if !self.cfg.memory_variant {
            return;
        }
        let alert = self.devices.iter().enumerate().any(|(id, d)| {
            d.class == DeviceClass::Safety && self.readings[id] == Reading::Category(CRITICAL)
        });
        if alert {
            self.incidents.push_back(step);
        }
    }

    /// Pays the bonus for the oldest incident raised 1..=7 steps before `k`
    /// when safety is prioritized, and drops expired incidents.
    fn incident_bonus(&mut self, k: usize, action: Action) -> f64 {
        if !self.cfg.memory_variant {
            return 0.0;
        }
        while self
            .incidents
            .front()
            .is_some_and(|&s| k - s > INCIDENT_HORIZON)
        {
            self.incidents.pop_front();
        }
        if action != Action::Prioritize(DeviceClass::Safety) {
            return 0.0;
        }
        match self.incidents.front() {
            Some(&s) if s < k => {
                self.incidents.pop_front();
                self.cfg.memory_bonus
            }
            _ => 0.0,
        }
    }

    fn observation(&self, timestamp: f64) -> Observation {
        let mut values = self.readings.clone();
        for q in &self.queues {
            values.push(Reading::Value(q.len() as f64));
        }
        values.push(Reading::Value(self.step as f64 / self.cfg.steps as f64));
        Observation { timestamp, values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preproc::encode_observation;

    fn quiet() -> ScenarioConfig {
        ScenarioConfig {
            traffic_rate: 0.0,
            environmental_rate: 0.0,
            safety_rate: 0.0,
            ..ScenarioConfig::default()
        }
    }

    fn run(env: &mut Environment, policy: impl Fn(usize) -> Action) -> Vec<f64> {
        let mut rewards = Vec::new();
        env.reset();
        loop {
            let out = env.step(policy(env.current_step())).unwrap();
            rewards.push(out.reward);
            if out.done {
                return rewards;
            }
        }
    }

    #[test]
    fn zero_rates_give_zero_reward_and_empty_queues() {
        let mut env = Environment::new(quiet()).unwrap();
        let r = run(&mut env, |_| Action::Balanced);
        assert_eq!(r.len(), 48);
        assert!(r.iter().all(|&x| x == 0.0));
        assert_eq!(env.queue_lengths(), [0, 0, 0]);
        let m = env.metrics().unwrap();
        assert_eq!(m.completion_mean, None);
        assert_eq!(m.completion_p95, None);
        assert_eq!(m.latency_mean, None);
    }

    #[test]
    fn backlog_within_capacity_pays_completion_weight() {
        let cfg = ScenarioConfig {
            latency_weight: 0.0,
            backlog_weight: 0.0,
            completion_weight: 2.5,
            ..quiet()
        };
        for b in 0..=cfg.capacity {
            let mut env = Environment::new(cfg.clone()).unwrap();
            env.reset();
            for _ in 0..b {
                env.queues[0].push_back(Task {
                    arrival: 0.0,
                    device: 0,
                });
            }
            let out = env.step(Action::Prioritize(DeviceClass::Traffic)).unwrap();
            assert_eq!(out.reward, 2.5 * b as f64);
            assert_eq!(out.info.completed, b);
        }
    }

    #[test]
    fn step_after_done_and_early_metrics_are_usage_errors() {
        let mut env = Environment::new(ScenarioConfig {
            steps: 2,
            ..ScenarioConfig::default()
        })
        .unwrap();
        assert!(env.step(Action::Balanced).is_err());
        env.reset();
        assert!(matches!(env.metrics(), Err(Error::Usage(_))));
        env.step(Action::Balanced).unwrap();
        assert!(env.step(Action::Balanced).unwrap().done);
        assert!(matches!(env.step(Action::Balanced), Err(Error::Usage(_))));
    }

    #[test]
    fn invalid_config_lists_every_violation() {
        let cfg = ScenarioConfig {
            steps: 0,
            capacity: 0,
            traffic_rate: -1.0,
            ..ScenarioConfig::default()
        };
        match Environment::new(cfg) {
            Err(Error::Config { violations }) => assert_eq!(violations.len(), 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn observation_arity_tracks_device_count() {
        let cfg = ScenarioConfig::default();
        let mut env = Environment::new(cfg.clone()).unwrap();
        let obs = env.reset();
        assert_eq!(obs.values.len(), cfg.total_devices() + 4);
        let row = encode_observation(&obs, env.sensor_specs()).unwrap();
        assert_eq!(row.len(), 6 + 4 + 3 * 2 + 4);
    }

    #[test]
    fn zero_devices_in_a_class_produce_no_events_of_it() {
        let cfg = ScenarioConfig {
            environmental_devices: 0,
            ..ScenarioConfig::default()
        };
        let mut env = Environment::new(cfg).unwrap();
        env.set_trace(true);
        run(&mut env, |k| Action::from_index(k % 4).unwrap());
        let env_events = env.trace().iter().filter(|e| match e.kind {
            EventKind::TaskArrival { class } | EventKind::TaskCompletion { class, .. } => {
                class == DeviceClass::Environmental
            }
            _ => false,
        });
        assert_eq!(env_events.count(), 0);
        assert_eq!(env.metrics().unwrap().arrived[1], 0);
    }

    #[test]
    fn balanced_gives_remainder_to_longest_queue() {
        let cfg = ScenarioConfig {
            capacity: 5,
            ..quiet()
        };
        let mut env = Environment::new(cfg).unwrap();
        env.reset();
        env.queues[2].push_back(Task {
            arrival: 0.0,
            device: 0,
        });
        use DeviceClass::*;
        assert_eq!(
            env.slot_plan(Action::Balanced),
            vec![Traffic, Environmental, Safety, Safety, Safety]
        );
    }

    #[test]
    fn memory_bonus_needs_a_dispatch_after_the_alert() {
        let cfg = ScenarioConfig {
            memory_variant: true,
            alert_probability: 0.0,
            ..quiet()
        };
        let safety = Action::Prioritize(DeviceClass::Safety);
        let mut env = Environment::new(cfg).unwrap();
        env.reset();
        env.incidents.push_back(0);
        assert_eq!(env.step(safety).unwrap().reward, 0.0);
        assert_eq!(env.step(safety).unwrap().reward, 0.5);
        assert_eq!(env.step(safety).unwrap().reward, 0.0);

        env.incidents.push_back(3);
        for _ in 3..11 {
            env.step(Action::Balanced).unwrap();
        }
        // step 11 is eight steps after the alert
        assert_eq!(env.step(safety).unwrap().reward, 0.0);
    }
}
