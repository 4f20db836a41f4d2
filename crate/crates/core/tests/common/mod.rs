#![allow(dead_code)]

use iotformer::preproc::ObservationWindow;
use iotformer::rlcore::{
    softmax, Agent, Objective, PPOConfig, PolicyValueParams, RolloutBuffer, Transition,
};
use iotformer::rng::CounterRng;

/// Direct double loop over the TD errors, no recursion.
pub fn gae_oracle(
    r: &[f64],
    v: &[f64],
    d: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = r.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| {
            let next = if t + 1 < n { v[t + 1] } else { bootstrap };
            let live = if d[t] { 0.0 } else { 1.0 };
            r[t] + gamma * next * live - v[t]
        })
        .collect();
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            let mut w = 1.0;
            for k in t..n {
                acc += w * delta[k];
                if d[k] {
                    break;
                }
                w *= gamma * lambda;
            }
            acc
        })
        .collect()
}

/// `min(r·a, clip(r, 1-ε, 1+ε)·a)` written out by cases.
pub fn clipped_term_oracle(r: f64, a: f64, eps: f64) -> f64 {
    let clipped = if r < 1.0 - eps {
        1.0 - eps
    } else if r > 1.0 + eps {
        1.0 + eps
    } else {
        r
    };
    let (u, c) = (r * a, clipped * a);
    if u < c {
        u
    } else {
        c
    }
}

pub fn constant_window() -> ObservationWindow {
    ObservationWindow::new(1, 1)
        .unwrap()
        .pushed(vec![1.0])
        .unwrap()
}

/// Two arms, constant state, reward 1 for arm 0. Returns P(arm 0) after
/// each update.
pub fn bandit(updates: usize, batch: usize, seed: u64) -> Vec<f64> {
    let cfg = PPOConfig {
        minibatch: batch,
        ..PPOConfig::default()
    };
    let mut init = CounterRng::stream(seed, "bandit.init", 0);
    let policy = PolicyValueParams::init(1, 16, 2, &mut init).unwrap();
    let mut agent = Agent::new(None, policy, &cfg).unwrap();
    let mut act_rng = CounterRng::stream(seed, "bandit.act", 0);
    let mut upd_rng = CounterRng::stream(seed, "bandit.update", 0);
    let window = constant_window();
    let mut buffer = RolloutBuffer::new(batch);
    let mut curve = Vec::with_capacity(updates);
    for _ in 0..updates {
        for _ in 0..batch {
            let (a, log_prob, value) = agent.act(&window, &mut act_rng).unwrap();
            buffer
                .push(Transition {
                    window: window.clone(),
                    action: a,
                    reward: if a == 0 { 1.0 } else { 0.0 },
                    done: true,
                    log_prob,
                    value,
                })
                .unwrap();
        }
        buffer
            .compute_advantages(0.0, cfg.gamma, cfg.lambda)
            .unwrap();
        agent
            .update(&mut buffer, &cfg, Objective::ClippedSurrogate, &mut upd_rng)
            .unwrap();
        assert!(buffer.is_empty());
        let (logits, _) = agent.evaluate(&window).unwrap();
        curve.push(softmax(&logits)[0]);
    }
    curve
}
