mod common;

use common::{bandit, constant_window};
use iotformer::citysim::{Action, Environment, ScenarioConfig};
use iotformer::cli::scale_devices;
use iotformer::encoder::{EncoderConfig, EncoderParams};
use iotformer::preproc::ObservationWindow;
use iotformer::rlcore::{
    pg_loss, ppo_loss, Agent, LossBatch, Objective, PPOConfig, PolicyValueParams, RolloutBuffer,
    Transition, UpdateStats,
};
use iotformer::rng::CounterRng;
use iotformer::tensor::{Graph, Tensor};

#[test]
fn bandit_learns_the_rewarding_arm() {
    let curve = bandit(200, 16, 5);
    let p = *curve.last().unwrap();
    assert!(p > 0.9, "P(arm 0) = {p}");
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let cfg = PPOConfig {
        learning_rate: 0.0,
        minibatch: 4,
        ..PPOConfig::default()
    };
    let enc_cfg = EncoderConfig {
        features: 3,
        d_model: 8,
        heads: 2,
        layers: 1,
        d_ff: 8,
        window: 4,
        ..EncoderConfig::default()
    };
    let mut rng = CounterRng::stream(1, "init", 0);
    let encoder = EncoderParams::init(enc_cfg, &mut rng).unwrap();
    let policy = PolicyValueParams::init(8, 8, 4, &mut rng).unwrap();
    let mut agent = Agent::new(Some(encoder), policy, &cfg).unwrap();
    let before = agent.clone();

    let mut buffer = RolloutBuffer::new(10);
    let mut window = ObservationWindow::new(4, 3).unwrap();
    let mut act = CounterRng::stream(1, "act", 0);
    for k in 0..10 {
        window
            .push(vec![0.1 * k as f64, 0.5, 1.0 - 0.1 * k as f64])
            .unwrap();
        let (a, log_prob, value) = agent.act(&window, &mut act).unwrap();
        buffer
            .push(Transition {
                window: window.clone(),
                action: a,
                reward: (k % 3) as f64 - 1.0,
                done: k == 9,
                log_prob,
                value,
            })
            .unwrap();
    }
    buffer
        .compute_advantages(0.0, cfg.gamma, cfg.lambda)
        .unwrap();
    let stats = agent
        .update(
            &mut buffer,
            &cfg,
            Objective::ClippedSurrogate,
            &mut CounterRng::stream(1, "upd", 0),
        )
        .unwrap();
    assert!(stats.grad_norm > 0.0);

    let bits = |ts: &[Tensor]| -> Vec<u64> {
        ts.iter()
            .flat_map(|t| t.data().iter().map(|x| x.to_bits()))
            .collect()
    };
    assert_eq!(
        bits(agent.policy.params.tensors()),
        bits(before.policy.params.tensors())
    );
    assert_eq!(
        bits(agent.encoder.as_ref().unwrap().params.tensors()),
        bits(before.encoder.as_ref().unwrap().params.tensors())
    );
}

#[test]
fn fixed_seed_gives_identical_update_stats() {
    let run = || -> Vec<UpdateStats> {
        let cfg = PPOConfig {
            minibatch: 8,
            ..PPOConfig::default()
        };
        let policy =
            PolicyValueParams::init(1, 8, 2, &mut CounterRng::stream(2, "init", 0)).unwrap();
        let mut agent = Agent::new(None, policy, &cfg).unwrap();
        let mut act = CounterRng::stream(2, "act", 0);
        let mut upd = CounterRng::stream(2, "upd", 0);
        let window = constant_window();
        let mut out = Vec::new();
        for _ in 0..5 {
            let mut buffer = RolloutBuffer::new(16);
            for _ in 0..16 {
                let (a, log_prob, value) = agent.act(&window, &mut act).unwrap();
                buffer
                    .push(Transition {
                        window: window.clone(),
                        action: a,
                        reward: a as f64,
                        done: true,
                        log_prob,
                        value,
                    })
                    .unwrap();
            }
            buffer.compute_advantages(0.0, 0.99, 0.95).unwrap();
            out.push(
                agent
                    .update(&mut buffer, &cfg, Objective::ClippedSurrogate, &mut upd)
                    .unwrap(),
            );
        }
        out
    };
    let (a, b) = (run(), run());
    let bits = |s: &[UpdateStats]| -> Vec<u64> {
        s.iter()
            .flat_map(|u| {
                [
                    u.policy_loss,
                    u.value_loss,
                    u.entropy,
                    u.clip_fraction,
                    u.grad_norm,
                ]
                .map(f64::to_bits)
            })
            .collect()
    };
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn unclipped_unit_ratio_gradient_equals_policy_gradient() {
    let logits = vec![
        0.2, -0.1, 0.4, 0.0, 1.1, -0.7, 0.3, 0.25, -0.5, 0.9, 0.1, -0.2,
    ];
    let actions = [2usize, 0, 3];
    let advantages = [0.7, -1.3, 0.4];
    let returns = [0.0; 3];
    // Old log-probs equal to the current ones make every ratio exactly 1.
    let old: Vec<f64> = logits
        .chunks(4)
        .zip(actions)
        .map(|(row, a)| {
            let lse = row.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
            row[a] - lse
        })
        .collect();
    let cfg = PPOConfig {
        clip: 1e9,
        value_coef: 0.0,
        entropy_coef: 0.0,
        ..PPOConfig::default()
    };
    let batch = LossBatch {
        actions: &actions,
        old_log_probs: &old,
        advantages: &advantages,
        returns: &returns,
    };
    let grad = |use_ppo: bool| -> Vec<f64> {
        let mut g = Graph::new();
        let l = g.variable(&[3, 4], logits.clone()).unwrap();
        let v = g.constant(&[3, 1], vec![0.0; 3]).unwrap();
        let terms = if use_ppo {
            ppo_loss(&mut g, l, v, &batch, &cfg).unwrap()
        } else {
            pg_loss(&mut g, l, v, &batch, &cfg).unwrap()
        };
        g.backward(terms.total).unwrap().get(l).unwrap().to_vec()
    };
    let (a, b) = (grad(true), grad(false));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

fn balanced_latency(devices: [usize; 3], episodes: u64) -> f64 {
    let cfg = ScenarioConfig {
        traffic_devices: devices[0],
        environmental_devices: devices[1],
        safety_devices: devices[2],
        seed: 21,
        ..ScenarioConfig::default()
    };
    let mut env = Environment::new(cfg).unwrap();
    let mut total = 0.0;
    for e in 0..episodes {
        env.reset_episode(e);
        while !env.step(Action::Balanced).unwrap().done {}
        total += env.metrics().unwrap().latency_mean.unwrap();
    }
    total / episodes as f64
}

#[test]
fn doubling_devices_does_not_reduce_latency() {
    let mut prev = balanced_latency(scale_devices([6, 4, 2], 6), 10);
    for n in [12, 24, 48, 96] {
        let cur = balanced_latency(scale_devices([6, 4, 2], n), 10);
        assert!(cur >= prev, "{n} devices: {cur} < {prev}");
        prev = cur;
    }
}

#[test]
fn variants_see_the_same_first_step() {
    use iotformer::config::ExperimentConfig;
    use iotformer::preproc::feature_count;
    use iotformer::train::{collect_rollout, Trainer, Variant};

    let mut first = Vec::new();
    for variant in Variant::ALL {
        let mut cfg = ExperimentConfig::default();
        cfg.set_seed(8);
        cfg.train.variant = variant;
        let trainer = Trainer::new(cfg.clone()).unwrap();
        let mut env = Environment::new(cfg.scenario.clone()).unwrap();
        let features = feature_count(env.sensor_specs());
        let mut window = ObservationWindow::new(cfg.encoder.window, features).unwrap();
        let mut buffer = RolloutBuffer::new(1);
        let mut rng = CounterRng::stream(8, "probe", 0);
        collect_rollout(
            &mut env,
            trainer.agent(),
            &mut window,
            1,
            &mut rng,
            &mut buffer,
        )
        .unwrap();
        first.push(buffer.transitions()[0].window.clone());
    }
    assert!(first.windows(2).all(|w| w[0] == w[1]));
}
