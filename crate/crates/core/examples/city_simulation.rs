//! Fixed dispatch policies in the default city scenario, plus an optional
//! event trace.
//!
//!     cargo run --release --example city_simulation [trace.jsonl]

use std::fs::File;
use std::io::BufWriter;

use iotformer::citysim::{Action, DeviceClass, Environment, ScenarioConfig};
use iotformer::rng::CounterRng;

fn evaluate(
    cfg: &ScenarioConfig,
    episodes: u64,
    mut policy: impl FnMut(&Environment, &mut CounterRng) -> Action,
) -> iotformer::Result<(f64, f64)> {
    let mut env = Environment::new(cfg.clone())?;
    let mut rng = CounterRng::stream(cfg.seed, "example.policy", 0);
    let (mut reward, mut latency) = (0.0, 0.0);
    for e in 0..episodes {
        env.reset_episode(e);
        loop {
            let a = policy(&env, &mut rng);
            if env.step(a)?.done {
                break;
            }
        }
        let m = env.metrics()?;
        reward += m.total_reward;
        latency += m.latency_mean.unwrap_or(0.0);
    }
    Ok((reward / episodes as f64, latency / episodes as f64))
}

fn longest_queue(env: &Environment) -> Action {
    let q = env.queue_lengths();
    let best = (0..3)
        .max_by_key(|&c| (q[c], std::cmp::Reverse(c)))
        .unwrap();
    Action::Prioritize(DeviceClass::ALL[best])
}

fn main() -> iotformer::Result<()> {
    let cfg = ScenarioConfig::default();
    let n = 50;
    println!(
        "{:<22} {:>12} {:>14}",
        "policy", "mean reward", "latency (s)"
    );
    let report = |name: &str, (r, l): (f64, f64)| println!("{name:<22} {r:>12.3} {l:>14.0}");
    report(
        "uniform random",
        evaluate(&cfg, n, |_, rng| {
            Action::from_index((rng.uniform() * 4.0) as usize).unwrap()
        })?,
    );
    report("balanced", evaluate(&cfg, n, |_, _| Action::Balanced)?);
    report(
        "longest queue",
        evaluate(&cfg, n, |env, _| longest_queue(env))?,
    );
    for c in DeviceClass::ALL {
        report(
            &format!("always {}", c.tag()),
            evaluate(&cfg, n, |_, _| Action::Prioritize(c))?,
        );
    }

    if let Some(path) = std::env::args().nth(1) {
        let mut env = Environment::new(cfg)?;
        env.set_trace(true);
        env.reset_episode(0);
        while !env.step(Action::Balanced)?.done {}
        env.write_trace_jsonl(BufWriter::new(File::create(&path).map_err(|e| {
            iotformer::Error::Io {
                path: path.clone().into(),
                source: e,
            }
        })?))?;
        println!("\nwrote {} events to {path}", env.trace().len());
    }
    Ok(())
}
