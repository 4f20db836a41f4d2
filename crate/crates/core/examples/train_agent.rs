//! Train one variant and print a coarse reward curve.
//!
//!     cargo run --release --example train_agent [variant] [episodes]
//!
//! `variant` is one of transformer-ppo, mlp-ppo, transformer-pg.

use iotformer::config::ExperimentConfig;
use iotformer::metrics::Phase;
use iotformer::train::{Trainer, Variant};

fn main() -> iotformer::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::default();
    if let Some(v) = args.next() {
        cfg.train.variant = Variant::from_tag(&v)?;
    }
    cfg.train.episodes = args
        .next()
        .map_or(100, |n| n.parse().expect("episodes must be an integer"));
    cfg.train.eval_interval = 25;
    cfg.set_seed(1);

    let mut trainer = Trainer::new(cfg)?;
    println!("run {}", trainer.run_id());
    let mut chunk = Vec::new();
    trainer.run(None, |r| {
        match r.phase {
            Phase::Train => {
                chunk.push(r.total_reward);
                if chunk.len() == 10 {
                    let mean = chunk.iter().sum::<f64>() / 10.0;
                    let bar = "#".repeat(((mean + 10.0).max(0.0) * 2.0) as usize);
                    println!(
                        "episodes {:>3}-{:<3} mean reward {mean:>7.3} {bar}",
                        r.episode - 9,
                        r.episode
                    );
                    chunk.clear();
                }
            }
            Phase::Eval => println!(
                "  greedy eval after episode {}: {:.3}",
                r.episode, r.total_reward
            ),
        }
        Ok(())
    })
}
