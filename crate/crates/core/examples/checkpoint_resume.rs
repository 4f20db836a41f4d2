//! Stop a run halfway, resume it from the checkpoint and confirm the metrics
//! match an uninterrupted run.
//!
//!     cargo run --release --example checkpoint_resume

use iotformer::config::ExperimentConfig;
use iotformer::metrics::to_csv;
use iotformer::train::{train_loop, Trainer};

fn main() -> iotformer::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.train.episodes = 10;
    cfg.set_seed(3);
    let full = train_loop(&cfg)?;

    let dir = std::env::temp_dir().join("iotformer-checkpoint-example");
    std::fs::create_dir_all(&dir).map_err(|e| iotformer::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let stem = dir.join("half");

    let mut first = cfg.clone();
    first.train.episodes = 5;
    let mut t = Trainer::new(first)?;
    let mut head = Vec::new();
    t.run(None, |r| {
        head.push(r.clone());
        Ok(())
    })?;
    t.save_checkpoint(&stem)?;
    println!("saved after episode {} to {}", t.episode(), stem.display());

    let mut resumed = Trainer::resume(cfg, &stem)?;
    let mut tail = Vec::new();
    resumed.run(None, |r| {
        tail.push(r.clone());
        Ok(())
    })?;

    let joined: Vec<_> = head.into_iter().chain(tail).collect();
    let same = to_csv(&joined)? == to_csv(&full)?;
    println!("resumed stream identical to uninterrupted run: {same}");
    for r in &joined {
        println!("  episode {:>2} reward {:.4}", r.episode, r.total_reward);
    }
    Ok(())
}
