//! The three-model comparison at reduced scale: all variants, two seeds,
//! written to `out/bench` and summarized.
//!
//!     cargo run --release --example three_model_bench

use std::path::Path;

use iotformer::cli::cmd_bench;
use iotformer::config::ExperimentConfig;

fn main() -> iotformer::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.train.episodes = 60;
    cfg.scenario.memory_variant = true;
    let out = Path::new("out/bench");
    cmd_bench(&cfg, out, 2)?;
    println!(
        "{}",
        std::fs::read_to_string(out.join("summary.csv")).unwrap()
    );
    println!(
        "per-episode series in {}/fig1_reward.csv, fig2_completion.csv, fig3_response.csv",
        out.display()
    );
    Ok(())
}
