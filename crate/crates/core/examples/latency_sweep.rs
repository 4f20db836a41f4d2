//! Mean step latency of the balanced policy as the city grows.
//!
//!     cargo run --release --example latency_sweep

use iotformer::cli::latency_sweep;
use iotformer::config::ExperimentConfig;

fn main() -> iotformer::Result<()> {
    let rows = latency_sweep(&ExperimentConfig::default(), &[6, 12, 24, 48, 96, 192], 10)?;
    println!(
        "{:>7} {:>18} {:>12} {:>10}",
        "devices", "traffic/env/safety", "latency (s)", "std"
    );
    for r in rows {
        println!(
            "{:>7} {:>18} {:>12.0} {:>10.0}",
            r.count,
            format!("{}/{}/{}", r.devices[0], r.devices[1], r.devices[2]),
            r.mean.unwrap_or(f64::NAN),
            r.std.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
