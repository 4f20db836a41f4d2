//! Prints every config key with its default and description as a Markdown
//! table, followed by the default config file.
//!
//!     cargo run --example config_reference

use iotformer::config::{ExperimentConfig, KEYS};

fn main() {
    let cfg = ExperimentConfig::default();
    println!("| key | default | meaning |\n|---|---|---|");
    for ((key, value), (_, about)) in cfg.entries().into_iter().zip(KEYS) {
        let shown = if value.is_empty() {
            "(empty)".to_string()
        } else {
            format!("`{value}`")
        };
        println!("| `{key}` | {shown} | {about} |");
    }
    println!("\n{}", cfg.to_text());
}
