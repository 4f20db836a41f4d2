//! Scaled dot-product attention over a partly padded window, then the full
//! encoder producing a pooled state vector.
//!
//!     cargo run --example attention

use iotformer::encoder::{attention_weights, EncoderConfig, EncoderParams};
use iotformer::preproc::ObservationWindow;
use iotformer::rng::CounterRng;
use iotformer::tensor::Graph;

fn main() -> iotformer::Result<()> {
    // Four positions, first one is padding.
    let valid = [false, true, true, true];
    let q = vec![1.0, 0.0, 0.5, 0.5, 0.0, 1.0, 1.0, 1.0];
    let mut g = Graph::new();
    let qn = g.constant(&[4, 2], q.clone())?;
    let kn = g.constant(&[4, 2], q)?;
    let w = attention_weights(&mut g, qn, kn, &valid)?;
    println!("attention weights (rows = queries, padded key column is zero):");
    for row in g.value(w).chunks(4) {
        println!("  {:.3?}  sum {:.3}", row, row.iter().sum::<f64>());
    }

    let cfg = EncoderConfig {
        features: 3,
        window: 6,
        ..EncoderConfig::default()
    };
    let enc = EncoderParams::init(cfg, &mut CounterRng::stream(0, "example", 0))?;
    let mut window = ObservationWindow::new(6, 3)?;
    for t in 0..4 {
        let phase = t as f64 / 4.0;
        window.push(vec![phase, 1.0 - phase, 0.5])?;
        let s = enc.encode(&window)?;
        println!("after {} rows: S_t[..4] = {:.3?}", t + 1, &s[..4]);
    }
    Ok(())
}
