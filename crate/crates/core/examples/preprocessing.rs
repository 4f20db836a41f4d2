//! Sensor schema, normalization, one-hot encoding and the sliding window the
//! encoder reads.
//!
//!     cargo run --example preprocessing

use iotformer::citysim::{Action, Environment, ScenarioConfig};
use iotformer::preproc::{
    encode_observation, feature_count, normalize, one_hot, ObservationWindow, SensorSpec,
};

fn main() -> iotformer::Result<()> {
    let flow = SensorSpec::continuous("traffic0.flow", 0.0, 100.0)?;
    for x in [-10.0, 0.0, 42.0, 100.0, 180.0] {
        println!("normalize({x:>6}) = {:.3}", normalize(x, &flow)?);
    }
    let alert = SensorSpec::categorical("safety0.alert", 3)?;
    println!("one_hot(2) = {:?}", one_hot(2, &alert)?);

    let cfg = ScenarioConfig::default();
    let mut env = Environment::new(cfg.clone())?;
    let specs = env.sensor_specs().to_vec();
    println!(
        "\n{} sensors encode to {} features:",
        specs.len(),
        feature_count(&specs)
    );
    for s in &specs {
        println!("  {:<22} width {}", s.id, s.width());
    }

    // Short window so the padding is visible.
    let mut window = ObservationWindow::new(4, feature_count(&specs))?;
    let mut obs = env.reset_episode(0);
    for step in 0..6 {
        window.push(encode_observation(&obs, &specs)?)?;
        let mask: String = window
            .mask()
            .iter()
            .map(|&m| if m { '#' } else { '.' })
            .collect();
        let latest = window.latest().unwrap();
        println!(
            "step {step}: mask {mask}  newest row starts {:.2?}",
            &latest[..4]
        );
        obs = env.step(Action::Balanced)?.observation;
    }
    Ok(())
}
