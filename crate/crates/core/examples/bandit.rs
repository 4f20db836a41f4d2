//! Two-armed bandit: constant state, arm 0 pays 1, arm 1 pays 0. PPO should
//! drive P(arm 0) towards 1.
//!
//!     cargo run --release --example bandit

use iotformer::preproc::ObservationWindow;
use iotformer::rlcore::{
    softmax, Agent, Objective, PPOConfig, PolicyValueParams, RolloutBuffer, Transition,
};
use iotformer::rng::CounterRng;

fn main() -> iotformer::Result<()> {
    let cfg = PPOConfig {
        minibatch: 16,
        ..PPOConfig::default()
    };
    let policy = PolicyValueParams::init(1, 16, 2, &mut CounterRng::stream(0, "init", 0))?;
    let mut agent = Agent::new(None, policy, &cfg)?;
    let mut act_rng = CounterRng::stream(0, "act", 0);
    let mut upd_rng = CounterRng::stream(0, "update", 0);
    let window = ObservationWindow::new(1, 1)?.pushed(vec![1.0])?;
    let mut buffer = RolloutBuffer::new(16);

    for update in 1..=200 {
        let mut wins = 0;
        for _ in 0..16 {
            let (action, log_prob, value) = agent.act(&window, &mut act_rng)?;
            let reward = if action == 0 { 1.0 } else { 0.0 };
            wins += (action == 0) as usize;
            buffer.push(Transition {
                window: window.clone(),
                action,
                reward,
                done: true,
                log_prob,
                value,
            })?;
        }
        buffer.compute_advantages(0.0, cfg.gamma, cfg.lambda)?;
        let stats = agent.update(&mut buffer, &cfg, Objective::ClippedSurrogate, &mut upd_rng)?;
        if update % 20 == 0 {
            let (logits, _) = agent.evaluate(&window)?;
            println!(
                "update {update:>3}: P(arm 0) = {:.3}  batch wins {wins:>2}/16  entropy {:.3}",
                softmax(&logits)[0],
                stats.entropy
            );
        }
    }
    Ok(())
}
