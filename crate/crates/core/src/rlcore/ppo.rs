//! Clipped-surrogate PPO and the plain policy-gradient objective used by the
//! transformer baseline.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::buffer::{normalize_advantages, RolloutBuffer};
use super::policy::{sample_action, PolicyValueParams};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::preproc::ObservationWindow;
use crate::rng::CounterRng;
use crate::tensor::{AdamConfig, AdamState, Graph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PPOConfig {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub max_grad_norm: f64,
    pub learning_rate: f64,
    pub normalize_advantages: bool,
}

impl Default for PPOConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            epochs: 4,
            minibatch: 64,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            learning_rate: 3e-4,
            normalize_advantages: true,
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if !(self.clip > 0.0 && self.clip < 1.0) {
            v.push(format!("ppo.clip must be in (0, 1), got {}", self.clip));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            v.push(format!("ppo.gamma must be in [0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            v.push(format!("ppo.lambda must be in [0, 1], got {}", self.lambda));
        }
        if self.epochs == 0 {
            v.push("ppo.epochs must be >= 1".into());
        }
        if self.minibatch == 0 {
            v.push("ppo.minibatch must be >= 1".into());
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 {
            v.push("ppo loss coefficients must be >= 0".into());
        }
        if self.max_grad_norm < 0.0 {
            v.push("ppo.max_grad_norm must be >= 0".into());
        }
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 {
            v.push(format!(
                "ppo.learning_rate must be >= 0, got {}",
                self.learning_rate
            ));
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config { violations: v })
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// `min(r·Â, clip(r, 1-ε, 1+ε)·Â)` for one sample.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// PPO clipped surrogate.
    ClippedSurrogate,
    /// `mean(log π(a|s) · Â)` without ratios or clipping.
    PolicyGradient,
}

/// Per-sample targets of a minibatch.
#[derive(Debug, Clone, Copy)]
pub struct LossBatch<'a> {
    pub actions: &'a [usize],
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    /// `-surrogate + c_v·value_loss - c_e·entropy`.
    pub total: NodeId,
    pub surrogate: NodeId,
    pub value_loss: NodeId,
    pub entropy: NodeId,
    /// Share of samples with `|r - 1| > ε` (zero for the plain objective).
    pub clip_fraction: f64,
}

fn column(g: &mut Graph, v: &[f64]) -> Result<NodeId> {
    g.constant(&[v.len(), 1], v.to_vec())
}

fn check_batch(g: &Graph, logits: NodeId, values: NodeId, b: &LossBatch) -> Result<()> {
    let n = b.actions.len();
    if n == 0 {
        return Err(Error::usage("loss on an empty minibatch"));
    }
    let rows = g.value(logits).len() / g.shape(logits).last().unwrap();
    if rows != n
        || g.value(values).len() != n
        || b.old_log_probs.len() != n
        || b.advantages.len() != n
        || b.returns.len() != n
    {
        return Err(Error::dim("loss batch", g.shape(logits), &[n]));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finish(
    g: &mut Graph,
    surrogate: NodeId,
    log_probs: NodeId,
    values: NodeId,
    b: &LossBatch,
    value_coef: f64,
    entropy_coef: f64,
    clip_fraction: f64,
) -> Result<LossTerms> {
    let ret = column(g, b.returns)?;
    let err = g.sub(values, ret)?;
    let sq = g.mul(err, err)?;
    let value_loss = g.mean(sq);

    let probs = g.exp(log_probs);
    let plogp = g.mul(probs, log_probs)?;
    let per_row = g.row_sum(plogp);
    let neg_entropy = g.mean(per_row);
    let entropy = g.neg(neg_entropy);

    let policy_term = g.neg(surrogate);
    let v = g.scale(value_loss, value_coef);
    let e = g.scale(entropy, entropy_coef);
    let total = g.add(policy_term, v)?;
    let total = g.sub(total, e)?;
    Ok(LossTerms {
        total,
        surrogate,
        value_loss,
        entropy,
        clip_fraction,
    })
}

/// Clipped-surrogate loss from policy logits (`B×|A|`) and values (`B×1`).
/// Minimizing it maximizes the clipped objective.
pub fn ppo_loss(
    g: &mut Graph,
    logits: NodeId,
    values: NodeId,
    b: &LossBatch,
    cfg: &PPOConfig,
) -> Result<LossTerms> {
    check_batch(g, logits, values, b)?;
    let log_probs = g.log_softmax(logits);
    let taken = g.pick(log_probs, b.actions)?;
    let old = column(g, b.old_log_probs)?;
    let log_ratio = g.sub(taken, old)?;
    let ratio = g.exp(log_ratio);
    let adv = column(g, b.advantages)?;
    let unclipped = g.mul(ratio, adv)?;
    let clamped = g.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let clipped = g.mul(clamped, adv)?;
    let terms = g.minimum(unclipped, clipped)?;
    let surrogate = g.mean(terms);
    let clip_fraction = g
        .value(ratio)
        .iter()
        .filter(|r| (*r - 1.0).abs() > cfg.clip)
        .count() as f64
        / b.actions.len() as f64;
    finish(
        g,
        surrogate,
        log_probs,
        values,
        b,
        cfg.value_coef,
        cfg.entropy_coef,
        clip_fraction,
    )
}

/// Unclipped policy-gradient loss `-mean(log π(a|s)·Â)` plus the same value
/// and entropy terms as [`ppo_loss`].
pub fn pg_loss(
    g: &mut Graph,
    logits: NodeId,
    values: NodeId,
    b: &LossBatch,
    cfg: &PPOConfig,
) -> Result<LossTerms> {
    check_batch(g, logits, values, b)?;
    let log_probs = g.log_softmax(logits);
    let taken = g.pick(log_probs, b.actions)?;
    let adv = column(g, b.advantages)?;
    let weighted = g.mul(taken, adv)?;
    let surrogate = g.mean(weighted);
    finish(
        g,
        surrogate,
        log_probs,
        values,
        b,
        cfg.value_coef,
        cfg.entropy_coef,
        0.0,
    )
}

/// Mean total episode reward: a Monte Carlo estimate of the expected return.
pub fn estimate_objective(episodes: &[Vec<f64>]) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::usage(
            "estimate_objective needs at least one episode",
        ));
    }
    let total: f64 = episodes.iter().map(|e| e.iter().sum::<f64>()).sum();
    Ok(total / episodes.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Mean of `-surrogate` over minibatches.
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Global gradient norm before clipping, averaged over minibatches.
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// Encoder (optional), policy/value network and their optimizer states.
///
/// Without an encoder the policy reads the newest row of the window.
#[derive(Debug, Clone)]
pub struct Agent {
    pub encoder: Option<EncoderParams>,
    pub policy: PolicyValueParams,
    pub encoder_opt: Option<AdamState>,
    pub policy_opt: AdamState,
}

impl Agent {
    pub fn new(
        encoder: Option<EncoderParams>,
        policy: PolicyValueParams,
        cfg: &PPOConfig,
    ) -> Result<Self> {
        let expected = match &encoder {
            Some(e) => e.config().d_model,
            None => policy.input_width(),
        };
        if policy.input_width() != expected {
            return Err(Error::dim("agent", &[expected], &[policy.input_width()]));
        }
        let encoder_opt = encoder
            .as_ref()
            .map(|e| AdamState::new(&e.params, cfg.adam()));
        let policy_opt = AdamState::new(&policy.params, cfg.adam());
        Ok(Self {
            encoder,
            policy,
            encoder_opt,
            policy_opt,
        })
    }

    /// Records the state row (`1 × input`) for `window`.
    pub fn state_node(
        &self,
        g: &mut Graph,
        encoder_bound: &[NodeId],
        window: &ObservationWindow,
        dropout_rng: Option<&mut CounterRng>,
    ) -> Result<NodeId> {
        match &self.encoder {
            Some(enc) => enc.forward(g, encoder_bound, window, dropout_rng),
            None => {
                let row = window
                    .latest()
                    .ok_or_else(|| Error::usage("state from an empty window"))?;
                g.constant(&[1, row.len()], row.to_vec())
            }
        }
    }

    /// Logits and value for one window, without gradient tracking.
    pub fn evaluate(&self, window: &ObservationWindow) -> Result<(Vec<f64>, f64)> {
        let mut g = Graph::new();
        let eb = self
            .encoder
            .as_ref()
            .map(|e| e.params.bind_frozen(&mut g))
            .unwrap_or_default();
        let pb = self.policy.params.bind_frozen(&mut g);
        let s = self.state_node(&mut g, &eb, window, None)?;
        let (logits, value) = self.policy.forward(&mut g, &pb, s)?;
        Ok((g.value(logits).to_vec(), g.value(value)[0]))
    }

    /// Samples an action: `(action, log-prob, value)`.
    pub fn act(
        &self,
        window: &ObservationWindow,
        rng: &mut CounterRng,
    ) -> Result<(usize, f64, f64)> {
        let (logits, value) = self.evaluate(window)?;
        let (a, lp) = sample_action(&logits, rng);
        Ok((a, lp, value))
    }

    /// Optimizes the chosen objective over `buffer` and clears it.
    ///
    /// Each epoch shuffles the transitions with `rng`, splits them into
    /// minibatches, backpropagates through the policy and (if present) the
    /// encoder, clips the joint gradient norm and takes one Adam step per
    /// parameter set.
    pub fn update(
        &mut self,
        buffer: &mut RolloutBuffer,
        cfg: &PPOConfig,
        objective: Objective,
        rng: &mut CounterRng,
    ) -> Result<UpdateStats> {
        let (Some(raw_adv), Some(returns)) = (buffer.advantages(), buffer.returns()) else {
            return Err(Error::usage(
                "update called before advantages were computed",
            ));
        };
        let advantages = if cfg.normalize_advantages {
            normalize_advantages(raw_adv)
        } else {
            raw_adv.to_vec()
        };
        let returns = returns.to_vec();
        let transitions = buffer.transitions();
        let mut order: Vec<usize> = (0..transitions.len()).collect();
        let mut stats = UpdateStats::default();

        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.minibatch) {
                let mut g = Graph::new();
                let eb = self
                    .encoder
                    .as_ref()
                    .map(|e| e.params.bind(&mut g))
                    .unwrap_or_default();
                let pb = self.policy.params.bind(&mut g);
                let mut rows = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    rows.push(self.state_node(&mut g, &eb, &transitions[i].window, Some(rng))?);
                }
                let states = g.concat_rows(&rows)?;
                let (logits, values) = self.policy.forward(&mut g, &pb, states)?;

                let actions: Vec<usize> = chunk.iter().map(|&i| transitions[i].action).collect();
                let old: Vec<f64> = chunk.iter().map(|&i| transitions[i].log_prob).collect();
                let adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
                let ret: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();
                let batch = LossBatch {
                    actions: &actions,
                    old_log_probs: &old,
                    advantages: &adv,
                    returns: &ret,
                };
                let terms = match objective {
                    Objective::ClippedSurrogate => ppo_loss(&mut g, logits, values, &batch, cfg)?,
                    Objective::PolicyGradient => pg_loss(&mut g, logits, values, &batch, cfg)?,
                };
                let grads = g.backward(terms.total)?;
                self.policy.params.accumulate(&grads, &pb)?;
                if let Some(enc) = &mut self.encoder {
                    enc.params.accumulate(&grads, &eb)?;
                }

                let sq = self.policy.params.grad_sq_norm()
                    + self
                        .encoder
                        .as_ref()
                        .map_or(0.0, |e| e.params.grad_sq_norm());
                let norm = sq.sqrt();
                if cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm {
                    let c = cfg.max_grad_norm / norm;
                    self.policy.params.scale_grads(c);
                    if let Some(enc) = &mut self.encoder {
                        enc.params.scale_grads(c);
                    }
                }
                self.policy_opt.step(&mut self.policy.params)?;
                if let (Some(enc), Some(opt)) = (&mut self.encoder, &mut self.encoder_opt) {
                    opt.step(&mut enc.params)?;
                }

                stats.policy_loss -= g.value(terms.surrogate)[0];
                stats.value_loss += g.value(terms.value_loss)[0];
                stats.entropy += g.value(terms.entropy)[0];
                stats.clip_fraction += terms.clip_fraction;
                stats.grad_norm += norm;
                stats.minibatches += 1;
            }
        }
        let n = stats.minibatches.max(1) as f64;
        stats.policy_loss /= n;
        stats.value_loss /= n;
        stats.entropy /= n;
        stats.clip_fraction /= n;
        stats.grad_norm /= n;
        buffer.clear();
        Ok(stats)
    }
}
