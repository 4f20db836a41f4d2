use rand::RngCore;

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::{Graph, NodeId, ParamSet, Tensor};

/// Two-hidden-layer tanh trunk with a categorical policy head and a scalar
/// value head.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyValueParams {
    pub params: ParamSet,
    input: usize,
    hidden: usize,
    actions: usize,
    slots: [usize; 8],
}

impl PolicyValueParams {
    pub fn init(input: usize, hidden: usize, actions: usize, rng: &mut CounterRng) -> Result<Self> {
        Self::build(input, hidden, actions, |r, c| {
            let bound = 1.0 / (r as f64).sqrt();
            let data = (0..r * c).map(|_| rng.uniform_in(-bound, bound)).collect();
            Tensor::new(&[r, c], data).expect("positive dims")
        })
    }

    /// Every weight and bias zero: uniform policy, zero value.
    pub fn zeros(input: usize, hidden: usize, actions: usize) -> Result<Self> {
        Self::build(input, hidden, actions, |r, c| Tensor::zeros(&[r, c]))
    }

    fn build(
        input: usize,
        hidden: usize,
        actions: usize,
        mut matrix: impl FnMut(usize, usize) -> Tensor,
    ) -> Result<Self> {
        let mut v = Vec::new();
        if input == 0 {
            v.push("policy input width must be >= 1".to_string());
        }
        if hidden == 0 {
            v.push("train.hidden must be >= 1".to_string());
        }
        if actions < 2 {
            v.push(format!("policy needs at least 2 actions, got {actions}"));
        }
        if !v.is_empty() {
            return Err(Error::Config { violations: v });
        }
        let mut ps = ParamSet::new();
        let slots = [
            ps.add("trunk1.w", matrix(input, hidden)),
            ps.add("trunk1.b", Tensor::zeros(&[hidden])),
            ps.add("trunk2.w", matrix(hidden, hidden)),
            ps.add("trunk2.b", Tensor::zeros(&[hidden])),
            ps.add("policy.w", matrix(hidden, actions)),
            ps.add("policy.b", Tensor::zeros(&[actions])),
            ps.add("value.w", matrix(hidden, 1)),
            ps.add("value.b", Tensor::zeros(&[1])),
        ];
        Ok(Self {
            params: ps,
            input,
            hidden,
            actions,
            slots,
        })
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    /// Batched forward over `states` (`B × input`): returns logits `B×|A|`
    /// and values `B×1`.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &[NodeId],
        states: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        if g.shape(states).last() != Some(&self.input) {
            let s = g.shape(states).to_vec();
            return Err(Error::dim("policy input", &s, &[self.input]));
        }
        let [w1, b1, w2, b2, wp, bp, wv, bv] = self.slots.map(|i| bound[i]);
        let h = g.matmul(states, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.tanh(h);
        let h = g.matmul(h, w2)?;
        let h = g.add_row(h, b2)?;
        let h = g.tanh(h);
        let logits = g.matmul(h, wp)?;
        let logits = g.add_row(logits, bp)?;
        let value = g.matmul(h, wv)?;
        let value = g.add_row(value, bv)?;
        Ok((logits, value))
    }

    /// Single-state inference.
    pub fn evaluate(&self, state: &[f64]) -> Result<(Vec<f64>, f64)> {
        if state.len() != self.input {
            return Err(Error::dim("policy input", &[state.len()], &[self.input]));
        }
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let s = g.constant(&[1, self.input], state.to_vec())?;
        let (logits, value) = self.forward(&mut g, &bound, s)?;
        Ok((g.value(logits).to_vec(), g.value(value)[0]))
    }
}

/// Numerically stable `log softmax`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// Draws `a ~ Categorical(softmax(logits))` by inverse CDF and returns
/// `(a, log π(a))`.
pub fn sample_action(logits: &[f64], rng: &mut impl RngCore) -> (usize, f64) {
    let logp = log_softmax(logits);
    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let mut acc = 0.0;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return (i, *lp);
        }
    }
    // u landed in the rounding gap above the last partial sum
    let last = logp.len() - 1;
    (last, logp[last])
}

/// Highest-probability action (first on ties).
pub fn greedy_action(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_uniform_policy() {
        let p = PolicyValueParams::zeros(5, 8, 4).unwrap();
        let (logits, value) = p.evaluate(&[0.3, 0.1, 0.9, 0.0, 1.0]).unwrap();
        assert_eq!(value, 0.0);
        for pr in softmax(&logits) {
            assert_eq!(pr, 0.25);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        for seed in 0..100 {
            let mut rng = CounterRng::from_key(seed);
            let p = PolicyValueParams::init(6, 16, 4, &mut rng).unwrap();
            let s: Vec<f64> = (0..6).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
            let (logits, _) = p.evaluate(&s).unwrap();
            assert!(logits.iter().all(|v| v.is_finite()));
            let total: f64 = softmax(&logits).iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_hand_evaluated_affine_chain() {
        // input 1, hidden 1, 2 actions
        let mut p = PolicyValueParams::zeros(1, 1, 2).unwrap();
        let set = |p: &mut PolicyValueParams, name: &str, v: &[f64]| {
            p.params
                .get_mut(name)
                .unwrap()
                .data_mut()
                .copy_from_slice(v)
        };
        set(&mut p, "trunk1.w", &[0.5]);
        set(&mut p, "trunk1.b", &[0.1]);
        set(&mut p, "trunk2.w", &[2.0]);
        set(&mut p, "trunk2.b", &[-0.3]);
        set(&mut p, "policy.w", &[1.0, -1.0]);
        set(&mut p, "policy.b", &[0.2, 0.0]);
        set(&mut p, "value.w", &[3.0]);
        set(&mut p, "value.b", &[0.5]);
        let x = 0.8;
        let h1 = (0.5 * x + 0.1f64).tanh();
        let h2 = (2.0 * h1 - 0.3f64).tanh();
        let (logits, value) = p.evaluate(&[x]).unwrap();
        assert!((logits[0] - (h2 + 0.2)).abs() < 1e-15);
        assert!((logits[1] + h2).abs() < 1e-15);
        assert!((value - (3.0 * h2 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn rejects_wrong_width() {
        let p = PolicyValueParams::zeros(3, 4, 2).unwrap();
        assert!(matches!(
            p.evaluate(&[0.0; 2]),
            Err(Error::Dimension { .. })
        ));
        assert!(PolicyValueParams::zeros(3, 4, 1).is_err());
    }

    #[test]
    fn confident_logits_pick_the_favoured_action() {
        let mut rng = CounterRng::from_key(1);
        let hits = (0..10_000)
            .filter(|_| sample_action(&[20.0, -20.0], &mut rng).0 == 0)
            .count();
        assert!(hits as f64 / 1e4 > 0.999);
    }

    #[test]
    fn uniform_logits_sample_each_action_evenly() {
        let mut rng = CounterRng::from_key(2);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[sample_action(&[0.0; 4], &mut rng).0] += 1;
        }
        let sigma = (1e4f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 2500.0).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn sampling_is_reproducible_and_log_prob_is_exact() {
        let logits = [0.3, -1.2, 2.0];
        let lp = log_softmax(&logits);
        let mut a = CounterRng::from_key(5);
        let mut b = CounterRng::from_key(5);
        for _ in 0..100 {
            let (x, lx) = sample_action(&logits, &mut a);
            let (y, _) = sample_action(&logits, &mut b);
            assert_eq!(x, y);
            assert_eq!(lx, lp[x]);
        }
    }
}
