use crate::error::{Error, Result};
use crate::preproc::ObservationWindow;

/// One step of experience.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Encoded window the action was chosen from.
    pub window: ObservationWindow,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    /// `log π_old(action | window)` at collection time.
    pub log_prob: f64,
    /// `V_old(window)` at collection time.
    pub value: f64,
}

/// On-policy transition store for a single update.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    capacity: usize,
    transitions: Vec<Transition>,
    advantages: Option<Vec<f64>>,
    returns: Option<Vec<f64>>,
}

/// Generalized advantage estimation:
///
/// ```text
/// δ_t = r_t + γ V(s_{t+1})(1 - done_t) - V(s_t)
/// Â_t = δ_t + γλ(1 - done_t) Â_{t+1}
/// ```
///
/// `bootstrap` stands in for `V(s_{t+1})` after the last step. Returns
/// `(advantages, advantages + values)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if n == 0 {
        return Err(Error::usage("gae on an empty rollout"));
    }
    if values.len() != n || dones.len() != n {
        return Err(Error::dim("gae", &[n], &[values.len(), dones.len()]));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales to zero mean and unit (population) standard deviation.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    adv.iter().map(|a| (a - mean) / std).collect()
}

impl RolloutBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            transitions: Vec::with_capacity(capacity),
            advantages: None,
            returns: None,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.transitions.len() >= self.capacity
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if self.is_full() {
            return Err(Error::usage(format!(
                "rollout buffer full ({} transitions)",
                self.capacity
            )));
        }
        self.advantages = None;
        self.returns = None;
        self.transitions.push(t);
        Ok(())
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }

    /// Runs [`gae`] over the stored transitions and keeps the raw advantages
    /// and returns.
    pub fn compute_advantages(&mut self, bootstrap: f64, gamma: f64, lambda: f64) -> Result<()> {
        let rewards = self.rewards();
        let values: Vec<f64> = self.transitions.iter().map(|t| t.value).collect();
        let dones: Vec<bool> = self.transitions.iter().map(|t| t.done).collect();
        let (adv, ret) = gae(&rewards, &values, &dones, bootstrap, gamma, lambda)?;
        self.advantages = Some(adv);
        self.returns = Some(ret);
        Ok(())
    }

    pub fn advantages(&self) -> Option<&[f64]> {
        self.advantages.as_deref()
    }

    pub fn returns(&self) -> Option<&[f64]> {
        self.returns.as_deref()
    }

    /// Drops every transition; used after each update.
    pub fn clear(&mut self) {
        self.transitions.clear();
        self.advantages = None;
        self.returns = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_zero_is_one_step_td() {
        let r = [1.0, -0.5, 2.0];
        let v = [0.3, 0.7, -0.2];
        let d = [false, false, false];
        let (adv, ret) = gae(&r, &v, &d, 0.4, 0.9, 0.0).unwrap();
        let expected = [
            1.0 + 0.9 * 0.7 - 0.3,
            -0.5 + 0.9 * -0.2 - 0.7,
            2.0 + 0.9 * 0.4 + 0.2,
        ];
        for i in 0..3 {
            assert!((adv[i] - expected[i]).abs() < 1e-15);
            assert!((ret[i] - (adv[i] + v[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn full_lambda_undiscounted_is_suffix_sums() {
        let r = [1.0, 2.0, 3.0, 4.0];
        let (adv, _) = gae(&r, &[0.0; 4], &[false, false, false, true], 99.0, 1.0, 1.0).unwrap();
        assert_eq!(adv, vec![10.0, 9.0, 7.0, 4.0]);
    }

    #[test]
    fn done_cuts_the_recursion() {
        let r = [1.0, 1.0];
        let (adv, _) = gae(&r, &[0.0, 0.0], &[true, false], 5.0, 1.0, 1.0).unwrap();
        assert_eq!(adv, vec![1.0, 6.0]);
    }

    #[test]
    fn empty_rollout_is_rejected() {
        assert!(matches!(
            gae(&[], &[], &[], 0.0, 0.99, 0.95),
            Err(Error::Usage(_))
        ));
        let mut b = RolloutBuffer::new(4);
        assert!(b.compute_advantages(0.0, 0.99, 0.95).is_err());
    }

    #[test]
    fn normalization_gives_zero_mean_unit_std() {
        let a = normalize_advantages(&[1.0, 2.0, 3.0, 6.0]);
        let mean: f64 = a.iter().sum::<f64>() / 4.0;
        let var: f64 = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }
}
