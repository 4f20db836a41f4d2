use serde::{Deserialize, Serialize};

/// Episode summary. Quantities with no underlying samples are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub total_reward: f64,
    /// Arrival to completion, seconds.
    pub completion_mean: Option<f64>,
    pub completion_p95: Option<f64>,
    /// Arrival to service start per class, seconds.
    pub response_mean: [Option<f64>; 3],
    /// Mean over steps of the per-step processing latency.
    pub latency_mean: Option<f64>,
    pub arrived: [u64; 3],
    pub completed: [u64; 3],
    pub pending: [u64; 3],
    pub rejected: [u64; 3],
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Nearest-rank percentile: the `⌈p·n⌉`-th smallest sample.
pub fn nearest_rank_percentile(xs: &[f64], p: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p * s.len() as f64).ceil() as usize).clamp(1, s.len());
    Some(s[rank - 1])
}
