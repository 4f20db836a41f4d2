use super::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Central-difference step used by [`gradcheck`].
pub const GRADCHECK_STEP: f64 = 1e-4;

/// Compares the reverse-mode gradient of a scalar function against central
/// finite differences and returns the largest relative error
/// `|a - n| / max(1e-8, |a| + |n|)` over all coordinates of `x`.
pub fn gradcheck<F>(f: F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    gradcheck_with_step(f, x, GRADCHECK_STEP)
}

pub fn gradcheck_with_step<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let eval = |data: Vec<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let xin = g.constant(x.shape(), data)?;
        let out = f(&mut g, xin)?;
        match g.value(out) {
            [v] => Ok(*v),
            other => Err(Error::usage(format!(
                "gradcheck: function must be scalar, got {} values",
                other.len()
            ))),
        }
    };

    let mut g = Graph::new();
    let xin = g.variable(x.shape(), x.data().to_vec())?;
    let out = f(&mut g, xin)?;
    let grads = g.backward(out)?;
    let analytic = grads
        .get(xin)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.data().to_vec();
        plus[i] += h;
        let mut minus = x.data().to_vec();
        minus[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
