//! Finite-difference checks of every differentiable building block: graph
//! primitives, the encoder (per parameter tensor) and the policy losses.

use std::io::Write;

use crate::encoder::{attention, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::preproc::ObservationWindow;
use crate::rlcore::{pg_loss, ppo_loss, LossBatch, PPOConfig, PolicyValueParams};
use crate::rng::CounterRng;
use crate::tensor::{gradcheck, Graph, NodeId, Tensor};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

type CaseFn = Box<dyn Fn() -> Result<f64>>;

/// One named check; `run` returns the maximum relative error.
pub struct GradCase {
    pub name: String,
    pub run: CaseFn,
}

impl GradCase {
    pub fn new(name: impl Into<String>, run: impl Fn() -> Result<f64> + 'static) -> Self {
        Self {
            name: name.into(),
            run: Box::new(run),
        }
    }
}

fn random(shape: &[usize], key: u64) -> Tensor {
    let mut rng = CounterRng::from_key(key);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).expect("valid shape")
}

/// Random entries with `|x| ∈ [0.2, 1)`, away from kinks at zero.
fn away_from_zero(shape: &[usize], key: u64) -> Tensor {
    let mut t = random(shape, key);
    for v in t.data_mut() {
        *v = v.signum() * (0.2 + 0.8 * v.abs());
    }
    t
}

/// `Σ w ⊙ y` with fixed pseudo-random weights, so every output entry
/// contributes a distinct sensitivity.
fn weighted(g: &mut Graph, y: NodeId) -> Result<NodeId> {
    let w = random(g.shape(y), 0xC0FFEE);
    let w = g.constant(w.shape(), w.data().to_vec())?;
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn konst(g: &mut Graph, t: &Tensor) -> Result<NodeId> {
    g.constant(t.shape(), t.data().to_vec())
}

fn unary(name: &str, x: Tensor, f: fn(&mut Graph, NodeId) -> Result<NodeId>) -> GradCase {
    GradCase::new(name, move || {
        gradcheck(
            |g, x| {
                let y = f(g, x)?;
                weighted(g, y)
            },
            &x,
        )
    })
}

/// Checks for every graph primitive on fixed inputs.
pub fn primitive_cases() -> Vec<GradCase> {
    primitive_cases_seeded(0)
}

/// [`primitive_cases`] with inputs drawn from streams offset by `seed`.
pub fn primitive_cases_seeded(seed: u64) -> Vec<GradCase> {
    let offset = seed.wrapping_mul(1000);
    let rnd = move |shape: &[usize], key: u64| random(shape, key.wrapping_add(offset));
    let m = move || rnd(&[3, 4], 1);
    let other = rnd(&[3, 4], 2);
    let o2 = other.clone();
    let o3 = other.clone();
    let sep = rnd(&[3, 4], 3);
    let bias = rnd(&[4], 4);
    let b2 = bias.clone();
    let rhs = rnd(&[4, 2], 5);
    let lhs = rnd(&[3, 4], 6);
    let gain = rnd(&[4], 7);
    let g2 = gain.clone();
    let g3 = gain.clone();
    let x_ln = rnd(&[3, 4], 8);
    let x_ln2 = x_ln.clone();
    vec![
        GradCase::new("add", move || {
            gradcheck(
                |g, x| {
                    let c = konst(g, &other)?;
                    let y = g.add(x, c)?;
                    weighted(g, y)
                },
                &m(),
            )
        }),
        GradCase::new("sub", move || {
            gradcheck(
                |g, x| {
                    let c = konst(g, &o2)?;
                    let y = g.sub(c, x)?;
                    weighted(g, y)
                },
                &m(),
            )
        }),
        GradCase::new("mul", move || {
            gradcheck(
                |g, x| {
                    let c = konst(g, &o3)?;
                    let y = g.mul(x, c)?;
                    weighted(g, y)
                },
                &m(),
            )
        }),
        GradCase::new("minimum", move || {
            // x and its partner differ by at least 0.2 everywhere
            let x = m();
            let mut partner = sep.clone();
            for (p, xv) in partner.data_mut().iter_mut().zip(x.data()) {
                *p = xv
                    + if *p >= 0.0 {
                        0.2 + 0.5 * *p
                    } else {
                        -0.2 + 0.5 * *p
                    };
            }
            gradcheck(
                |g, x| {
                    let c = konst(g, &partner)?;
                    let y = g.minimum(x, c)?;
                    weighted(g, y)
                },
                &x,
            )
        }),
        unary("scale", m(), |g, x| Ok(g.scale(x, -1.7))),
        unary("neg", m(), |g, x| Ok(g.neg(x))),
        GradCase::new("add_row.x", move || {
            gradcheck(
                |g, x| {
                    let b = konst(g, &bias)?;
                    let y = g.add_row(x, b)?;
                    weighted(g, y)
                },
                &m(),
            )
        }),
        GradCase::new("add_row.bias", move || {
            let x = m();
            gradcheck(
                |g, b| {
                    let xn = konst(g, &x)?;
                    let y = g.add_row(xn, b)?;
                    weighted(g, y)
                },
                &b2,
            )
        }),
        GradCase::new("matmul.lhs", move || {
            gradcheck(
                |g, a| {
                    let b = konst(g, &rhs)?;
                    let y = g.matmul(a, b)?;
                    weighted(g, y)
                },
                &m(),
            )
        }),
        GradCase::new("matmul.rhs", move || {
            let b = rnd(&[4, 2], 5);
            gradcheck(
                |g, b| {
                    let a = konst(g, &lhs)?;
                    let y = g.matmul(a, b)?;
                    weighted(g, y)
                },
                &b,
            )
        }),
        unary("transpose", m(), |g, x| Ok(g.transpose(x))),
        unary(
            "relu",
            away_from_zero(&[3, 4], 9u64.wrapping_add(offset)),
            |g, x| Ok(g.relu(x)),
        ),
        unary("tanh", m(), |g, x| Ok(g.tanh(x))),
        unary("exp", m(), |g, x| Ok(g.exp(x))),
        unary(
            "log",
            {
                let mut t = rnd(&[3, 4], 10);
                t.data_mut().iter_mut().for_each(|v| *v = 0.5 + v.abs());
                t
            },
            |g, x| g.log(x),
        ),
        unary(
            "clamp",
            {
                // entries at least 0.1 away from the bounds ±0.5
                let mut t = rnd(&[3, 4], 11);
                t.data_mut().iter_mut().for_each(|v| {
                    *v = if v.abs() < 0.5 {
                        0.4 * *v
                    } else {
                        v.signum() * (0.6 + 0.4 * v.abs())
                    }
                });
                t
            },
            |g, x| Ok(g.clamp(x, -0.5, 0.5)),
        ),
        unary("map", m(), |g, x| Ok(g.map(x, f64::sin, f64::cos))),
        unary("sum", m(), |g, x| Ok(g.sum(x))),
        unary("mean", m(), |g, x| Ok(g.mean(x))),
        unary("row_sum", m(), |g, x| Ok(g.row_sum(x))),
        unary("softmax", m(), |g, x| Ok(g.softmax(x))),
        unary("masked_softmax", m(), |g, x| {
            g.masked_softmax(x, &[true, false, true, true])
        }),
        unary("log_softmax", m(), |g, x| Ok(g.log_softmax(x))),
        GradCase::new("layer_norm.x", move || {
            gradcheck(
                |g, x| {
                    let ga = konst(g, &gain)?;
                    let b = g.constant(&[4], vec![0.1, -0.2, 0.3, 0.0])?;
                    let y = g.layer_norm(x, ga, b)?;
                    weighted(g, y)
                },
                &x_ln,
            )
        }),
        GradCase::new("layer_norm.gain", move || {
            gradcheck(
                |g, ga| {
                    let x = konst(g, &x_ln2)?;
                    let b = g.constant(&[4], vec![0.0; 4])?;
                    let y = g.layer_norm(x, ga, b)?;
                    weighted(g, y)
                },
                &g2,
            )
        }),
        GradCase::new("layer_norm.bias", move || {
            let x = rnd(&[3, 4], 8);
            gradcheck(
                |g, b| {
                    let xn = konst(g, &x)?;
                    let ga = konst(g, &g3)?;
                    let y = g.layer_norm(xn, ga, b)?;
                    weighted(g, y)
                },
                &rnd(&[4], 12),
            )
        }),
        unary("slice_cols", m(), |g, x| g.slice_cols(x, 1, 2)),
        unary("concat_cols", m(), |g, x| {
            let a = g.slice_cols(x, 0, 1)?;
            let b = g.tanh(x);
            g.concat_cols(&[b, a])
        }),
        unary("concat_rows", m(), |g, x| {
            let b = g.exp(x);
            g.concat_rows(&[x, b])
        }),
        unary("pick", m(), |g, x| g.pick(x, &[3, 0, 2])),
        unary("reshape", m(), |g, x| g.reshape(x, &[2, 6])),
        unary("attention", rnd(&[4, 6], 13), |g, x| {
            let k = g.tanh(x);
            let v = g.exp(x);
            attention(g, x, k, v, &[false, true, true, true])
        }),
    ]
}

fn tiny_window(features: usize, window: usize) -> ObservationWindow {
    let mut w = ObservationWindow::new(window, features).expect("positive dims");
    let mut rng = CounterRng::from_key(21);
    for _ in 0..window - 1 {
        w.push((0..features).map(|_| rng.uniform()).collect())
            .expect("width matches");
    }
    w
}

/// One check per encoder parameter tensor (2 layers, `d_model = 8`).
pub fn encoder_cases() -> Vec<GradCase> {
    let cfg = EncoderConfig {
        d_model: 8,
        heads: 2,
        layers: 2,
        d_ff: 12,
        window: 4,
        features: 5,
        dropout: 0.0,
        positional: true,
    };
    let mut rng = CounterRng::from_key(17);
    let mut enc = EncoderParams::init(cfg, &mut rng).expect("valid config");
    // perturb LN gains and biases so their gradients are not degenerate
    for t in enc.params.tensors_mut() {
        if t.shape() == [8] {
            for v in t.data_mut() {
                *v += rng.uniform_in(-0.3, 0.3);
            }
        }
    }
    let enc = std::rc::Rc::new(enc);
    let window = std::rc::Rc::new(tiny_window(5, 4));
    let names = enc.params.names().to_vec();
    names
        .into_iter()
        .enumerate()
        .map(|(slot, name)| {
            let enc = enc.clone();
            let window = window.clone();
            GradCase::new(format!("encoder/{name}"), move || {
                let x = enc.params.tensors()[slot].clone();
                gradcheck(
                    |g, x| {
                        let mut bound = enc.params.bind_frozen(g);
                        bound[slot] = x;
                        let y = enc.forward(g, &bound, &window, None)?;
                        weighted(g, y)
                    },
                    &x,
                )
            })
        })
        .collect()
}

struct LossFixture {
    actions: Vec<usize>,
    old: Vec<f64>,
    adv: Vec<f64>,
    ret: Vec<f64>,
}

impl LossFixture {
    fn new() -> Self {
        Self {
            actions: vec![0, 3, 1, 2, 3],
            // moderately off-policy so some ratios clip and others do not
            old: vec![-1.1, -1.6, -1.4, -0.9, -1.35],
            adv: vec![0.7, -1.2, 0.4, -0.3, 1.5],
            ret: vec![0.5, -0.2, 1.0, 0.3, -0.7],
        }
    }

    fn batch(&self) -> LossBatch<'_> {
        LossBatch {
            actions: &self.actions,
            old_log_probs: &self.old,
            advantages: &self.adv,
            returns: &self.ret,
        }
    }
}

/// Policy losses with respect to logits, values and policy parameters.
pub fn loss_cases() -> Vec<GradCase> {
    let logits = random(&[5, 4], 31);
    let values = random(&[5, 1], 32);
    let (l2, l3, v2) = (logits.clone(), logits.clone(), values.clone());
    let mut cases = vec![
        GradCase::new("ppo_loss.logits", move || {
            let f = LossFixture::new();
            gradcheck(
                |g, x| {
                    let v = konst(g, &values)?;
                    Ok(ppo_loss(g, x, v, &f.batch(), &PPOConfig::default())?.total)
                },
                &logits,
            )
        }),
        GradCase::new("ppo_loss.values", move || {
            let f = LossFixture::new();
            gradcheck(
                |g, v| {
                    let l = konst(g, &l2)?;
                    Ok(ppo_loss(g, l, v, &f.batch(), &PPOConfig::default())?.total)
                },
                &v2,
            )
        }),
        GradCase::new("pg_loss.logits", move || {
            let f = LossFixture::new();
            let values = random(&[5, 1], 32);
            gradcheck(
                |g, x| {
                    let v = konst(g, &values)?;
                    Ok(pg_loss(g, x, v, &f.batch(), &PPOConfig::default())?.total)
                },
                &l3,
            )
        }),
    ];
    let mut rng = CounterRng::from_key(41);
    let policy = std::rc::Rc::new(PolicyValueParams::init(3, 6, 4, &mut rng).expect("valid sizes"));
    let states = std::rc::Rc::new(random(&[5, 3], 42));
    for (slot, name) in policy.params.names().iter().enumerate() {
        let policy = policy.clone();
        let states = states.clone();
        cases.push(GradCase::new(format!("ppo_loss/{name}"), move || {
            let f = LossFixture::new();
            let x = policy.params.tensors()[slot].clone();
            gradcheck(
                |g, x| {
                    let mut bound = policy.params.bind_frozen(g);
                    bound[slot] = x;
                    let s = konst(g, &states)?;
                    let (l, v) = policy.forward(g, &bound, s)?;
                    Ok(ppo_loss(g, l, v, &f.batch(), &PPOConfig::default())?.total)
                },
                &x,
            )
        }));
    }
    cases
}

/// Every standard check.
pub fn standard_cases() -> Vec<GradCase> {
    let mut cases = primitive_cases();
    cases.extend(encoder_cases());
    cases.extend(loss_cases());
    cases
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Runs `cases`, writing one line per case to `out`.
pub fn run_suite(cases: &[GradCase], mut out: impl Write) -> Result<Vec<CaseReport>> {
    let mut reports = Vec::with_capacity(cases.len());
    for c in cases {
        let err = (c.run)()?;
        let passed = err < TOLERANCE;
        writeln!(
            out,
            "{:<28} max_rel_err={:.3e} {}",
            c.name,
            err,
            if passed { "ok" } else { "FAIL" }
        )
        .map_err(|e| Error::io("<stdout>", e))?;
        reports.push(CaseReport {
            name: c.name.clone(),
            max_rel_error: err,
            passed,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let cases = standard_cases();
        let mut names: Vec<_> = cases.iter().map(|c| c.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), cases.len());
    }
}
