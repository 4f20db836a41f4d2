use iotformer::gradsuite::{primitive_cases_seeded, TOLERANCE};
use iotformer::rng::CounterRng;
use iotformer::tensor::{gradcheck, Graph, Tensor};
use proptest::prelude::*;

#[test]
fn every_primitive_passes_gradcheck_on_20_seeds() {
    for seed in 1..=20 {
        for case in primitive_cases_seeded(seed) {
            let err = (case.run)().unwrap();
            assert!(err < TOLERANCE, "seed {seed} {}: {err:e}", case.name);
        }
    }
}

fn random(shape: &[usize], rng: &mut CounterRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
}

/// Small composite graphs exercising shared subexpressions.
#[test]
fn composite_micro_graphs_pass_gradcheck_on_20_seeds() {
    for seed in 0..20 {
        let mut rng = CounterRng::stream(seed, "composite", 0);
        let x = random(&[3, 4], &mut rng);
        let w = random(&[4, 4], &mut rng);
        let w2 = w.clone();

        // Two-layer tanh MLP with a squared-error head.
        let mlp = gradcheck(
            |g, x| {
                let wn = g.constant(&[4, 4], w.data().to_vec())?;
                let h = g.matmul(x, wn)?;
                let h = g.tanh(h);
                let h2 = g.matmul(h, wn)?;
                let sq = g.mul(h2, h2)?;
                Ok(g.mean(sq))
            },
            &x,
        )
        .unwrap();

        // Self-attention with x reused as query, key and value.
        let attn = gradcheck(
            |g, x| {
                let xt = g.transpose(x);
                let s = g.matmul(x, xt)?;
                let a = g.softmax(s);
                let y = g.matmul(a, x)?;
                let y = g.tanh(y);
                Ok(g.sum(y))
            },
            &x,
        )
        .unwrap();

        // Layer norm feeding a log-softmax cross-entropy.
        let ce = gradcheck(
            |g, x| {
                let gain = g.constant(&[4], vec![1.0, 0.8, 1.2, 0.9])?;
                let bias = g.constant(&[4], vec![0.0, 0.1, -0.1, 0.2])?;
                let wn = g.constant(&[4, 4], w2.data().to_vec())?;
                let n = g.layer_norm(x, gain, bias)?;
                let z = g.matmul(n, wn)?;
                let lp = g.log_softmax(z);
                let picked = g.pick(lp, &[1, 3, 0])?;
                let m = g.mean(picked);
                Ok(g.neg(m))
            },
            &x,
        )
        .unwrap();

        for (name, err) in [("mlp", mlp), ("attention", attn), ("cross-entropy", ce)] {
            assert!(err < TOLERANCE, "seed {seed} {name}: {err:e}");
        }
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        data in prop::collection::vec(-30.0..30.0f64, 12),
        shift in -100.0..100.0f64,
    ) {
        let mut g = Graph::new();
        let x = g.constant(&[3, 4], data.clone()).unwrap();
        let shifted = g.constant(&[3, 4], data.iter().map(|v| v + shift).collect()).unwrap();
        let (a, b) = (g.softmax(x), g.softmax(shifted));
        for row in g.value(a).chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        for (p, q) in g.value(a).iter().zip(g.value(b)) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_is_deterministic_and_leaves_inputs_alone(
        data in prop::collection::vec(-2.0..2.0f64, 12),
    ) {
        let build = |g: &mut Graph| {
            let x = g.variable(&[3, 4], data.clone()).unwrap();
            let t = g.transpose(x);
            let s = g.matmul(x, t).unwrap();
            let p = g.softmax(s);
            let y = g.matmul(p, x).unwrap();
            let y = g.tanh(y);
            (x, g.sum(y))
        };
        let (mut g1, mut g2) = (Graph::new(), Graph::new());
        let (x1, y1) = build(&mut g1);
        let (x2, y2) = build(&mut g2);
        let d1 = g1.backward(y1).unwrap().get(x1).unwrap().to_vec();
        let d2 = g2.backward(y2).unwrap().get(x2).unwrap().to_vec();
        prop_assert_eq!(
            d1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            d2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        prop_assert_eq!(g1.value(x1), &data[..]);
    }
}
