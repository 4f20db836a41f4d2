//! Build a small graph by hand, read gradients back, then let the
//! finite-difference checker confirm them.
//!
//!     cargo run --example autodiff_tour

use iotformer::tensor::{gradcheck, Graph, Tensor};

fn main() -> iotformer::Result<()> {
    // y = sum(tanh(x W + b))
    let mut g = Graph::new();
    let x = g.constant(&[2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.2, -0.3])?;
    let w = g.variable(&[3, 2], vec![0.3, -0.2, 0.1, 0.4, -0.5, 0.2])?;
    let b = g.variable(&[2], vec![0.05, -0.05])?;
    let xw = g.matmul(x, w)?;
    let z = g.add_row(xw, b)?;
    let h = g.tanh(z);
    let y = g.sum(h);

    let grads = g.backward(y)?;
    println!("y          = {:.6}", g.value(y)[0]);
    println!("dy/dW      = {:?}", grads.get(w).unwrap());
    println!("dy/db      = {:?}", grads.get(b).unwrap());
    println!("tape nodes = {}", g.len());

    // Same function of W alone, checked against central differences.
    let w0 = Tensor::new(&[3, 2], vec![0.3, -0.2, 0.1, 0.4, -0.5, 0.2])?;
    let err = gradcheck(
        |g, w| {
            let x = g.constant(&[2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.2, -0.3])?;
            let b = g.constant(&[2], vec![0.05, -0.05])?;
            let xw = g.matmul(x, w)?;
            let z = g.add_row(xw, b)?;
            let h = g.tanh(z);
            Ok(g.sum(h))
        },
        &w0,
    )?;
    println!("gradcheck max relative error = {err:.2e}");

    // The full suite behind `iotformer gradcheck`.
    let reports = iotformer::gradsuite::run_suite(
        &iotformer::gradsuite::primitive_cases(),
        std::io::stdout(),
    )?;
    println!(
        "{} primitive checks passed",
        reports.iter().filter(|r| r.passed).count()
    );
    Ok(())
}
