//! Tour of the reverse-mode autodiff graph: build a tiny expression,
//! evaluate it, take gradients, and cross-check them against central
//! finite differences.
//!
//! Run with: cargo run --release --example autodiff

use iopvae::graph::{finite_diff_check, Graph};
use iopvae::Tensor;
use std::collections::HashMap;

fn main() {
    // f(W, b) = mean(sigmoid(x W + b)^2)
    let mut g = Graph::new();
    let x = g.input("x", &[2, 3]);
    let w = g.param("w", &[3, 2]);
    let b = g.param("b", &[2]);
    let xw = g.matmul(x, w).unwrap();
    let lin = g.add_bias(xw, b).unwrap();
    let act = g.sigmoid(lin);
    let sq = g.square(act);
    let f = g.mean(sq);

    let mut bind = HashMap::new();
    bind.insert(
        "x".to_string(),
        Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.0, -0.5]).unwrap(),
    );
    bind.insert("w".to_string(), Tensor::new(vec![3, 2], vec![0.1; 6]).unwrap());
    bind.insert("b".to_string(), Tensor::new(vec![2], vec![-0.2, 0.3]).unwrap());

    let eval = g.forward(&bind).unwrap();
    println!("f = {:.6}", eval.value(f).item());

    let grads = eval.backward(&g, f).unwrap();
    println!("df/dw = {:?}", grads["w"].data());
    println!("df/db = {:?}", grads["b"].data());

    let err = finite_diff_check(&g, &bind, f, &["w", "b"], 1e-6).unwrap();
    println!("max relative error vs finite differences: {err:.2e}");
}
