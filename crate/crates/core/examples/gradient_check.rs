//! Compares the tape's gradient of a small conv, ReLU, pool and dense
//! network against central differences in f64.
//!
//! cargo run --example gradient_check

use xraynet::autodiff::Graph;
use xraynet::tensor::{Rng, Tensor};

const H: f64 = 1e-5;

/// Loss and, when `grad` is set, the gradient of every leaf.
fn run(params: &[Tensor<f64>], grad: bool) -> (f64, Vec<Tensor<f64>>) {
    let mut g = Graph::new();
    let ids: Vec<_> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let h = g.conv2d(ids[0], ids[1], ids[2]).unwrap();
    let h = g.relu(h).unwrap();
    let h = g.maxpool2x2(h).unwrap();
    let h = g.global_avg_pool(h).unwrap();
    let logits = g.dense(h, ids[3], ids[4]).unwrap();
    let loss = g.softmax_cross_entropy(logits, 1).unwrap();
    let value = g.value(loss).data()[0];
    if !grad {
        return (value, Vec::new());
    }
    g.backward(loss).unwrap();
    (value, ids.iter().map(|&i| g.gradient(i).unwrap().clone()).collect())
}

fn main() {
    let mut rng = Rng::new(3);
    let params = vec![
        rng.fill_uniform::<f64>(&[1, 6, 6], 0.0, 1.0).unwrap(),
        rng.fill_normal::<f64>(&[4, 1, 3, 3], 0.0, 0.5).unwrap(),
        rng.fill_normal::<f64>(&[4], 0.0, 0.1).unwrap(),
        rng.fill_normal::<f64>(&[3, 4], 0.0, 0.5).unwrap(),
        rng.fill_normal::<f64>(&[3], 0.0, 0.1).unwrap(),
    ];
    let (loss, grads) = run(&params, true);
    println!("loss {loss:.6}");

    for (k, name) in ["input", "conv.weights", "conv.bias", "dense.weights", "dense.bias"].iter().enumerate() {
        let mut worst = 0.0f64;
        for j in 0..params[k].len() {
            let mut moved = params.clone();
            moved[k].data_mut()[j] += H;
            let lp = run(&moved, false).0;
            moved[k].data_mut()[j] -= 2.0 * H;
            let lm = run(&moved, false).0;
            let numeric = (lp - lm) / (2.0 * H);
            let analytic = grads[k].data()[j];
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
        }
        println!("{name:>14}: worst relative error {worst:.2e}");
    }
}
