//! Tape-based reverse-mode differentiation in a few lines: record a
//! scalar expression, pull gradients back to the leaves, and compare
//! one entry against a central finite difference.

use eqcs::diffmath::{grad_check, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    // f(w, x) = || sigmoid(W x) ||^2
    let w = tape.leaf(Tensor::randn(vec![3, 4], &mut rng));
    let x = tape.leaf(Tensor::randn(vec![4, 1], &mut rng));
    let y = w.matmul(x).sigmoid();
    let loss = y.norm_sq();
    println!("loss = {:.6}", loss.value().item());

    let grads = tape.backward(loss).unwrap();
    println!("dloss/dW =\n{:?}", grads.get(w).data());
    println!("dloss/dx =\n{:?}", grads.get(x).data());

    // the same machinery drives a generic finite-difference audit
    let probe = Tensor::randn(vec![5], &mut rng);
    let err = grad_check(|_, v| v.softplus().square().sum(), &probe, 1e-5);
    println!("softplus-square gradient check, max relative error {err:.2e}");

    // differentiable image rotation, including the angle
    let tape = Tape::new();
    let img = tape.leaf(Tensor::randn(vec![8, 8], &mut rng));
    let angle = tape.scalar(0.7);
    let rotated = tape.rotate_bilinear(img, angle);
    let g = tape.backward(rotated.norm_sq()).unwrap();
    println!("d||rot(img, a)||^2 / da = {:.6}", g.get(angle).item());
}
