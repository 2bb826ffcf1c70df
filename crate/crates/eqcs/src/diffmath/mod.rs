//! Minimal dense-tensor arithmetic with reverse-mode gradients.
//!
//! Everything the VAE training loop and the latent-space descent solvers
//! need: matmul, pointwise ops, sparse linear maps, a differentiable
//! Cholesky factor and a differentiable image rotation, recorded on a
//! per-forward-pass tape.

mod tape;
mod tensor;

pub use tape::{cholesky_factor, DiffError, Gradients, LinPlan, Tape, Var};
pub use tensor::{rel_err, Tensor};

/// Maximum relative error between analytic and central-difference gradients
/// of a scalar-valued function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> f64
where
    F: for<'a> Fn(&'a Tape, Var<'a>) -> Var<'a>,
{
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let root = f(&tape, xv);
    let grads = tape.backward(root).expect("grad_check backward failed");
    let analytic = grads.get(xv);

    let eval = |pt: &Tensor| -> f64 {
        let t = Tape::new();
        let v = t.leaf(pt.clone());
        let out = f(&t, v).value();
        let val = out.item();
        assert!(val.is_finite(), "grad_check: function returned non-finite value");
        val
    };

    let mut max_err = 0.0_f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let cd = (eval(&plus) - eval(&minus)) / (2.0 * step);
        let an = analytic.data()[i];
        let err = (an - cd).abs() / an.abs().max(cd.abs()).max(1e-12);
        max_err = max_err.max(err);
    }
    max_err
}
