//! Empirical verification of the recovery guarantee on a linear
//! generator: sampled set-restricted eigenvalue and Lipschitz estimates
//! checked against singular-value oracles, then a per-trial audit of
//! `||x_hat - x|| <= 6 rep + 3 ||noise|| + 2 d_approx + 2 d`.

use eqcs::diffmath::Tensor;
use eqcs::models::standard_normal;
use eqcs::recovery::{recover_equivariant, LinearGenerator, RecoveryConfig};
use eqcs::sensing::{gaussian_matrix, measure};
use eqcs::theory::{audit_bound, estimate_lipschitz, estimate_srec};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (n, k, m) = (64, 4, 32);
    let b = Tensor::randn(vec![n, k], &mut rng).scale(1.0 / (n as f64).sqrt());
    let gen = LinearGenerator { b: b.clone() };
    let a = gaussian_matrix(m, n, &mut rng);

    let est = estimate_srec(&gen, &a, 6.0, 500, 0.0, 1).unwrap();
    let ab = a.matmul(&b);
    let svd = DMatrix::from_row_slice(m, k, ab.data()).svd(false, false);
    let smin: f64 = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    println!("sampled gamma_hat = {:.4}  (sigma_min(AB) oracle = {smin:.4})", est.gamma_hat);

    let lip = estimate_lipschitz(&gen, 6.0, 500, 2);
    let smax: f64 = DMatrix::from_row_slice(n, k, b.data())
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    println!("sampled lipschitz = {lip:.4}  (sigma_max(B) oracle = {smax:.4})");

    let mut holds = 0;
    let trials = 20;
    for t in 0..trials {
        let mut trng = ChaCha8Rng::seed_from_u64(100 + t);
        let x = b.matvec(&standard_normal(k, &mut trng));
        let at = gaussian_matrix(m, n, &mut trng);
        let problem = measure(&at, &x, 0.01, &mut trng);
        let cfg = RecoveryConfig { max_iters: 600, step_z: 0.2, restarts: 2, seed: t, ..Default::default() };
        let result = recover_equivariant(&problem, &gen, &cfg);
        let audit = audit_bound(&problem, &gen, &result, 1e-6, &cfg);
        if audit.holds {
            holds += 1;
        }
        if t == 0 {
            println!(
                "sample audit: lhs {:.4e} <= rhs {:.4e} (rep {:.1e}, noise {:.3e}, d_approx {:.1e})",
                audit.lhs, audit.rhs, audit.representation_error, audit.noise_norm,
                audit.delta_approx
            );
        }
    }
    println!("bound held on {holds}/{trials} noisy trials");
}
