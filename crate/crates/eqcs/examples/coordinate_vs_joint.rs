//! When the prior is trained only in the canonical pose, the unknown
//! rotation must be an explicit variable. This example compares
//! alternating (coordinate) updates of latent and angle against joint
//! updates from a single gradient evaluation.

use eqcs::data::{sample, synth_oriented};
use eqcs::models::{build, train, TrainConfig, VaeSpec};
use eqcs::recovery::{recover_coordinate, recover_joint, RecoveryConfig, VaeGenerator};
use eqcs::sensing::{gaussian_matrix, measure_rotated};
use eqcs::groups::{CyclicGroup, RotationMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let data = synth_oriented(40, 16, &mut rng);

    let mut model = build(&VaeSpec::conv(16, 16, 9)).unwrap();
    let tc = TrainConfig { epochs: 20, batch_size: 20, seed: 9, ..Default::default() };
    train(&mut model, &data, &tc).unwrap();

    let x = sample(&data, 1);
    let a = gaussian_matrix(160, 256, &mut rng);
    let g = CyclicGroup::new(4).element(3);
    let problem = measure_rotated(&a, &x, g, RotationMode::ExactQuarter, 0.0, &mut rng).unwrap();

    let cfg = RecoveryConfig {
        max_iters: 150,
        restarts: 2,
        angle_grid: 4,
        seed: 10,
        ..Default::default()
    };
    let gen = VaeGenerator { vae: &model };
    let rc = recover_coordinate(&problem, &gen, &cfg);
    let rj = recover_joint(&problem, &gen, &cfg);
    println!("true angle {:.3} rad", problem.angle);
    println!(
        "coordinate: converged {} mse {:.3e} angle {:.3}",
        rc.converged,
        rc.mse,
        rc.angle_hat.unwrap()
    );
    println!(
        "joint:      converged {} mse {:.3e} angle {:.3}",
        rj.converged,
        rj.mse,
        rj.angle_hat.unwrap()
    );
}
