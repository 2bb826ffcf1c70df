//! Compressed-sensing measurement simulation: Gaussian measurement
//! matrices, noisy (optionally rotated) observations, and the norm
//! concentration check used by the theory audits.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diffmath::Tensor;
use crate::groups::{rotate_image, GroupElement, GroupError, RotationMode};

/// An `m x n` matrix with i.i.d. `N(0, 1/m)` entries, so that
/// `E ||A x||^2 = ||x||^2`.
pub fn gaussian_matrix(m: usize, n: usize, rng: &mut impl Rng) -> Tensor {
    let dist = Normal::new(0.0, (1.0 / m as f64).sqrt()).unwrap();
    Tensor::new(vec![m, n], (0..m * n).map(|_| dist.sample(rng)).collect())
}

/// One recovery instance: the matrix, the observation, and the ground
/// truth it was produced from (kept for evaluation only).
#[derive(Debug, Clone)]
pub struct SensingProblem {
    pub a: Tensor,
    pub y: Tensor,
    pub x_true: Tensor,
    /// The signal actually measured: `x_true` after rotation.
    pub x_obs: Tensor,
    /// Orientation applied to `x_true` before measuring, in radians.
    pub angle: f64,
    pub noise_norm: f64,
}

/// Measure `y = A x + eps` with `eps ~ N(0, noise_std^2 I)`.
pub fn measure(a: &Tensor, x: &Tensor, noise_std: f64, rng: &mut impl Rng) -> SensingProblem {
    let m = a.rows();
    assert_eq!(a.cols(), x.len(), "matrix/signal size mismatch");
    let noise: Vec<f64> = if noise_std > 0.0 {
        let dist = Normal::new(0.0, noise_std).unwrap();
        (0..m).map(|_| dist.sample(rng)).collect()
    } else {
        vec![0.0; m]
    };
    let mut y = a.matvec(&Tensor::from_vec(x.data().to_vec()));
    for (yi, ni) in y.data_mut().iter_mut().zip(&noise) {
        *yi += ni;
    }
    SensingProblem {
        a: a.clone(),
        y,
        x_true: x.clone(),
        x_obs: x.clone(),
        angle: 0.0,
        noise_norm: Tensor::from_vec(noise).norm(),
    }
}

/// Measure a rotated copy of a square image: `y = A T_g x + eps`. The
/// stored ground truth remains the unrotated `x`.
pub fn measure_rotated(
    a: &Tensor,
    x: &Tensor,
    g: GroupElement,
    mode: RotationMode,
    noise_std: f64,
    rng: &mut impl Rng,
) -> Result<SensingProblem, GroupError> {
    let side = (x.len() as f64).sqrt() as usize;
    let img = Tensor::new(vec![side, side], x.data().to_vec());
    let rotated = rotate_image(&img, g, mode)?;
    let flat = Tensor::from_vec(rotated.data().to_vec());
    let mut problem = measure(a, &flat, noise_std, rng);
    problem.x_true = x.clone();
    problem.x_obs = flat;
    problem.angle = g.angle();
    Ok(problem)
}

/// One trial of the norm concentration event: draw a fresh `A` and
/// report whether `||A x|| > 2 ||x||` (an exponentially rare failure).
pub fn norm_condition_trial(m: usize, x: &Tensor, rng: &mut impl Rng) -> bool {
    let a = gaussian_matrix(m, x.len(), rng);
    a.matvec(x).norm() > 2.0 * x.norm()
}
