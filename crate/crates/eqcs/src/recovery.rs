//! Latent-space recovery from compressed measurements under three prior
//! regimes: rotation-aware latent descent, standard prior with an
//! explicit rotation variable (alternating or joint updates), and an
//! angle-conditioned decoder. Includes restarts, convergence detection,
//! and a deterministic multi-model benchmark.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffmath::{Tape, Tensor, Var};
use crate::models::{standard_normal, Vae};
use crate::sensing::SensingProblem;

/// Anything that can decode a latent on the tape.
pub trait Generator: Sync {
    fn latent_dim(&self) -> usize;
    fn signal_len(&self) -> usize;
    fn decode_on<'t>(&self, tape: &'t Tape, z: Var<'t>) -> Var<'t>;
}

/// A decoder that additionally consumes an orientation angle.
pub trait ConditionalGenerator: Sync {
    fn latent_dim(&self) -> usize;
    fn signal_len(&self) -> usize;
    fn decode_on<'t>(&self, tape: &'t Tape, z: Var<'t>, angle: Var<'t>) -> Var<'t>;
}

/// `G(z) = B z` for a fixed matrix `B`.
pub struct LinearGenerator {
    pub b: Tensor,
}

impl Generator for LinearGenerator {
    fn latent_dim(&self) -> usize {
        self.b.cols()
    }

    fn signal_len(&self) -> usize {
        self.b.rows()
    }

    fn decode_on<'t>(&self, tape: &'t Tape, z: Var<'t>) -> Var<'t> {
        let k = self.b.cols();
        let n = self.b.rows();
        tape.leaf(self.b.clone()).matmul(z.reshape(vec![k, 1])).reshape(vec![n])
    }
}

/// A trained model's decoder as a generator (Bernoulli means).
pub struct VaeGenerator<'m> {
    pub vae: &'m Vae,
}

impl Generator for VaeGenerator<'_> {
    fn latent_dim(&self) -> usize {
        self.vae.latent_dim()
    }

    fn signal_len(&self) -> usize {
        self.vae.signal_len()
    }

    fn decode_on<'t>(&self, tape: &'t Tape, z: Var<'t>) -> Var<'t> {
        let params = self.vae.leaf_params(tape);
        self.vae.decode_on(tape, &params, z).expect("unconditional decoder").sigmoid()
    }
}

/// An angle-conditioned model's decoder.
pub struct CondVaeGenerator<'m> {
    pub vae: &'m Vae,
}

impl ConditionalGenerator for CondVaeGenerator<'_> {
    fn latent_dim(&self) -> usize {
        self.vae.latent_dim()
    }

    fn signal_len(&self) -> usize {
        self.vae.signal_len()
    }

    fn decode_on<'t>(&self, tape: &'t Tape, z: Var<'t>, angle: Var<'t>) -> Var<'t> {
        let params = self.vae.leaf_params(tape);
        self.vae.conditional_decode_on(tape, &params, z, angle).expect("conditional decoder").sigmoid()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryConfig {
    pub max_iters: usize,
    pub step_z: f64,
    pub step_angle: f64,
    pub restarts: usize,
    /// Angle multi-start grid size for the rotation-variable schemes.
    pub angle_grid: usize,
    /// Success threshold on per-pixel MSE (strict inequality).
    pub tau: f64,
    /// Latent projection radius; `None` means `3 sqrt(k)`.
    pub radius: Option<f64>,
    /// Use adaptive-moment steps instead of plain gradient descent.
    pub adam: bool,
    pub seed: u64,
    /// Fixed initial latent for the first restart (handy for warm starts).
    #[serde(skip)]
    pub init_z: Option<Tensor>,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        RecoveryConfig {
            max_iters: 200,
            step_z: 0.1,
            step_angle: 0.1,
            restarts: 3,
            angle_grid: 8,
            tau: 0.01,
            radius: None,
            adam: false,
            seed: 0,
            init_z: None,
        }
    }
}

impl RecoveryConfig {
    fn radius_for(&self, k: usize) -> f64 {
        self.radius.unwrap_or(3.0 * (k as f64).sqrt())
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub z_hat: Tensor,
    pub angle_hat: Option<f64>,
    pub x_hat: Tensor,
    /// Iterations run by the winning start.
    pub iterations: usize,
    /// Earliest iteration of the winning start whose iterate already met
    /// the success threshold (`max_iters` if never).
    pub iters_to_converge: usize,
    pub residual_trace: Vec<f64>,
    pub converged: bool,
    pub mse: f64,
    /// True when no ground truth was available and `mse` is the
    /// per-coordinate measurement residual instead.
    pub mse_is_residual: bool,
    /// Final residual of the winning start minus the best residual seen
    /// at any iterate of any start (nonnegative).
    pub delta_approx: f64,
}

/// Per-pixel MSE and the strict success test.
pub fn is_converged(x_hat: &Tensor, x_true: &Tensor, tau: f64) -> (bool, f64) {
    let mse = x_hat.mse(x_true);
    (mse < tau, mse)
}

fn project(z: &mut Tensor, r: f64) {
    let n = z.norm();
    if n > r {
        let s = r / n;
        for v in z.data_mut() {
            *v *= s;
        }
    }
}

/// One descent trajectory over `(z, angle)`; `angle = None` disables the
/// rotation variable entirely (rotation-aware scheme).
struct StartOutcome {
    z: Tensor,
    angle: Option<f64>,
    x: Tensor,
    trace: Vec<f64>,
    iterations: usize,
    first_hit: usize,
    best_seen: f64,
}

enum AngleRole {
    /// No angle variable.
    Absent,
    /// The decoded image is rotated by the angle before measuring.
    Rotate,
    /// The angle is fed to a conditional decoder.
    Conditioned,
}

struct Objective<'a> {
    problem: &'a SensingProblem,
    side: usize,
    decode: &'a (dyn for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t> + Sync),
    cond_decode: Option<&'a (dyn for<'t> Fn(&'t Tape, Var<'t>, Var<'t>) -> Var<'t> + Sync)>,
    role: AngleRole,
}

impl Objective<'_> {
    /// Returns `(residual_norm, grad_z, grad_angle, x_value)`.
    fn eval(&self, z: &Tensor, angle: f64) -> (f64, Tensor, f64, Tensor) {
        let tape = Tape::new();
        let zv = tape.leaf(z.clone());
        let av = tape.leaf(Tensor::scalar(angle));
        let x = match self.role {
            AngleRole::Absent => (self.decode)(&tape, zv),
            AngleRole::Rotate => {
                let img = (self.decode)(&tape, zv).reshape(vec![self.side, self.side]);
                tape.rotate_bilinear(img, av).reshape(vec![self.side * self.side])
            }
            AngleRole::Conditioned => (self.cond_decode.unwrap())(&tape, zv, av),
        };
        let a = tape.leaf(self.problem.a.clone());
        let y = tape.leaf(Tensor::new(
            vec![self.problem.y.len(), 1],
            self.problem.y.data().to_vec(),
        ));
        let n = x.value().len();
        let r = a.matmul(x.reshape(vec![n, 1])) - y;
        let loss = r.norm_sq();
        let grads = tape.backward(loss).expect("scalar loss");
        (
            loss.value().item().sqrt(),
            grads.get(zv),
            grads.get(av).data().first().copied().unwrap_or(0.0),
            x.value(),
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn run_start(
    obj: &Objective<'_>,
    cfg: &RecoveryConfig,
    z0: Tensor,
    angle0: f64,
    alternate: bool,
    truth: Option<&Tensor>,
) -> StartOutcome {
    let k = z0.len();
    let r = cfg.radius_for(k);
    let mut z = z0;
    project(&mut z, r);
    let mut angle = angle0;
    let mut trace = Vec::with_capacity(cfg.max_iters + 1);
    let mut best_seen = f64::INFINITY;
    let mut first_hit = cfg.max_iters;
    let mut iterations = 0;
    let mut m_z = Tensor::zeros(vec![k]);
    let mut v_z = Tensor::zeros(vec![k]);
    let (mut m_a, mut v_a) = (0.0, 0.0);
    let has_angle = !matches!(obj.role, AngleRole::Absent);

    for it in 0..=cfg.max_iters {
        let (res, gz, ga, x) = obj.eval(&z, angle);
        if !res.is_finite() {
            break;
        }
        trace.push(res);
        best_seen = best_seen.min(res);
        if first_hit == cfg.max_iters {
            if let Some(t) = truth {
                if is_converged(&x, t, cfg.tau).0 {
                    first_hit = it;
                }
            }
        }
        if it == cfg.max_iters || res < 1e-10 {
            iterations = it;
            break;
        }
        iterations = it + 1;

        let step = |p: &mut Tensor, g: &Tensor, m: &mut Tensor, v: &mut Tensor, lr: f64, t: usize| {
            for i in 0..p.len() {
                let gi = g.data()[i];
                let d = if cfg.adam {
                    let mi = 0.9 * m.data()[i] + 0.1 * gi;
                    let vi = 0.999 * v.data()[i] + 0.001 * gi * gi;
                    m.data_mut()[i] = mi;
                    v.data_mut()[i] = vi;
                    let bc1 = 1.0 - 0.9_f64.powi(t as i32);
                    let bc2 = 1.0 - 0.999_f64.powi(t as i32);
                    (mi / bc1) / ((vi / bc2).sqrt() + 1e-8)
                } else {
                    gi
                };
                p.data_mut()[i] -= lr * d;
            }
        };

        step(&mut z, &gz, &mut m_z, &mut v_z, cfg.step_z, it + 1);
        project(&mut z, r);

        if has_angle && cfg.step_angle != 0.0 {
            let ga_now = if alternate {
                // recompute at the fresh z (coordinate update)
                obj.eval(&z, angle).2
            } else {
                ga
            };
            let d = if cfg.adam {
                m_a = 0.9 * m_a + 0.1 * ga_now;
                v_a = 0.999 * v_a + 0.001 * ga_now * ga_now;
                let bc1 = 1.0 - 0.9_f64.powi((it + 1) as i32);
                let bc2 = 1.0 - 0.999_f64.powi((it + 1) as i32);
                (m_a / bc1) / ((v_a / bc2).sqrt() + 1e-8)
            } else {
                ga_now
            };
            angle = (angle - cfg.step_angle * d).rem_euclid(2.0 * std::f64::consts::PI);
        }
    }

    let (res, _, _, x) = obj.eval(&z, angle);
    if trace.last().map_or(true, |&l| l != res) {
        trace.push(res);
    }
    best_seen = best_seen.min(res);
    StartOutcome {
        z,
        angle: has_angle.then_some(angle),
        x,
        trace,
        iterations,
        first_hit,
        best_seen,
    }
}

fn finish(
    outcomes: Vec<StartOutcome>,
    problem: &SensingProblem,
    cfg: &RecoveryConfig,
    truth: Option<&Tensor>,
) -> RecoveryResult {
    let best_ever = outcomes.iter().map(|o| o.best_seen).fold(f64::INFINITY, f64::min);
    let best = outcomes
        .into_iter()
        .min_by(|a, b| {
            let ra = a.trace.last().copied().unwrap_or(f64::INFINITY);
            let rb = b.trace.last().copied().unwrap_or(f64::INFINITY);
            ra.partial_cmp(&rb).unwrap()
        })
        .expect("at least one start");
    let final_res = best.trace.last().copied().unwrap_or(f64::INFINITY);
    let (converged, mse, proxy) = match truth {
        Some(t) => {
            let (c, m) = is_converged(&best.x, t, cfg.tau);
            (c, m, false)
        }
        None => {
            let m = final_res * final_res / problem.y.len() as f64;
            (m < cfg.tau, m, true)
        }
    };
    RecoveryResult {
        z_hat: best.z,
        angle_hat: best.angle,
        x_hat: best.x,
        iterations: best.iterations,
        iters_to_converge: best.first_hit,
        residual_trace: best.trace,
        converged,
        mse,
        mse_is_residual: proxy,
        delta_approx: (final_res - best_ever).max(0.0),
    }
}

fn side_of(n: usize) -> usize {
    let s = (n as f64).sqrt().round() as usize;
    assert_eq!(s * s, n, "signals must be square images");
    s
}

/// Rotation-aware scheme: descend on `z` only; the prior's latent
/// structure is responsible for covering orientations.
pub fn recover_equivariant(
    problem: &SensingProblem,
    gen: &dyn Generator,
    cfg: &RecoveryConfig,
) -> RecoveryResult {
    let k = gen.latent_dim();
    let decode_fn: &(dyn for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t> + Sync) =
        &|tape, z| gen.decode_on(tape, z);
    let obj = Objective {
        problem,
        side: side_of(gen.signal_len()),
        decode: decode_fn,
        cond_decode: None,
        role: AngleRole::Absent,
    };
    let truth = Some(&problem.x_obs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut outcomes = Vec::with_capacity(cfg.restarts);
    for s in 0..cfg.restarts {
        let z0 = match (&cfg.init_z, s) {
            (Some(z), 0) => z.clone(),
            _ => standard_normal(k, &mut rng),
        };
        outcomes.push(run_start(&obj, cfg, z0, 0.0, false, truth));
    }
    finish(outcomes, problem, cfg, truth)
}

fn angle_starts(cfg: &RecoveryConfig) -> Vec<f64> {
    let g = cfg.angle_grid.max(1);
    (0..g).map(|i| 2.0 * std::f64::consts::PI * i as f64 / g as f64).collect()
}

fn rotation_scheme(
    problem: &SensingProblem,
    gen: &dyn Generator,
    cfg: &RecoveryConfig,
    alternate: bool,
) -> RecoveryResult {
    let k = gen.latent_dim();
    let decode_fn: &(dyn for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t> + Sync) =
        &|tape, z| gen.decode_on(tape, z);
    let obj = Objective {
        problem,
        side: side_of(gen.signal_len()),
        decode: decode_fn,
        cond_decode: None,
        role: AngleRole::Rotate,
    };
    let truth = Some(&problem.x_obs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut outcomes = Vec::new();
    for s in 0..cfg.restarts {
        for &a0 in &angle_starts(cfg) {
            let z0 = match (&cfg.init_z, s) {
                (Some(z), 0) => z.clone(),
                _ => standard_normal(k, &mut rng),
            };
            outcomes.push(run_start(&obj, cfg, z0, a0, alternate, truth));
        }
    }
    finish(outcomes, problem, cfg, truth)
}

/// Standard prior with an explicit rotation variable, alternating one
/// `z` step and one (recomputed) angle step per iteration.
pub fn recover_coordinate(
    problem: &SensingProblem,
    gen: &dyn Generator,
    cfg: &RecoveryConfig,
) -> RecoveryResult {
    rotation_scheme(problem, gen, cfg, true)
}

/// Same objective as [`recover_coordinate`] but simultaneous `(z, angle)`
/// updates from one gradient evaluation.
pub fn recover_joint(
    problem: &SensingProblem,
    gen: &dyn Generator,
    cfg: &RecoveryConfig,
) -> RecoveryResult {
    rotation_scheme(problem, gen, cfg, false)
}

/// Angle-conditioned prior: joint descent on `(z, angle)` through the
/// conditional decoder.
pub fn recover_conditional(
    problem: &SensingProblem,
    gen: &dyn ConditionalGenerator,
    cfg: &RecoveryConfig,
) -> RecoveryResult {
    let k = gen.latent_dim();
    let cond_fn: &(dyn for<'t> Fn(&'t Tape, Var<'t>, Var<'t>) -> Var<'t> + Sync) =
        &|tape, z, a| gen.decode_on(tape, z, a);
    let decode_fn: &(dyn for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t> + Sync) = &|_tape, z| z;
    let obj = Objective {
        problem,
        side: side_of(gen.signal_len()),
        decode: decode_fn,
        cond_decode: Some(cond_fn),
        role: AngleRole::Conditioned,
    };
    let truth = Some(&problem.x_obs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut outcomes = Vec::new();
    for s in 0..cfg.restarts {
        for &a0 in &angle_starts(cfg) {
            let z0 = match (&cfg.init_z, s) {
                (Some(z), 0) => z.clone(),
                _ => standard_normal(k, &mut rng),
            };
            outcomes.push(run_start(&obj, cfg, z0, a0, false, truth));
        }
    }
    finish(outcomes, problem, cfg, truth)
}

/// Which solver a benchmark entry uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    Equivariant,
    Coordinate,
    Joint,
    Conditional,
}

/// One aggregated benchmark row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub scenario: String,
    pub model: String,
    pub group: usize,
    pub m: usize,
    pub trials: usize,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub converged_pct: f64,
    pub mean_iters: f64,
}

pub struct BenchmarkJob<'a> {
    pub name: String,
    pub scheme: Scheme,
    pub model: &'a Vae,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub m_values: Vec<usize>,
    pub trials: usize,
    pub noise_std: f64,
    /// Rotate each trial's signal by a random orientation.
    pub rotate: bool,
    /// Use only exact quarter-turn orientations when rotating.
    pub quarter_only: bool,
    pub seed: u64,
    pub recovery: RecoveryConfig,
}

/// Run every (job, m, trial) combination; trials execute in parallel but
/// the output is deterministic for a fixed seed.
pub fn benchmark(jobs: &[BenchmarkJob<'_>], signals: &Tensor, cfg: &BenchmarkConfig) -> Vec<BenchmarkRow> {
    let scenario = if cfg.rotate { "unknown-rotation" } else { "no-rotation" };
    let count = signals.shape()[0];
    let side = signals.shape()[1];
    let mut rows = Vec::new();
    for job in jobs {
        for &m in &cfg.m_values {
            let results: Vec<RecoveryResult> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        cfg.seed ^ (m as u64) << 20 ^ (t as u64) << 1,
                    );
                    let x = crate::data::sample(signals, t % count);
                    let a = crate::sensing::gaussian_matrix(m, side * side, &mut rng);
                    let problem = if cfg.rotate {
                        use rand::Rng;
                        let n = job.model.group.order().max(4);
                        let (g, mode) = if cfg.quarter_only {
                            (
                                crate::groups::CyclicGroup::new(4).element(rng.gen_range(0..4)),
                                crate::groups::RotationMode::ExactQuarter,
                            )
                        } else {
                            (
                                crate::groups::CyclicGroup::new(n).element(rng.gen_range(0..n)),
                                crate::groups::RotationMode::Bilinear,
                            )
                        };
                        crate::sensing::measure_rotated(&a, &x, g, mode, cfg.noise_std, &mut rng)
                            .expect("square signal")
                    } else {
                        crate::sensing::measure(&a, &x, cfg.noise_std, &mut rng)
                    };
                    let mut rc = cfg.recovery.clone();
                    rc.seed = cfg.seed ^ 0x9e37 ^ (m as u64) << 24 ^ t as u64;
                    match job.scheme {
                        Scheme::Equivariant => {
                            recover_equivariant(&problem, &VaeGenerator { vae: job.model }, &rc)
                        }
                        Scheme::Coordinate => {
                            recover_coordinate(&problem, &VaeGenerator { vae: job.model }, &rc)
                        }
                        Scheme::Joint => {
                            recover_joint(&problem, &VaeGenerator { vae: job.model }, &rc)
                        }
                        Scheme::Conditional => recover_conditional(
                            &problem,
                            &CondVaeGenerator { vae: job.model },
                            &rc,
                        ),
                    }
                })
                .collect();
            let n = results.len() as f64;
            let mean_mse = results.iter().map(|r| r.mse).sum::<f64>() / n;
            let var = results.iter().map(|r| (r.mse - mean_mse).powi(2)).sum::<f64>() / n;
            let conv = results.iter().filter(|r| r.converged).count();
            let mean_iters = if conv > 0 {
                results
                    .iter()
                    .filter(|r| r.converged)
                    .map(|r| r.iters_to_converge as f64)
                    .sum::<f64>()
                    / conv as f64
            } else {
                cfg.recovery.max_iters as f64
            };
            rows.push(BenchmarkRow {
                scenario: scenario.to_string(),
                model: job.name.clone(),
                group: job.model.group.order(),
                m,
                trials: cfg.trials,
                mean_mse,
                std_mse: var.sqrt(),
                converged_pct: 100.0 * conv as f64 / n,
                mean_iters,
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{apply_latent, rotate_exact_quarter, CyclicGroup};
    use crate::sensing::{gaussian_matrix, measure};
    use nalgebra::DMatrix;
    use rand::SeedableRng;

    fn orthonormal_cols(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Tensor::randn(vec![rows, cols], &mut rng);
        let m = DMatrix::from_row_slice(rows, cols, raw.data());
        let qr = m.qr();
        let q = qr.q();
        let mut out = Tensor::zeros(vec![rows, cols]);
        for i in 0..rows {
            for j in 0..cols {
                out.data_mut()[i * cols + j] = q[(i, j)];
            }
        }
        out
    }

    fn pinv_solve(m: &Tensor, y: &Tensor) -> Tensor {
        let dm = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
        let dy = DMatrix::from_row_slice(y.len(), 1, y.data());
        let sol = dm.svd(true, true).solve(&dy, 1e-12).unwrap();
        Tensor::from_vec(sol.iter().copied().collect())
    }

    #[test]
    fn converged_at_start_when_initialized_at_truth() {
        let b = orthonormal_cols(16, 4, 0);
        let gen = LinearGenerator { b: b.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z0 = Tensor::from_vec(vec![0.5, -0.2, 0.8, 0.1]);
        let x = b.matvec(&z0);
        let a = gaussian_matrix(8, 16, &mut rng);
        let problem = measure(&a, &x, 0.0, &mut rng);
        let cfg = RecoveryConfig { init_z: Some(z0.clone()), restarts: 1, ..Default::default() };
        let r = recover_equivariant(&problem, &gen, &cfg);
        assert_eq!(r.iterations, 0);
        assert!(r.residual_trace[0] < 1e-10);
        assert!(r.converged && r.mse < 1e-20);
        assert_eq!(r.z_hat, z0);
    }

    #[test]
    fn linear_generator_matches_least_squares_oracle() {
        let b = orthonormal_cols(16, 4, 2);
        let gen = LinearGenerator { b: b.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z_true = standard_normal(4, &mut rng);
        let x = b.matvec(&z_true);
        let a = gaussian_matrix(8, 16, &mut rng);
        let problem = measure(&a, &x, 0.0, &mut rng);
        let cfg = RecoveryConfig {
            max_iters: 3000,
            step_z: 0.15,
            restarts: 2,
            seed: 4,
            ..Default::default()
        };
        let r = recover_equivariant(&problem, &gen, &cfg);
        let ab = a.matmul(&b);
        let z_star = pinv_solve(&ab, &problem.y);
        let x_star = b.matvec(&z_star);
        assert!(r.x_hat.sub(&x_star).norm() < 1e-6, "off oracle by {}", r.x_hat.sub(&x_star).norm());
        assert!(r.residual_trace.last().unwrap() < &1e-8);
        assert!(r.delta_approx >= 0.0);
    }

    #[test]
    fn frozen_angle_reduces_to_equivariant_trajectory() {
        let b = orthonormal_cols(16, 4, 5);
        let gen = LinearGenerator { b: b.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = b.matvec(&standard_normal(4, &mut rng));
        let a = gaussian_matrix(8, 16, &mut rng);
        let problem = measure(&a, &x, 0.0, &mut rng);
        let init = standard_normal(4, &mut rng);
        let base = RecoveryConfig {
            max_iters: 40,
            restarts: 1,
            init_z: Some(init),
            seed: 7,
            ..Default::default()
        };
        let plain = recover_equivariant(&problem, &gen, &base);
        let frozen = RecoveryConfig { step_angle: 0.0, angle_grid: 1, ..base.clone() };
        let coord = recover_coordinate(&problem, &gen, &frozen);
        assert_eq!(plain.residual_trace.len(), coord.residual_trace.len());
        for (p, c) in plain.residual_trace.iter().zip(&coord.residual_trace) {
            assert!((p - c).abs() < 1e-12, "trajectories diverged: {p} vs {c}");
        }
        assert!(plain.z_hat.sub(&coord.z_hat).max_abs() < 1e-12);
    }

    #[test]
    fn coordinate_scheme_finds_quarter_rotation() {
        // smooth generator columns so bilinear rotation behaves
        let side = 8;
        let mut b = Tensor::zeros(vec![64, 4]);
        for j in 0..4 {
            for r in 0..side {
                for c in 0..side {
                    let dr = r as f64 - 3.5 - 1.5 * ((j as f64).cos());
                    let dc = c as f64 - 3.5 + 1.5 * ((j as f64).sin());
                    b.data_mut()[(r * side + c) * 4 + j] = (-(dr * dr + dc * dc) / 6.0).exp();
                }
            }
        }
        let gen = LinearGenerator { b: b.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z_true = Tensor::from_vec(vec![1.0, -0.6, 0.4, 0.9]);
        let x = b.matvec(&z_true);
        let img = Tensor::new(vec![side, side], x.data().to_vec());
        let xr = rotate_exact_quarter(&img, 1).unwrap();
        let a = gaussian_matrix(32, 64, &mut rng);
        let problem = {
            let mut p = measure(&a, &Tensor::from_vec(xr.data().to_vec()), 0.0, &mut rng);
            p.x_true = x.clone();
            p
        };
        let cfg = RecoveryConfig {
            max_iters: 800,
            step_z: 0.3,
            step_angle: 0.02,
            restarts: 1,
            angle_grid: 8,
            adam: true,
            seed: 9,
            ..Default::default()
        };
        let r = recover_coordinate(&problem, &gen, &cfg);
        let angle = r.angle_hat.unwrap();
        let target = std::f64::consts::FRAC_PI_2;
        let dist = (angle - target).abs().min((angle - target - 2.0 * std::f64::consts::PI).abs());
        assert!(dist < 0.05, "recovered angle {angle}, wanted ~{target}");
        assert!(r.residual_trace.last().unwrap() < &1e-4, "residual {:?}", r.residual_trace.last());
        // grid-search oracle: the best of 360 fixed angles with exact
        // least squares should not beat us meaningfully
        let mut best = f64::INFINITY;
        for deg in 0..360 {
            let ang = 2.0 * std::f64::consts::PI * deg as f64 / 360.0;
            let rot = crate::groups::rotation_plan(side, side, ang);
            // columns of rotated B
            let mut rb = Tensor::zeros(vec![64, 4]);
            for j in 0..4 {
                let col = Tensor::from_vec((0..64).map(|i| b.data()[i * 4 + j]).collect());
                let rc = rot.apply(col.data());
                for i in 0..64 {
                    rb.data_mut()[i * 4 + j] = rc.data()[i];
                }
            }
            let arb = a.matmul(&rb);
            let zs = pinv_solve(&arb, &problem.y);
            let res = arb.matvec(&zs).sub(&problem.y).norm();
            best = best.min(res);
        }
        assert!(r.residual_trace.last().unwrap() - best < 1e-3);
    }

    #[test]
    fn convergence_threshold_is_strict() {
        let x = Tensor::from_vec(vec![1.0; 4]);
        let (c, m) = is_converged(&x, &x, 0.01);
        assert!(c && m == 0.0);
        // per-pixel MSE exactly at the threshold: not converged
        let a = Tensor::from_vec(vec![0.0; 100]);
        let mut b = Tensor::from_vec(vec![0.0; 100]);
        b.data_mut()[0] = 1.0; // unit norm
        let (c, m) = is_converged(&a, &b, 0.01);
        assert_eq!(m, 0.01);
        assert!(!c);
    }

    #[test]
    fn deterministic_and_projected() {
        let b = orthonormal_cols(16, 4, 10);
        let gen = LinearGenerator { b: b.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = b.matvec(&standard_normal(4, &mut rng));
        let a = gaussian_matrix(6, 16, &mut rng);
        let problem = measure(&a, &x, 0.05, &mut rng);
        let cfg = RecoveryConfig {
            max_iters: 60,
            restarts: 3,
            radius: Some(0.7),
            seed: 12,
            ..Default::default()
        };
        let r1 = recover_equivariant(&problem, &gen, &cfg);
        let r2 = recover_equivariant(&problem, &gen, &cfg);
        assert_eq!(r1.z_hat, r2.z_hat);
        assert_eq!(r1.residual_trace, r2.residual_trace);
        assert!(r1.z_hat.norm() <= 0.7 + 1e-12, "projection violated: {}", r1.z_hat.norm());
    }

    #[test]
    fn more_restarts_never_hurt() {
        let b = orthonormal_cols(16, 4, 13);
        let gen = LinearGenerator { b: b.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = b.matvec(&standard_normal(4, &mut rng));
        let a = gaussian_matrix(5, 16, &mut rng);
        let problem = measure(&a, &x, 0.1, &mut rng);
        let mut prev = f64::INFINITY;
        for restarts in 1..=4 {
            let cfg = RecoveryConfig { max_iters: 50, restarts, seed: 15, ..Default::default() };
            let r = recover_equivariant(&problem, &gen, &cfg);
            let res = *r.residual_trace.last().unwrap();
            assert!(res <= prev + 1e-12, "restart {restarts} got worse: {res} > {prev}");
            prev = res;
        }
    }

    #[test]
    fn equivariant_landscape_orbit_identity() {
        // min over a T^z-closed latent grid of ||G(z) - T_g x|| equals
        // the same minimum against x itself.
        let model = crate::models::build(&crate::models::VaeSpec::eq(4, 16, 16, 31)).unwrap();
        let group = CyclicGroup::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = Tensor::randn(vec![256], &mut rng).map(|v| 0.5 + 0.2 * v.tanh());
        let mut grid = Vec::new();
        for _ in 0..5 {
            let z = standard_normal(16, &mut rng);
            for g in group.elements() {
                grid.push(apply_latent(&z, &group, g).unwrap());
            }
        }
        let min_dist = |target: &Tensor| -> f64 {
            grid.iter()
                .map(|z| model.decode(z, None).unwrap().sub(target).norm())
                .fold(f64::INFINITY, f64::min)
        };
        let base = min_dist(&x);
        for q in 1..4 {
            let img = Tensor::new(vec![16, 16], x.data().to_vec());
            let xr = Tensor::from_vec(rotate_exact_quarter(&img, q).unwrap().data().to_vec());
            let rotated = min_dist(&xr);
            assert!((rotated - base).abs() < 1e-10, "orbit identity broken: {rotated} vs {base}");
        }
    }

    #[test]
    fn benchmark_single_trivial_row() {
        let mut model = crate::models::build(&crate::models::VaeSpec::eq(4, 16, 16, 33)).unwrap();
        let data = crate::data::synth_oriented(20, 16, &mut ChaCha8Rng::seed_from_u64(17));
        crate::models::train(
            &mut model,
            &data,
            &crate::models::TrainConfig { epochs: 2, batch_size: 10, ..Default::default() },
        )
        .unwrap();
        // measure a decoded image so the generator range contains it
        let z = standard_normal(16, &mut ChaCha8Rng::seed_from_u64(18));
        let x = model.decode(&z, None).unwrap();
        let mut signals = Tensor::zeros(vec![1, 16, 16]);
        signals.data_mut().copy_from_slice(x.data());
        let jobs = vec![BenchmarkJob { name: "eq".into(), scheme: Scheme::Equivariant, model: &model }];
        let cfg = BenchmarkConfig {
            m_values: vec![120],
            trials: 1,
            noise_std: 0.0,
            rotate: false,
            quarter_only: true,
            seed: 19,
            recovery: RecoveryConfig {
                max_iters: 300,
                step_z: 0.05,
                adam: true,
                restarts: 2,
                init_z: Some(z),
                ..Default::default()
            },
        };
        let rows = benchmark(&jobs, &signals, &cfg);
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert_eq!((row.scenario.as_str(), row.model.as_str(), row.group, row.m, row.trials),
                   ("no-rotation", "eq", 4, 120, 1));
        assert_eq!(row.converged_pct, 100.0, "mse {}", row.mean_mse);
    }

    #[test]
    fn benchmark_is_deterministic() {
        let model = crate::models::build(&crate::models::VaeSpec::eq(4, 16, 16, 35)).unwrap();
        let signals = crate::data::synth_oriented(3, 16, &mut ChaCha8Rng::seed_from_u64(20));
        let jobs = vec![BenchmarkJob { name: "eq".into(), scheme: Scheme::Equivariant, model: &model }];
        let cfg = BenchmarkConfig {
            m_values: vec![30],
            trials: 3,
            noise_std: 0.02,
            rotate: true,
            quarter_only: true,
            seed: 21,
            recovery: RecoveryConfig { max_iters: 30, restarts: 1, ..Default::default() },
        };
        let r1 = benchmark(&jobs, &signals, &cfg);
        let r2 = benchmark(&jobs, &signals, &cfg);
        assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
    }
}
