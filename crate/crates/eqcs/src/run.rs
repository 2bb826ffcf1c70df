//! Experiment orchestration: TOML run configuration, binary model
//! checkpoints, and the train / recover / benchmark / verify / report
//! commands exposed by the `eqcs` binary.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::synth_oriented;
use crate::diffmath::Tensor;
use crate::groups::{CyclicGroup, RotationMode};
use crate::models::{self, build, train, ModelError, ModelKind, TrainConfig, Vae, VaeSpec};
use crate::recovery::{
    benchmark, recover_conditional, recover_coordinate, recover_equivariant, recover_joint,
    BenchmarkConfig, BenchmarkJob, BenchmarkRow, CondVaeGenerator, RecoveryConfig, RecoveryResult,
    Scheme, VaeGenerator,
};
use crate::sensing::{gaussian_matrix, measure, measure_rotated, norm_condition_trial};
use crate::theory::{estimate_lipschitz, estimate_srec, representation_error, BoundAudit};

/// Environment variable supplying the default output directory.
pub const OUT_DIR_ENV: &str = "EQCS_OUT_DIR";

const CKPT_MAGIC: &[u8; 4] = b"EQCS";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl RunError {
    /// Process exit code: 2 config, 3 numerical, 4 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) | RunError::Checkpoint(_) => 2,
            RunError::Model(_) => 3,
            RunError::Verification(_) => 4,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub count: usize,
    pub side: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { count: 60, side: 16 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// One of `eq`, `eq-diag-cov`, `mlp`, `conv`, `aug`, `cond`.
    pub kind: String,
    pub group_order: usize,
    pub latent_dim: usize,
    pub hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { kind: "eq".into(), group_order: 4, latent_dim: 16, hidden: 64 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub augment: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            augment: d.augment,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverSection {
    /// One of `plain`, `coordinate`, `joint`, `conditional`.
    pub scheme: String,
    pub m: usize,
    pub noise_std: f64,
    /// Rotate the measured signal by a random group element.
    pub rotate: bool,
    pub max_iters: usize,
    pub step_z: f64,
    pub step_angle: f64,
    pub restarts: usize,
    pub angle_grid: usize,
    pub tau: f64,
    pub adam: bool,
}

impl Default for RecoverSection {
    fn default() -> Self {
        let d = RecoveryConfig::default();
        RecoverSection {
            scheme: "plain".into(),
            m: 64,
            noise_std: 0.0,
            rotate: false,
            max_iters: d.max_iters,
            step_z: d.step_z,
            step_angle: d.step_angle,
            restarts: d.restarts,
            angle_grid: d.angle_grid,
            tau: d.tau,
            adam: d.adam,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    /// Checkpoint stems (without `.ckpt`) to benchmark.
    pub models: Vec<String>,
    pub m_values: Vec<usize>,
    pub trials: usize,
    pub noise_std: f64,
    /// Restrict random orientations to exact quarter turns.
    pub quarter_only: bool,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        BenchmarkSection {
            models: vec!["eq".into()],
            m_values: vec![64, 128],
            trials: 4,
            noise_std: 0.0,
            quarter_only: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub norm_trials: usize,
    pub srec_pairs: usize,
    pub audit_trials: usize,
    pub delta: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection { norm_trials: 20_000, srec_pairs: 500, audit_trials: 30, delta: 1e-6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<String>,
    pub workers: usize,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub recover: RecoverSection,
    pub benchmark: BenchmarkSection,
    pub verify: VerifySection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))
    }

    /// Output directory resolution: flag > config > environment > `eqcs-out`.
    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = &self.out {
            return PathBuf::from(p);
        }
        if let Ok(p) = std::env::var(OUT_DIR_ENV) {
            if !p.is_empty() {
                return PathBuf::from(p);
            }
        }
        PathBuf::from("eqcs-out")
    }

    pub fn model_spec(&self) -> Result<VaeSpec, RunError> {
        spec_for(
            &self.model.kind,
            self.model.group_order,
            self.data.side,
            self.model.latent_dim,
            self.model.hidden,
            self.seed,
        )
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            augment: self.train.augment,
            seed: self.seed,
            ..Default::default()
        }
    }

    pub fn recovery_config(&self) -> RecoveryConfig {
        RecoveryConfig {
            max_iters: self.recover.max_iters,
            step_z: self.recover.step_z,
            step_angle: self.recover.step_angle,
            restarts: self.recover.restarts,
            angle_grid: self.recover.angle_grid,
            tau: self.recover.tau,
            adam: self.recover.adam,
            seed: self.seed ^ 0x7265636f,
            ..Default::default()
        }
    }
}

pub fn spec_for(
    kind: &str,
    group_order: usize,
    side: usize,
    latent_dim: usize,
    hidden: usize,
    seed: u64,
) -> Result<VaeSpec, RunError> {
    match kind {
        "eq" => Ok(VaeSpec::eq(group_order, side, latent_dim, seed)),
        "eq-diag-cov" => Ok(VaeSpec::eq_diag_cov(group_order, side, latent_dim, seed)),
        "mlp" => Ok(VaeSpec::mlp(side, latent_dim, hidden, seed)),
        "conv" => Ok(VaeSpec::conv(side, latent_dim, seed)),
        "aug" => Ok(VaeSpec::aug(side, latent_dim, seed)),
        "cond" => Ok(VaeSpec::cond(side, latent_dim, hidden, seed)),
        other => Err(cfg_err(format!(
            "unknown model kind {other:?} (expected eq, eq-diag-cov, mlp, conv, aug, cond)"
        ))),
    }
}

pub fn parse_scheme(name: &str) -> Result<Scheme, RunError> {
    match name {
        "plain" => Ok(Scheme::Equivariant),
        "coordinate" => Ok(Scheme::Coordinate),
        "joint" => Ok(Scheme::Joint),
        "conditional" => Ok(Scheme::Conditional),
        other => Err(cfg_err(format!(
            "unknown scheme {other:?} (expected plain, coordinate, joint, conditional)"
        ))),
    }
}

/// Scheme/model compatibility: the conditional scheme needs an
/// angle-conditioned decoder, every other scheme needs an unconditional
/// one; the plain scheme additionally needs a rotation-aware prior.
pub fn check_compatible(scheme: Scheme, kind: ModelKind) -> Result<(), RunError> {
    match (scheme, kind) {
        (Scheme::Conditional, ModelKind::Cond) => Ok(()),
        (Scheme::Conditional, k) => Err(cfg_err(format!(
            "scheme \"conditional\" needs an angle-conditioned model, got {k:?}"
        ))),
        (_, ModelKind::Cond) => Err(cfg_err(
            "angle-conditioned model requires scheme \"conditional\"".to_string(),
        )),
        (Scheme::Equivariant, ModelKind::Eq | ModelKind::EqDiagCov) => Ok(()),
        (Scheme::Equivariant, k) => Err(cfg_err(format!(
            "scheme \"plain\" needs a rotation-aware prior, got {k:?}; use \"coordinate\" or \"joint\""
        ))),
        _ => Ok(()),
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub epochs: usize,
    pub final_loss: f64,
    pub seed: u64,
}

pub fn save_checkpoint(model: &Vae, meta: &CheckpointMeta, path: &Path) -> Result<(), RunError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.write_u32::<LittleEndian>(CKPT_VERSION)?;
    let spec_json = serde_json::to_vec(&model.spec)
        .map_err(|e| RunError::Checkpoint(format!("spec serialization: {e}")))?;
    buf.write_u32::<LittleEndian>(spec_json.len() as u32)?;
    buf.extend_from_slice(&spec_json);
    buf.write_u64::<LittleEndian>(meta.epochs as u64)?;
    buf.write_f64::<LittleEndian>(meta.final_loss)?;
    buf.write_u64::<LittleEndian>(meta.seed)?;
    buf.write_u32::<LittleEndian>(model.params.len() as u32)?;
    for (i, p) in model.params.iter().enumerate() {
        let name = format!("param{i}");
        buf.write_u32::<LittleEndian>(name.len() as u32)?;
        buf.extend_from_slice(name.as_bytes());
        buf.write_u32::<LittleEndian>(p.shape().len() as u32)?;
        for &d in p.shape() {
            buf.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in p.data() {
            buf.write_f64::<LittleEndian>(v)?;
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Vae, CheckpointMeta), RunError> {
    let bytes = fs::read(path)?;
    let mut r = std::io::Cursor::new(&bytes[..]);
    let trunc = |_| RunError::Checkpoint(format!("{}: truncated", path.display()));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != CKPT_MAGIC {
        return Err(RunError::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let version = r.read_u32::<LittleEndian>().map_err(trunc)?;
    if version != CKPT_VERSION {
        return Err(RunError::Checkpoint(format!(
            "{}: unsupported version {version} (expected {CKPT_VERSION})",
            path.display()
        )));
    }
    let spec_len = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let mut spec_json = vec![0u8; spec_len];
    r.read_exact(&mut spec_json).map_err(trunc)?;
    let spec: VaeSpec = serde_json::from_slice(&spec_json)
        .map_err(|e| RunError::Checkpoint(format!("{}: bad spec: {e}", path.display())))?;
    let meta = CheckpointMeta {
        epochs: r.read_u64::<LittleEndian>().map_err(trunc)? as usize,
        final_loss: r.read_f64::<LittleEndian>().map_err(trunc)?,
        seed: r.read_u64::<LittleEndian>().map_err(trunc)?,
    };
    let mut model = build(&spec)?;
    let count = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    if count != model.params.len() {
        return Err(RunError::Checkpoint(format!(
            "{}: expected {} parameter arrays, found {count}",
            path.display(),
            model.params.len()
        )));
    }
    for i in 0..count {
        let name_len = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(trunc)?;
        let ndims = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            shape.push(r.read_u32::<LittleEndian>().map_err(trunc)? as usize);
        }
        if shape != model.params[i].shape() {
            return Err(RunError::Checkpoint(format!(
                "{}: parameter {i} shape {shape:?} does not match model {:?}",
                path.display(),
                model.params[i].shape()
            )));
        }
        let len: usize = shape.iter().product();
        let mut data = vec![0.0f64; len];
        for v in &mut data {
            *v = r.read_f64::<LittleEndian>().map_err(trunc)?;
        }
        model.params[i] = Tensor::new(shape, data);
    }
    Ok((model, meta))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn dataset(cfg: &RunConfig) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x64617461);
    synth_oriented(cfg.data.count, cfg.data.side, &mut rng)
}

/// Train the configured model; writes `<kind>.ckpt` and `<kind>_loss.json`
/// into the output directory and returns the checkpoint path.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<PathBuf, RunError> {
    fs::create_dir_all(out)?;
    let spec = cfg.model_spec()?;
    let mut model = build(&spec)?;
    let data = dataset(cfg);
    let trace = train(&mut model, &data, &cfg.train_config())?;
    let meta = CheckpointMeta {
        epochs: cfg.train.epochs,
        final_loss: trace.last().copied().unwrap_or(f64::NAN),
        seed: cfg.seed,
    };
    let ckpt = out.join(format!("{}.ckpt", cfg.model.kind));
    save_checkpoint(&model, &meta, &ckpt)?;
    let trace_path = out.join(format!("{}_loss.json", cfg.model.kind));
    fs::write(&trace_path, serde_json::to_vec_pretty(&trace).unwrap())?;
    Ok(ckpt)
}

/// A recovery run record with enough provenance to replay it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub scheme: String,
    pub model_kind: String,
    pub group_order: usize,
    pub m: usize,
    pub noise_std: f64,
    pub problem_seed: u64,
    pub recovery_seed: u64,
    pub checkpoint_hash: String,
    pub true_angle: f64,
    pub angle_hat: Option<f64>,
    pub iterations: usize,
    pub iters_to_converge: usize,
    pub converged: bool,
    pub mse: f64,
    pub delta_approx: f64,
    pub final_residual: f64,
    pub x_hat: Vec<f64>,
}

fn run_scheme(
    scheme: Scheme,
    model: &Vae,
    problem: &crate::sensing::SensingProblem,
    rc: &RecoveryConfig,
) -> RecoveryResult {
    match scheme {
        Scheme::Equivariant => recover_equivariant(problem, &VaeGenerator { vae: model }, rc),
        Scheme::Coordinate => recover_coordinate(problem, &VaeGenerator { vae: model }, rc),
        Scheme::Joint => recover_joint(problem, &VaeGenerator { vae: model }, rc),
        Scheme::Conditional => recover_conditional(problem, &CondVaeGenerator { vae: model }, rc),
    }
}

/// Run one recovery problem against a trained checkpoint and write a
/// structured record. The problem signal is a synthetic oriented shape.
pub fn cmd_recover(cfg: &RunConfig, ckpt: &Path, out: &Path) -> Result<PathBuf, RunError> {
    fs::create_dir_all(out)?;
    let scheme = parse_scheme(&cfg.recover.scheme)?;
    let (model, _meta) = load_checkpoint(ckpt)?;
    check_compatible(scheme, model.spec.kind)?;
    let ckpt_hash = format!("{:016x}", fnv1a(&fs::read(ckpt)?));

    let data = dataset(cfg);
    if data.shape()[0] == 0 {
        return Err(cfg_err("data.count must be positive for recover"));
    }
    let x = crate::data::sample(&data, 0);
    let problem_seed = cfg.seed ^ 0x70726f62;
    let mut rng = ChaCha8Rng::seed_from_u64(problem_seed);
    let a = gaussian_matrix(cfg.recover.m, x.len(), &mut rng);
    let problem = if cfg.recover.rotate {
        let group = CyclicGroup::new(model.group.order().max(4));
        let g = group.element(rand::Rng::gen_range(&mut rng, 0..group.order()));
        let mode = if group.order() == 4 { RotationMode::ExactQuarter } else { RotationMode::Bilinear };
        measure_rotated(&a, &x, g, mode, cfg.recover.noise_std, &mut rng)
            .map_err(|e| cfg_err(format!("rotation failed: {e}")))?
    } else {
        measure(&a, &x, cfg.recover.noise_std, &mut rng)
    };
    let rc = cfg.recovery_config();
    let result = run_scheme(scheme, &model, &problem, &rc);
    let record = RunRecord {
        scheme: cfg.recover.scheme.clone(),
        model_kind: cfg.model.kind.clone(),
        group_order: model.group.order(),
        m: cfg.recover.m,
        noise_std: cfg.recover.noise_std,
        problem_seed,
        recovery_seed: rc.seed,
        checkpoint_hash: ckpt_hash,
        true_angle: problem.angle,
        angle_hat: result.angle_hat,
        iterations: result.iterations,
        iters_to_converge: result.iters_to_converge,
        converged: result.converged,
        mse: result.mse,
        delta_approx: result.delta_approx,
        final_residual: *result.residual_trace.last().unwrap(),
        x_hat: result.x_hat.data().to_vec(),
    };
    let path = out.join("recover.json");
    fs::write(&path, serde_json::to_vec_pretty(&record).unwrap())?;
    Ok(path)
}

fn scheme_for_kind(kind: ModelKind) -> Scheme {
    match kind {
        ModelKind::Eq | ModelKind::EqDiagCov => Scheme::Equivariant,
        ModelKind::Cond => Scheme::Conditional,
        _ => Scheme::Coordinate,
    }
}

/// Benchmark every checkpoint in the roster under both scenarios
/// (canonical pose and unknown rotation); writes a tab-separated table
/// and a JSON results file.
pub fn cmd_benchmark(cfg: &RunConfig, out: &Path) -> Result<Vec<BenchmarkRow>, RunError> {
    fs::create_dir_all(out)?;
    let mut loaded = Vec::new();
    for stem in &cfg.benchmark.models {
        let path = out.join(format!("{stem}.ckpt"));
        if !path.exists() {
            return Err(cfg_err(format!("missing checkpoint {}", path.display())));
        }
        let (model, _) = load_checkpoint(&path)?;
        loaded.push((stem.clone(), model));
    }
    let signals = dataset(cfg);
    let mut rows = Vec::new();
    for rotate in [false, true] {
        let jobs: Vec<BenchmarkJob<'_>> = loaded
            .iter()
            .map(|(name, model)| BenchmarkJob {
                name: name.clone(),
                scheme: scheme_for_kind(model.spec.kind),
                model,
            })
            .collect();
        let bc = BenchmarkConfig {
            m_values: cfg.benchmark.m_values.clone(),
            trials: cfg.benchmark.trials,
            noise_std: cfg.benchmark.noise_std,
            rotate,
            quarter_only: cfg.benchmark.quarter_only,
            seed: cfg.seed,
            recovery: cfg.recovery_config(),
        };
        rows.extend(benchmark(&jobs, &signals, &bc));
    }
    fs::write(out.join("benchmark.json"), serde_json::to_vec_pretty(&rows).unwrap())?;
    let mut table = String::from(
        "scenario\tmodel\tgroup\tm\ttrials\tmean_mse\tstd_mse\tconverged_pct\tmean_iters\n",
    );
    for r in &rows {
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{:.6e}\t{:.6e}\t{:.1}\t{:.1}\n",
            r.scenario, r.model, r.group, r.m, r.trials, r.mean_mse, r.std_mse, r.converged_pct,
            r.mean_iters
        ));
    }
    fs::write(out.join("benchmark.tsv"), table)?;
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    /// Per-m empirical probability of `||Ax|| > 2||x||` against `e^{-m/4}`.
    pub norm_condition: Vec<(usize, f64, f64)>,
    pub norm_condition_ok: bool,
    pub gamma_hat: f64,
    pub sigma_min_oracle: f64,
    pub srec_ok: bool,
    pub lipschitz_hat: f64,
    pub audits_passed: usize,
    pub audit_trials: usize,
    pub audits_ok: bool,
    /// Representation-error agreement across a rotation of the target.
    pub equivariance_identity_gap: f64,
    pub equivariance_identity_ok: bool,
}

impl VerifyReport {
    pub fn all_ok(&self) -> bool {
        self.norm_condition_ok && self.srec_ok && self.audits_ok && self.equivariance_identity_ok
    }
}

/// Self-contained verification on a linear generator suite: norm
/// concentration, S-REC estimate vs. the spectral oracle, Lipschitz
/// estimate, recovery-bound audits, and the rotation-identity check.
pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> Result<VerifyReport, RunError> {
    fs::create_dir_all(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x76657269);

    // norm concentration
    let mut norm_condition = Vec::new();
    let mut norm_ok = true;
    for m in [8usize, 16, 32] {
        let x = models::standard_normal(64, &mut rng);
        let mut hits = 0usize;
        for _ in 0..cfg.verify.norm_trials {
            if norm_condition_trial(m, &x, &mut rng) {
                hits += 1;
            }
        }
        let p = hits as f64 / cfg.verify.norm_trials as f64;
        let bound = (-(m as f64) / 4.0).exp();
        norm_ok &= p <= bound;
        norm_condition.push((m, p, bound));
    }

    // linear suite: orthonormal-ish B via scaled Gaussian
    let n = 64;
    let k = 4;
    let b = Tensor::randn(vec![n, k], &mut rng).scale(1.0 / (n as f64).sqrt());
    let gen = crate::recovery::LinearGenerator { b: b.clone() };
    let m = 32;
    let a = gaussian_matrix(m, n, &mut rng);
    let est = estimate_srec(&gen, &a, 3.0 * (k as f64).sqrt(), cfg.verify.srec_pairs, 0.0, cfg.seed)
        .map_err(|e| RunError::Verification(e.to_string()))?;
    let ab = a.matmul(&b);
    let svd = nalgebra::DMatrix::from_row_slice(m, k, ab.data()).svd(false, false);
    let smin_ab = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let svd_b = nalgebra::DMatrix::from_row_slice(n, k, b.data()).svd(false, false);
    let smax_b = svd_b.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let floor = smin_ab / smax_b;
    // the sampled minimum sits between the whole-space floor and a loose
    // multiple of the oracle's smallest singular value
    let srec_ok = est.gamma_hat >= floor - 1e-9 && est.gamma_hat <= 3.0 * smin_ab.max(floor);
    let lip = estimate_lipschitz(&gen, 3.0 * (k as f64).sqrt(), cfg.verify.srec_pairs, cfg.seed ^ 1);

    // bound audits
    let rc = RecoveryConfig { max_iters: 600, step_z: 0.2, restarts: 2, ..Default::default() };
    let mut passed = 0usize;
    for t in 0..cfg.verify.audit_trials {
        let mut trng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa0d17 ^ t as u64);
        let z0 = models::standard_normal(k, &mut trng);
        let x = b.matvec(&z0);
        let at = gaussian_matrix(m, n, &mut trng);
        let problem = measure(&at, &x, 0.01, &mut trng);
        let mut rct = rc.clone();
        rct.seed = cfg.seed ^ t as u64;
        let result = recover_equivariant(&problem, &gen, &rct);
        let audit: BoundAudit = crate::theory::audit_bound(&problem, &gen, &result, cfg.verify.delta, &rct);
        if audit.holds {
            passed += 1;
        }
    }
    let audits_ok = passed * 100 >= cfg.verify.audit_trials * 95;

    // representation error is pose independent for an equivariant prior
    let spec = VaeSpec::eq(4, 16, 16, cfg.seed ^ 0xe9);
    let model = build(&spec)?;
    let vg = VaeGenerator { vae: &model };
    let img = crate::data::sample(&dataset(&RunConfig { seed: cfg.seed, data: DataSection { count: 1, side: 16 }, ..Default::default() }), 0);
    let side_img = Tensor::new(vec![16, 16], img.data().to_vec());
    let rot = crate::groups::rotate_exact_quarter(&side_img, 1).unwrap();
    let rot_flat = Tensor::from_vec(rot.data().to_vec());
    let group = CyclicGroup::new(4);
    let z_init = models::standard_normal(16, &mut rng);
    let mapped = crate::groups::apply_latent(&z_init, &group, group.element(1)).unwrap();
    let mk = |init: Tensor| RecoveryConfig {
        max_iters: 60,
        restarts: 1,
        init_z: Some(init),
        seed: cfg.seed,
        ..Default::default()
    };
    let (e0, _) = representation_error(&vg, &img, &mk(z_init));
    let (e1, _) = representation_error(&vg, &rot_flat, &mk(mapped));
    let gap = (e0 - e1).abs();
    let eq_ok = gap < 1e-8 * (1.0 + e0.abs());

    let report = VerifyReport {
        norm_condition,
        norm_condition_ok: norm_ok,
        gamma_hat: est.gamma_hat,
        sigma_min_oracle: smin_ab,
        srec_ok,
        lipschitz_hat: lip,
        audits_passed: passed,
        audit_trials: cfg.verify.audit_trials,
        audits_ok,
        equivariance_identity_gap: gap,
        equivariance_identity_ok: eq_ok,
    };
    fs::write(out.join("verify.json"), serde_json::to_vec_pretty(&report).unwrap())?;
    if report.all_ok() {
        Ok(report)
    } else {
        Err(RunError::Verification(format!(
            "norm {} srec {} audits {}/{} identity gap {:.3e}",
            report.norm_condition_ok,
            report.srec_ok,
            report.audits_passed,
            report.audit_trials,
            report.equivariance_identity_gap
        )))
    }
}

/// Collect whatever artifacts exist in the output directory into a
/// plain-text summary, written to `report.txt` and returned.
pub fn cmd_report(out: &Path) -> Result<String, RunError> {
    let mut text = String::from("run report\n==========\n");
    let mut found = false;
    let bench = out.join("benchmark.tsv");
    if bench.exists() {
        found = true;
        text.push_str("\nbenchmark table\n---------------\n");
        text.push_str(&fs::read_to_string(&bench)?);
    }
    let verify = out.join("verify.json");
    if verify.exists() {
        found = true;
        let report: VerifyReport = serde_json::from_slice(&fs::read(&verify)?)
            .map_err(|e| cfg_err(format!("verify.json: {e}")))?;
        text.push_str("\nverification\n------------\n");
        for (m, p, bound) in &report.norm_condition {
            text.push_str(&format!("norm condition m={m}: p={p:.3e} <= {bound:.3e}\n"));
        }
        text.push_str(&format!(
            "srec gamma_hat={:.4} (sigma_min oracle {:.4}), lipschitz_hat={:.4}\n",
            report.gamma_hat, report.sigma_min_oracle, report.lipschitz_hat
        ));
        text.push_str(&format!(
            "bound audits passed {}/{}\nequivariance identity gap {:.3e}\noverall: {}\n",
            report.audits_passed,
            report.audit_trials,
            report.equivariance_identity_gap,
            if report.all_ok() { "PASS" } else { "FAIL" }
        ));
    }
    let recover = out.join("recover.json");
    if recover.exists() {
        found = true;
        let record: RunRecord = serde_json::from_slice(&fs::read(&recover)?)
            .map_err(|e| cfg_err(format!("recover.json: {e}")))?;
        text.push_str(&format!(
            "\nrecovery\n--------\nscheme {} model {} m {} converged {} mse {:.4e} iters {}\n",
            record.scheme, record.model_kind, record.m, record.converged, record.mse,
            record.iterations
        ));
    }
    if !found {
        return Err(cfg_err(format!("no artifacts found in {}", out.display())));
    }
    fs::write(out.join("report.txt"), &text)?;
    Ok(text)
}
