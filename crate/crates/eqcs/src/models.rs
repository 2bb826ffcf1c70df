//! Variational autoencoders with rotation structure: an equivariant
//! model whose encoder mean, posterior covariance, and decoder all
//! commute with the group action by construction, plus MLP,
//! convolutional, augmented, and angle-conditioned baselines, and a
//! shared training loop.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::{DiffError, LinPlan, Tape, Tensor, Var};
use crate::gconv::{group_mean_plan, ConvKind, GConv};
use crate::groups::{rotate_bilinear, rotate_exact_quarter, CyclicGroup};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("model is not angle-conditioned")]
    NotConditional,
    #[error("model is angle-conditioned; decoding requires an angle")]
    MissingAngle,
    #[error("bad model configuration: {0}")]
    BadConfig(String),
    #[error("input outside [0,1] for Bernoulli likelihood")]
    BadInput,
    #[error("numerical failure: {0}")]
    Numerical(#[from] DiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Fully equivariant encoder/decoder, full-rank conjugating covariance.
    Eq,
    /// Equivariant backbone with an unconstrained diagonal covariance
    /// head; deliberately breaks covariance conjugation.
    EqDiagCov,
    Mlp,
    Conv,
    /// Same architecture as `Conv`; trained with rotation augmentation.
    Aug,
    /// Decoder conditioned on an explicit orientation angle.
    Cond,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Likelihood {
    Bernoulli,
    GaussianUnit,
}

/// Everything needed to rebuild a model's structure (parameters are
/// stored separately).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeSpec {
    pub kind: ModelKind,
    pub group_order: usize,
    pub side: usize,
    pub latent_dim: usize,
    /// Conv-stack widths: lift layer then one entry per 2x downsample.
    pub channels: Vec<usize>,
    /// Hidden width for dense architectures.
    pub hidden: usize,
    pub eta: f64,
    pub likelihood: Likelihood,
    pub init_seed: u64,
}

impl VaeSpec {
    pub fn eq(group_order: usize, side: usize, latent_dim: usize, seed: u64) -> Self {
        VaeSpec {
            kind: ModelKind::Eq,
            group_order,
            side,
            latent_dim,
            channels: default_channels(side),
            hidden: 0,
            eta: 1e-2,
            likelihood: Likelihood::Bernoulli,
            init_seed: seed,
        }
    }

    pub fn conv(side: usize, latent_dim: usize, seed: u64) -> Self {
        VaeSpec { kind: ModelKind::Conv, group_order: 1, ..VaeSpec::eq(1, side, latent_dim, seed) }
    }

    pub fn aug(side: usize, latent_dim: usize, seed: u64) -> Self {
        VaeSpec { kind: ModelKind::Aug, ..VaeSpec::conv(side, latent_dim, seed) }
    }

    pub fn mlp(side: usize, latent_dim: usize, hidden: usize, seed: u64) -> Self {
        VaeSpec {
            kind: ModelKind::Mlp,
            hidden,
            channels: Vec::new(),
            ..VaeSpec::eq(1, side, latent_dim, seed)
        }
    }

    pub fn cond(side: usize, latent_dim: usize, hidden: usize, seed: u64) -> Self {
        VaeSpec { kind: ModelKind::Cond, ..VaeSpec::mlp(side, latent_dim, hidden, seed) }
    }

    pub fn eq_diag_cov(group_order: usize, side: usize, latent_dim: usize, seed: u64) -> Self {
        VaeSpec { kind: ModelKind::EqDiagCov, ..VaeSpec::eq(group_order, side, latent_dim, seed) }
    }
}

fn default_channels(side: usize) -> Vec<usize> {
    // lift width then one entry per halving down to 1x1
    let halvings = (side as f64).log2().round() as usize;
    let mut c = vec![6];
    for i in 0..halvings {
        c.push((6 + 2 * i).min(16));
    }
    c
}

#[derive(Debug, Clone, Copy)]
enum Act {
    None,
    Relu,
}

enum LayerKind {
    Conv(GConv),
    ConvT(GConv),
    Dense { out_dim: usize, in_dim: usize },
    Plan(Arc<LinPlan>),
    Reshape(Vec<usize>),
}

struct Layer {
    kind: LayerKind,
    act: Act,
}

struct Net {
    layers: Vec<Layer>,
}

impl Net {
    fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for l in &self.layers {
            match &l.kind {
                LayerKind::Conv(c) => {
                    shapes.push(c.kernel_shape());
                    shapes.push(vec![c.geom.c_out]);
                }
                LayerKind::ConvT(c) => {
                    shapes.push(c.kernel_shape());
                    shapes.push(vec![c.geom.c_in]);
                }
                LayerKind::Dense { out_dim, in_dim } => {
                    shapes.push(vec![*out_dim, *in_dim]);
                    shapes.push(vec![*out_dim]);
                }
                LayerKind::Plan(_) | LayerKind::Reshape(_) => {}
            }
        }
        shapes
    }

    fn forward<'t>(&self, params: &[Var<'t>], mut x: Var<'t>) -> Var<'t> {
        let mut it = params.iter();
        for l in &self.layers {
            x = match &l.kind {
                LayerKind::Conv(c) => {
                    let k = *it.next().unwrap();
                    let b = *it.next().unwrap();
                    c.forward(k, Some(b), x)
                }
                LayerKind::ConvT(c) => {
                    let k = *it.next().unwrap();
                    let b = *it.next().unwrap();
                    c.forward_transpose(k, Some(b), x)
                }
                LayerKind::Dense { out_dim, in_dim } => {
                    let w = *it.next().unwrap();
                    let b = *it.next().unwrap();
                    let y = w.matmul(x.reshape(vec![*in_dim, 1])).reshape(vec![*out_dim]);
                    y + b
                }
                LayerKind::Plan(p) => x.lin_map(p),
                LayerKind::Reshape(s) => x.reshape(s.clone()),
            };
            if let Act::Relu = l.act {
                x = x.relu();
            }
        }
        x
    }
}

/// How the posterior scale is parameterized.
enum CovHead {
    /// `V` with equivariant columns assembled from a group-conv field;
    /// `Sigma = V V^T + eta I`.
    FullEquivariant { gather: Arc<LinPlan>, transpose: Arc<LinPlan> },
    /// Unconstrained diagonal: `L = diag(softplus(raw) + eta)`.
    DiagonalDense { scatter: Arc<LinPlan> },
}

/// A variational autoencoder with explicit parameter storage. Structure
/// is immutable after construction; `params` is the complete trainable
/// state in a fixed order.
pub struct Vae {
    pub spec: VaeSpec,
    pub group: CyclicGroup,
    pub params: Vec<Tensor>,
    enc: Net,
    mu_head: Net,
    cov_head: Net,
    dec: Net,
    cov: CovHead,
    diag_plan: Arc<LinPlan>,
    bounds: [usize; 4],
}

/// Posterior `N(mean, L L^T)` as plain values.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub mean: Tensor,
    pub chol: Tensor,
}

impl Posterior {
    pub fn covariance(&self) -> Tensor {
        self.chol.matmul(&self.chol.transposed())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Tensor {
        let k = self.mean.len();
        let eps = standard_normal(k, rng);
        self.sample_with(&eps)
    }

    /// `z = mean + L eps` (the reparameterization map).
    pub fn sample_with(&self, eps: &Tensor) -> Tensor {
        self.mean.add(&self.chol.matvec(eps))
    }

    pub fn kl(&self) -> f64 {
        let k = self.mean.len();
        let logdiag: f64 = (0..k).map(|i| self.chol.at2(i, i).ln()).sum();
        let fro: f64 = self.chol.data().iter().map(|v| v * v).sum();
        let mu2 = self.mean.dot(&self.mean);
        0.5 * (-2.0 * logdiag - k as f64 + fro + mu2)
    }
}

/// Posterior on the tape (differentiable in the model parameters).
pub struct PosteriorVar<'t> {
    pub mean: Var<'t>,
    pub chol: Var<'t>,
}

pub fn standard_normal(n: usize, rng: &mut impl Rng) -> Tensor {
    let d = Normal::new(0.0, 1.0).unwrap();
    Tensor::from_vec((0..n).map(|_| d.sample(rng)).collect())
}

/// `KL(N(mu, L L^T) || N(0, I)) = (-2 sum log L_ii - k + ||L||_F^2 + mu^T mu)/2`.
pub fn kl_divergence_var<'t>(post: &PosteriorVar<'t>, diag_plan: &Arc<LinPlan>) -> Var<'t> {
    let k = post.mean.value().len();
    let logdiag = post.chol.lin_map(diag_plan).log().sum();
    let fro = post.chol.square().sum();
    let mu2 = post.mean.square().sum();
    (logdiag.scale(-2.0) + fro + mu2).add_const(-(k as f64)).scale(0.5)
}

fn diag_extract_plan(k: usize) -> Arc<LinPlan> {
    Arc::new(LinPlan::gather(k * k, vec![k], (0..k).map(|i| i * k + i).collect()))
}

fn diag_scatter_plan(k: usize) -> Arc<LinPlan> {
    let terms = (0..k * k)
        .map(|i| if i % k == i / k { vec![((i / k) as u32, 1.0)] } else { Vec::new() })
        .collect();
    Arc::new(LinPlan::new(k, vec![k, k], terms))
}

fn transpose_plan(rows: usize, cols: usize) -> Arc<LinPlan> {
    Arc::new(LinPlan::gather(
        rows * cols,
        vec![cols, rows],
        (0..rows * cols).map(|i| (i % rows) * cols + i / rows).collect(),
    ))
}

pub fn build(spec: &VaeSpec) -> Result<Vae, ModelError> {
    let n = spec.group_order;
    let k = spec.latent_dim;
    let side = spec.side;
    if n == 0 || k == 0 || side < 4 {
        return Err(ModelError::BadConfig("zero-sized model".into()));
    }
    if k % n != 0 {
        return Err(ModelError::BadConfig(format!(
            "latent dim {k} not divisible by group order {n}"
        )));
    }
    if spec.eta <= 0.0 {
        return Err(ModelError::BadConfig("jitter must be positive".into()));
    }
    let group = CyclicGroup::new(n);
    let pixels = side * side;

    let (enc, mu_head, cov_head, dec, cov) = match spec.kind {
        ModelKind::Eq | ModelKind::EqDiagCov | ModelKind::Conv | ModelKind::Aug => {
            let ch = &spec.channels;
            let halvings = (side as f64).log2().round() as usize;
            if side != 1 << halvings {
                return Err(ModelError::BadConfig("side must be a power of two".into()));
            }
            if ch.len() != halvings + 1 {
                return Err(ModelError::BadConfig(format!(
                    "need {} channel widths for side {side}",
                    halvings + 1
                )));
            }
            let c_z = k / n;
            let grp = &group;
            let mut enc_layers = vec![Layer {
                kind: LayerKind::Conv(GConv::new(grp, ConvKind::Lift, 1, ch[0], 3, 1, 1, side, side)),
                act: Act::Relu,
            }];
            let mut s = side;
            for i in 0..halvings {
                enc_layers.push(Layer {
                    kind: LayerKind::Conv(GConv::new(grp, ConvKind::Group, ch[i], ch[i + 1], 2, 2, 0, s, s)),
                    act: Act::Relu,
                });
                s /= 2;
            }
            let enc = Net { layers: enc_layers };
            let c_top = *ch.last().unwrap();

            let mu_head = Net {
                layers: vec![
                    Layer {
                        kind: LayerKind::Conv(GConv::new(grp, ConvKind::Group, c_top, c_z, 1, 1, 0, 1, 1)),
                        act: Act::None,
                    },
                    Layer { kind: LayerKind::Reshape(vec![k]), act: Act::None },
                ],
            };

            let (cov_head, cov) = if spec.kind == ModelKind::Eq {
                // field [c_z * k, n] -> V[k, k] with column j drawn from
                // channels {ci * k + j}: every column transforms by the
                // latent representation.
                let head = Net {
                    layers: vec![Layer {
                        kind: LayerKind::Conv(GConv::new(grp, ConvKind::Group, c_top, c_z * k, 1, 1, 0, 1, 1)),
                        act: Act::None,
                    }],
                };
                let gather = Arc::new(LinPlan::gather(
                    c_z * k * n,
                    vec![k, k],
                    (0..k * k)
                        .map(|o| {
                            let j = o % k;
                            let a = (o / k) % n;
                            let ci = o / (k * n);
                            (ci * k + j) * n + a
                        })
                        .collect(),
                ));
                (head, CovHead::FullEquivariant { gather, transpose: transpose_plan(k, k) })
            } else {
                let head = Net {
                    layers: vec![Layer {
                        kind: LayerKind::Dense { out_dim: k, in_dim: c_top * n },
                        act: Act::None,
                    }],
                };
                (head, CovHead::DiagonalDense { scatter: diag_scatter_plan(k) })
            };

            let mut dec_layers = vec![
                Layer { kind: LayerKind::Reshape(vec![c_z, n, 1, 1]), act: Act::None },
                Layer {
                    kind: LayerKind::Conv(GConv::new(grp, ConvKind::Group, c_z, c_top, 1, 1, 0, 1, 1)),
                    act: Act::Relu,
                },
            ];
            let mut s = 1;
            for i in (0..halvings).rev() {
                dec_layers.push(Layer {
                    kind: LayerKind::ConvT(GConv::new(grp, ConvKind::Group, ch[i], ch[i + 1], 2, 2, 0, 2 * s, 2 * s)),
                    act: Act::Relu,
                });
                s *= 2;
            }
            dec_layers.push(Layer {
                kind: LayerKind::Conv(GConv::new(grp, ConvKind::Group, ch[0], 1, 3, 1, 1, side, side)),
                act: Act::None,
            });
            dec_layers.push(Layer { kind: LayerKind::Plan(group_mean_plan(1, n, side, side)), act: Act::None });
            dec_layers.push(Layer { kind: LayerKind::Reshape(vec![pixels]), act: Act::None });
            let dec = Net { layers: dec_layers };
            (enc, mu_head, cov_head, dec, cov)
        }
        ModelKind::Mlp | ModelKind::Cond => {
            if n != 1 {
                return Err(ModelError::BadConfig("dense models use the trivial group".into()));
            }
            let h = spec.hidden;
            if h == 0 {
                return Err(ModelError::BadConfig("dense models need a hidden width".into()));
            }
            let dense = |out, inp, act| Layer { kind: LayerKind::Dense { out_dim: out, in_dim: inp }, act };
            let enc = Net { layers: vec![dense(h, pixels, Act::Relu), dense(h, h, Act::Relu)] };
            let mu_head = Net { layers: vec![dense(k, h, Act::None)] };
            let cov_head = Net { layers: vec![dense(k, h, Act::None)] };
            let dec_in = if spec.kind == ModelKind::Cond { k + 2 } else { k };
            let dec = Net {
                layers: vec![dense(h, dec_in, Act::Relu), dense(h, h, Act::Relu), dense(pixels, h, Act::None)],
            };
            (enc, mu_head, cov_head, dec, CovHead::DiagonalDense { scatter: diag_scatter_plan(k) })
        }
    };

    // deterministic initialization; scale-down on the covariance head so
    // the initial posterior starts close to the prior
    let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
    let mut params = Vec::new();
    let mut bounds = [0usize; 4];
    for (ni, net) in [&enc, &mu_head, &cov_head, &dec].iter().enumerate() {
        let head_scale = if ni == 2 { 0.1 } else { 1.0 };
        for shape in net.param_shapes() {
            if shape.len() == 1 {
                params.push(Tensor::zeros(shape));
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let std = head_scale * (2.0 / fan_in as f64).sqrt();
                params.push(standard_normal_shaped(shape, std, &mut rng));
            }
        }
        bounds[ni] = params.len();
    }

    Ok(Vae {
        spec: spec.clone(),
        group,
        params,
        enc,
        mu_head,
        cov_head,
        dec,
        cov,
        diag_plan: diag_extract_plan(k),
        bounds,
    })
}

fn standard_normal_shaped(shape: Vec<usize>, std: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let d = Normal::new(0.0, std).unwrap();
    Tensor::new(shape, (0..n).map(|_| d.sample(rng)).collect())
}

impl Vae {
    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    pub fn signal_len(&self) -> usize {
        self.spec.side * self.spec.side
    }

    pub fn is_conditional(&self) -> bool {
        self.spec.kind == ModelKind::Cond
    }

    /// Put every parameter on the tape; slices index into the result.
    pub fn leaf_params<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    fn slices<'a, 't>(&self, vars: &'a [Var<'t>]) -> [&'a [Var<'t>]; 4] {
        let [a, b, c, d] = self.bounds;
        [&vars[..a], &vars[a..b], &vars[b..c], &vars[c..d]]
    }

    /// Encoder forward pass on the tape.
    pub fn encode_on<'t>(
        &self,
        tape: &'t Tape,
        params: &[Var<'t>],
        x: Var<'t>,
    ) -> Result<PosteriorVar<'t>, ModelError> {
        let [enc_p, mu_p, cov_p, _] = self.slices(params);
        let feat = self.enc.forward(enc_p, x);
        let mean = self.mu_head.forward(mu_p, feat);
        let k = self.spec.latent_dim;
        let chol = match &self.cov {
            CovHead::FullEquivariant { gather, transpose } => {
                let v = self.cov_head.forward(cov_p, feat).lin_map(gather);
                let vt = v.lin_map(transpose);
                let sigma = v.matmul(vt) + tape.leaf(Tensor::eye(k).scale(self.spec.eta));
                sigma.cholesky()?
            }
            CovHead::DiagonalDense { scatter } => {
                let raw = self.cov_head.forward(cov_p, feat.reshape(vec![feat.value().len()]));
                (raw.softplus().add_const(self.spec.eta)).lin_map(scatter)
            }
        };
        let mean = mean.reshape(vec![k]);
        if !mean.value().is_finite() || !chol.value().is_finite() {
            return Err(ModelError::Numerical(DiffError::NonFinite("model output")));
        }
        Ok(PosteriorVar { mean, chol })
    }

    /// Encoder as plain values.
    pub fn encode(&self, x: &Tensor) -> Result<Posterior, ModelError> {
        let tape = Tape::new();
        let params = self.leaf_params(&tape);
        let xv = tape.leaf(x.clone());
        let p = self.encode_on(&tape, &params, xv)?;
        Ok(Posterior { mean: p.mean.value(), chol: p.chol.value() })
    }

    /// Decoder logits on the tape (apply `sigmoid` for Bernoulli means).
    pub fn decode_on<'t>(
        &self,
        tape: &'t Tape,
        params: &[Var<'t>],
        z: Var<'t>,
    ) -> Result<Var<'t>, ModelError> {
        if self.is_conditional() {
            return Err(ModelError::MissingAngle);
        }
        let _ = tape;
        let [_, _, _, dec_p] = self.slices(params);
        Ok(self.dec.forward(dec_p, z))
    }

    /// Decoder logits with an orientation input; the angle enters as
    /// `(cos, sin)` appended to the latent, so gradients flow to both.
    pub fn conditional_decode_on<'t>(
        &self,
        tape: &'t Tape,
        params: &[Var<'t>],
        z: Var<'t>,
        angle: Var<'t>,
    ) -> Result<Var<'t>, ModelError> {
        if !self.is_conditional() {
            return Err(ModelError::NotConditional);
        }
        let [_, _, _, dec_p] = self.slices(params);
        let zin = tape.concat(&[z, angle.cos(), angle.sin()]);
        Ok(self.dec.forward(dec_p, zin))
    }

    /// Decoded output as values: Bernoulli probabilities, or the mean
    /// image for the Gaussian likelihood.
    pub fn decode(&self, z: &Tensor, angle: Option<f64>) -> Result<Tensor, ModelError> {
        let tape = Tape::new();
        let params = self.leaf_params(&tape);
        let zv = tape.leaf(z.clone());
        let logits = match (self.is_conditional(), angle) {
            (true, Some(a)) => {
                self.conditional_decode_on(&tape, &params, zv, tape.leaf(Tensor::scalar(a)))?
            }
            (true, None) => return Err(ModelError::MissingAngle),
            (false, _) => self.decode_on(&tape, &params, zv)?,
        };
        let out = match self.spec.likelihood {
            Likelihood::Bernoulli => logits.sigmoid(),
            Likelihood::GaussianUnit => logits,
        };
        let v = out.value();
        if !v.is_finite() {
            return Err(ModelError::Numerical(DiffError::NonFinite("model output")));
        }
        Ok(v)
    }

    /// Negative ELBO of one sample, split into reconstruction and KL
    /// terms; `eps` is the reparameterization noise.
    pub fn elbo_parts<'t>(
        &self,
        tape: &'t Tape,
        params: &[Var<'t>],
        x: &Tensor,
        eps: &Tensor,
        angle: Option<f64>,
    ) -> Result<(Var<'t>, Var<'t>), ModelError> {
        if matches!(self.spec.likelihood, Likelihood::Bernoulli)
            && x.data().iter().any(|&v| !(0.0..=1.0).contains(&v))
        {
            return Err(ModelError::BadInput);
        }
        let k = self.spec.latent_dim;
        let xv = tape.leaf(Tensor::from_vec(x.data().to_vec()));
        let post = self.encode_on(tape, params, xv)?;
        let epsv = tape.leaf(Tensor::new(vec![k, 1], eps.data().to_vec()));
        let z = post.mean + post.chol.matmul(epsv).reshape(vec![k]);
        let logits = if self.is_conditional() {
            let a = tape.leaf(Tensor::scalar(angle.unwrap_or(0.0)));
            self.conditional_decode_on(tape, params, z, a)?
        } else {
            self.decode_on(tape, params, z)?
        };
        let recon = match self.spec.likelihood {
            // -log Be(x | sigmoid(f)) = sum softplus(f) - x*f
            Likelihood::Bernoulli => (logits.softplus() - xv * logits).sum(),
            Likelihood::GaussianUnit => (logits - xv).square().sum().scale(0.5),
        };
        let kl = kl_divergence_var(&post, &self.diag_plan);
        Ok((recon, kl))
    }

    /// Negative ELBO (loss) of one sample.
    pub fn loss<'t>(
        &self,
        tape: &'t Tape,
        params: &[Var<'t>],
        x: &Tensor,
        eps: &Tensor,
        angle: Option<f64>,
    ) -> Result<Var<'t>, ModelError> {
        let (recon, kl) = self.elbo_parts(tape, params, x, eps, angle)?;
        Ok(recon + kl)
    }

    /// Mean-posterior reconstruction error per pixel over a `[n, h, w]`
    /// stack of images.
    pub fn reconstruction_mse(&self, data: &Tensor) -> Result<f64, ModelError> {
        let count = data.shape()[0];
        let mut total = 0.0;
        for i in 0..count {
            let x = crate::data::sample(data, i);
            let post = self.encode(&x)?;
            let angle = if self.is_conditional() { Some(0.0) } else { None };
            let xhat = self.decode(&post.mean, angle)?;
            total += xhat.mse(&x);
        }
        Ok(total / count as f64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Random quarter-rotation of each sample before the forward pass.
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 20,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            augment: false,
            seed: 0,
        }
    }
}

/// Train in place with Adam; returns the per-epoch mean loss trace.
pub fn train(model: &mut Vae, data: &Tensor, cfg: &TrainConfig) -> Result<Vec<f64>, ModelError> {
    if cfg.batch_size == 0 || cfg.learning_rate <= 0.0 {
        return Err(ModelError::BadConfig("batch size and learning rate must be positive".into()));
    }
    let count = data.shape()[0];
    let side = data.shape()[1];
    if side != model.spec.side || data.shape()[2] != side {
        return Err(ModelError::BadConfig("dataset shape does not match model".into()));
    }
    let augment = cfg.augment || model.spec.kind == ModelKind::Aug;
    let k = model.latent_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut m1: Vec<Tensor> = model.params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
    let mut m2 = m1.clone();
    let mut step = 0usize;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let angle_dist = Uniform::new(0.0, 2.0 * std::f64::consts::PI);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..count).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let tape = Tape::new();
            let pvars = model.leaf_params(&tape);
            let mut total: Option<Var> = None;
            for &i in batch {
                let raw = crate::data::sample(data, i);
                let img = Tensor::new(vec![side, side], raw.data().to_vec());
                let (x, angle) = if model.is_conditional() {
                    let a = angle_dist.sample(&mut rng);
                    let r = rotate_bilinear(&img, a);
                    (Tensor::from_vec(r.data().to_vec()), Some(a))
                } else if augment {
                    let q = rng.gen_range(0..4);
                    let r = rotate_exact_quarter(&img, q).expect("square sample");
                    (Tensor::from_vec(r.data().to_vec()), None)
                } else {
                    (raw, None)
                };
                let eps = standard_normal(k, &mut rng);
                let l = model.loss(&tape, &pvars, &x, &eps, angle)?;
                total = Some(match total {
                    Some(t) => t + l,
                    None => l,
                });
            }
            let loss = total.unwrap().scale(1.0 / batch.len() as f64);
            let loss_val = loss.value().item();
            if !loss_val.is_finite() {
                return Err(ModelError::Diverged { epoch, loss: loss_val });
            }
            epoch_loss += loss_val * batch.len() as f64;
            let grads = tape.backward(loss)?;
            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step as i32);
            let bc2 = 1.0 - cfg.beta2.powi(step as i32);
            for (pi, pv) in pvars.iter().enumerate() {
                let g = grads.get(*pv);
                for j in 0..g.len() {
                    let gj = g.data()[j];
                    let m = cfg.beta1 * m1[pi].data()[j] + (1.0 - cfg.beta1) * gj;
                    let v = cfg.beta2 * m2[pi].data()[j] + (1.0 - cfg.beta2) * gj * gj;
                    m1[pi].data_mut()[j] = m;
                    m2[pi].data_mut()[j] = v;
                    model.params[pi].data_mut()[j] -=
                        cfg.learning_rate * (m / bc1) / ((v / bc2).sqrt() + cfg.adam_eps);
                }
            }
        }
        trace.push(epoch_loss / count as f64);
    }
    Ok(trace)
}
