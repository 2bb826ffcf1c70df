//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation in topological order; [`Tape::backward`]
//! walks the record once in reverse and accumulates gradients into one slot
//! per node. Tapes are cheap and rebuilt per forward pass; a tape is confined
//! to the thread that created it.

use std::cell::RefCell;
use std::sync::Arc;

use thiserror::Error;

use super::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("matrix is not positive definite (pivot {0} at row {1})")]
    NotSpd(f64, usize),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

/// Sparse linear map: `out[i] = sum_j w_ij * in[idx_ij]`.
///
/// Covers gathers, scatters, permutations, pooling, zero-padding, im2col and
/// fixed-angle bilinear rotation. Plans are built once and shared.
#[derive(Debug, Clone)]
pub struct LinPlan {
    pub in_len: usize,
    pub out_shape: Vec<usize>,
    pub terms: Vec<Vec<(u32, f64)>>,
}

impl LinPlan {
    pub fn new(in_len: usize, out_shape: Vec<usize>, terms: Vec<Vec<(u32, f64)>>) -> Self {
        assert_eq!(out_shape.iter().product::<usize>(), terms.len());
        LinPlan { in_len, out_shape, terms }
    }

    /// Pure permutation/gather plan: `out[i] = in[idx[i]]`.
    pub fn gather(in_len: usize, out_shape: Vec<usize>, idx: Vec<usize>) -> Self {
        let terms = idx.into_iter().map(|j| vec![(j as u32, 1.0)]).collect();
        LinPlan::new(in_len, out_shape, terms)
    }

    pub fn out_len(&self) -> usize {
        self.terms.len()
    }

    pub fn apply(&self, input: &[f64]) -> Tensor {
        debug_assert_eq!(input.len(), self.in_len);
        let data = self
            .terms
            .iter()
            .map(|t| t.iter().map(|&(j, w)| w * input[j as usize]).sum())
            .collect();
        Tensor::new(self.out_shape.clone(), data)
    }

    /// Adjoint of the map, as a plan of its own.
    pub fn transposed(&self, out_shape: Vec<usize>) -> LinPlan {
        assert_eq!(out_shape.iter().product::<usize>(), self.in_len);
        let mut terms: Vec<Vec<(u32, f64)>> = vec![Vec::new(); self.in_len];
        for (i, row) in self.terms.iter().enumerate() {
            for &(j, w) in row {
                terms[j as usize].push((i as u32, w));
            }
        }
        LinPlan::new(self.out_len(), out_shape, terms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Relu,
    Sigmoid,
    Exp,
    Log,
    Square,
    Softplus,
    Sin,
    Cos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Unary(Unary, usize),
    Binary(Binary, usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    MatMul(usize, usize),
    Sum(usize),
    Reshape(usize),
    Concat(Vec<usize>),
    LinMap(usize, Arc<LinPlan>),
    Cholesky(usize),
    RotateBilinear { image: usize, angle: usize },
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, op: Op, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Record an input or parameter.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(v))
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].value.shape().to_vec()
    }

    /// Flatten-and-concatenate along a single axis.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of zero parts");
        let mut data = Vec::new();
        let mut ids = Vec::with_capacity(parts.len());
        for p in parts {
            assert!(std::ptr::eq(p.tape, self), "concat across tapes");
            data.extend_from_slice(self.nodes.borrow()[p.id].value.data());
            ids.push(p.id);
        }
        let n = data.len();
        self.push(Op::Concat(ids), Tensor::new(vec![n], data))
    }

    /// Differentiable rotation of an `h x w` image about its center by a
    /// tape-resident angle (radians, CCW). Samples outside the grid are zero.
    pub fn rotate_bilinear<'t>(&'t self, image: Var<'t>, angle: Var<'t>) -> Var<'t> {
        let img = self.value_of(image.id);
        let ang = self.value_of(angle.id);
        assert_eq!(img.shape().len(), 2, "rotate_bilinear needs h x w image");
        assert!(ang.is_scalar(), "angle must be scalar");
        let out = rotate_bilinear_forward(&img, ang.item());
        self.push(Op::RotateBilinear { image: image.id, angle: angle.id }, out)
    }

    /// Reverse pass from a scalar root; returns one gradient slot per node.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients, DiffError> {
        let nodes = self.nodes.borrow();
        let rv = &nodes[root.id].value;
        if !rv.is_scalar() {
            return Err(DiffError::NonScalarRoot(rv.shape().to_vec()));
        }
        if !rv.is_finite() {
            return Err(DiffError::NonFinite("backward root"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id] = Some(Tensor::scalar(1.0));
        for id in (0..=root.id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Unary(u, a) => {
                    let av = &nodes[*a].value;
                    let ga = match u {
                        Unary::Relu => g.zip(av, |gi, x| if x > 0.0 { gi } else { 0.0 }),
                        Unary::Sigmoid => g.zip(&node.value, |gi, s| gi * s * (1.0 - s)),
                        Unary::Exp => g.zip(&node.value, |gi, e| gi * e),
                        Unary::Log => g.zip(av, |gi, x| gi / x),
                        Unary::Square => g.zip(av, |gi, x| gi * 2.0 * x),
                        Unary::Softplus => g.zip(av, |gi, x| gi * sigmoid(x)),
                        Unary::Sin => g.zip(av, |gi, x| gi * x.cos()),
                        Unary::Cos => g.zip(av, |gi, x| -gi * x.sin()),
                    };
                    accumulate(&mut grads, *a, ga);
                }
                Op::Binary(b, x, y) => {
                    let xv = &nodes[*x].value;
                    let yv = &nodes[*y].value;
                    let (gx, gy) = match b {
                        Binary::Add => (bcast_grad(&g, xv), bcast_grad(&g, yv)),
                        Binary::Sub => (bcast_grad(&g, xv), bcast_grad(&g.scale(-1.0), yv)),
                        Binary::Mul => {
                            let gx = bcast_grad(&bcast_mul(&g, yv), xv);
                            let gy = bcast_grad(&bcast_mul(&g, xv), yv);
                            (gx, gy)
                        }
                    };
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *y, gy);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)),
                Op::AddConst(a) => accumulate(&mut grads, *a, g),
                Op::MatMul(x, y) => {
                    let xv = &nodes[*x].value;
                    let yv = &nodes[*y].value;
                    accumulate(&mut grads, *x, g.matmul(&yv.transposed()));
                    accumulate(&mut grads, *y, xv.transposed().matmul(&g));
                }
                Op::Sum(a) => {
                    let av = &nodes[*a].value;
                    accumulate(&mut grads, *a, Tensor::filled(av.shape().to_vec(), g.item()));
                }
                Op::Reshape(a) => {
                    let av = &nodes[*a].value;
                    accumulate(&mut grads, *a, g.reshaped(av.shape().to_vec()));
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = nodes[p].value.len();
                        let shape = nodes[p].value.shape().to_vec();
                        let chunk = Tensor::new(shape, g.data()[off..off + len].to_vec());
                        accumulate(&mut grads, p, chunk);
                        off += len;
                    }
                }
                Op::LinMap(a, plan) => {
                    let mut ga = vec![0.0; plan.in_len];
                    for (i, row) in plan.terms.iter().enumerate() {
                        let gi = g.data()[i];
                        if gi == 0.0 {
                            continue;
                        }
                        for &(j, w) in row {
                            ga[j as usize] += w * gi;
                        }
                    }
                    let shape = nodes[*a].value.shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::new(shape, ga));
                }
                Op::Cholesky(a) => {
                    let ga = cholesky_backward(&node.value, &g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::RotateBilinear { image, angle } => {
                    let img = &nodes[*image].value;
                    let ang = nodes[*angle].value.item();
                    let (gi, gang) = rotate_bilinear_backward(img, ang, &g);
                    accumulate(&mut grads, *image, gi);
                    accumulate(&mut grads, *angle, Tensor::scalar(gang));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of a scalar root with respect to every tape node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a node; zero tensor if the root never touched it.
    pub fn get(&self, v: Var<'_>) -> Tensor {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(v.shape()),
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(acc) => *acc = acc.add(&g),
        slot => *slot = Some(g),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Reduce a gradient to the shape of the operand (sum when it was a
/// broadcast scalar).
fn bcast_grad(g: &Tensor, operand: &Tensor) -> Tensor {
    if operand.is_scalar() && !g.is_scalar() {
        Tensor::scalar(g.sum())
    } else {
        g.clone()
    }
}

/// Elementwise product allowing one scalar side.
fn bcast_mul(a: &Tensor, b: &Tensor) -> Tensor {
    if b.is_scalar() {
        a.scale(b.item())
    } else if a.is_scalar() {
        b.scale(a.item())
    } else {
        a.zip(b, |x, y| x * y)
    }
}

fn binary_shape_check(op: &str, a: &Tensor, b: &Tensor) {
    assert!(
        a.shape() == b.shape() || a.is_scalar() || b.is_scalar(),
        "{op} shape mismatch: {:?} vs {:?} (only scalar broadcast supported)",
        a.shape(),
        b.shape()
    );
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, u: Unary) -> Var<'t> {
        let v = self.value();
        let out = match u {
            Unary::Relu => v.map(|x| x.max(0.0)),
            Unary::Sigmoid => v.map(sigmoid),
            Unary::Exp => v.map(f64::exp),
            Unary::Log => {
                assert!(v.data().iter().all(|&x| x > 0.0), "log of non-positive value");
                v.map(f64::ln)
            }
            Unary::Square => v.map(|x| x * x),
            Unary::Softplus => v.map(softplus),
            Unary::Sin => v.map(f64::sin),
            Unary::Cos => v.map(f64::cos),
        };
        self.tape.push(Op::Unary(u, self.id), out)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Unary::Relu)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Unary::Sigmoid)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Unary::Exp)
    }

    pub fn log(self) -> Var<'t> {
        self.unary(Unary::Log)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Unary::Square)
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(self) -> Var<'t> {
        self.unary(Unary::Softplus)
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(Unary::Sin)
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(Unary::Cos)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let out = self.value().scale(c);
        self.tape.push(Op::Scale(self.id, c), out)
    }

    pub fn add_const(self, c: f64) -> Var<'t> {
        let out = self.value().map(|x| x + c);
        self.tape.push(Op::AddConst(self.id), out)
    }

    pub fn sum(self) -> Var<'t> {
        let out = Tensor::scalar(self.value().sum());
        self.tape.push(Op::Sum(self.id), out)
    }

    pub fn reshape(self, shape: Vec<usize>) -> Var<'t> {
        let out = self.value().reshaped(shape);
        self.tape.push(Op::Reshape(self.id), out)
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let out = self.value().matmul(&other.value());
        self.tape.push(Op::MatMul(self.id, other.id), out)
    }

    /// Apply a fixed sparse linear map (no gradient to the plan).
    pub fn lin_map(self, plan: &Arc<LinPlan>) -> Var<'t> {
        let v = self.value();
        assert_eq!(v.len(), plan.in_len, "lin_map input length mismatch");
        let out = plan.apply(v.data());
        self.tape.push(Op::LinMap(self.id, Arc::clone(plan)), out)
    }

    /// Lower-triangular Cholesky factor of a symmetric positive definite
    /// matrix (symmetrized internally). Differentiable.
    pub fn cholesky(self) -> Result<Var<'t>, DiffError> {
        let v = self.value();
        let l = cholesky_factor(&v)?;
        Ok(self.tape.push(Op::Cholesky(self.id), l))
    }

    /// Squared L2 norm as a scalar.
    pub fn norm_sq(self) -> Var<'t> {
        self.square().sum()
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        binary_shape_check("add", &a, &b);
        let out = bcast_zip(&a, &b, |x, y| x + y);
        self.tape.push(Op::Binary(Binary::Add, self.id, rhs.id), out)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        binary_shape_check("sub", &a, &b);
        let out = bcast_zip(&a, &b, |x, y| x - y);
        self.tape.push(Op::Binary(Binary::Sub, self.id, rhs.id), out)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        binary_shape_check("mul", &a, &b);
        let out = bcast_zip(&a, &b, |x, y| x * y);
        self.tape.push(Op::Binary(Binary::Mul, self.id, rhs.id), out)
    }
}

fn bcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        a.zip(b, f)
    } else if b.is_scalar() {
        let s = b.item();
        a.map(|x| f(x, s))
    } else {
        let s = a.item();
        b.map(|x| f(s, x))
    }
}

/// Plain Cholesky factorization (lower, positive diagonal) of the
/// symmetrized input.
pub fn cholesky_factor(sigma: &Tensor) -> Result<Tensor, DiffError> {
    let k = sigma.rows();
    assert_eq!(k, sigma.cols(), "cholesky needs a square matrix");
    // Symmetrize; callers guarantee positive definiteness via jitter.
    let mut a = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            a[i * k + j] = 0.5 * (sigma.at2(i, j) + sigma.at2(j, i));
        }
    }
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(DiffError::NotSpd(s, i));
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    Ok(Tensor::new(vec![k, k], l))
}

/// Reverse-mode rule for the Cholesky factor via triangular solves
/// (Murray's formulation). Returns the gradient w.r.t. the input matrix.
fn cholesky_backward(l: &Tensor, grad_l: &Tensor) -> Tensor {
    let k = l.rows();
    // P = Phi(L^T dL): lower triangle, diagonal halved.
    let m = l.transposed().matmul(grad_l);
    let mut p = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            p[i * k + j] = if i == j { 0.5 * m.at2(i, j) } else { m.at2(i, j) };
        }
    }
    // B = P + P^T; Sbar = 0.5 * L^-T B L^-1.
    let mut b = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            b[i * k + j] = p[i * k + j] + p[j * k + i];
        }
    }
    let b = Tensor::new(vec![k, k], b);
    let c = solve_lower_transpose(l, &b); // L^-T B
    let d = solve_lower_transpose(l, &c.transposed()); // L^-T (L^-T B)^T = (C L^-1)^T
    d.transposed().scale(0.5)
}

/// Solve `L^T X = B` for X (back substitution per column).
fn solve_lower_transpose(l: &Tensor, b: &Tensor) -> Tensor {
    let k = l.rows();
    let n = b.cols();
    let mut x = b.data().to_vec();
    for col in 0..n {
        for i in (0..k).rev() {
            let mut s = x[i * n + col];
            for p in i + 1..k {
                s -= l.at2(p, i) * x[p * n + col];
            }
            x[i * n + col] = s / l.at2(i, i);
        }
    }
    Tensor::new(vec![k, n], x)
}

fn rotate_bilinear_forward(img: &Tensor, angle: f64) -> Tensor {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = angle.sin_cos();
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let u = j as f64 - cx;
            let v = i as f64 - cy;
            let sc = cx + u * c - v * s;
            let sr = cy + u * s + v * c;
            out[i * w + j] = sample_bilinear(img, sr, sc).0;
        }
    }
    Tensor::new(vec![h, w], out)
}

fn rotate_bilinear_backward(img: &Tensor, angle: f64, g: &Tensor) -> (Tensor, f64) {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = angle.sin_cos();
    let mut gimg = vec![0.0; h * w];
    let mut gangle = 0.0;
    for i in 0..h {
        for j in 0..w {
            let go = g.data()[i * w + j];
            if go == 0.0 {
                continue;
            }
            let u = j as f64 - cx;
            let v = i as f64 - cy;
            let sc = cx + u * c - v * s;
            let sr = cy + u * s + v * c;
            let (_, d_dr, d_dc, weights) = sample_bilinear_full(img, sr, sc);
            for (idx, wgt) in weights {
                gimg[idx] += go * wgt;
            }
            let dsc = -u * s - v * c;
            let dsr = u * c - v * s;
            gangle += go * (d_dc * dsc + d_dr * dsr);
        }
    }
    (Tensor::new(vec![h, w], gimg), gangle)
}

fn sample_bilinear(img: &Tensor, sr: f64, sc: f64) -> (f64,) {
    let (v, _, _, _) = sample_bilinear_full(img, sr, sc);
    (v,)
}

/// Bilinear sample with zero padding: value, derivatives w.r.t. the sample
/// row/column, and scatter weights into the source image.
fn sample_bilinear_full(img: &Tensor, sr: f64, sc: f64) -> (f64, f64, f64, Vec<(usize, f64)>) {
    let (h, w) = (img.shape()[0] as isize, img.shape()[1] as isize);
    let r0 = sr.floor();
    let c0 = sc.floor();
    let fr = sr - r0;
    let fc = sc - c0;
    let r0 = r0 as isize;
    let c0 = c0 as isize;
    let pix = |r: isize, c: isize| -> (f64, Option<usize>) {
        if r >= 0 && r < h && c >= 0 && c < w {
            let idx = (r * w + c) as usize;
            (img.data()[idx], Some(idx))
        } else {
            (0.0, None)
        }
    };
    let corners = [
        (pix(r0, c0), (1.0 - fr) * (1.0 - fc), -(1.0 - fc), -(1.0 - fr)),
        (pix(r0, c0 + 1), (1.0 - fr) * fc, -fc, 1.0 - fr),
        (pix(r0 + 1, c0), fr * (1.0 - fc), 1.0 - fc, -fr),
        (pix(r0 + 1, c0 + 1), fr * fc, fc, fr),
    ];
    let mut val = 0.0;
    let mut d_dr = 0.0;
    let mut d_dc = 0.0;
    let mut weights = Vec::with_capacity(4);
    for ((v, idx), wgt, dwr, dwc) in corners {
        val += wgt * v;
        d_dr += dwr * v;
        d_dc += dwc * v;
        if let Some(i) = idx {
            weights.push((i, wgt));
        }
    }
    (val, d_dr, d_dc, weights)
}
