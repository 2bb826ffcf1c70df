//! Cyclic groups `C_n`, their unitary representations on signal and latent
//! spaces, and exact / interpolated image rotations.
//!
//! Conventions (frozen; the equivariance tests depend on them):
//! - regular representation: `(T_g x)[i] = x[(i - g) mod n]`, so `T_{g_1}`
//!   applied to `(1,2,3,4)` gives `(4,1,2,3)`;
//! - exact quarter rotation (90 deg CCW): `out(i,j) = in(j, n-1-i)`;
//! - rotation center `((h-1)/2, (w-1)/2)`, samples outside the grid are zero.

use std::sync::Arc;

use thiserror::Error;

use crate::diffmath::{LinPlan, Tensor};

#[derive(Debug, Error)]
pub enum GroupError {
    #[error("group elements belong to different groups (orders {0} and {1})")]
    MismatchedGroups(usize, usize),
    #[error("latent dimension {0} is not divisible by group order {1}")]
    BadLatentDim(usize, usize),
    #[error("exact-quarter rotation needs a square image, got {0}x{1}")]
    NonSquareImage(usize, usize),
}

/// The cyclic group `C_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CyclicGroup {
    order: usize,
}

impl CyclicGroup {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "group order must be positive");
        CyclicGroup { order }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement { index: 0, order: self.order }
    }

    pub fn element(&self, index: usize) -> GroupElement {
        GroupElement { index: index % self.order, order: self.order }
    }

    pub fn elements(&self) -> impl Iterator<Item = GroupElement> + '_ {
        (0..self.order).map(|i| GroupElement { index: i, order: self.order })
    }
}

/// An element `g_i` of `C_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupElement {
    index: usize,
    order: usize,
}

impl GroupElement {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn compose(&self, other: &GroupElement) -> Result<GroupElement, GroupError> {
        if self.order != other.order {
            return Err(GroupError::MismatchedGroups(self.order, other.order));
        }
        Ok(GroupElement {
            index: (self.index + other.index) % self.order,
            order: self.order,
        })
    }

    pub fn inverse(&self) -> GroupElement {
        GroupElement {
            index: (self.order - self.index) % self.order,
            order: self.order,
        }
    }

    /// Rotation angle `2 pi i / n` in radians.
    pub fn angle(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.index as f64 / self.order as f64
    }
}

/// Permutation matrix of the regular representation: cyclic shift by `g`.
pub fn regular_rep(group: &CyclicGroup, g: GroupElement) -> Tensor {
    let n = group.order();
    let mut m = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        let j = (i + n - g.index()) % n;
        m.data_mut()[i * n + j] = 1.0;
    }
    m
}

/// Apply the regular representation to a vector without building the matrix.
pub fn shift_vec(x: &[f64], g: GroupElement) -> Vec<f64> {
    let n = g.order();
    assert_eq!(x.len() % n, 0, "vector length not a multiple of group order");
    let blocks = x.len() / n;
    let mut out = vec![0.0; x.len()];
    for b in 0..blocks {
        for i in 0..n {
            out[b * n + i] = x[b * n + (i + n - g.index()) % n];
        }
    }
    out
}

/// Block-diagonal latent representation: `multiplicity` copies of the
/// regular representation acting on `k = c * n` latent coordinates.
pub fn latent_rep(group: &CyclicGroup, g: GroupElement, latent_dim: usize) -> Result<Tensor, GroupError> {
    let n = group.order();
    if latent_dim % n != 0 {
        return Err(GroupError::BadLatentDim(latent_dim, n));
    }
    let block = regular_rep(group, g);
    let mut m = Tensor::zeros(vec![latent_dim, latent_dim]);
    for b in 0..latent_dim / n {
        for i in 0..n {
            for j in 0..n {
                m.data_mut()[(b * n + i) * latent_dim + (b * n + j)] = block.at2(i, j);
            }
        }
    }
    Ok(m)
}

/// Apply the latent representation to a latent vector (cyclic shift within
/// each regular block).
pub fn apply_latent(z: &Tensor, group: &CyclicGroup, g: GroupElement) -> Result<Tensor, GroupError> {
    let n = group.order();
    if z.len() % n != 0 {
        return Err(GroupError::BadLatentDim(z.len(), n));
    }
    Ok(Tensor::new(z.shape().to_vec(), shift_vec(z.data(), group.element(g.index()))))
}

/// One exact 90-degree CCW rotation: `out(i,j) = in(j, n-1-i)`.
fn rotate_quarter_once(image: &Tensor) -> Tensor {
    let n = image.rows();
    let mut out = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        for j in 0..n {
            out.data_mut()[i * n + j] = image.at2(j, n - 1 - i);
        }
    }
    out
}

/// Exact rotation by `quarters` quarter turns CCW (index permutation,
/// truly unitary). Requires a square image.
pub fn rotate_exact_quarter(image: &Tensor, quarters: i64) -> Result<Tensor, GroupError> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    if h != w {
        return Err(GroupError::NonSquareImage(h, w));
    }
    let q = quarters.rem_euclid(4);
    let mut out = image.clone();
    for _ in 0..q {
        out = rotate_quarter_once(&out);
    }
    Ok(out)
}

/// Sparse plan for bilinear rotation of an `h x w` image by a fixed angle
/// (radians, CCW) about the image center, zero outside the grid. The plan
/// agrees with the differentiable tape op at the same angle.
pub fn rotation_plan(h: usize, w: usize, angle: f64) -> Arc<LinPlan> {
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = angle.sin_cos();
    let mut terms = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let u = j as f64 - cx;
            let v = i as f64 - cy;
            let sc = cx + u * c - v * s;
            let sr = cy + u * s + v * c;
            terms.push(bilinear_terms(h, w, sr, sc));
        }
    }
    Arc::new(LinPlan::new(h * w, vec![h, w], terms))
}

fn bilinear_terms(h: usize, w: usize, sr: f64, sc: f64) -> Vec<(u32, f64)> {
    let r0 = sr.floor();
    let c0 = sc.floor();
    let fr = sr - r0;
    let fc = sc - c0;
    let (r0, c0) = (r0 as i64, c0 as i64);
    let mut out = Vec::with_capacity(4);
    let corners = [
        (r0, c0, (1.0 - fr) * (1.0 - fc)),
        (r0, c0 + 1, (1.0 - fr) * fc),
        (r0 + 1, c0, fr * (1.0 - fc)),
        (r0 + 1, c0 + 1, fr * fc),
    ];
    for (r, c, wt) in corners {
        if r >= 0 && (r as usize) < h && c >= 0 && (c as usize) < w && wt != 0.0 {
            out.push(((r as usize * w + c as usize) as u32, wt));
        }
    }
    out
}

/// Bilinear rotation by a fixed angle (untaped convenience over
/// [`rotation_plan`]).
pub fn rotate_bilinear(image: &Tensor, angle: f64) -> Tensor {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    rotation_plan(h, w, angle).apply(image.data())
}

/// Rotation mode for [`rotate_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationMode {
    ExactQuarter,
    Bilinear,
}

/// Rotate an image by a group element under the chosen mode.
pub fn rotate_image(image: &Tensor, g: GroupElement, mode: RotationMode) -> Result<Tensor, GroupError> {
    match mode {
        RotationMode::ExactQuarter => {
            assert_eq!(
                (g.index() * 4) % g.order(),
                0,
                "exact-quarter mode needs an angle that is a multiple of 90 degrees"
            );
            rotate_exact_quarter(image, (g.index() * 4 / g.order()) as i64)
        }
        RotationMode::Bilinear => Ok(rotate_bilinear(image, g.angle())),
    }
}
