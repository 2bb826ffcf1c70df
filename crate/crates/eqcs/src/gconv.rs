//! Group convolution layers (lifting, group-space, transposed), the
//! circulant-matrix realization, and equivariance-defect measurement.
//!
//! A group feature field is a tensor with layout `[channel][group][row][col]`
//! (or `[channel][group]` for vector signals). The action of `g` on a field
//! rotates the spatial base and cyclically shifts the group axis; all layers
//! here commute with that action, exactly for `C_4` and up to interpolation
//! error for larger cyclic groups.

use std::sync::Arc;

use crate::diffmath::{LinPlan, Tensor, Var};
use crate::groups::{rotate_image, rotation_plan, CyclicGroup, GroupElement, RotationMode};

/// `(w (*) x)(g_i) = <T_{g_i} w, x>` for vectors indexed by group elements.
pub fn group_conv_vec(w: &Tensor, x: &Tensor, group: &CyclicGroup) -> Tensor {
    let n = group.order();
    assert_eq!(w.len(), n, "kernel length {} != |G| = {n}", w.len());
    assert_eq!(x.len(), n, "input length {} != |G| = {n}", x.len());
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = (0..n).map(|j| w.data()[(j + n - i) % n] * x.data()[j]).sum();
    }
    Tensor::from_vec(out)
}

/// Circulant matrix `W[i][j] = w(g_i^{-1} g_j)` with `W x == w (*) x`.
pub fn build_circulant(w: &Tensor, group: &CyclicGroup) -> Tensor {
    let n = group.order();
    assert_eq!(w.len(), n, "kernel length {} != |G| = {n}", w.len());
    let mut m = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        for j in 0..n {
            m.data_mut()[i * n + j] = w.data()[(j + n - i) % n];
        }
    }
    m
}

/// Apply the group action to a feature field: cyclic shift of the group
/// axis composed with spatial rotation of the base.
pub fn act_on_field(
    field: &Tensor,
    group: &CyclicGroup,
    g: GroupElement,
    mode: RotationMode,
) -> Tensor {
    let n = group.order();
    match field.shape() {
        [c, ng] => {
            assert_eq!(*ng, n, "group axis length != |G|");
            let mut out = Tensor::zeros(vec![*c, n]);
            for ci in 0..*c {
                for a in 0..n {
                    out.data_mut()[ci * n + a] = field.data()[ci * n + (a + n - g.index()) % n];
                }
            }
            out
        }
        [c, ng, h, w] => {
            assert_eq!(*ng, n, "group axis length != |G|");
            let (c, ng, h, w) = (*c, *ng, *h, *w);
            let mut out = Tensor::zeros(vec![c, ng, h, w]);
            let hw = h * w;
            for ci in 0..c {
                for a in 0..ng {
                    let src = (a + ng - g.index()) % ng;
                    let slice = Tensor::new(
                        vec![h, w],
                        field.data()[(ci * ng + src) * hw..(ci * ng + src + 1) * hw].to_vec(),
                    );
                    let rot = rotate_image(&slice, g, mode).expect("square field base");
                    out.data_mut()[(ci * ng + a) * hw..(ci * ng + a + 1) * hw]
                        .copy_from_slice(rot.data());
                }
            }
            out
        }
        s => panic!("act_on_field expects [c,n] or [c,n,h,w], got {s:?}"),
    }
}

/// Which space a convolution layer maps from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    /// Image (no group axis) to group feature field.
    Lift,
    /// Group feature field to group feature field.
    Group,
    /// Ordinary translation convolution (trivial group).
    Plain,
}

/// Geometry of one (possibly transposed) group convolution.
#[derive(Debug, Clone)]
pub struct ConvGeom {
    pub c_in: usize,
    pub n_in: usize,
    pub c_out: usize,
    pub n_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
}

/// A group convolution layer with precomputed sparse plans.
///
/// `forward` maps the input space to the output space; `forward_transpose`
/// is the exact adjoint of `forward` in the same kernel, used for the
/// upsampling decoder layers.
pub struct GConv {
    pub geom: ConvGeom,
    kind: ConvKind,
    // kernel -> [c_out * patchlen] block of the weight matrix, one per output
    // group index (kernel rotated by angle_a, group axis shifted by a).
    wt_plans: Vec<Arc<LinPlan>>,
    i2ct: Arc<LinPlan>,
    i2ct_t: Arc<LinPlan>,
    reorder: Arc<LinPlan>,
    reorder_t: Arc<LinPlan>,
    wt_transpose: Arc<LinPlan>,
    bias_plan: Arc<LinPlan>,
    bias_plan_t: Arc<LinPlan>,
}

impl GConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        group: &CyclicGroup,
        kind: ConvKind,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        h_in: usize,
        w_in: usize,
    ) -> Self {
        assert!(stride == 1 || stride == 2, "only stride 1 and 2 supported");
        let n = group.order();
        let (n_in, n_out) = match kind {
            ConvKind::Lift => (1, n),
            ConvKind::Group => (n, n),
            ConvKind::Plain => (1, 1),
        };
        let h_out = (h_in + 2 * pad - k) / stride + 1;
        let w_out = (w_in + 2 * pad - k) / stride + 1;
        let geom = ConvGeom {
            c_in,
            n_in,
            c_out,
            n_out,
            kh: k,
            kw: k,
            stride,
            pad,
            h_in,
            w_in,
            h_out,
            w_out,
        };
        assert!(k <= h_in + 2 * pad && k <= w_in + 2 * pad, "kernel larger than padded input");

        let patchlen = c_in * n_in * k * k;
        let pos = h_out * w_out;
        let in_len = c_in * n_in * h_in * w_in;
        let kernel_len = c_out * c_in * n_in * k * k;

        // Transposed im2col: [patchlen, pos] directly.
        let mut i2_terms = Vec::with_capacity(patchlen * pos);
        for cit in 0..c_in * n_in {
            for dy in 0..k {
                for dx in 0..k {
                    for oy in 0..h_out {
                        for ox in 0..w_out {
                            let y = (oy * stride + dy) as isize - pad as isize;
                            let x = (ox * stride + dx) as isize - pad as isize;
                            if y >= 0 && (y as usize) < h_in && x >= 0 && (x as usize) < w_in {
                                let idx = (cit * h_in + y as usize) * w_in + x as usize;
                                i2_terms.push(vec![(idx as u32, 1.0)]);
                            } else {
                                i2_terms.push(Vec::new());
                            }
                        }
                    }
                }
            }
        }
        let i2ct = Arc::new(LinPlan::new(in_len, vec![patchlen, pos], i2_terms));
        let i2ct_t = Arc::new(i2ct.transposed(vec![c_in, n_in, h_in, w_in]));

        // Per-output-group-index kernel transforms.
        let mut wt_plans = Vec::with_capacity(n_out);
        for a in 0..n_out {
            let angle = 2.0 * std::f64::consts::PI * a as f64 / n_out as f64;
            let rot = rotation_plan(k, k, angle);
            let mut terms = Vec::with_capacity(c_out * patchlen);
            for co in 0..c_out {
                for ci in 0..c_in {
                    for b in 0..n_in {
                        let b_src = (b + n_in - a % n_in.max(1)) % n_in;
                        for cell in 0..k * k {
                            let row = &rot.terms[cell];
                            let base = ((co * c_in + ci) * n_in + b_src) * k * k;
                            terms.push(
                                row.iter().map(|&(s, w)| ((base + s as usize) as u32, w)).collect(),
                            );
                        }
                    }
                }
            }
            wt_plans.push(Arc::new(LinPlan::new(kernel_len, vec![c_out * patchlen], terms)));
        }

        // y2 [(a*c_out+co), pos] -> [c_out, n_out, h_out, w_out]
        let reorder = Arc::new(LinPlan::gather(
            n_out * c_out * pos,
            vec![c_out, n_out, h_out, w_out],
            (0..c_out * n_out * pos)
                .map(|i| {
                    let p = i % pos;
                    let a = (i / pos) % n_out;
                    let co = i / (pos * n_out);
                    (a * c_out + co) * pos + p
                })
                .collect(),
        ));
        let reorder_t = Arc::new(reorder.transposed(vec![n_out * c_out, pos]));

        let wt_transpose = Arc::new(LinPlan::gather(
            n_out * c_out * patchlen,
            vec![patchlen, n_out * c_out],
            (0..patchlen * n_out * c_out)
                .map(|i| {
                    let c = i % (n_out * c_out);
                    let r = i / (n_out * c_out);
                    c * patchlen + r
                })
                .collect(),
        ));

        // bias [c_out] broadcast over the output field
        let bias_plan = Arc::new(LinPlan::gather(
            c_out,
            vec![c_out, n_out, h_out, w_out],
            (0..c_out * n_out * pos).map(|i| i / (n_out * pos)).collect(),
        ));
        // bias [c_in] broadcast over the input field (transpose direction)
        let bias_plan_t = Arc::new(LinPlan::gather(
            c_in,
            vec![c_in, n_in, h_in, w_in],
            (0..c_in * n_in * h_in * w_in).map(|i| i / (n_in * h_in * w_in)).collect(),
        ));

        GConv {
            geom,
            kind,
            wt_plans,
            i2ct,
            i2ct_t,
            reorder,
            reorder_t,
            wt_transpose,
            bias_plan,
            bias_plan_t,
        }
    }

    pub fn kind(&self) -> ConvKind {
        self.kind
    }

    /// `[c_out, c_in, n_in, kh, kw]`
    pub fn kernel_shape(&self) -> Vec<usize> {
        let g = &self.geom;
        vec![g.c_out, g.c_in, g.n_in, g.kh, g.kw]
    }

    pub fn in_shape(&self) -> Vec<usize> {
        let g = &self.geom;
        vec![g.c_in, g.n_in, g.h_in, g.w_in]
    }

    pub fn out_shape(&self) -> Vec<usize> {
        let g = &self.geom;
        vec![g.c_out, g.n_out, g.h_out, g.w_out]
    }

    /// Assemble the (transposed) weight matrix `[n_out*c_out, patchlen]`
    /// from the kernel parameter.
    fn weight_matrix<'t>(&self, kernel: Var<'t>) -> Var<'t> {
        let tape = kernel.tape();
        let blocks: Vec<_> = self.wt_plans.iter().map(|p| kernel.lin_map(p)).collect();
        let g = &self.geom;
        let patchlen = g.c_in * g.n_in * g.kh * g.kw;
        tape.concat(&blocks).reshape(vec![g.n_out * g.c_out, patchlen])
    }

    pub fn forward<'t>(&self, kernel: Var<'t>, bias: Option<Var<'t>>, x: Var<'t>) -> Var<'t> {
        assert_eq!(
            x.value().len(),
            self.i2ct.in_len,
            "gconv input size mismatch (expected {:?})",
            self.in_shape()
        );
        let wt = self.weight_matrix(kernel);
        let cols = x.lin_map(&self.i2ct);
        let y = wt.matmul(cols).lin_map(&self.reorder);
        match bias {
            Some(b) => y + b.lin_map(&self.bias_plan),
            None => y,
        }
    }

    /// Adjoint of [`GConv::forward`] in the same kernel: maps the output
    /// space back to the input space (upsampling when `stride == 2`).
    pub fn forward_transpose<'t>(&self, kernel: Var<'t>, bias: Option<Var<'t>>, y: Var<'t>) -> Var<'t> {
        let wt_t = self.weight_matrix(kernel).lin_map(&self.wt_transpose);
        let g = &self.geom;
        let cols = y.lin_map(&self.reorder_t).reshape(vec![g.n_out * g.c_out, g.h_out * g.w_out]);
        let x = wt_t.matmul(cols).lin_map(&self.i2ct_t);
        match bias {
            Some(b) => x + b.lin_map(&self.bias_plan_t),
            None => x,
        }
    }
}

/// Mean over the spatial axes: `[c, n, h, w] -> [c, n]`. The result
/// transforms by the pure regular representation.
pub fn spatial_mean_plan(c: usize, n: usize, h: usize, w: usize) -> Arc<LinPlan> {
    let hw = h * w;
    let terms = (0..c * n)
        .map(|cn| (0..hw).map(|p| ((cn * hw + p) as u32, 1.0 / hw as f64)).collect())
        .collect();
    Arc::new(LinPlan::new(c * n * hw, vec![c, n], terms))
}

/// Mean over the group axis: `[c, n, h, w] -> [c, h, w]`. The result is a
/// spatially equivariant (orientation-covariant) image stack.
pub fn group_mean_plan(c: usize, n: usize, h: usize, w: usize) -> Arc<LinPlan> {
    let hw = h * w;
    let terms = (0..c * hw)
        .map(|i| {
            let p = i % hw;
            let ci = i / hw;
            (0..n).map(|a| (((ci * n + a) * hw + p) as u32, 1.0 / n as f64)).collect()
        })
        .collect();
    Arc::new(LinPlan::new(c * n * hw, vec![c, h, w], terms))
}

/// 2x2 average pooling on the spatial axes (rotation-commuting downsample).
pub fn avgpool2_plan(c: usize, n: usize, h: usize, w: usize) -> Arc<LinPlan> {
    assert!(h % 2 == 0 && w % 2 == 0, "avgpool2 needs even spatial size");
    let (ho, wo) = (h / 2, w / 2);
    let mut terms = Vec::with_capacity(c * n * ho * wo);
    for cn in 0..c * n {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut row = Vec::with_capacity(4);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = (cn * h + 2 * oy + dy) * w + 2 * ox + dx;
                        row.push((idx as u32, 0.25));
                    }
                }
                terms.push(row);
            }
        }
    }
    Arc::new(LinPlan::new(c * n * h * w, vec![c, n, ho, wo], terms))
}

/// Nearest-neighbour 2x upsample on the spatial axes.
pub fn upsample2_plan(c: usize, n: usize, h: usize, w: usize) -> Arc<LinPlan> {
    let (ho, wo) = (2 * h, 2 * w);
    let idx = (0..c * n * ho * wo)
        .map(|i| {
            let x = i % wo;
            let y = (i / wo) % ho;
            let cn = i / (ho * wo);
            (cn * h + y / 2) * w + x / 2
        })
        .collect();
    Arc::new(LinPlan::gather(c * n * h * w, vec![c, n, ho, wo], idx))
}

/// Maximum equivariance defect of `f` over samples and all group elements:
/// `||f(act_in(g, x)) - act_out(g, f(x))|| / ||f(x)||` (absolute norm when
/// `||f(x)||` is negligible for every sample).
pub fn equivariance_defect<F, Ai, Ao>(
    f: F,
    act_in: Ai,
    act_out: Ao,
    group: &CyclicGroup,
    samples: &[Tensor],
) -> f64
where
    F: Fn(&Tensor) -> Tensor,
    Ai: Fn(&Tensor, GroupElement) -> Tensor,
    Ao: Fn(&Tensor, GroupElement) -> Tensor,
{
    let mut worst = 0.0_f64;
    let mut any_nonzero = false;
    for x in samples {
        let fx = f(x);
        let denom = fx.norm();
        if denom > 1e-9 {
            any_nonzero = true;
        }
        for g in group.elements() {
            let lhs = f(&act_in(x, g));
            let rhs = act_out(&fx, g);
            let diff = lhs.sub(&rhs).norm();
            let defect = if denom > 1e-9 { diff / denom } else { diff };
            worst = worst.max(defect);
        }
    }
    let _ = any_nonzero; // defect is absolute when every f(x) vanished
    worst
}
