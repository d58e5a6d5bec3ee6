//! Reverse-mode differentiation over a tape of NCHW tensor operations.
//!
//! A [`Graph`] records every operation in creation order, which is already a
//! topological order, so backward is a single reverse sweep. Non-leaf
//! gradients are rebuilt on every sweep; leaf gradients accumulate until
//! [`Graph::zero_grad`].
//!
//! Batched operators parallelize over the batch dimension. Reductions over
//! the batch (weight and bias gradients) are summed in batch order, so the
//! result is independent of the worker count.

mod checkpoint;
pub mod gradcheck;
mod optim;

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rayon::prelude::*;
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, NamedTensor};
pub use optim::{adamw_step, AdamState, AdamW};

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T, AutodiffError> {
    Err(AutodiffError::Shape {
        op,
        detail: detail.into(),
    })
}

/// Element type: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + 'static
{
    /// `C ← α·A·B + β·C` with arbitrary strides, as in BLAS.
    ///
    /// # Safety
    /// Every strided index must lie inside the pointed-to buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

#[inline]
fn cast<S: Scalar>(v: f64) -> S {
    S::from_f64(v).expect("finite cast")
}

#[inline]
fn wide<S: Scalar>(v: S) -> f64 {
    v.to_f64().expect("finite cast")
}

/// Row-major `C (m×n) ← op(A)·op(B) + β·C` where `op(A)` is m×k and `op(B)`
/// is k×n. A transposed operand is stored as its transpose, row-major.
#[allow(clippy::too_many_arguments)]
pub fn matmul<S: Scalar>(
    ta: bool,
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    b: &[S],
    c: &mut [S],
    beta: S,
) {
    assert!(
        a.len() >= m * k && b.len() >= k * n && c.len() >= m * n,
        "matmul operand too small"
    );
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            S::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dense tensor with an explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: &[usize], data: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not match shape {shape:?}"
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::new(shape, vec![S::zero(); shape.iter().product()])
    }

    pub fn scalar(v: S) -> Self {
        Tensor::new(&[], vec![v])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Upsample2x {
        x: Var,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    Silu {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddChannels {
        x: Var,
        v: Var,
    },
    Scale {
        x: Var,
        s: S,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Sum {
        x: Var,
    },
    Mse {
        a: Var,
        b: Var,
    },
}

#[derive(Debug)]
struct Node<S> {
    shape: Vec<usize>,
    value: Vec<S>,
    op: Op<S>,
    needs_grad: bool,
    grad: Option<Vec<S>>,
}

pub const GROUP_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
}

/// `(N, C, spatial)` view of a tensor with at least two dimensions.
fn ncs(shape: &[usize]) -> Option<(usize, usize, usize)> {
    (shape.len() >= 2).then(|| (shape[0], shape[1], shape[2..].iter().product()))
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (size + 2 * pad).checked_sub(k).map(|d| d / stride + 1)
}

struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.ci * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `ox` whose input column `ox·stride + kx − pad` lies
    /// inside the image.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).div_ceil(self.stride);
        let hi = (self.w + self.pad)
            .saturating_sub(kx)
            .div_ceil(self.stride)
            .min(self.wo);
        (lo.min(hi), hi)
    }

    fn im2col<S: Scalar>(&self, x: &[S], out: &mut [S]) {
        let (k, cols, st) = (self.k, self.cols(), self.stride);
        for c in 0..self.ci {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut out[((c * k + ky) * k + kx) * cols..][..cols];
                    let (lo, hi) = self.valid_cols(kx);
                    for oy in 0..self.ho {
                        let iy = (oy * st + ky) as isize - self.pad as isize;
                        let dst = &mut row[oy * self.wo..][..self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            dst.fill(S::zero());
                            continue;
                        }
                        let src = &x[(c * self.h + iy as usize) * self.w..][..self.w];
                        dst[..lo].fill(S::zero());
                        dst[hi..].fill(S::zero());
                        if lo < hi {
                            let start = lo * st + kx - self.pad;
                            if st == 1 {
                                dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                            } else {
                                for (j, d) in dst[lo..hi].iter_mut().enumerate() {
                                    *d = src[start + j * st];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<S: Scalar>(&self, cols_buf: &[S], dx: &mut [S]) {
        let (k, cols, st) = (self.k, self.cols(), self.stride);
        for c in 0..self.ci {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols_buf[((c * k + ky) * k + kx) * cols..][..cols];
                    let (lo, hi) = self.valid_cols(kx);
                    if lo >= hi {
                        continue;
                    }
                    let start = lo * st + kx - self.pad;
                    for oy in 0..self.ho {
                        let iy = (oy * st + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut dx[(c * self.h + iy as usize) * self.w..][..self.w];
                        let src = &row[oy * self.wo + lo..oy * self.wo + hi];
                        if st == 1 {
                            add_into(&mut dst[start..start + hi - lo], src);
                        } else {
                            for (j, &v) in src.iter().enumerate() {
                                let d = &mut dst[start + j * st];
                                *d = *d + v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<S>, op: Op<S>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<S> {
        &self.nodes[v.0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).needs_grad)
    }

    /// A differentiable leaf (a parameter or an input under test).
    pub fn param(&mut self, t: Tensor<S>) -> Var {
        self.push(t.shape, t.data, Op::Leaf, true)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t.shape, t.data, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<S> {
        Tensor::new(self.shape(v), self.value(v).to_vec())
    }

    /// Accumulated gradient of a differentiable leaf, once backward has run.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.node(v).grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// 2-D convolution of `x: [N,Ci,H,W]` with `w: [Co,Ci,k,k]` and optional
    /// bias `[Co]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, AutodiffError> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 4 || ws.len() != 4 || ws[2] != ws[3] {
            return shape_err(
                "conv2d",
                format!("need x [N,C,H,W] and square w [O,C,k,k], got {xs:?} and {ws:?}"),
            );
        }
        if xs[1] != ws[1] {
            return shape_err(
                "conv2d",
                format!("input has {} channels, kernel expects {}", xs[1], ws[1]),
            );
        }
        if stride == 0 {
            return shape_err("conv2d", "stride must be positive");
        }
        let (n, co) = (xs[0], ws[0]);
        let (Some(ho), Some(wo)) = (
            conv_out(xs[2], ws[2], stride, pad),
            conv_out(xs[3], ws[3], stride, pad),
        ) else {
            return shape_err(
                "conv2d",
                format!("kernel {} larger than padded input {xs:?}", ws[2]),
            );
        };
        if let Some(b) = b {
            if self.shape(b) != [co] {
                return shape_err(
                    "conv2d",
                    format!("bias shape {:?}, expected [{co}]", self.shape(b)),
                );
            }
        }
        let g = ConvGeom {
            ci: xs[1],
            h: xs[2],
            w: xs[3],
            k: ws[2],
            stride,
            pad,
            ho,
            wo,
        };
        let (xv, wv) = (self.value(x), self.value(w));
        let bv = b.map(|b| self.value(b));
        let in_len = g.ci * g.h * g.w;
        let out_len = co * g.cols();
        let mut out = vec![S::zero(); n * out_len];
        let scratch = || vec![S::zero(); g.rows() * g.cols()];
        out.par_chunks_mut(out_len.max(1))
            .enumerate()
            .for_each_init(scratch, |cols, (i, y)| {
                g.im2col(&xv[i * in_len..][..in_len], cols);
                matmul(false, false, co, g.rows(), g.cols(), wv, cols, y, S::zero());
                if let Some(bv) = bv {
                    for (o, row) in y.chunks_mut(g.cols()).enumerate() {
                        row.iter_mut().for_each(|v| *v = *v + bv[o]);
                    }
                }
            });
        let needs = self.needs(&[x, w]) || b.is_some_and(|b| self.node(b).needs_grad);
        Ok(self.push(
            vec![n, co, ho, wo],
            out,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            needs,
        ))
    }

    /// Nearest-neighbour ×2 upsampling of `[N,C,H,W]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return shape_err("upsample2x", format!("need [N,C,H,W], got {s:?}"));
        }
        let (h, w) = (s[2], s[3]);
        let xv = self.value(x);
        let mut out = vec![S::zero(); xv.len() * 4];
        for (plane, dst) in xv.chunks(h * w).zip(out.chunks_mut(4 * h * w)) {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = plane[(y / 2) * w + xx / 2];
                }
            }
        }
        let needs = self.needs(&[x]);
        Ok(self.push(
            vec![s[0], s[1], 2 * h, 2 * w],
            out,
            Op::Upsample2x { x },
            needs,
        ))
    }

    /// Group normalization over `(channels in group) × spatial` with
    /// per-channel affine `gamma`, `beta` of shape `[C]`.
    pub fn group_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
    ) -> Result<Var, AutodiffError> {
        let s = self.shape(x).to_vec();
        let Some((n, c, sp)) = ncs(&s) else {
            return shape_err("group_norm", format!("need at least [N,C], got {s:?}"));
        };
        if groups == 0 || c % groups != 0 {
            return shape_err(
                "group_norm",
                format!("{c} channels not divisible into {groups} groups"),
            );
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return shape_err("group_norm", format!("affine parameters must be [{c}]"));
        }
        let cg = c / groups;
        let m = cg * sp;
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let mut mean = vec![0.0; n * groups];
        let mut rstd = vec![0.0; n * groups];
        let mut out = vec![S::zero(); xv.len()];
        for i in 0..n * groups {
            let seg = &xv[i * m..][..m];
            let mu = seg.iter().map(|&v| wide(v)).sum::<f64>() / m as f64;
            let var = seg.iter().map(|&v| (wide(v) - mu).powi(2)).sum::<f64>() / m as f64;
            let r = 1.0 / (var + GROUP_NORM_EPS).sqrt();
            mean[i] = mu;
            rstd[i] = r;
            let g0 = (i % groups) * cg;
            for (j, o) in out[i * m..][..m].iter_mut().enumerate() {
                let ch = g0 + j / sp;
                *o = cast((wide(seg[j]) - mu) * r * wide(gv[ch]) + wide(bv[ch]));
            }
        }
        let needs = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            s,
            out,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            },
            needs,
        ))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v * sigmoid(v)).collect();
        let needs = self.needs(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Silu { x }, needs)
    }

    /// `x: [N,F]`, `w: [O,F]`, `b: [O]` → `x·wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AutodiffError> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return shape_err("linear", format!("x {xs:?} incompatible with w {ws:?}"));
        }
        let (n, f, o) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return shape_err(
                    "linear",
                    format!("bias shape {:?}, expected [{o}]", self.shape(b)),
                );
            }
        }
        let mut out = vec![S::zero(); n * o];
        matmul(
            false,
            true,
            n,
            f,
            o,
            self.value(x),
            self.value(w),
            &mut out,
            S::zero(),
        );
        if let Some(b) = b {
            let bv = self.value(b);
            for row in out.chunks_mut(o) {
                add_into(row, bv);
            }
        }
        let needs = self.needs(&[x, w]) || b.is_some_and(|b| self.node(b).needs_grad);
        Ok(self.push(vec![n, o], out, Op::Linear { x, w, b }, needs))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&p, &q)| p + q)
            .collect();
        let needs = self.needs(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add { a, b }, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&p, &q)| p * q)
            .collect();
        let needs = self.needs(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul { a, b }, needs))
    }

    /// Adds `v: [N,C]` to every spatial position of `x: [N,C,...]`.
    pub fn add_channels(&mut self, x: Var, v: Var) -> Result<Var, AutodiffError> {
        let xs = self.shape(x).to_vec();
        let Some((n, c, sp)) = ncs(&xs) else {
            return shape_err("add_channels", format!("need at least [N,C], got {xs:?}"));
        };
        if self.shape(v) != [n, c] {
            return shape_err(
                "add_channels",
                format!("vector shape {:?}, expected [{n}, {c}]", self.shape(v)),
            );
        }
        let vv = self.value(v);
        let mut out = self.value(x).to_vec();
        for (i, plane) in out.chunks_mut(sp.max(1)).enumerate() {
            plane.iter_mut().for_each(|p| *p = *p + vv[i]);
        }
        let needs = self.needs(&[x, v]);
        Ok(self.push(xs, out, Op::AddChannels { x, v }, needs))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s: S = cast(s);
        let out = self.value(x).iter().map(|&v| v * s).collect();
        let needs = self.needs(&[x]);
        self.push(self.shape(x).to_vec(), out, Op::Scale { x, s }, needs)
    }

    /// Concatenates along dimension 1; all other dimensions must agree.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let ok = sa.len() >= 2 && sa.len() == sb.len() && sa[0] == sb[0] && sa[2..] == sb[2..];
        if !ok {
            return shape_err(
                "concat",
                format!("{sa:?} and {sb:?} differ outside dimension 1"),
            );
        }
        let (n, ca, sp) = ncs(&sa).expect("checked rank");
        let cb = sb[1];
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for i in 0..n {
            out.extend_from_slice(&av[i * ca * sp..][..ca * sp]);
            out.extend_from_slice(&bv[i * cb * sp..][..cb * sp]);
        }
        let mut shape = sa;
        shape[1] = ca + cb;
        let needs = self.needs(&[a, b]);
        Ok(self.push(shape, out, Op::Concat { a, b }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().map(|&v| wide(v)).sum::<f64>();
        let needs = self.needs(&[x]);
        self.push(vec![], vec![cast(total)], Op::Sum { x }, needs)
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mse", a, b)?;
        let n = self.value(a).len().max(1) as f64;
        let total = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&p, &q)| (wide(p) - wide(q)).powi(2))
            .sum::<f64>();
        let needs = self.needs(&[a, b]);
        Ok(self.push(vec![], vec![cast(total / n)], Op::Mse { a, b }, needs))
    }

    /// Propagates d(loss)/d(node) to every differentiable leaf, adding into
    /// any gradient already held there.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.node(loss).value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);
        let mut leaf_grads = Vec::new();
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                leaf_grads.push((id, g));
                continue;
            }
            for (parent, delta) in self.local_backward(node, &g) {
                if !self.nodes[parent.0].needs_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => add_into(acc, &delta),
                    slot => *slot = Some(delta),
                }
            }
        }
        for (id, g) in leaf_grads {
            match &mut self.nodes[id].grad {
                Some(acc) => add_into(acc, &g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.node(v).needs_grad
    }

    /// Gradients of one node's inputs given the gradient of its output.
    fn local_backward(&self, node: &Node<S>, g: &[S]) -> Vec<(Var, Vec<S>)> {
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let geo = ConvGeom {
                    ci: xs[1],
                    h: xs[2],
                    w: xs[3],
                    k: ws[2],
                    stride: *stride,
                    pad: *pad,
                    ho: node.shape[2],
                    wo: node.shape[3],
                };
                let (n, co) = (xs[0], ws[0]);
                let (xv, wv) = (self.value(*x), self.value(*w));
                let in_len = geo.ci * geo.h * geo.w;
                let out_len = co * geo.cols();
                let (want_x, want_w) = (self.wants(*x), self.wants(*w));
                let per_sample: Vec<(Vec<S>, Vec<S>)> = (0..n)
                    .into_par_iter()
                    .map_init(
                        || vec![S::zero(); geo.rows() * geo.cols()],
                        |cols, i| {
                            let gy = &g[i * out_len..][..out_len];
                            let mut dx = Vec::new();
                            let mut dw = Vec::new();
                            if want_w {
                                geo.im2col(&xv[i * in_len..][..in_len], cols);
                                dw = vec![S::zero(); co * geo.rows()];
                                matmul(
                                    false,
                                    true,
                                    co,
                                    geo.cols(),
                                    geo.rows(),
                                    gy,
                                    cols,
                                    &mut dw,
                                    S::zero(),
                                );
                            }
                            if want_x {
                                matmul(
                                    true,
                                    false,
                                    geo.rows(),
                                    co,
                                    geo.cols(),
                                    wv,
                                    gy,
                                    cols,
                                    S::zero(),
                                );
                                dx = vec![S::zero(); in_len];
                                geo.col2im(cols, &mut dx);
                            }
                            (dx, dw)
                        },
                    )
                    .collect();
                if want_x {
                    let mut dx = Vec::with_capacity(n * in_len);
                    for (d, _) in &per_sample {
                        dx.extend_from_slice(d);
                    }
                    out.push((*x, dx));
                }
                if want_w {
                    let mut dw = vec![S::zero(); co * geo.rows()];
                    for (_, d) in &per_sample {
                        add_into(&mut dw, d);
                    }
                    out.push((*w, dw));
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    let mut db = vec![0.0f64; co];
                    for i in 0..n {
                        for (o, row) in g[i * out_len..][..out_len].chunks(geo.cols()).enumerate() {
                            db[o] += row.iter().map(|&v| wide(v)).sum::<f64>();
                        }
                    }
                    out.push((b, db.into_iter().map(cast).collect()));
                }
            }
            Op::Upsample2x { x } => {
                let s = self.shape(*x);
                let (h, w) = (s[2], s[3]);
                let mut dx = vec![S::zero(); self.value(*x).len()];
                for (dplane, gplane) in dx.chunks_mut(h * w).zip(g.chunks(4 * h * w)) {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            let d = &mut dplane[(y / 2) * w + xx / 2];
                            *d = *d + gplane[y * 2 * w + xx];
                        }
                    }
                }
                out.push((*x, dx));
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            } => {
                let (n, c, sp) = ncs(&node.shape).expect("checked rank");
                let cg = c / groups;
                let m = cg * sp;
                let (xv, gv) = (self.value(*x), self.value(*gamma));
                let mut dx = vec![S::zero(); xv.len()];
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                for i in 0..n * groups {
                    let g0 = (i % groups) * cg;
                    let (mu, r) = (mean[i], rstd[i]);
                    let seg = &xv[i * m..][..m];
                    let gs = &g[i * m..][..m];
                    let (mut s1, mut s2) = (0.0, 0.0);
                    for j in 0..m {
                        let ch = g0 + j / sp;
                        let xhat = (wide(seg[j]) - mu) * r;
                        let gy = wide(gs[j]);
                        dgamma[ch] += gy * xhat;
                        dbeta[ch] += gy;
                        let dxhat = gy * wide(gv[ch]);
                        s1 += dxhat;
                        s2 += dxhat * xhat;
                    }
                    let (s1, s2) = (s1 / m as f64, s2 / m as f64);
                    for j in 0..m {
                        let ch = g0 + j / sp;
                        let xhat = (wide(seg[j]) - mu) * r;
                        let dxhat = wide(gs[j]) * wide(gv[ch]);
                        dx[i * m + j] = cast(r * (dxhat - s1 - xhat * s2));
                    }
                }
                out.push((*x, dx));
                out.push((*gamma, dgamma.into_iter().map(cast).collect()));
                out.push((*beta, dbeta.into_iter().map(cast).collect()));
            }
            Op::Silu { x } => {
                let dx = self
                    .value(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gy)| {
                        let s = sigmoid(v);
                        gy * s * (S::one() + v * (S::one() - s))
                    })
                    .collect();
                out.push((*x, dx));
            }
            Op::Linear { x, w, b } => {
                let (n, f) = (self.shape(*x)[0], self.shape(*x)[1]);
                let o = self.shape(*w)[0];
                if self.wants(*x) {
                    let mut dx = vec![S::zero(); n * f];
                    matmul(false, false, n, o, f, g, self.value(*w), &mut dx, S::zero());
                    out.push((*x, dx));
                }
                if self.wants(*w) {
                    let mut dw = vec![S::zero(); o * f];
                    matmul(true, false, o, n, f, g, self.value(*x), &mut dw, S::zero());
                    out.push((*w, dw));
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    let mut db = vec![0.0f64; o];
                    for row in g.chunks(o) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += wide(v);
                        }
                    }
                    out.push((b, db.into_iter().map(cast).collect()));
                }
            }
            Op::Add { a, b } => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                out.push((*a, g.iter().zip(bv).map(|(&gy, &q)| gy * q).collect()));
                out.push((*b, g.iter().zip(av).map(|(&gy, &p)| gy * p).collect()));
            }
            Op::AddChannels { x, v } => {
                let (n, c, sp) = ncs(&node.shape).expect("checked rank");
                out.push((*x, g.to_vec()));
                let dv = (0..n * c)
                    .map(|i| cast(g[i * sp..][..sp].iter().map(|&q| wide(q)).sum::<f64>()))
                    .collect();
                out.push((*v, dv));
            }
            Op::Scale { x, s } => {
                out.push((*x, g.iter().map(|&gy| gy * *s).collect()));
            }
            Op::Concat { a, b } => {
                let (n, ca, sp) = ncs(self.shape(*a)).expect("checked rank");
                let cb = self.shape(*b)[1];
                let (mut da, mut db) = (
                    Vec::with_capacity(n * ca * sp),
                    Vec::with_capacity(n * cb * sp),
                );
                for chunk in g.chunks((ca + cb) * sp) {
                    da.extend_from_slice(&chunk[..ca * sp]);
                    db.extend_from_slice(&chunk[ca * sp..]);
                }
                out.push((*a, da));
                out.push((*b, db));
            }
            Op::Sum { x } => {
                out.push((*x, vec![g[0]; self.value(*x).len()]));
            }
            Op::Mse { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = 2.0 * wide(g[0]) / av.len().max(1) as f64;
                let da: Vec<S> = av
                    .iter()
                    .zip(bv)
                    .map(|(&p, &q)| cast(k * (wide(p) - wide(q))))
                    .collect();
                let db = da.iter().map(|&d| -d).collect();
                out.push((*a, da));
                out.push((*b, db));
            }
        }
        out
    }
}
