//! Forward and backward kernels on raw tensors. The tape in `autograd` wires
//! these together; nothing here records anything.

use crate::error::{shape_err, Error, Result};
use crate::real::Real;
use crate::tensor::{strides_of, Tensor};

/// Walks every cell of `shape` in row-major order, calling `f(flat, mapped)`
/// where `mapped` is the offset under `mapped_strides` (0 on collapsed axes).
fn for_each_mapped(shape: &[usize], mapped_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let total: usize = shape.iter().product();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let mut idx = vec![0usize; rank];
    let mut mapped = 0usize;
    let inner = shape[rank - 1];
    let inner_stride = mapped_strides[rank - 1];
    let mut flat = 0;
    while flat < total {
        for i in 0..inner {
            f(flat + i, mapped + i * inner_stride);
        }
        flat += inner;
        // odometer over the outer axes
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            mapped += mapped_strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            mapped -= mapped_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

fn reduced_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
        .collect()
}

/// Strides of `small` laid over `full`, zero where `small` has extent 1.
fn broadcast_strides(small: &[usize], full: &[usize]) -> Vec<usize> {
    let s = strides_of(small);
    small
        .iter()
        .zip(full)
        .zip(s)
        .map(|((&a, &f), st)| if a == 1 && f != 1 { 0 } else { st })
        .collect()
}

pub fn validate_axes(rank: usize, axes: &[usize]) -> Result<()> {
    if axes.is_empty() {
        return Err(Error::InvalidArgument("no axes to pool".into()));
    }
    for &a in axes {
        if a >= rank {
            return Err(Error::AxisOutOfRange { axis: a, rank });
        }
    }
    Ok(())
}

/// Mean over `axes`, keeping them as extent-1 axes.
pub fn avg_pool_axes<F: Real>(x: &Tensor<F>, axes: &[usize]) -> Result<Tensor<F>> {
    validate_axes(x.rank(), axes)?;
    if x.is_empty() {
        return Err(Error::EmptyTensor);
    }
    let out_shape = reduced_shape(x.shape(), axes);
    let count: usize = axes
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .iter()
        .map(|&a| x.shape()[a])
        .product();
    let ms = broadcast_strides(&out_shape, x.shape());
    let mut out = vec![F::ZERO; out_shape.iter().product()];
    let xd = x.data();
    for_each_mapped(x.shape(), &ms, |i, j| out[j] += xd[i]);
    let inv = F::ONE / F::from_usize(count);
    for v in &mut out {
        *v *= inv;
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub fn avg_pool_backward<F: Real>(x_shape: &[usize], axes: &[usize], g: &Tensor<F>) -> Tensor<F> {
    let count: usize = axes
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .iter()
        .map(|&a| x_shape[a])
        .product();
    let inv = F::ONE / F::from_usize(count);
    let ms = broadcast_strides(g.shape(), x_shape);
    let mut dx = vec![F::ZERO; x_shape.iter().product()];
    let gd = g.data();
    for_each_mapped(x_shape, &ms, |i, j| dx[i] = gd[j] * inv);
    Tensor::from_parts(x_shape.to_vec(), dx)
}

/// `a` broadcasts against `x` when every axis of `a` is either equal to x's
/// extent or 1.
pub fn check_broadcast(a: &[usize], x: &[usize]) -> Result<()> {
    if a.len() != x.len() || a.iter().zip(x).any(|(&p, &q)| p != q && p != 1) {
        return shape_err(format!("cannot broadcast {a:?} against {x:?}"));
    }
    Ok(())
}

pub fn broadcast_mul<F: Real>(a: &Tensor<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
    check_broadcast(a.shape(), x.shape())?;
    let ms = broadcast_strides(a.shape(), x.shape());
    let (ad, xd) = (a.data(), x.data());
    let mut out = vec![F::ZERO; x.len()];
    for_each_mapped(x.shape(), &ms, |i, j| out[i] = ad[j] * xd[i]);
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Returns (da, dx).
pub fn broadcast_mul_backward<F: Real>(
    a: &Tensor<F>,
    x: &Tensor<F>,
    g: &Tensor<F>,
) -> (Tensor<F>, Tensor<F>) {
    let ms = broadcast_strides(a.shape(), x.shape());
    let (ad, xd, gd) = (a.data(), x.data(), g.data());
    let mut da = vec![F::ZERO; a.len()];
    let mut dx = vec![F::ZERO; x.len()];
    for_each_mapped(x.shape(), &ms, |i, j| {
        da[j] += gd[i] * xd[i];
        dx[i] = gd[i] * ad[j];
    });
    (
        Tensor::from_parts(a.shape().to_vec(), da),
        Tensor::from_parts(x.shape().to_vec(), dx),
    )
}

fn linear_dims<F: Real>(
    w: &Tensor<F>,
    b: Option<&Tensor<F>>,
    x: &Tensor<F>,
) -> Result<(usize, usize, usize)> {
    if w.rank() != 2 {
        return shape_err(format!("linear weight must be rank 2, got {:?}", w.shape()));
    }
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    if x.rank() == 0 || x.shape()[x.rank() - 1] != inp {
        return shape_err(format!(
            "linear expects trailing extent {inp}, input has {:?}",
            x.shape()
        ));
    }
    if let Some(b) = b {
        if b.shape() != [out] {
            return shape_err(format!("bias shape {:?}, expected [{out}]", b.shape()));
        }
    }
    Ok((x.len() / inp, inp, out))
}

/// y = W·x + b along the trailing axis.
pub fn linear<F: Real>(w: &Tensor<F>, b: Option<&Tensor<F>>, x: &Tensor<F>) -> Result<Tensor<F>> {
    let (rows, inp, out) = linear_dims(w, b, x)?;
    let (wd, xd) = (w.data(), x.data());
    let mut y = vec![F::ZERO; rows * out];
    for m in 0..rows {
        let xr = &xd[m * inp..(m + 1) * inp];
        for o in 0..out {
            let wr = &wd[o * inp..(o + 1) * inp];
            let mut acc = b.map_or(F::ZERO, |b| b.data()[o]);
            for i in 0..inp {
                acc += wr[i] * xr[i];
            }
            y[m * out + o] = acc;
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out;
    Ok(Tensor::from_parts(shape, y))
}

/// Returns (dw, db, dx).
pub fn linear_backward<F: Real>(
    w: &Tensor<F>,
    x: &Tensor<F>,
    g: &Tensor<F>,
) -> (Tensor<F>, Tensor<F>, Tensor<F>) {
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    let rows = x.len() / inp;
    let (wd, xd, gd) = (w.data(), x.data(), g.data());
    let mut dw = vec![F::ZERO; out * inp];
    let mut db = vec![F::ZERO; out];
    let mut dx = vec![F::ZERO; x.len()];
    for m in 0..rows {
        let xr = &xd[m * inp..(m + 1) * inp];
        let dxr = &mut dx[m * inp..(m + 1) * inp];
        for o in 0..out {
            let go = gd[m * out + o];
            if go == F::ZERO {
                continue;
            }
            db[o] += go;
            let wr = &wd[o * inp..(o + 1) * inp];
            let dwr = &mut dw[o * inp..(o + 1) * inp];
            for i in 0..inp {
                dwr[i] += go * xr[i];
                dxr[i] += go * wr[i];
            }
        }
    }
    (
        Tensor::from_parts(w.shape().to_vec(), dw),
        Tensor::from_parts(vec![out], db),
        Tensor::from_parts(x.shape().to_vec(), dx),
    )
}

#[inline]
pub fn sigmoid_scalar<F: Real>(v: F) -> F {
    if v >= F::ZERO {
        F::ONE / (F::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (F::ONE + e)
    }
}

/// Stride and zero padding of a 3-D convolution over (T, H, W).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dGeometry {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dGeometry {
    pub fn new(stride: [usize; 3], padding: [usize; 3]) -> Self {
        Conv3dGeometry { stride, padding }
    }

    /// Output extent along one axis, or an error when the kernel does not fit.
    pub fn out_extent(&self, axis: usize, input: usize, kernel: usize) -> Result<usize> {
        let s = self.stride[axis];
        if s == 0 {
            return Err(Error::InvalidArgument("conv stride must be positive".into()));
        }
        let padded = input + 2 * self.padding[axis];
        if kernel == 0 || padded < kernel {
            return shape_err(format!(
                "kernel {kernel} larger than padded input {padded} on axis {axis}"
            ));
        }
        Ok((padded - kernel) / s + 1)
    }
}

struct ConvDims {
    n: usize,
    t: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kt: usize,
    kh: usize,
    kw: usize,
    to: usize,
    ho: usize,
    wo: usize,
}

fn conv_dims<F: Real>(
    x: &Tensor<F>,
    k: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    geo: &Conv3dGeometry,
) -> Result<ConvDims> {
    if x.rank() != 5 || k.rank() != 5 {
        return shape_err(format!(
            "conv3d expects rank-5 input and kernel, got {:?} and {:?}",
            x.shape(),
            k.shape()
        ));
    }
    let xs = x.shape();
    let ks = k.shape();
    if ks[1] != xs[2] {
        return shape_err(format!(
            "conv3d kernel expects {} input channels, input has {}",
            ks[1], xs[2]
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [ks[0]] {
            return shape_err(format!("conv bias shape {:?}, expected [{}]", b.shape(), ks[0]));
        }
    }
    Ok(ConvDims {
        n: xs[0],
        t: xs[1],
        ci: xs[2],
        h: xs[3],
        w: xs[4],
        co: ks[0],
        kt: ks[2],
        kh: ks[3],
        kw: ks[4],
        to: geo.out_extent(0, xs[1], ks[2])?,
        ho: geo.out_extent(1, xs[3], ks[3])?,
        wo: geo.out_extent(2, xs[4], ks[4])?,
    })
}

/// Valid output range along one axis for kernel tap `k`: outputs `o` with
/// `0 <= o*s + k - p < len`.
#[inline]
fn tap_range(out: usize, len: usize, s: usize, k: usize, p: usize) -> (usize, usize) {
    let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
    // largest o with o*s + k - p <= len - 1
    let hi = if len + p < k + 1 {
        0
    } else {
        ((len + p - k - 1) / s + 1).min(out)
    };
    (lo.min(hi), hi)
}

/// Unrolled input patches of one sample: row `(ci, a, bh, bw)` holds the
/// input value under that kernel tap for every output position
/// `(to, ho, wo)`, zero where the tap falls in the padding.
struct Cols<'a> {
    d: &'a ConvDims,
    geo: &'a Conv3dGeometry,
    hr: Vec<(usize, usize)>,
    wr: Vec<(usize, usize)>,
}

impl<'a> Cols<'a> {
    fn new(d: &'a ConvDims, geo: &'a Conv3dGeometry) -> Self {
        let hr = (0..d.kh).map(|a| tap_range(d.ho, d.h, geo.stride[1], a, geo.padding[1])).collect();
        let wr = (0..d.kw).map(|a| tap_range(d.wo, d.w, geo.stride[2], a, geo.padding[2])).collect();
        Cols { d, geo, hr, wr }
    }

    fn rows(&self) -> usize {
        self.d.ci * self.d.kt * self.d.kh * self.d.kw
    }

    fn row_len(&self) -> usize {
        self.d.to * self.d.ho * self.d.wo
    }

    /// Input frame index feeding output frame `to` through temporal tap `a`.
    fn frame(&self, to: usize, a: usize) -> Option<usize> {
        let ti = to * self.geo.stride[0] + a;
        let pt = self.geo.padding[0];
        (ti >= pt && ti - pt < self.d.t).then(|| ti - pt)
    }

    /// Visits every in-bounds (row, column, input offset) triple of sample
    /// `n`, with the input offset relative to the start of `x`.
    fn for_each<V: FnMut(usize, usize, usize)>(&self, n: usize, mut visit: V) {
        let d = self.d;
        let [_, sh, sw] = self.geo.stride;
        let [_, ph, pw] = self.geo.padding;
        let plane = d.ho * d.wo;
        let mut row = 0;
        for ci in 0..d.ci {
            for a in 0..d.kt {
                for bh in 0..d.kh {
                    for bw in 0..d.kw {
                        let (hlo, hhi) = self.hr[bh];
                        let (wlo, whi) = self.wr[bw];
                        for to in 0..d.to {
                            let Some(ti) = self.frame(to, a) else { continue };
                            let ib = ((n * d.t + ti) * d.ci + ci) * d.h * d.w;
                            for oh in hlo..hhi {
                                let ir = ib + (oh * sh + bh - ph) * d.w;
                                let cb = to * plane + oh * d.wo;
                                for ow in wlo..whi {
                                    visit(row, cb + ow, ir + ow * sw + bw - pw);
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn fill<F: Real>(&self, n: usize, x: &[F], cols: &mut [F]) {
        cols.fill(F::ZERO);
        let len = self.row_len();
        self.for_each(n, |r, c, i| cols[r * len + c] = x[i]);
    }

    fn scatter_add<F: Real>(&self, n: usize, cols: &[F], dx: &mut [F]) {
        let len = self.row_len();
        self.for_each(n, |r, c, i| dx[i] += cols[r * len + c]);
    }
}

const MR: usize = 4;
const NR: usize = 16;

/// `c += a · b` for row-major `a` (m × k), `b` (k × n) and `c` (m × n).
/// Full 4 × 16 tiles accumulate in registers; ragged edges take a plain loop.
/// The summation order depends only on the shapes.
fn gemm<F: Real>(m: usize, n: usize, k: usize, a: &[F], b: &[F], c: &mut [F]) {
    let (m_full, n_full) = (m - m % MR, n - n % NR);
    for i0 in (0..m_full).step_by(MR) {
        for j0 in (0..n_full).step_by(NR) {
            let mut acc = [[F::ZERO; NR]; MR];
            for p in 0..k {
                let brow: &[F; NR] = b[p * n + j0..p * n + j0 + NR].try_into().expect("tile width");
                for (r, accr) in acc.iter_mut().enumerate() {
                    let av = a[(i0 + r) * k + p];
                    for (slot, &bv) in accr.iter_mut().zip(brow) {
                        *slot += av * bv;
                    }
                }
            }
            for (r, accr) in acc.iter().enumerate() {
                let crow = &mut c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR];
                for (cv, &v) in crow.iter_mut().zip(accr) {
                    *cv += v;
                }
            }
        }
    }
    let edge = |c: &mut [F], i: usize, j: usize| {
        let mut acc = F::ZERO;
        for p in 0..k {
            acc += a[i * k + p] * b[p * n + j];
        }
        c[i * n + j] += acc;
    };
    for i in 0..m_full {
        for j in n_full..n {
            edge(c, i, j);
        }
    }
    for i in m_full..m {
        for j in 0..n {
            edge(c, i, j);
        }
    }
}

fn transpose<F: Real>(rows: usize, cols: usize, src: &[F], dst: &mut [F]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Cross-correlation over (T, H, W) for inputs laid out (N, T, C, H, W) and
/// kernels (C_out, C_in, kT, kH, kW). Zero padding, no kernel flip.
pub fn conv3d<F: Real>(
    x: &Tensor<F>,
    k: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    geo: &Conv3dGeometry,
) -> Result<Tensor<F>> {
    let d = conv_dims(x, k, bias, geo)?;
    let cols_of = Cols::new(&d, geo);
    let (rows, len) = (cols_of.rows(), cols_of.row_len());
    let plane = d.ho * d.wo;
    let mut cols = vec![F::ZERO; rows * len];
    let mut acc = vec![F::ZERO; d.co * len];
    let mut out = vec![F::ZERO; d.n * d.to * d.co * plane];
    for n in 0..d.n {
        cols_of.fill(n, x.data(), &mut cols);
        for (co, o) in acc.chunks_exact_mut(len).enumerate() {
            o.fill(bias.map_or(F::ZERO, |b| b.data()[co]));
        }
        gemm(d.co, len, rows, k.data(), &cols, &mut acc);
        for to in 0..d.to {
            for co in 0..d.co {
                let dst = ((n * d.to + to) * d.co + co) * plane;
                let src = co * len + to * plane;
                out[dst..dst + plane].copy_from_slice(&acc[src..src + plane]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![d.n, d.to, d.co, d.ho, d.wo], out))
}

/// Returns (dx, dk, db).
pub fn conv3d_backward<F: Real>(
    x: &Tensor<F>,
    k: &Tensor<F>,
    g: &Tensor<F>,
    geo: &Conv3dGeometry,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (dx, dk, db) = conv3d_backward_parts(x, k, g, geo, true)?;
    Ok((dx.expect("requested"), dk, db))
}

/// As [`conv3d_backward`], skipping the input gradient unless `need_dx`.
pub fn conv3d_backward_parts<F: Real>(
    x: &Tensor<F>,
    k: &Tensor<F>,
    g: &Tensor<F>,
    geo: &Conv3dGeometry,
    need_dx: bool,
) -> Result<(Option<Tensor<F>>, Tensor<F>, Tensor<F>)> {
    let d = conv_dims(x, k, None, geo)?;
    let expected = [d.n, d.to, d.co, d.ho, d.wo];
    if g.shape() != expected {
        return shape_err(format!("conv3d gradient shape {:?}, expected {expected:?}", g.shape()));
    }
    let cols_of = Cols::new(&d, geo);
    let (rows, len) = (cols_of.rows(), cols_of.row_len());
    let plane = d.ho * d.wo;
    let gd = g.data();
    let mut dx = vec![F::ZERO; if need_dx { x.len() } else { 0 }];
    let mut dk = vec![F::ZERO; k.len()];
    let mut db = vec![F::ZERO; d.co];
    let mut cols = vec![F::ZERO; rows * len];
    let mut cols_t = vec![F::ZERO; rows * len];
    let mut dcols = vec![F::ZERO; rows * len];
    let mut gn = vec![F::ZERO; d.co * len];
    let mut k_t = vec![F::ZERO; k.len()];
    transpose(d.co, rows, k.data(), &mut k_t);
    for n in 0..d.n {
        for to in 0..d.to {
            for co in 0..d.co {
                let src = ((n * d.to + to) * d.co + co) * plane;
                let dst = co * len + to * plane;
                gn[dst..dst + plane].copy_from_slice(&gd[src..src + plane]);
            }
        }
        for (co, grow) in gn.chunks_exact(len).enumerate() {
            db[co] += grow.iter().copied().sum::<F>();
        }
        cols_of.fill(n, x.data(), &mut cols);
        transpose(rows, len, &cols, &mut cols_t);
        gemm(d.co, rows, len, &gn, &cols_t, &mut dk);
        if need_dx {
            dcols.fill(F::ZERO);
            gemm(rows, len, d.co, &k_t, &gn, &mut dcols);
            cols_of.scatter_add(n, &dcols, &mut dx);
        }
    }
    Ok((
        need_dx.then(|| Tensor::from_parts(x.shape().to_vec(), dx)),
        Tensor::from_parts(k.shape().to_vec(), dk),
        Tensor::from_parts(vec![d.co], db),
    ))
}

/// Mean cross-entropy of softmax(logits) against `labels`. Returns the loss
/// and the row-wise softmax probabilities.
pub fn softmax_cross_entropy<F: Real>(logits: &Tensor<F>, labels: &[usize]) -> Result<(F, Vec<F>)> {
    if logits.rank() != 2 {
        return shape_err(format!("logits must be (N, K), got {:?}", logits.shape()));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return shape_err(format!("{} labels for {n} rows", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    let ld = logits.data();
    let mut probs = vec![F::ZERO; n * k];
    let mut total = F::ZERO;
    for (r, &label) in labels.iter().enumerate() {
        let row = &ld[r * k..(r + 1) * k];
        let m = row.iter().copied().fold(row[0], F::max);
        let mut z = F::ZERO;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            probs[r * k + j] = e;
            z += e;
        }
        for p in &mut probs[r * k..(r + 1) * k] {
            *p /= z;
        }
        // -log softmax = log z - (v - m)
        total += z.ln() - (row[label] - m);
    }
    Ok((total / F::from_usize(n), probs))
}
