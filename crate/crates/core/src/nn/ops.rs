//! Stateless forward and backward kernels. Layers in [`super::layers`] wrap
//! these with parameter storage and activation caches.

use super::gemm::{gemm_abt_acc, gemm_acc, row_sums_acc, transpose, TILE_COLS};
use super::{NnError, Padding, Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
    pad_t: usize,
    pad_l: usize,
}

impl ConvGeom {
    fn new(
        op: &'static str,
        input: Shape,
        out_c: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self, NnError> {
        if stride == 0 {
            return Err(NnError::InvalidConfig(format!("{op}: stride must be positive")));
        }
        let (out_h, pad_t) = padding.resolve(input.h, kh, stride).ok_or(NnError::SpatialUnderflow {
            op,
            size: input.h,
            kernel: kh,
        })?;
        let (out_w, pad_l) = padding.resolve(input.w, kw, stride).ok_or(NnError::SpatialUnderflow {
            op,
            size: input.w,
            kernel: kw,
        })?;
        Ok(Self {
            in_c: input.c,
            in_h: input.h,
            in_w: input.w,
            out_c,
            kh,
            kw,
            stride,
            out_h,
            out_w,
            pad_t,
            pad_l,
        })
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_plane(&self) -> usize {
        self.in_h * self.in_w
    }

    fn patch(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    /// Output columns `ox` whose input column `ox*stride + kx - pad_l` is in bounds.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        valid_range(self.out_w, self.in_w, self.stride, kx, self.pad_l)
    }

    fn valid_rows(&self, ky: usize) -> (usize, usize) {
        valid_range(self.out_h, self.in_h, self.stride, ky, self.pad_t)
    }
}

fn valid_range(out_len: usize, in_len: usize, stride: usize, tap: usize, pad: usize) -> (usize, usize) {
    // need 0 <= o*stride + tap - pad < in_len
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    let limit = in_len + pad;
    let hi = if limit > tap { ((limit - tap - 1) / stride + 1).min(out_len) } else { 0 };
    (lo.min(hi), hi)
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let p = g.out_plane();
    col.iter_mut().for_each(|v| *v = T::zero());
    for ci in 0..g.in_c {
        let plane = &x[ci * g.in_plane()..(ci + 1) * g.in_plane()];
        for ky in 0..g.kh {
            let (oy0, oy1) = g.valid_rows(ky);
            for kx in 0..g.kw {
                let (ox0, ox1) = g.valid_cols(kx);
                let row = &mut col[((ci * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad_t;
                    for ox in ox0..ox1 {
                        let ix = ox * g.stride + kx - g.pad_l;
                        row[oy * g.out_w + ox] = plane[iy * g.in_w + ix];
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.out_plane();
    for ci in 0..g.in_c {
        let plane = &mut dx[ci * g.in_plane()..(ci + 1) * g.in_plane()];
        for ky in 0..g.kh {
            let (oy0, oy1) = g.valid_rows(ky);
            for kx in 0..g.kw {
                let (ox0, ox1) = g.valid_cols(kx);
                let row = &col[((ci * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad_t;
                    for ox in ox0..ox1 {
                        let ix = ox * g.stride + kx - g.pad_l;
                        plane[iy * g.in_w + ix] += row[oy * g.out_w + ox];
                    }
                }
            }
        }
    }
}

fn check_conv_weights(op: &'static str, input: Shape, weights: Shape, bias: Option<&[impl Scalar]>) -> Result<(), NnError> {
    if weights.c != input.c {
        return Err(NnError::ShapeMismatch {
            op,
            dim: "input channels",
            expected: weights.c,
            actual: input.c,
        });
    }
    if let Some(b) = bias {
        if b.len() != weights.n {
            return Err(NnError::ShapeMismatch {
                op,
                dim: "bias length",
                expected: weights.n,
                actual: b.len(),
            });
        }
    }
    Ok(())
}

/// Cross-correlation of `input (N, Cin, H, W)` with `weights (Cout, Cin, kh, kw)`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&[T]>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>, NnError> {
    let ws = weights.shape();
    check_conv_weights("conv2d", input.shape(), ws, bias)?;
    let g = ConvGeom::new("conv2d", input.shape(), ws.n, ws.h, ws.w, stride, padding)?;
    let n = input.shape().n;
    let p = g.out_plane();
    let k = g.patch();
    let mut out = Tensor::zeros(Shape::new(n, g.out_c, g.out_h, g.out_w));
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for i in 0..n {
        let x = input.item(i);
        let cols: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut col);
            &col
        };
        let y = out.item_mut(i);
        gemm_acc(weights.data(), cols, y, g.out_c, k, p);
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                y[co * p..(co + 1) * p].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    padding: Padding,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>, NnError> {
    let ws = weights.shape();
    check_conv_weights("conv2d_backward", input.shape(), ws, None::<&[T]>)?;
    let g = ConvGeom::new("conv2d_backward", input.shape(), ws.n, ws.h, ws.w, stride, padding)?;
    let expected = Shape::new(input.shape().n, g.out_c, g.out_h, g.out_w);
    expect_shape("conv2d_backward", expected, grad_out.shape())?;
    let n = input.shape().n;
    let p = g.out_plane();
    let k = g.patch();
    let w_t = transpose(weights.data(), g.out_c, k);
    let mut dx = Tensor::zeros(input.shape());
    let mut dw = vec![T::zero(); g.out_c * k];
    let mut db = vec![T::zero(); g.out_c];
    let mut col = vec![T::zero(); k * p];
    let mut dcol = vec![T::zero(); k * p];
    for i in 0..n {
        let dy = grad_out.item(i);
        row_sums_acc(dy, p, &mut db);
        let x = input.item(i);
        let cols: &[T] = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut col);
            &col
        };
        // Both routes sum each weight gradient over ascending positions.
        if k >= TILE_COLS {
            gemm_acc(dy, &transpose(cols, k, p), &mut dw, g.out_c, p, k);
        } else {
            gemm_abt_acc(dy, cols, &mut dw, g.out_c, p, k);
        }

        if g.is_pointwise() {
            gemm_acc(&w_t, dy, dx.item_mut(i), k, g.out_c, p);
        } else {
            dcol.iter_mut().for_each(|v| *v = T::zero());
            gemm_acc(&w_t, dy, &mut dcol, k, g.out_c, p);
            col2im(&dcol, &g, dx.item_mut(i));
        }
    }
    Ok(ConvGrads {
        input: dx,
        weights: dw,
        bias: db,
    })
}

fn expect_shape(op: &'static str, expected: Shape, actual: Shape) -> Result<(), NnError> {
    if expected == actual {
        return Ok(());
    }
    let (dim, e, a) = if expected.n != actual.n {
        ("batch", expected.n, actual.n)
    } else if expected.c != actual.c {
        ("channels", expected.c, actual.c)
    } else if expected.h != actual.h {
        ("height", expected.h, actual.h)
    } else {
        ("width", expected.w, actual.w)
    };
    Err(NnError::ShapeMismatch {
        op,
        dim,
        expected: e,
        actual: a,
    })
}

/// Per-channel spatial convolution; `weights` are `(C, 1, kh, kw)`, same padding.
pub fn depthwise_conv2d<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, stride: usize) -> Result<Tensor<T>, NnError> {
    let s = input.shape();
    let ws = weights.shape();
    check_depthwise("depthwise_conv2d", s, ws)?;
    let g = ConvGeom::new("depthwise_conv2d", s, s.c, ws.h, ws.w, stride, Padding::Same)?;
    let pg = PhaseGrid::new(&g);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, g.out_h, g.out_w));
    let taps = g.kh * g.kw;
    let out_plane = g.out_plane();
    let mut grid = vec![T::zero(); pg.len()];
    let mut wide = vec![T::zero(); pg.span];
    for i in 0..s.n {
        for c in 0..s.c {
            pg.fill(input.plane(i, c), &g, &mut grid);
            let w = &weights.data()[c * taps..(c + 1) * taps];
            wide.iter_mut().for_each(|v| *v = T::zero());
            for (tap, &wv) in w.iter().enumerate() {
                let src = &grid[pg.tap_offset(&g, tap)..][..pg.span];
                for (yv, &xv) in wide.iter_mut().zip(src) {
                    *yv = *yv + wv * xv;
                }
            }
            let start = (i * s.c + c) * out_plane;
            let y = &mut out.data_mut()[start..start + out_plane];
            for (oy, row) in y.chunks_exact_mut(g.out_w).enumerate() {
                row.copy_from_slice(&wide[oy * pg.width..oy * pg.width + g.out_w]);
            }
        }
    }
    Ok(out)
}

/// A zero-padded input plane split into `stride²` phase planes, so every tap
/// reads the output window as one contiguous run.
///
/// Padded element `(r, q)` lives in phase `(r mod s, q mod s)` at
/// `(r div s, q div s)`. Outputs are indexed in rows of `width`, of which only
/// the first `out_w` columns are real; the rest see zeros.
struct PhaseGrid {
    stride: usize,
    rows: usize,
    width: usize,
    /// Length of the output run each tap touches.
    span: usize,
}

impl PhaseGrid {
    fn new(g: &ConvGeom) -> Self {
        let s = g.stride;
        let rows = ((g.out_h - 1) * s + g.kh).div_ceil(s);
        let width = ((g.out_w - 1) * s + g.kw).div_ceil(s);
        Self {
            stride: s,
            rows,
            width,
            span: (g.out_h - 1) * width + g.out_w,
        }
    }

    fn plane_len(&self) -> usize {
        self.rows * self.width
    }

    fn len(&self) -> usize {
        self.plane_len() * self.stride * self.stride
    }

    fn tap_offset(&self, g: &ConvGeom, tap: usize) -> usize {
        let (ky, kx) = (tap / g.kw, tap % g.kw);
        let s = self.stride;
        let phase = (ky % s) * s + kx % s;
        phase * self.plane_len() + (ky / s) * self.width + kx / s
    }

    /// Calls `f(grid_run, input_columns)` for each contiguous run of one input
    /// row inside the grid; the input columns are those of the run, stepped by the stride.
    fn rows_of(&self, g: &ConvGeom, mut f: impl FnMut(usize, std::iter::StepBy<std::ops::Range<usize>>, usize)) {
        let s = self.stride;
        for iy in 0..g.in_h {
            let r = iy + g.pad_t;
            if r / s >= self.rows {
                break;
            }
            for phase in 0..s {
                let ix0 = (phase + s - g.pad_l % s) % s;
                if ix0 >= g.in_w {
                    continue;
                }
                let b0 = (ix0 + g.pad_l) / s;
                let count = (g.in_w - ix0).div_ceil(s).min(self.width.saturating_sub(b0));
                let at = ((r % s) * s + phase) * self.plane_len() + (r / s) * self.width + b0;
                f(at, (iy * g.in_w + ix0..iy * g.in_w + g.in_w).step_by(s), count);
            }
        }
    }

    fn fill<T: Scalar>(&self, x: &[T], g: &ConvGeom, grid: &mut [T]) {
        grid.iter_mut().for_each(|v| *v = T::zero());
        let s = self.stride;
        self.rows_of(g, |at, cols, count| {
            let k0 = cols.clone().next().unwrap_or(0);
            if s == 1 {
                grid[at..at + count].copy_from_slice(&x[k0..k0 + count]);
            } else {
                for (d, k) in grid[at..at + count].iter_mut().zip(cols) {
                    *d = x[k];
                }
            }
        });
    }

    /// Inverse of [`fill`](Self::fill) for the pixels that exist in the input.
    fn extract<T: Scalar>(&self, grid: &[T], g: &ConvGeom, x: &mut [T]) {
        let s = self.stride;
        self.rows_of(g, |at, cols, count| {
            let k0 = cols.clone().next().unwrap_or(0);
            if s == 1 {
                x[k0..k0 + count].copy_from_slice(&grid[at..at + count]);
            } else {
                for (&v, k) in grid[at..at + count].iter().zip(cols) {
                    x[k] = v;
                }
            }
        });
    }
}

fn check_depthwise(op: &'static str, input: Shape, weights: Shape) -> Result<(), NnError> {
    if weights.n != input.c {
        return Err(NnError::ShapeMismatch {
            op,
            dim: "channels",
            expected: weights.n,
            actual: input.c,
        });
    }
    if weights.c != 1 {
        return Err(NnError::ShapeMismatch {
            op,
            dim: "weight channel multiplier",
            expected: 1,
            actual: weights.c,
        });
    }
    Ok(())
}

/// Gradients of [`depthwise_conv2d`]: `(d_input, d_weights)`.
///
/// Each weight gradient is one running sum over items, then output rows and
/// columns in ascending order; the taps of a channel advance side by side.
pub fn depthwise_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>), NnError> {
    let s = input.shape();
    let ws = weights.shape();
    check_depthwise("depthwise_conv2d_backward", s, ws)?;
    let g = ConvGeom::new("depthwise_conv2d_backward", s, s.c, ws.h, ws.w, stride, Padding::Same)?;
    expect_shape(
        "depthwise_conv2d_backward",
        Shape::new(s.n, s.c, g.out_h, g.out_w),
        grad_out.shape(),
    )?;
    let pg = PhaseGrid::new(&g);
    let taps = g.kh * g.kw;
    let offsets: Vec<usize> = (0..taps).map(|t| pg.tap_offset(&g, t)).collect();
    let mut dx = Tensor::zeros(s);
    let mut dw = vec![T::zero(); s.c * taps];
    let in_plane = g.in_plane();
    let mut grid = vec![T::zero(); pg.len()];
    let mut dgrid = vec![T::zero(); pg.len()];
    let mut wide = vec![T::zero(); pg.span];
    for i in 0..s.n {
        for c in 0..s.c {
            pg.fill(input.plane(i, c), &g, &mut grid);
            let dy = grad_out.plane(i, c);
            for (oy, row) in dy.chunks_exact(g.out_w).enumerate() {
                wide[oy * pg.width..oy * pg.width + g.out_w].copy_from_slice(row);
            }
            let w = &weights.data()[c * taps..(c + 1) * taps];
            dgrid.iter_mut().for_each(|v| *v = T::zero());
            for (&off, &wv) in offsets.iter().zip(w) {
                for (d, &v) in dgrid[off..off + pg.span].iter_mut().zip(&wide) {
                    *d = *d + wv * v;
                }
            }
            let start = (i * s.c + c) * in_plane;
            pg.extract(&dgrid, &g, &mut dx.data_mut()[start..start + in_plane]);
            let acc = &mut dw[c * taps..(c + 1) * taps];
            tap_sums(&grid, &wide, &offsets, pg.span, acc);
        }
    }
    Ok((dx, dw))
}

/// `acc[t] += Σ_q wide[q] · grid[offsets[t] + q]`, each sum in ascending `q`.
fn tap_sums<T: Scalar>(grid: &[T], wide: &[T], offsets: &[usize], span: usize, acc: &mut [T]) {
    const LANES: usize = 9;
    for (offs, accs) in offsets.chunks(LANES).zip(acc.chunks_mut(LANES)) {
        let srcs: Vec<&[T]> = offs.iter().map(|&o| &grid[o..o + span]).collect();
        if let [s0, s1, s2, s3, s4, s5, s6, s7, s8] = srcs[..] {
            let mut a: [T; LANES] = std::array::from_fn(|t| accs[t]);
            for (q, &d) in wide[..span].iter().enumerate() {
                a[0] = a[0] + d * s0[q];
                a[1] = a[1] + d * s1[q];
                a[2] = a[2] + d * s2[q];
                a[3] = a[3] + d * s3[q];
                a[4] = a[4] + d * s4[q];
                a[5] = a[5] + d * s5[q];
                a[6] = a[6] + d * s6[q];
                a[7] = a[7] + d * s7[q];
                a[8] = a[8] + d * s8[q];
            }
            accs.copy_from_slice(&a);
        } else {
            for (a, src) in accs.iter_mut().zip(&srcs) {
                for (&d, &x) in wide[..span].iter().zip(src.iter()) {
                    *a = *a + d * x;
                }
            }
        }
    }
}

/// Per-channel statistics captured by a training-mode batch-norm pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

fn check_bn<T>(op: &'static str, input: Shape, params: &[&[T]]) -> Result<(), NnError> {
    for p in params {
        if p.len() != input.c {
            return Err(NnError::ShapeMismatch {
                op,
                dim: "channels",
                expected: p.len(),
                actual: input.c,
            });
        }
    }
    Ok(())
}

/// Channels whose reductions run interleaved. Each channel keeps its own
/// accumulator and summation order; interleaving only overlaps the chains.
const CHANNEL_LANES: usize = 8;

/// Per-channel `Σ f(c, a[k], b[k])` over batch items then positions, in that order.
fn channel_sums<T: Scalar>(s: Shape, a: &[T], b: &[T], f: impl Fn(usize, T, T) -> T) -> Vec<T> {
    let plane = s.plane();
    let mut sums = vec![T::zero(); s.c];
    let full = s.c / CHANNEL_LANES * CHANNEL_LANES;
    for c0 in (0..full).step_by(CHANNEL_LANES) {
        let mut acc = [T::zero(); CHANNEL_LANES];
        for i in 0..s.n {
            let base = (i * s.c + c0) * plane;
            let al: [&[T]; CHANNEL_LANES] = std::array::from_fn(|l| &a[base + l * plane..][..plane]);
            let bl: [&[T]; CHANNEL_LANES] = std::array::from_fn(|l| &b[base + l * plane..][..plane]);
            for p in 0..plane {
                for l in 0..CHANNEL_LANES {
                    acc[l] = acc[l] + f(c0 + l, al[l][p], bl[l][p]);
                }
            }
        }
        sums[c0..full.min(c0 + CHANNEL_LANES)].copy_from_slice(&acc);
    }
    for (c, sum) in sums.iter_mut().enumerate().skip(full) {
        for i in 0..s.n {
            let base = (i * s.c + c) * plane;
            for (&x, &y) in a[base..base + plane].iter().zip(&b[base..base + plane]) {
                *sum = *sum + f(c, x, y);
            }
        }
    }
    sums
}

/// Normalizes with batch statistics (biased variance) over `(N, H, W)` per channel.
pub fn batchnorm_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    epsilon: T,
) -> Result<(Tensor<T>, BatchNormCache<T>), NnError> {
    let s = input.shape();
    check_bn("batchnorm", s, &[gamma, beta])?;
    if s.n * s.plane() == 0 {
        return Err(NnError::EmptyBatch);
    }
    let count = T::count(s.n * s.plane());
    let x = input.data();
    let mean: Vec<T> = channel_sums(s, x, x, |_, v, _| v).into_iter().map(|v| v / count).collect();
    let var: Vec<T> = channel_sums(s, x, x, |c, v, _| {
        let d = v - mean[c];
        d * d
    })
    .into_iter()
    .map(|v| v / count)
    .collect();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + epsilon).sqrt()).collect();
    let plane = s.plane();
    let mut normalized = vec![T::zero(); s.len()];
    let mut out = vec![T::zero(); s.len()];
    for i in 0..s.n {
        for c in 0..s.c {
            let start = (i * s.c + c) * plane;
            let (m, is, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
            let xs = &x[start..start + plane];
            let xh = &mut normalized[start..start + plane];
            let y = &mut out[start..start + plane];
            for ((h, yv), &v) in xh.iter_mut().zip(y.iter_mut()).zip(xs) {
                *h = (v - m) * is;
                *yv = g * *h + b;
            }
        }
    }
    Ok((
        Tensor::from_vec(s, out)?,
        BatchNormCache {
            normalized: Tensor::from_vec(s, normalized)?,
            inv_std,
            mean,
            var,
        },
    ))
}

/// Normalizes with fixed running statistics.
pub fn batchnorm_infer<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    epsilon: T,
) -> Result<Tensor<T>, NnError> {
    let s = input.shape();
    check_bn("batchnorm", s, &[gamma, beta, running_mean, running_var])?;
    let mut out = Tensor::zeros(s);
    let plane = s.plane();
    for i in 0..s.n {
        for c in 0..s.c {
            let scale = gamma[c] / (running_var[c] + epsilon).sqrt();
            let shift = beta[c] - running_mean[c] * scale;
            let start = (i * s.c + c) * plane;
            let x = &input.data()[start..start + plane];
            let y = &mut out.data_mut()[start..start + plane];
            for (yv, &v) in y.iter_mut().zip(x) {
                *yv = v * scale + shift;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`batchnorm_train`]: `(d_input, d_gamma, d_beta)`.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>), NnError> {
    let s = cache.normalized.shape();
    expect_shape("batchnorm_backward", s, grad_out.shape())?;
    let plane = s.plane();
    let count = T::count(s.n * plane);
    let (dy, xh) = (grad_out.data(), cache.normalized.data());
    let dgamma = channel_sums(s, dy, xh, |_, d, h| d * h);
    let dbeta = channel_sums(s, dy, dy, |_, d, _| d);
    let mut dx = Tensor::zeros(s);
    for i in 0..s.n {
        for c in 0..s.c {
            let k = gamma[c] * cache.inv_std[c] / count;
            let start = (i * s.c + c) * plane;
            let xh = cache.normalized.plane(i, c);
            let dy = grad_out.plane(i, c);
            let out = &mut dx.data_mut()[start..start + plane];
            for ((o, &d), &h) in out.iter_mut().zip(dy).zip(xh) {
                *o = k * (count * d - dbeta[c] - h * dgamma[c]);
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

pub fn relu6<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let six = T::lit(6.0);
    input.map(|v| {
        if v > six {
            six
        } else if v > T::zero() {
            v
        } else {
            T::zero()
        }
    })
}

/// Passes gradient where `0 < x < 6`.
pub fn relu6_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    expect_shape("relu6_backward", input.shape(), grad_out.shape())?;
    let six = T::lit(6.0);
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() && x < six { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    expect_shape("relu_backward", input.shape(), grad_out.shape())?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Affine map over flattened items: `input (N, F…)` with `weights (O, F, 1, 1)`
/// gives `(N, O, 1, 1)`.
pub fn dense<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>, NnError> {
    let s = input.shape();
    let ws = weights.shape();
    check_dense("dense", s, ws, bias.len())?;
    let (features, outputs) = (ws.c, ws.n);
    let mut out = Tensor::zeros(Shape::new(s.n, outputs, 1, 1));
    let w = weights.data();
    for i in 0..s.n {
        let x = input.item(i);
        let y = out.item_mut(i);
        // four independent dot products per pass; each keeps one accumulator
        let mut o = 0;
        while o + 4 <= outputs {
            let w0 = &w[o * features..(o + 1) * features];
            let w1 = &w[(o + 1) * features..(o + 2) * features];
            let w2 = &w[(o + 2) * features..(o + 3) * features];
            let w3 = &w[(o + 3) * features..(o + 4) * features];
            let (mut a0, mut a1, mut a2, mut a3) = (T::zero(), T::zero(), T::zero(), T::zero());
            for f in 0..features {
                let xv = x[f];
                a0 = a0 + w0[f] * xv;
                a1 = a1 + w1[f] * xv;
                a2 = a2 + w2[f] * xv;
                a3 = a3 + w3[f] * xv;
            }
            y[o] = a0 + bias[o];
            y[o + 1] = a1 + bias[o + 1];
            y[o + 2] = a2 + bias[o + 2];
            y[o + 3] = a3 + bias[o + 3];
            o += 4;
        }
        while o < outputs {
            let wr = &w[o * features..(o + 1) * features];
            let mut acc = T::zero();
            for (&wv, &xv) in wr.iter().zip(x) {
                acc = acc + wv * xv;
            }
            y[o] = acc + bias[o];
            o += 1;
        }
    }
    Ok(out)
}

fn check_dense(op: &'static str, input: Shape, weights: Shape, bias_len: usize) -> Result<(), NnError> {
    if weights.h != 1 || weights.w != 1 {
        return Err(NnError::ShapeMismatch {
            op,
            dim: "weight trailing dims",
            expected: 1,
            actual: weights.h * weights.w,
        });
    }
    if input.item_len() != weights.c {
        return Err(NnError::ShapeMismatch {
            op,
            dim: "input features",
            expected: weights.c,
            actual: input.item_len(),
        });
    }
    if bias_len != weights.n {
        return Err(NnError::ShapeMismatch {
            op,
            dim: "bias length",
            expected: weights.n,
            actual: bias_len,
        });
    }
    Ok(())
}

/// Gradients of [`dense`]: `(d_input, d_weights, d_bias)`; `d_input` has the input's shape.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>), NnError> {
    let s = input.shape();
    let ws = weights.shape();
    check_dense("dense_backward", s, ws, ws.n)?;
    expect_shape("dense_backward", Shape::new(s.n, ws.n, 1, 1), grad_out.shape())?;
    let (features, outputs) = (ws.c, ws.n);
    let mut dx = Tensor::zeros(s);
    gemm_acc(grad_out.data(), weights.data(), dx.data_mut(), s.n, outputs, features);
    // dW = dYᵀ · X accumulated in batch order
    let dy_t = transpose(grad_out.data(), s.n, outputs);
    let mut dw = vec![T::zero(); outputs * features];
    gemm_acc(&dy_t, input.data(), &mut dw, outputs, s.n, features);
    let mut db = vec![T::zero(); outputs];
    for i in 0..s.n {
        for (acc, &g) in db.iter_mut().zip(grad_out.item(i)) {
            *acc += g;
        }
    }
    Ok((dx, dw, db))
}

/// Per-channel spatial mean, output `(N, C, 1, 1)`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let s = input.shape();
    if s.plane() == 0 {
        return Err(NnError::SpatialUnderflow {
            op: "global_avg_pool",
            size: 0,
            kernel: 1,
        });
    }
    let count = T::count(s.plane());
    let data = (0..s.n)
        .flat_map(|i| (0..s.c).map(move |c| (i, c)))
        .map(|(i, c)| input.plane(i, c).iter().fold(T::zero(), |a, &v| a + v) / count)
        .collect();
    Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data)
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: Shape, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    expect_shape(
        "global_avg_pool_backward",
        Shape::new(input_shape.n, input_shape.c, 1, 1),
        grad_out.shape(),
    )?;
    let count = T::count(input_shape.plane());
    let plane = input_shape.plane();
    let mut dx = Tensor::zeros(input_shape);
    for (chunk, &g) in dx.data_mut().chunks_mut(plane).zip(grad_out.data()) {
        let share = g / count;
        chunk.iter_mut().for_each(|v| *v = share);
    }
    Ok(dx)
}

/// Windowed max without padding. Returns the output and, per output element,
/// the flat input index it was taken from (first maximum in row-major order).
pub fn max_pool2d<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize) -> Result<(Tensor<T>, Vec<usize>), NnError> {
    let s = input.shape();
    if window == 0 || stride == 0 {
        return Err(NnError::InvalidConfig("max_pool2d: window and stride must be positive".into()));
    }
    let (oh, _) = Padding::Valid.resolve(s.h, window, stride).ok_or(NnError::SpatialUnderflow {
        op: "max_pool2d",
        size: s.h,
        kernel: window,
    })?;
    let (ow, _) = Padding::Valid.resolve(s.w, window, stride).ok_or(NnError::SpatialUnderflow {
        op: "max_pool2d",
        size: s.w,
        kernel: window,
    })?;
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    let mut argmax = vec![0usize; out.len()];
    let mut o = 0;
    for i in 0..s.n {
        for c in 0..s.c {
            let base = (i * s.c + c) * s.plane();
            let x = input.plane(i, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = oy * stride * s.w + ox * stride;
                    for ky in 0..window {
                        for kx in 0..window {
                            let idx = (oy * stride + ky) * s.w + ox * stride + kx;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.data_mut()[o] = x[best];
                    argmax[o] = base + best;
                    o += 1;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn max_pool2d_backward<T: Scalar>(input_shape: Shape, argmax: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if argmax.len() != grad_out.len() {
        return Err(NnError::ShapeMismatch {
            op: "max_pool2d_backward",
            dim: "elements",
            expected: argmax.len(),
            actual: grad_out.len(),
        });
    }
    let mut dx = Tensor::zeros(input_shape);
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        dx.data_mut()[idx] += g;
    }
    Ok(dx)
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)` and its
/// gradient `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>), NnError> {
    let s = logits.shape();
    let classes = s.item_len();
    if labels.len() != s.n {
        return Err(NnError::ShapeMismatch {
            op: "softmax_cross_entropy",
            dim: "batch",
            expected: s.n,
            actual: labels.len(),
        });
    }
    if s.n == 0 {
        return Err(NnError::EmptyBatch);
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(NnError::LabelOutOfRange { label, classes });
    }
    let batch = T::count(s.n);
    let mut grad = Tensor::zeros(s);
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let z = logits.item(i);
        let max = z.iter().fold(T::neg_infinity(), |a, &v| a.max(v));
        let mut denom = T::zero();
        for &v in z {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln();
        total += log_denom - (z[label] - max);
        let g = grad.item_mut(i);
        for (gv, &v) in g.iter_mut().zip(z) {
            *gv = (v - max - log_denom).exp() / batch;
        }
        g[label] -= T::one() / batch;
    }
    Ok((total / batch, grad))
}

/// Row-wise softmax over flattened items, computed in `f64`.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<Vec<f64>> {
    (0..logits.shape().n)
        .map(|i| {
            let z: Vec<f64> = logits.item(i).iter().map(|v| v.as_f64()).collect();
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = e.iter().sum();
            e.into_iter().map(|v| v / sum).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    /// Nested-loop reference with explicit zero padding.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad_t: usize, pad_l: usize, oh: usize, ow: usize) -> Vec<f64> {
        let (s, ws) = (x.shape(), w.shape());
        let mut out = vec![0.0; s.n * ws.n * oh * ow];
        for n in 0..s.n {
            for co in 0..ws.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..s.c {
                            for ky in 0..ws.h {
                                for kx in 0..ws.w {
                                    let iy = (oy * stride + ky) as isize - pad_t as isize;
                                    let ix = (ox * stride + kx) as isize - pad_l as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                                        acc += w.at(co, ci, ky, kx) * x.at(n, ci, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        out[((n * ws.n + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t(Shape::new(1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]);
        let w = t(Shape::new(1, 1, 1, 1), &[1.0]);
        let y = conv2d(&x, &w, Some(&[0.0]), 1, Padding::Same).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_all_ones_same_padding() {
        let x = Tensor::filled(Shape::new(1, 1, 3, 3), 1.0f64);
        let w = Tensor::filled(Shape::new(1, 1, 3, 3), 1.0f64);
        let y = conv2d(&x, &w, None, 1, Padding::Same).unwrap();
        let oracle = conv_oracle(&x, &w, 1, 1, 1, 3, 3);
        assert_eq!(oracle, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
        assert_eq!(y.data(), &oracle[..]);
    }

    #[test]
    fn conv_stem_shape() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 48, 48));
        let w = Tensor::<f32>::zeros(Shape::new(16, 1, 3, 3));
        let y = conv2d(&x, &w, None, 1, Padding::Same).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 16, 48, 48));
    }

    #[test]
    fn conv_matches_oracle_strided() {
        let x = t(Shape::new(2, 3, 7, 6), &(0..252).map(|i| ((i * 29 % 31) as f64 - 15.0) / 7.0).collect::<Vec<_>>());
        let w = t(Shape::new(4, 3, 3, 3), &(0..108).map(|i| ((i * 11 % 13) as f64 - 6.0) / 5.0).collect::<Vec<_>>());
        for (stride, padding) in [(1, Padding::Same), (2, Padding::Same), (2, Padding::Valid), (1, Padding::Valid)] {
            let y = conv2d(&x, &w, None, stride, padding).unwrap();
            let (oh, pt) = padding.resolve(7, 3, stride).unwrap();
            let (ow, pl) = padding.resolve(6, 3, stride).unwrap();
            let oracle = conv_oracle(&x, &w, stride, pt, pl, oh, ow);
            for (a, b) in y.data().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::<f32>::zeros(Shape::new(3, 1, 3, 3));
        let err = conv2d(&x, &w, None, 1, Padding::Same).unwrap_err();
        assert!(matches!(err, NnError::ShapeMismatch { dim: "input channels", expected: 1, actual: 2, .. }));
    }

    #[test]
    fn same_padding_split() {
        assert_eq!(Padding::Same.resolve(48, 3, 1), Some((48, 1)));
        assert_eq!(Padding::Same.resolve(24, 3, 2), Some((12, 1)));
        assert_eq!(Padding::Same.resolve(3, 3, 2), Some((2, 1)));
        assert_eq!(Padding::Same.resolve(6, 4, 1), Some((6, 1)));
        assert_eq!(Padding::Valid.resolve(2, 3, 1), None);
    }

    #[test]
    fn depthwise_center_tap_is_identity() {
        let x = t(Shape::new(2, 3, 5, 4), &(0..120).map(f64::from).collect::<Vec<_>>());
        let mut w = Tensor::zeros(Shape::new(3, 1, 3, 3));
        for c in 0..3 {
            w.data_mut()[c * 9 + 4] = 1.0;
        }
        let y = depthwise_conv2d(&x, &w, 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn depthwise_stride_two_shape() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 128, 24, 24));
        let w = Tensor::<f32>::zeros(Shape::new(128, 1, 3, 3));
        assert_eq!(w.len(), 1152);
        let y = depthwise_conv2d(&x, &w, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 128, 12, 12));
    }

    #[test]
    fn depthwise_matches_per_channel_oracle() {
        let x = t(Shape::new(1, 2, 5, 5), &(0..50).map(|i| ((i * 7 % 11) as f64) - 5.0).collect::<Vec<_>>());
        let w = t(Shape::new(2, 1, 3, 3), &(0..18).map(|i| (i as f64) / 9.0 - 1.0).collect::<Vec<_>>());
        for stride in [1, 2] {
            let y = depthwise_conv2d(&x, &w, stride).unwrap();
            for c in 0..2 {
                let xc = t(Shape::new(1, 1, 5, 5), x.plane(0, c));
                let wc = t(Shape::new(1, 1, 3, 3), &w.data()[c * 9..(c + 1) * 9]);
                let (o, p) = Padding::Same.resolve(5, 3, stride).unwrap();
                let oracle = conv_oracle(&xc, &wc, stride, p, p, o, o);
                for (a, b) in y.plane(0, c).iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn depthwise_rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 4, 4, 4));
        let w = Tensor::<f32>::zeros(Shape::new(3, 1, 3, 3));
        assert!(matches!(
            depthwise_conv2d(&x, &w, 1),
            Err(NnError::ShapeMismatch { dim: "channels", .. })
        ));
    }

    #[test]
    fn batchnorm_two_values_normalize_to_unit() {
        let x = t(Shape::new(2, 1, 1, 1), &[1.0, 3.0]);
        let (y, cache) = batchnorm_train(&x, &[1.0], &[0.0], 1e-12).unwrap();
        assert_eq!(cache.mean, vec![2.0]);
        assert_eq!(cache.var, vec![1.0]);
        assert!((y.data()[0] + 1.0).abs() < 1e-9);
        assert!((y.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn batchnorm_identity_statistics() {
        let x = t(Shape::new(2, 2, 2, 2), &(0..16).map(|i| i as f64 * 0.5 - 3.0).collect::<Vec<_>>());
        let y = batchnorm_infer(&x, &[1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], 1e-5).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= b.abs() * 1e-5 + 1e-12);
        }
    }

    #[test]
    fn batchnorm_rejects_empty_batch() {
        let x = Tensor::<f32>::zeros(Shape::new(0, 2, 3, 3));
        assert_eq!(batchnorm_train(&x, &[1.0; 2], &[0.0; 2], 1e-5).unwrap_err(), NnError::EmptyBatch);
    }

    #[test]
    fn relu6_definition() {
        let x = t(Shape::new(1, 3, 1, 1), &[-1.0, 3.0, 8.0]);
        assert_eq!(relu6(&x).data(), &[0.0, 3.0, 6.0]);
        let g = relu6_backward(&x, &Tensor::filled(x.shape(), 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0]);
        let z = Tensor::<f64>::zeros(Shape::new(1, 4, 2, 2));
        assert!(relu6(&z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_identity_and_errors() {
        let x = t(Shape::new(2, 3, 1, 1), &[1.0, 2.0, 3.0, -4.0, 5.0, 0.5]);
        let mut w = Tensor::zeros(Shape::new(3, 3, 1, 1));
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let y = dense(&x, &w, &[0.0; 3]).unwrap();
        assert_eq!(y.data(), x.data());
        let bad = dense(&x, &Tensor::zeros(Shape::new(3, 4, 1, 1)), &[0.0; 3]).unwrap_err();
        assert!(matches!(bad, NnError::ShapeMismatch { dim: "input features", expected: 4, actual: 3, .. }));
    }

    #[test]
    fn dense_flattens_spatial_input() {
        let x = Tensor::<f32>::filled(Shape::new(1, 128, 3, 3), 1.0);
        let w = Tensor::<f32>::filled(Shape::new(5, 1152, 1, 1), 0.5);
        let y = dense(&x, &w, &[1.0; 5]).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 5, 1, 1));
        assert!(y.data().iter().all(|&v| v == 577.0));
    }

    #[test]
    fn global_avg_pool_mean() {
        let x = t(Shape::new(1, 2, 2, 2), &[1.0, 2.0, 3.0, 4.0, 7.0, 7.0, 7.0, 7.0]);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 1, 1));
        assert_eq!(y.data(), &[2.5, 7.0]);
        let big = Tensor::<f32>::zeros(Shape::new(3, 128, 6, 6));
        assert_eq!(global_avg_pool(&big).unwrap().shape(), Shape::new(3, 128, 1, 1));
    }

    #[test]
    fn max_pool_basics() {
        let x = t(Shape::new(1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]);
        let (y, idx) = max_pool2d(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx, vec![3]);
        let c = Tensor::filled(Shape::new(1, 2, 4, 4), 2.5f64);
        let (y, idx) = max_pool2d(&c, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.5));
        // ties resolve to the first element of each window
        assert_eq!(idx[..2], [0, 2]);
        let g = max_pool2d_backward(x.shape(), &[3], &t(Shape::new(1, 1, 1, 1), &[1.5])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.5]);
    }

    #[test]
    fn cross_entropy_reference_values() {
        let c = 7;
        let logits = Tensor::filled(Shape::new(3, c, 1, 1), 0.25f64);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 3, 6]).unwrap();
        assert!((loss - (c as f64).ln()).abs() < 1e-12);

        let mut sat = Tensor::zeros(Shape::new(1, 4, 1, 1));
        sat.data_mut()[2] = 1000.0f64;
        let (loss, grad) = softmax_cross_entropy(&sat, &[2]).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.data().iter().all(|g| g.abs() < 1e-12));

        assert_eq!(
            softmax_cross_entropy(&sat, &[4]).unwrap_err(),
            NnError::LabelOutOfRange { label: 4, classes: 4 }
        );
    }
}
