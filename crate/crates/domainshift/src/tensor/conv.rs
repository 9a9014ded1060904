//! Convolution and transposed convolution, forward and backward.
//!
//! Both directions reduce to dense primitives — im2col/im2row lowering,
//! col2im scattering and a register-tiled accumulating matrix product — so
//! the transposed convolution is implemented literally as the adjoint of the
//! strided one:
//!
//!   conv  forward:  out_n  = W x col(x_n)              (cross-correlation)
//!   conv  backward: dW    += g_n x row(x_n),   dx_n = col2im(W^T x g_n)
//!   convT forward:  out_n  = col2im(W^T x x_n)
//!   convT backward: dW    += x_n x row(g_n),   dx_n = W x col(g_n)
//!
//! where col(.) lowers patches to a [K, P] matrix and row(.) to its [P, K]
//! transpose. Convolution means cross-correlation (no kernel flip) throughout.
//!
//! Summation order per output element is fixed by the loop structure, and the
//! rayon splits below only ever hand threads disjoint output regions, so the
//! kernels are bit-deterministic for any thread count.

use rayon::prelude::*;

use super::{check_shape, ConvSpec, LayerGrads, Tensor};
use crate::error::Result;

// ---------------------------------------------------------------------------
// Scratch buffers
//
// The lowering matrices are large (tens of MB per call at batch 32) and every
// element gets overwritten before use, so buffers are recycled instead of
// reallocated: a global pool for whole-batch buffers, a thread-local slot for
// per-sample buffers inside parallel regions.
// ---------------------------------------------------------------------------

fn with_pooled<R>(len: usize, f: impl FnOnce(&mut [f32]) -> R) -> R {
    use std::sync::Mutex;
    static POOL: Mutex<Vec<Vec<f32>>> = Mutex::new(Vec::new());
    let mut buf = POOL.lock().unwrap().pop().unwrap_or_default();
    if buf.len() < len {
        buf.resize(len, 0.0);
    }
    let result = f(&mut buf[..len]);
    let mut pool = POOL.lock().unwrap();
    if pool.len() < 4 {
        pool.push(buf);
    }
    result
}

fn with_thread_buf<R>(len: usize, f: impl FnOnce(&mut [f32]) -> R) -> R {
    use std::cell::RefCell;
    thread_local! {
        static BUF: RefCell<Vec<f32>> = const { RefCell::new(Vec::new()) };
    }
    BUF.with(|cell| {
        let mut buf = cell.borrow_mut();
        if buf.len() < len {
            buf.resize(len, 0.0);
        }
        f(&mut buf[..len])
    })
}

// ---------------------------------------------------------------------------
// Lowering
// ---------------------------------------------------------------------------

/// First and last valid output column for kernel offset `kx`; `lo > hi` means
/// the whole row falls in padding.
fn valid_range(w: usize, kx: usize, stride: usize, pad: usize, ow: usize) -> (usize, usize) {
    let lo = if pad > kx {
        (pad - kx).div_ceil(stride)
    } else {
        0
    };
    let hi_excl = if w + pad > kx {
        (((w + pad - kx) - 1) / stride + 1).min(ow)
    } else {
        0
    };
    if hi_excl == 0 {
        (1, 0)
    } else {
        (lo.min(ow), hi_excl - 1)
    }
}

/// Lowers one sample into the column matrix: row (c, ky, kx), column (oy, ox).
#[allow(clippy::too_many_arguments)]
fn im2col(
    src: &[f32],
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [f32],
) {
    debug_assert_eq!(src.len(), channels * h * w);
    debug_assert_eq!(col.len(), channels * k * k * oh * ow);
    let positions = oh * ow;
    for c in 0..channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row_base = ((c * k + ky) * k + kx) * positions;
                let row = &mut col[row_base..row_base + positions];
                let (lo, hi) = valid_range(w, kx, stride, pad, ow);
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize || lo > hi {
                        dst.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    dst[..lo].fill(0.0);
                    dst[hi + 1..].fill(0.0);
                    let mut ix = lo * stride + kx - pad;
                    for d in &mut dst[lo..=hi] {
                        *d = src_row[ix];
                        ix += stride;
                    }
                }
            }
        }
    }
}

/// Patch-major lowering: row (oy, ox), column (c, ky, kx). The transpose of
/// `im2col`, gathered directly so weight gradients can run as plain GEMMs.
/// Rows have pitch `row_pitch >= c*k*k`; the tail of each row is zeroed, which
/// keeps every GEMM tile full-width even for small kernels.
#[allow(clippy::too_many_arguments)]
fn im2row(
    src: &[f32],
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    row_pitch: usize,
    rows: &mut [f32],
) {
    let kk = channels * k * k;
    debug_assert!(row_pitch >= kk);
    debug_assert_eq!(src.len(), channels * h * w);
    debug_assert_eq!(rows.len(), row_pitch * oh * ow);
    for oy in 0..oh {
        for ox in 0..ow {
            let patch =
                &mut rows[(oy * ow + ox) * row_pitch..(oy * ow + ox + 1) * row_pitch];
            patch[kk..].fill(0.0);
            let mut idx = 0;
            for c in 0..channels {
                let plane = &src[c * h * w..(c + 1) * h * w];
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        patch[idx..idx + k].fill(0.0);
                        idx += k;
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        patch[idx] = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                        idx += 1;
                    }
                }
            }
        }
    }
}

/// Blocked transpose of `src[rows x cols]` into `dst` with row pitch
/// `dst_pitch >= rows`; pads each destination row's tail with zeros.
fn transpose_pitched(src: &[f32], rows: usize, cols: usize, dst_pitch: usize, dst: &mut [f32]) {
    debug_assert!(dst_pitch >= rows);
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), cols * dst_pitch);
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        let r1 = (r0 + B).min(rows);
        for c0 in (0..cols).step_by(B) {
            let c1 = (c0 + B).min(cols);
            for r in r0..r1 {
                let srow = &src[r * cols..(r + 1) * cols];
                for c in c0..c1 {
                    dst[c * dst_pitch + r] = srow[c];
                }
            }
        }
    }
    if dst_pitch > rows {
        for c in 0..cols {
            dst[c * dst_pitch + rows..(c + 1) * dst_pitch].fill(0.0);
        }
    }
}

/// Produces the patch-major lowering either by direct gather (few channels)
/// or via `im2col` plus a blocked transpose (many channels, where the direct
/// gather's jumps across channel planes dominate).
#[allow(clippy::too_many_arguments)]
fn lower_rows(
    src: &[f32],
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    pitch: usize,
    rows: &mut [f32],
) {
    if channels < 8 {
        im2row(src, channels, h, w, k, stride, pad, oh, ow, pitch, rows);
    } else {
        let kk = channels * k * k;
        with_thread_buf(kk * oh * ow, |col| {
            im2col(src, channels, h, w, k, stride, pad, oh, ow, col);
            transpose_pitched(col, kk, oh * ow, pitch, rows);
        });
    }
}

/// Scatter-adds a column matrix back into an image; the adjoint of `im2col`.
/// Caller provides a zeroed (or partially accumulated) destination.
#[allow(clippy::too_many_arguments)]
fn col2im(
    col: &[f32],
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dst: &mut [f32],
) {
    debug_assert_eq!(dst.len(), channels * h * w);
    debug_assert_eq!(col.len(), channels * k * k * oh * ow);
    let positions = oh * ow;
    for c in 0..channels {
        let plane = &mut dst[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row_base = ((c * k + ky) * k + kx) * positions;
                let row = &col[row_base..row_base + positions];
                let (lo, hi) = valid_range(w, kx, stride, pad, ow);
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize || lo > hi {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src_row = &row[oy * ow..(oy + 1) * ow];
                    let mut ix = lo * stride + kx - pad;
                    for &v in &src_row[lo..=hi] {
                        dst_row[ix] += v;
                        ix += stride;
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Register-tiled GEMM: out[m x p] += a[m x kk] * b[kk x p]
// ---------------------------------------------------------------------------

const TILE: usize = 16;

/// 4 output rows x 16 columns held in accumulators across the whole k loop.
#[inline]
fn tile_4x16(a: [&[f32]; 4], b: &[f32], p: usize, j: usize, out: &mut [f32]) {
    let mut c0 = [0.0f32; TILE];
    let mut c1 = [0.0f32; TILE];
    let mut c2 = [0.0f32; TILE];
    let mut c3 = [0.0f32; TILE];
    c0.copy_from_slice(&out[j..j + TILE]);
    c1.copy_from_slice(&out[p + j..p + j + TILE]);
    c2.copy_from_slice(&out[2 * p + j..2 * p + j + TILE]);
    c3.copy_from_slice(&out[3 * p + j..3 * p + j + TILE]);
    for ((((&x0, &x1), &x2), &x3), brow) in a[0]
        .iter()
        .zip(a[1])
        .zip(a[2])
        .zip(a[3])
        .zip(b.chunks_exact(p))
    {
        let bt: &[f32; TILE] = brow[j..j + TILE].try_into().unwrap();
        for l in 0..TILE {
            c0[l] += x0 * bt[l];
            c1[l] += x1 * bt[l];
            c2[l] += x2 * bt[l];
            c3[l] += x3 * bt[l];
        }
    }
    out[j..j + TILE].copy_from_slice(&c0);
    out[p + j..p + j + TILE].copy_from_slice(&c1);
    out[2 * p + j..2 * p + j + TILE].copy_from_slice(&c2);
    out[3 * p + j..3 * p + j + TILE].copy_from_slice(&c3);
}

/// Remainder tile: 4 rows x (p - j) columns, width below 16.
#[inline]
fn tile_4xr(a: [&[f32]; 4], b: &[f32], p: usize, j: usize, out: &mut [f32]) {
    let width = p - j;
    let mut c = [[0.0f32; TILE]; 4];
    for (r, cr) in c.iter_mut().enumerate() {
        cr[..width].copy_from_slice(&out[r * p + j..(r + 1) * p]);
    }
    for ((((&x0, &x1), &x2), &x3), brow) in a[0]
        .iter()
        .zip(a[1])
        .zip(a[2])
        .zip(a[3])
        .zip(b.chunks_exact(p))
    {
        let bt = &brow[j..];
        let x = [x0, x1, x2, x3];
        for (r, &xr) in x.iter().enumerate() {
            for l in 0..width {
                c[r][l] += xr * bt[l];
            }
        }
    }
    for (r, cr) in c.iter().enumerate() {
        out[r * p + j..(r + 1) * p].copy_from_slice(&cr[..width]);
    }
}

/// Single leftover row, any width.
#[inline]
fn tile_1(arow: &[f32], b: &[f32], p: usize, out_row: &mut [f32]) {
    let mut j = 0;
    while j + TILE <= p {
        let mut c = [0.0f32; TILE];
        c.copy_from_slice(&out_row[j..j + TILE]);
        for (&x, brow) in arow.iter().zip(b.chunks_exact(p)) {
            let bt: &[f32; TILE] = brow[j..j + TILE].try_into().unwrap();
            for l in 0..TILE {
                c[l] += x * bt[l];
            }
        }
        out_row[j..j + TILE].copy_from_slice(&c);
        j += TILE;
    }
    if j < p {
        let width = p - j;
        let mut c = [0.0f32; TILE];
        c[..width].copy_from_slice(&out_row[j..]);
        for (&x, brow) in arow.iter().zip(b.chunks_exact(p)) {
            let bt = &brow[j..];
            for l in 0..width {
                c[l] += x * bt[l];
            }
        }
        out_row[j..].copy_from_slice(&c[..width]);
    }
}

/// out += a * b with row-major operands; accumulates into existing `out`.
fn gemm_acc(out: &mut [f32], a: &[f32], b: &[f32], m: usize, kk: usize, p: usize) {
    debug_assert_eq!(out.len(), m * p);
    debug_assert_eq!(a.len(), m * kk);
    debug_assert_eq!(b.len(), kk * p);
    if p == 0 || kk == 0 {
        return;
    }
    let mut i = 0;
    while i + 4 <= m {
        let rows = [
            &a[i * kk..(i + 1) * kk],
            &a[(i + 1) * kk..(i + 2) * kk],
            &a[(i + 2) * kk..(i + 3) * kk],
            &a[(i + 3) * kk..(i + 4) * kk],
        ];
        let out_block = &mut out[i * p..(i + 4) * p];
        let mut j = 0;
        while j + TILE <= p {
            tile_4x16(rows, b, p, j, out_block);
            j += TILE;
        }
        if j < p {
            tile_4xr(rows, b, p, j, out_block);
        }
        i += 4;
    }
    while i < m {
        tile_1(&a[i * kk..(i + 1) * kk], b, p, &mut out[i * p..(i + 1) * p]);
        i += 1;
    }
}

/// Splits a row-major matrix into disjoint 4-row mutable tiles
/// (start row, row count, rows) for parallel row work.
fn tile_views(buf: &mut [f32], pitch: usize, m: usize) -> Vec<(usize, usize, &mut [f32])> {
    debug_assert_eq!(buf.len(), m * pitch);
    let mut views = Vec::with_capacity(m / 4 + 1);
    let mut rest = buf;
    let mut row = 0;
    while row < m {
        let rows = (m - row).min(4);
        let (head, tail) = rest.split_at_mut(rows * pitch);
        views.push((row, rows, head));
        rest = tail;
        row += rows;
    }
    views
}

fn transpose(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut t = vec![0.0f32; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

// ---------------------------------------------------------------------------
// Public kernels
// ---------------------------------------------------------------------------

fn check_conv_args(
    op: &'static str,
    input: &Tensor,
    weight: &Tensor,
    bias: &[f32],
    spec: &ConvSpec,
    want_transposed: bool,
) -> Result<(usize, usize)> {
    check_shape(
        op,
        "spec.transposed",
        want_transposed,
        spec.transposed,
        spec.transposed == want_transposed,
    )?;
    check_shape(
        op,
        "input channels",
        spec.in_channels,
        input.c(),
        input.c() == spec.in_channels,
    )?;
    check_shape(
        op,
        "weight shape",
        spec.weight_shape(),
        weight.shape(),
        weight.shape() == spec.weight_shape(),
    )?;
    check_shape(
        op,
        "bias length",
        spec.out_channels,
        bias.len(),
        bias.len() == spec.out_channels,
    )?;
    spec.out_hw(input.h(), input.w())
}

/// Strided cross-correlation plus per-output-channel bias.
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &[f32],
    spec: &ConvSpec,
) -> Result<Tensor> {
    let (oh, ow) = check_conv_args("conv2d_forward", input, weight, bias, spec, false)?;
    let (n, ic, h, w) = (input.n(), input.c(), input.h(), input.w());
    let (oc, k, s, p) = (spec.out_channels, spec.kernel, spec.stride, spec.padding);
    let kk = ic * k * k;
    let positions = oh * ow;

    let mut out = Tensor::zeros(n, oc, oh, ow);
    let out_len = oc * positions;
    out.data_mut()
        .par_chunks_mut(out_len)
        .enumerate()
        .for_each(|(b, out_n)| {
            with_thread_buf(kk * positions, |col| {
                im2col(input.sample(b), ic, h, w, k, s, p, oh, ow, col);
                for (o, orow) in out_n.chunks_exact_mut(positions).enumerate() {
                    orow.fill(bias[o]);
                }
                gemm_acc(out_n, weight.data(), col, oc, kk, positions);
            });
        });
    Ok(out)
}

/// Which gradients a backward call should produce.
#[derive(Debug, Clone, Copy)]
pub struct GradMask {
    pub weight: bool,
    pub input: bool,
}

impl GradMask {
    pub const ALL: GradMask = GradMask {
        weight: true,
        input: true,
    };
    pub const WEIGHT_ONLY: GradMask = GradMask {
        weight: true,
        input: false,
    };
    pub const INPUT_ONLY: GradMask = GradMask {
        weight: false,
        input: true,
    };
}

/// Analytic gradients of `conv2d_forward` with respect to weight, bias, input.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    upstream: &Tensor,
) -> Result<LayerGrads> {
    conv2d_backward_masked(input, weight, spec, upstream, GradMask::ALL)
}

/// As `conv2d_backward`, but skips gradients the caller does not need
/// (first layers never need d_input; frozen layers never need d_weight).
/// Skipped gradients come back zero-valued.
pub fn conv2d_backward_masked(
    input: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    upstream: &Tensor,
    mask: GradMask,
) -> Result<LayerGrads> {
    let zero_bias = vec![0.0f32; spec.out_channels];
    let (oh, ow) = check_conv_args("conv2d_backward", input, weight, &zero_bias, spec, false)?;
    let expect = [input.n(), spec.out_channels, oh, ow];
    check_shape(
        "conv2d_backward",
        "upstream shape",
        expect,
        upstream.shape(),
        upstream.shape() == expect,
    )?;

    let (n, ic, h, w) = (input.n(), input.c(), input.h(), input.w());
    let (oc, k, s, p) = (spec.out_channels, spec.kernel, spec.stride, spec.padding);
    let kk = ic * k * k;
    let positions = oh * ow;
    let ws = spec.weight_shape();

    let d_bias = bias_grad(upstream);
    let mut d_weight = Tensor::zeros(ws[0], ws[1], ws[2], ws[3]);
    if mask.weight {
        // dW += g_n x row(x_n): lower every sample, then accumulate row tiles
        // of dW in parallel with a fixed sample order inside each tile.
        weight_grad(
            d_weight.data_mut(),
            oc,
            kk,
            n,
            positions,
            |b, rows_n, pitch| {
                lower_rows(input.sample(b), ic, h, w, k, s, p, oh, ow, pitch, rows_n)
            },
            |b| upstream.sample(b),
        );
    }

    let mut d_input = Tensor::zeros(n, ic, h, w);
    if mask.input {
        // dx_n = col2im(W^T x g_n), samples in parallel.
        let wt = transpose(weight.data(), oc, kk);
        let in_len = ic * h * w;
        d_input
            .data_mut()
            .par_chunks_mut(in_len)
            .enumerate()
            .for_each(|(b, dx_n)| {
                with_thread_buf(kk * positions, |dcol| {
                    dcol.fill(0.0);
                    gemm_acc(dcol, &wt, upstream.sample(b), kk, oc, positions);
                    col2im(dcol, ic, h, w, k, s, p, oh, ow, dx_n);
                });
            });
    }

    Ok(LayerGrads {
        d_weight,
        d_bias,
        d_input,
    })
}

/// Fractionally strided (transposed) convolution: the adjoint of the
/// corresponding strided convolution, plus bias.
pub fn convtranspose2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &[f32],
    spec: &ConvSpec,
) -> Result<Tensor> {
    let (oh, ow) = check_conv_args("convtranspose2d_forward", input, weight, bias, spec, true)?;
    let (n, ic, h, w) = (input.n(), input.c(), input.h(), input.w());
    let (oc, k, s, p) = (spec.out_channels, spec.kernel, spec.stride, spec.padding);
    // The underlying convolution maps oc-channel images of (oh, ow) down to
    // ic-channel images of (h, w); its column matrix has oc*k*k rows.
    let kk = oc * k * k;
    let positions = h * w;

    let wt = transpose(weight.data(), ic, kk);
    let mut out = Tensor::zeros(n, oc, oh, ow);
    let out_len = oc * oh * ow;
    out.data_mut()
        .par_chunks_mut(out_len)
        .enumerate()
        .for_each(|(b, out_n)| {
            with_thread_buf(kk * positions, |dcol| {
                dcol.fill(0.0);
                gemm_acc(dcol, &wt, input.sample(b), kk, ic, positions);
                for (o, orow) in out_n.chunks_exact_mut(oh * ow).enumerate() {
                    orow.fill(bias[o]);
                }
                col2im(dcol, oc, oh, ow, k, s, p, h, w, out_n);
            });
        });
    Ok(out)
}

/// Analytic gradients of `convtranspose2d_forward`.
pub fn convtranspose2d_backward(
    input: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    upstream: &Tensor,
) -> Result<LayerGrads> {
    convtranspose2d_backward_masked(input, weight, spec, upstream, GradMask::ALL)
}

/// As `convtranspose2d_backward` with selectable gradients.
pub fn convtranspose2d_backward_masked(
    input: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    upstream: &Tensor,
    mask: GradMask,
) -> Result<LayerGrads> {
    let zero_bias = vec![0.0f32; spec.out_channels];
    let (oh, ow) =
        check_conv_args("convtranspose2d_backward", input, weight, &zero_bias, spec, true)?;
    let expect = [input.n(), spec.out_channels, oh, ow];
    check_shape(
        "convtranspose2d_backward",
        "upstream shape",
        expect,
        upstream.shape(),
        upstream.shape() == expect,
    )?;

    let (n, ic, h, w) = (input.n(), input.c(), input.h(), input.w());
    let (oc, k, s, p) = (spec.out_channels, spec.kernel, spec.stride, spec.padding);
    let kk = oc * k * k;
    let positions = h * w;

    let d_bias = bias_grad(upstream);

    // d_input: run the underlying convolution forward over the upstream.
    let mut d_input = Tensor::zeros(n, ic, h, w);
    if mask.input {
        let in_len = ic * positions;
        d_input
            .data_mut()
            .par_chunks_mut(in_len)
            .enumerate()
            .for_each(|(b, dx_n)| {
                with_thread_buf(kk * positions, |col| {
                    im2col(upstream.sample(b), oc, oh, ow, k, s, p, h, w, col);
                    gemm_acc(dx_n, weight.data(), col, ic, kk, positions);
                });
            });
    }

    // d_weight rows are input channels: dW += x_n x row(g_n).
    let mut d_weight = Tensor::zeros(ic, oc, k, k);
    if mask.weight {
        weight_grad(
            d_weight.data_mut(),
            ic,
            kk,
            n,
            positions,
            |b, rows_n, pitch| {
                lower_rows(upstream.sample(b), oc, oh, ow, k, s, p, h, w, pitch, rows_n)
            },
            |b| input.sample(b),
        );
    }

    Ok(LayerGrads {
        d_weight,
        d_bias,
        d_input,
    })
}

/// Weight-gradient driver shared by both convolution directions:
/// dw[m x kk] += sum over samples of a_n[m x positions] * rows_n[positions x kk].
///
/// Rows are lowered with a tile-aligned pitch so the GEMM always runs
/// full-width tiles; dw row tiles go to parallel tasks, each accumulating
/// samples in a fixed order.
fn weight_grad<'a, L, A>(
    dw: &mut [f32],
    m: usize,
    kk: usize,
    n: usize,
    positions: usize,
    lower: L,
    a_of: A,
) where
    L: Fn(usize, &mut [f32], usize) + Sync,
    A: Fn(usize) -> &'a [f32] + Sync,
{
    let pitch = kk.next_multiple_of(TILE);
    with_pooled(n * positions * pitch, |rows_all| {
        rows_all
            .par_chunks_mut(positions * pitch)
            .enumerate()
            .for_each(|(b, rows_n)| lower(b, rows_n, pitch));
        let rows_all = &*rows_all;

        // Samples stay in the outer loop so one sample's lowering panel is
        // read by every row tile while still cache-resident; tiles run in
        // parallel and each accumulates samples in the same fixed order.
        let run = |dw_out: &mut [f32], pitch_out: usize| {
            let mut views = tile_views(dw_out, pitch_out, m);
            for b in 0..n {
                let a_n = a_of(b);
                let rows_n = &rows_all[b * positions * pitch..(b + 1) * positions * pitch];
                views.par_iter_mut().for_each(|(start, rows, dw_tile)| {
                    let a = &a_n[*start * positions..(*start + *rows) * positions];
                    gemm_acc(dw_tile, a, rows_n, *rows, positions, pitch_out);
                });
            }
        };

        if pitch == kk {
            run(dw, kk);
        } else {
            let mut dw_pad = vec![0.0f32; m * pitch];
            run(&mut dw_pad, pitch);
            for (dst, src) in dw.chunks_exact_mut(kk).zip(dw_pad.chunks_exact(pitch)) {
                dst.copy_from_slice(&src[..kk]);
            }
        }
    });
}

/// Per-output-channel sums of the upstream gradient.
fn bias_grad(upstream: &Tensor) -> Vec<f32> {
    let [n, oc, oh, ow] = upstream.shape();
    let positions = oh * ow;
    let mut d_bias = vec![0.0f32; oc];
    for b in 0..n {
        let up_n = upstream.sample(b);
        for (o, db) in d_bias.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for &v in &up_n[o * positions..(o + 1) * positions] {
                acc += v;
            }
            *db += acc;
        }
    }
    d_bias
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(shape: [usize; 4]) -> Tensor {
        Tensor::filled(shape, 1.0)
    }

    #[test]
    fn constant_field_sums_kernel() {
        // 1x1x3x3 ones * 2x2 ones kernel, stride 1, pad 0 -> 2x2 of 4.0
        let spec = ConvSpec::conv(1, 1, 2, 1, 0);
        let out = conv2d_forward(&ones([1, 1, 3, 3]), &ones([1, 1, 2, 2]), &[0.0], &spec).unwrap();
        assert_eq!(out.shape(), [1, 1, 2, 2]);
        assert_eq!(out.data(), &[4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn identity_kernel_passes_through() {
        let spec = ConvSpec::conv(1, 1, 1, 1, 0);
        let input = Tensor::from_vec([1, 1, 2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
        let out = conv2d_forward(&input, &ones([1, 1, 1, 1]), &[0.0], &spec).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn identity_kernel_backward_passes_upstream() {
        let spec = ConvSpec::conv(1, 1, 1, 1, 0);
        let input = ones([1, 1, 2, 2]);
        let upstream = Tensor::from_vec([1, 1, 2, 2], vec![0.25, -1.0, 2.0, 4.0]).unwrap();
        let grads = conv2d_backward(&input, &ones([1, 1, 1, 1]), &spec, &upstream).unwrap();
        assert_eq!(grads.d_input.data(), upstream.data());
        assert_eq!(grads.d_bias, vec![5.25]);
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let spec = ConvSpec::conv(2, 3, 3, 2, 1);
        let input = ones([2, 2, 8, 8]);
        let weight = ones([3, 2, 3, 3]);
        let upstream = Tensor::zeros(2, 3, 4, 4);
        let grads = conv2d_backward(&input, &weight, &spec, &upstream).unwrap();
        assert!(grads.d_weight.data().iter().all(|&v| v == 0.0));
        assert!(grads.d_bias.iter().all(|&v| v == 0.0));
        assert!(grads.d_input.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transposed_disjoint_tiles() {
        // stride 2 with a 2x2 kernel tiles the output with disjoint copies
        let spec = ConvSpec::transposed(1, 1, 2, 2, 0);
        let out =
            convtranspose2d_forward(&ones([1, 1, 2, 2]), &ones([1, 1, 2, 2]), &[0.0], &spec)
                .unwrap();
        assert_eq!(out.shape(), [1, 1, 4, 4]);
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn transposed_zero_input_broadcasts_bias() {
        let spec = ConvSpec::transposed(2, 3, 2, 2, 0);
        let out = convtranspose2d_forward(
            &Tensor::zeros(1, 2, 2, 2),
            &Tensor::zeros(2, 3, 2, 2),
            &[0.5, -1.0, 2.0],
            &spec,
        )
        .unwrap();
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    assert_eq!(out.at(0, c, y, x), [0.5, -1.0, 2.0][c]);
                }
            }
        }
    }

    #[test]
    fn transposed_single_pixel_scatter() {
        // One input pixel scatters the kernel into a 2x2 block.
        let spec = ConvSpec::transposed(1, 1, 2, 2, 0);
        let input = Tensor::from_vec([1, 1, 1, 1], vec![3.0]).unwrap();
        let weight = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = convtranspose2d_forward(&input, &weight, &[0.0], &spec).unwrap();
        assert_eq!(out.data(), &[3.0, 6.0, 9.0, 12.0]);

        // Weight gradient is upstream scaled by the input value; d_input of
        // the single pixel is the kernel dotted with upstream.
        let upstream = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let grads = convtranspose2d_backward(&input, &weight, &spec, &upstream).unwrap();
        assert_eq!(grads.d_weight.data(), &[3.0, 3.0, 3.0, 3.0]);
        assert_eq!(grads.d_input.data(), &[10.0]);
    }

    #[test]
    fn masked_backward_matches_full() {
        let spec = ConvSpec::conv(2, 5, 3, 2, 1);
        let input = Tensor::from_vec(
            [1, 2, 6, 6],
            (0..72).map(|i| (i as f32 * 0.37).sin()).collect(),
        )
        .unwrap();
        let weight = Tensor::from_vec(
            [5, 2, 3, 3],
            (0..90).map(|i| (i as f32 * 0.11).cos()).collect(),
        )
        .unwrap();
        let upstream = Tensor::from_vec(
            [1, 5, 3, 3],
            (0..45).map(|i| (i as f32 * 0.23).sin()).collect(),
        )
        .unwrap();
        let full = conv2d_backward(&input, &weight, &spec, &upstream).unwrap();
        let wonly =
            conv2d_backward_masked(&input, &weight, &spec, &upstream, GradMask::WEIGHT_ONLY)
                .unwrap();
        assert_eq!(full.d_weight.data(), wonly.d_weight.data());
        assert!(wonly.d_input.data().iter().all(|&v| v == 0.0));
        let ionly =
            conv2d_backward_masked(&input, &weight, &spec, &upstream, GradMask::INPUT_ONLY)
                .unwrap();
        assert_eq!(full.d_input.data(), ionly.d_input.data());
    }

    #[test]
    fn shape_mismatch_names_dimension() {
        let spec = ConvSpec::conv(3, 4, 3, 1, 0);
        let err = conv2d_forward(&ones([1, 2, 5, 5]), &ones([4, 3, 3, 3]), &[0.0; 4], &spec)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("input channels"), "got: {msg}");
    }

    #[test]
    fn valid_range_handles_edges() {
        // w=5, k=3, stride=2, pad=1 -> ow=3; kx=0 misses ox=0 (ix=-1),
        // kx=2 misses ox=2 (ix=5).
        assert_eq!(valid_range(5, 0, 2, 1, 3), (1, 2));
        assert_eq!(valid_range(5, 1, 2, 1, 3), (0, 2));
        assert_eq!(valid_range(5, 2, 2, 1, 3), (0, 1));
    }

    #[test]
    fn im2row_is_transpose_of_im2col() {
        let (c, h, w, k, s, p) = (3usize, 5usize, 7usize, 3usize, 2usize, 1usize);
        let (oh, ow) = (3, 4);
        let src: Vec<f32> = (0..c * h * w).map(|i| i as f32 * 0.1).collect();
        let kk = c * k * k;
        let pitch = kk.next_multiple_of(TILE);
        let mut col = vec![0.0f32; kk * oh * ow];
        let mut rows = vec![1.0f32; pitch * oh * ow];
        im2col(&src, c, h, w, k, s, p, oh, ow, &mut col);
        im2row(&src, c, h, w, k, s, p, oh, ow, pitch, &mut rows);
        for pos in 0..oh * ow {
            for kidx in 0..kk {
                assert_eq!(col[kidx * oh * ow + pos], rows[pos * pitch + kidx]);
            }
            for pad_idx in kk..pitch {
                assert_eq!(rows[pos * pitch + pad_idx], 0.0);
            }
        }
    }

    #[test]
    fn gemm_matches_naive() {
        let (m, kk, p) = (7, 13, 37);
        let a: Vec<f32> = (0..m * kk).map(|i| ((i * 31 % 17) as f32) * 0.25 - 2.0).collect();
        let b: Vec<f32> = (0..kk * p).map(|i| ((i * 7 % 23) as f32) * 0.125 - 1.0).collect();
        let mut out = vec![0.5f32; m * p];
        let mut naive = out.clone();
        gemm_acc(&mut out, &a, &b, m, kk, p);
        for i in 0..m {
            for j in 0..p {
                let mut acc = naive[i * p + j];
                for q in 0..kk {
                    acc += a[i * kk + q] * b[q * p + j];
                }
                naive[i * p + j] = acc;
            }
        }
        for (x, y) in out.iter().zip(&naive) {
            assert!((x - y).abs() <= 1e-4 * y.abs().max(1.0), "{x} vs {y}");
        }
    }
}
