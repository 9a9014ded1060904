//! Double-precision reference kernels and finite-difference helpers.
//!
//! Everything here is written as plainly as possible — direct nested loops in
//! `f64`, no blocking, no parallelism — so it can serve as an independent
//! oracle for the optimized single-precision implementations. This crate is a
//! dev-dependency only; nothing in the shipped pipeline calls it.

/// Output spatial extent of a strided convolution: floor((n + 2p - k)/s) + 1.
pub fn conv_out_extent(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = n + 2 * p;
    if padded < k {
        return None;
    }
    Some((padded - k) / s + 1)
}

/// Output spatial extent of a transposed convolution: (n - 1)*s - 2p + k.
pub fn convt_out_extent(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let grown = (n - 1) * s + k;
    if grown < 2 * p + 1 {
        return None;
    }
    Some(grown - 2 * p)
}

/// Direct cross-correlation, six nested loops, f64.
///
/// `input` is NCHW, `weight` is [out_c, in_c, k, k], `bias` has out_c entries.
/// Returns the NCHW output.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_ref(
    input: &[f64],
    n: usize,
    in_c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    bias: &[f64],
) -> Vec<f64> {
    let oh = conv_out_extent(h, k, stride, pad).expect("empty conv output");
    let ow = conv_out_extent(w, k, stride, pad).expect("empty conv output");
    let mut out = vec![0.0; n * out_c * oh * ow];
    for b in 0..n {
        for oc in 0..out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[oc];
                    for ic in 0..in_c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = input
                                    [((b * in_c + ic) * h + iy as usize) * w + ix as usize];
                                let wv = weight[((oc * in_c + ic) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * out_c + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Direct transposed convolution by scattering each input pixel, f64.
///
/// `input` is NCHW with `in_c` channels, `weight` is [in_c, out_c, k, k].
#[allow(clippy::too_many_arguments)]
pub fn convtranspose2d_ref(
    input: &[f64],
    n: usize,
    in_c: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    bias: &[f64],
) -> Vec<f64> {
    let oh = convt_out_extent(h, k, stride, pad).expect("empty transposed conv output");
    let ow = convt_out_extent(w, k, stride, pad).expect("empty transposed conv output");
    let mut out = vec![0.0; n * out_c * oh * ow];
    for b in 0..n {
        for oc in 0..out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    out[((b * out_c + oc) * oh + oy) * ow + ox] = bias[oc];
                }
            }
        }
        for ic in 0..in_c {
            for iy in 0..h {
                for ix in 0..w {
                    let xv = input[((b * in_c + ic) * h + iy) * w + ix];
                    for oc in 0..out_c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (iy * stride + ky) as isize - pad as isize;
                                let ox = (ix * stride + kx) as isize - pad as isize;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                let wv = weight[((ic * out_c + oc) * k + ky) * k + kx];
                                out[((b * out_c + oc) * oh + oy as usize) * ow + ox as usize] +=
                                    xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn relu_ref(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

pub fn sigmoid_ref(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect()
}

pub fn mse_ref(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    sum / pred.len() as f64
}

/// Mean negative log-softmax of the true class over the batch.
pub fn softmax_xent_ref(logits: &[f64], n: usize, classes: usize, labels: &[usize]) -> f64 {
    assert_eq!(logits.len(), n * classes);
    assert_eq!(labels.len(), n);
    let mut total = 0.0;
    for b in 0..n {
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum: f64 = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += -(row[labels[b]] - max - log_sum);
    }
    total / n as f64
}

/// Per-channel spatial mean: NCHW -> NC11.
pub fn global_avg_pool_ref(input: &[f64], n: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            let sum: f64 = input[base..base + h * w].iter().sum();
            out[b * c + ch] = sum / (h * w) as f64;
        }
    }
    out
}

/// Affine map per sample: input [n, c], weight [k, c], bias [k] -> [n, k].
pub fn dense_ref(input: &[f64], n: usize, c: usize, weight: &[f64], k: usize, bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for b in 0..n {
        for o in 0..k {
            let mut acc = bias[o];
            for i in 0..c {
                acc += input[b * c + i] * weight[o * c + i];
            }
            out[b * k + o] = acc;
        }
    }
    out
}

/// Central finite difference of `f` along coordinate `idx` of `x`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], idx: usize, step: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[idx] += step;
    minus[idx] -= step;
    (f(&plus) - f(&minus)) / (2.0 * step)
}

/// Weighted sum used to reduce a kernel output to a scalar for gradient checks;
/// the weights play the role of the upstream gradient.
pub fn weighted_sum(values: &[f64], weights: &[f64]) -> f64 {
    assert_eq!(values.len(), weights.len());
    values.iter().zip(weights).map(|(&v, &w)| v * w).sum()
}

/// Relative error with an absolute floor so near-zero pairs compare as equal.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-6 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_constant_field() {
        // 1x1x3x3 ones, 2x2 ones kernel, stride 1, no padding -> 2x2 of 4.0
        let input = vec![1.0; 9];
        let weight = vec![1.0; 4];
        let out = conv2d_ref(&input, 1, 1, 3, 3, &weight, 1, 2, 1, 0, &[0.0]);
        assert_eq!(out, vec![4.0; 4]);
    }

    #[test]
    fn convt_disjoint_tiles() {
        // 1x1x2x2 ones through a 2x2 ones kernel at stride 2 tiles a 4x4 of ones.
        let input = vec![1.0; 4];
        let weight = vec![1.0; 4];
        let out = convtranspose2d_ref(&input, 1, 1, 2, 2, &weight, 1, 2, 2, 0, &[0.0]);
        assert_eq!(out, vec![1.0; 16]);
    }

    #[test]
    fn xent_uniform_two_way() {
        let loss = softmax_xent_ref(&[0.3, 0.3], 1, 2, &[0]);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn finite_difference_of_square() {
        let mut f = |x: &[f64]| x[0] * x[0];
        let g = central_diff(&mut f, &[3.0], 0, 1e-5);
        assert!((g - 6.0).abs() < 1e-8);
    }
}
