//! Activations, losses, global average pooling and the dense layer.

use super::{check_shape, LayerGrads, Tensor};
use crate::error::{Error, Result};

/// Elementwise max(x, 0).
pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Passes upstream where the forward input was strictly positive; the
/// subgradient at exactly zero is zero.
pub fn relu_backward(input: &Tensor, upstream: &Tensor) -> Tensor {
    assert_eq!(input.shape(), upstream.shape(), "relu_backward shapes");
    let mut out = upstream.clone();
    for (o, &x) in out.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *o = 0.0;
        }
    }
    out
}

fn sigmoid_scalar(x: f32) -> f32 {
    // Split on sign so the exponential never overflows.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise logistic function, output in (0, 1).
pub fn sigmoid(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = sigmoid_scalar(*v);
    }
    out
}

/// upstream * s(x) * (1 - s(x)), where x is the forward input.
pub fn sigmoid_backward(input: &Tensor, upstream: &Tensor) -> Tensor {
    assert_eq!(input.shape(), upstream.shape(), "sigmoid_backward shapes");
    let mut out = upstream.clone();
    for (o, &x) in out.data_mut().iter_mut().zip(input.data()) {
        let s = sigmoid_scalar(x);
        *o *= s * (1.0 - s);
    }
    out
}

/// Mean squared error over all elements and its gradient with respect to the
/// prediction: 2 (pred - target) / element count.
pub fn mse_loss(prediction: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    check_shape(
        "mse_loss",
        "target shape",
        prediction.shape(),
        target.shape(),
        prediction.shape() == target.shape(),
    )?;
    let count = prediction.numel() as f64;
    let mut grad = prediction.clone();
    let scale = (2.0 / count) as f32;
    let mut loss = 0.0f64;
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let diff = *g - t;
        loss += (diff as f64) * (diff as f64);
        *g = diff * scale;
    }
    Ok((loss / count, grad))
}

/// Mean negative log-softmax of the true class; gradient is
/// (softmax - onehot) / batch. Logits are [N, K, 1, 1].
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [n, k, h, w] = logits.shape();
    check_shape(
        "softmax_cross_entropy",
        "logit spatial extent",
        [1usize, 1usize],
        [h, w],
        h == 1 && w == 1,
    )?;
    check_shape(
        "softmax_cross_entropy",
        "label count",
        n,
        labels.len(),
        labels.len() == n,
    )?;
    for &label in labels {
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
    }

    let mut grad = Tensor::zeros(n, k, 1, 1);
    let inv_n = 1.0 / n as f32;
    let mut loss = 0.0f64;
    for b in 0..n {
        let row = &logits.data()[b * k..(b + 1) * k];
        let out = &mut grad.data_mut()[b * k..(b + 1) * k];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut denom = 0.0f32;
        for (o, &z) in out.iter_mut().zip(row) {
            let e = (z - max).exp();
            *o = e;
            denom += e;
        }
        loss += -(((row[labels[b]] - max) as f64) - (denom as f64).ln());
        for o in out.iter_mut() {
            *o /= denom;
        }
        out[labels[b]] -= 1.0;
        for o in out.iter_mut() {
            *o *= inv_n;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Per-channel spatial mean: NCHW -> NC11.
pub fn global_avg_pool(input: &Tensor) -> Tensor {
    let [n, c, h, w] = input.shape();
    let mut out = Tensor::zeros(n, c, 1, 1);
    let inv = 1.0 / (h * w) as f32;
    for bc in 0..n * c {
        let mut acc = 0.0f32;
        for &v in &input.data()[bc * h * w..(bc + 1) * h * w] {
            acc += v;
        }
        out.data_mut()[bc] = acc * inv;
    }
    out
}

/// Distributes upstream / (H*W) uniformly over each channel plane.
pub fn global_avg_pool_backward(input: &Tensor, upstream: &Tensor) -> Tensor {
    let [n, c, h, w] = input.shape();
    assert_eq!(upstream.shape(), [n, c, 1, 1], "global_avg_pool_backward shapes");
    let mut out = Tensor::zeros(n, c, h, w);
    let inv = 1.0 / (h * w) as f32;
    for bc in 0..n * c {
        let g = upstream.data()[bc] * inv;
        out.data_mut()[bc * h * w..(bc + 1) * h * w].fill(g);
    }
    out
}

/// Affine map per sample: input [N, C, 1, 1], weight [K, C, 1, 1], bias [K]
/// -> [N, K, 1, 1].
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let [n, c, h, w] = input.shape();
    check_shape(
        "dense_forward",
        "input spatial extent",
        [1usize, 1usize],
        [h, w],
        h == 1 && w == 1,
    )?;
    let [k, wc, wh, ww] = weight.shape();
    check_shape(
        "dense_forward",
        "weight shape",
        [k, c, 1, 1],
        weight.shape(),
        wc == c && wh == 1 && ww == 1,
    )?;
    check_shape("dense_forward", "bias length", k, bias.len(), bias.len() == k)?;

    let mut out = Tensor::zeros(n, k, 1, 1);
    for b in 0..n {
        let x = &input.data()[b * c..(b + 1) * c];
        let o = &mut out.data_mut()[b * k..(b + 1) * k];
        for (j, oj) in o.iter_mut().enumerate() {
            let wrow = &weight.data()[j * c..(j + 1) * c];
            let mut acc = bias[j];
            for (&xv, &wv) in x.iter().zip(wrow) {
                acc += xv * wv;
            }
            *oj = acc;
        }
    }
    Ok(out)
}

/// Analytic gradients of `dense_forward`.
pub fn dense_backward(input: &Tensor, weight: &Tensor, upstream: &Tensor) -> Result<LayerGrads> {
    let [n, c, _, _] = input.shape();
    let [k, _, _, _] = weight.shape();
    // Reuse forward validation for input/weight agreement.
    dense_forward(input, weight, &vec![0.0; k])?;
    check_shape(
        "dense_backward",
        "upstream shape",
        [n, k, 1, 1],
        upstream.shape(),
        upstream.shape() == [n, k, 1, 1],
    )?;

    let mut d_weight = Tensor::zeros(k, c, 1, 1);
    let mut d_bias = vec![0.0f32; k];
    let mut d_input = Tensor::zeros(n, c, 1, 1);
    for b in 0..n {
        let x = &input.data()[b * c..(b + 1) * c];
        let g = &upstream.data()[b * k..(b + 1) * k];
        for (j, &gj) in g.iter().enumerate() {
            d_bias[j] += gj;
            let dw = &mut d_weight.data_mut()[j * c..(j + 1) * c];
            for (dwi, &xv) in dw.iter_mut().zip(x) {
                *dwi += gj * xv;
            }
        }
        let dx = &mut d_input.data_mut()[b * c..(b + 1) * c];
        for (j, &gj) in g.iter().enumerate() {
            let wrow = &weight.data()[j * c..(j + 1) * c];
            for (dxi, &wv) in dx.iter_mut().zip(wrow) {
                *dxi += gj * wv;
            }
        }
    }
    Ok(LayerGrads {
        d_weight,
        d_bias,
        d_input,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_definition() {
        let t = Tensor::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_all_positive_is_identity() {
        let t = Tensor::from_vec([1, 1, 1, 3], vec![0.5, 1.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), t.data());
    }

    #[test]
    fn relu_backward_gates_on_input_sign() {
        let x = Tensor::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let up = Tensor::filled([1, 1, 1, 3], 3.0);
        assert_eq!(relu_backward(&x, &up).data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let t = Tensor::zeros(1, 1, 1, 1);
        assert_eq!(sigmoid(&t).data(), &[0.5]);
    }

    #[test]
    fn sigmoid_saturates_without_nan() {
        let t = Tensor::from_vec([1, 1, 1, 2], vec![-1000.0, 1000.0]).unwrap();
        let s = sigmoid(&t);
        assert!(s.is_finite());
        assert!(s.data()[0] >= 0.0 && s.data()[0] < 1e-6);
        assert!(s.data()[1] > 1.0 - 1e-6 && s.data()[1] <= 1.0);
    }

    #[test]
    fn mse_hand_arithmetic() {
        let pred = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 1.0]).unwrap();
        let target = Tensor::zeros(1, 1, 1, 2);
        let (loss, grad) = mse_loss(&pred, &target).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grad.data(), &[1.0, 1.0]);
    }

    #[test]
    fn mse_zero_at_equality() {
        let pred = Tensor::from_vec([1, 1, 2, 1], vec![0.3, -0.7]).unwrap();
        let (loss, grad) = mse_loss(&pred, &pred.clone()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn xent_uniform_logits_is_ln_k() {
        let logits = Tensor::filled([1, 2, 1, 1], 0.7);
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn xent_dominant_true_class_is_near_zero() {
        let logits = Tensor::from_vec([1, 3, 1, 1], vec![1000.0, 0.0, 0.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.is_finite());
        assert!(loss < 1e-6);
        assert!(grad.is_finite());
    }

    #[test]
    fn xent_rejects_out_of_range_label() {
        let logits = Tensor::zeros(1, 3, 1, 1);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn gap_hand_arithmetic() {
        let t = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&t).data(), &[2.5]);
    }

    #[test]
    fn gap_constant_plane() {
        let t = Tensor::filled([2, 3, 4, 4], 0.75);
        assert!(global_avg_pool(&t).data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn dense_identity_weight_passes_through() {
        let x = Tensor::from_vec([1, 2, 1, 1], vec![3.0, -1.0]).unwrap();
        let w = Tensor::from_vec([2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = dense_forward(&x, &w, &[0.0, 0.0]).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn dense_zero_weight_yields_bias() {
        let x = Tensor::filled([2, 3, 1, 1], 9.0);
        let w = Tensor::zeros(2, 3, 1, 1);
        let out = dense_forward(&x, &w, &[0.5, -0.5]).unwrap();
        assert_eq!(out.data(), &[0.5, -0.5, 0.5, -0.5]);
    }
}
