//! Dense NCHW tensors and differentiable kernels with hand-derived backward
//! passes: strided convolution, transposed convolution, activations, losses,
//! pooling and a dense layer. No autograd tape — the two fixed networks in
//! this crate call layer backwards explicitly.
//!
//! Every kernel is a pure function; parallelism (rayon over disjoint output
//! regions) never changes summation order, so results are bit-identical
//! across runs and thread counts.

mod conv;
mod ops;

pub use conv::{
    conv2d_backward, conv2d_backward_masked, conv2d_forward, convtranspose2d_backward,
    convtranspose2d_backward_masked, convtranspose2d_forward, GradMask,
};
pub use ops::{
    dense_backward, dense_forward, global_avg_pool, global_avg_pool_backward, mse_loss, relu,
    relu_backward, sigmoid, sigmoid_backward, softmax_cross_entropy,
};

use crate::error::{Error, Result};

/// Dense 4-D array in row-major (batch, channel, height, width) order,
/// single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            shape: [n, c, h, w],
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn filled(shape: [usize; 4], value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::ShapeMismatch {
                op: "Tensor::from_vec",
                dim: "data length",
                expected: expect.to_string(),
                actual: data.len().to_string(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Number of values in one sample (C*H*W).
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    /// One sample's values.
    pub fn sample(&self, n: usize) -> &[f32] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        let [_, cc, h, w] = self.shape;
        self.data[((n * cc + c) * h + y) * w + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Geometry of one (possibly transposed) convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
}

impl ConvSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            transposed: false,
        }
    }

    pub fn transposed(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            transposed: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig {
                field: "ConvSpec",
                reason: format!("kernel and stride must be >= 1, got kernel={} stride={}", self.kernel, self.stride),
            });
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig {
                field: "ConvSpec",
                reason: "channel counts must be >= 1".into(),
            });
        }
        Ok(())
    }

    /// Output spatial extents for an input of the given extents.
    ///
    /// floor((n + 2p - k)/s) + 1 for plain convolution,
    /// (n - 1)*s - 2p + k for transposed convolution.
    pub fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let extent = |n: usize| -> Option<usize> {
            if self.transposed {
                let grown = (n.checked_sub(1)?) * self.stride + self.kernel;
                grown.checked_sub(2 * self.padding).filter(|&e| e >= 1)
            } else {
                let padded = n + 2 * self.padding;
                padded.checked_sub(self.kernel).map(|d| d / self.stride + 1)
            }
        };
        match (extent(h), extent(w)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::EmptyOutput {
                op: if self.transposed { "convtranspose2d" } else { "conv2d" },
                detail: format!(
                    "input {}x{} with kernel {}, stride {}, padding {} leaves no output",
                    h, w, self.kernel, self.stride, self.padding
                ),
            }),
        }
    }

    /// Weight tensor shape: [out, in, k, k] for convolution,
    /// [in, out, k, k] for transposed convolution.
    pub fn weight_shape(&self) -> [usize; 4] {
        if self.transposed {
            [self.in_channels, self.out_channels, self.kernel, self.kernel]
        } else {
            [self.out_channels, self.in_channels, self.kernel, self.kernel]
        }
    }

    pub fn weight_count(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel * self.kernel
    }

    /// Average number of summed inputs per output element; the scale basis
    /// for fan-in weight initialization. For transposed convolution each
    /// output pixel receives k^2/s^2 taps per input channel.
    pub fn fan_in(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        if self.transposed {
            let s2 = self.stride * self.stride;
            (self.in_channels * k2).div_ceil(s2)
        } else {
            self.in_channels * k2
        }
    }
}

/// Gradients of one layer: with respect to its weight, bias, and input.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weight: Tensor,
    pub d_bias: Vec<f32>,
    pub d_input: Tensor,
}

pub(crate) fn check_shape(
    op: &'static str,
    dim: &'static str,
    expected: impl std::fmt::Debug,
    actual: impl std::fmt::Debug,
    ok: bool,
) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            dim,
            expected: format!("{:?}", expected),
            actual: format!("{:?}", actual),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::from_vec([1, 1, 2, 2], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn conv_shape_formula() {
        let spec = ConvSpec::conv(3, 64, 3, 2, 1);
        assert_eq!(spec.out_hw(64, 64).unwrap(), (32, 32));
        assert_eq!(spec.out_hw(8, 6).unwrap(), (4, 3));
    }

    #[test]
    fn transposed_shape_formula() {
        let spec = ConvSpec::transposed(128, 64, 2, 2, 0);
        assert_eq!(spec.out_hw(16, 16).unwrap(), (32, 32));
    }

    #[test]
    fn empty_output_is_an_error() {
        let spec = ConvSpec::conv(1, 1, 5, 1, 0);
        assert!(matches!(spec.out_hw(3, 3), Err(Error::EmptyOutput { .. })));
    }

    #[test]
    fn fan_in_counts_taps() {
        assert_eq!(ConvSpec::conv(3, 64, 3, 2, 1).fan_in(), 27);
        assert_eq!(ConvSpec::transposed(128, 64, 2, 2, 0).fan_in(), 128);
    }
}
