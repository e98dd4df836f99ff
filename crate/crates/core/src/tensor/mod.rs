//! Minimal dense-tensor arithmetic for the attention blocks and the toy
//! detector.
//!
//! There is no autodiff graph: every operation exports an explicit backward
//! function and composite blocks chain them by hand. Ops are generic over
//! [`Scalar`] so the same code runs in f32 (production) and f64 (gradient
//! checking only).

mod grad;
mod ops;

pub use grad::{
    adaptive_avg_pool_backward, adaptive_max_pool_backward, broadcast_mul_backward,
    channel_max_backward, channel_mean_backward, conv2d_backward, grad_check, maxpool2d_backward,
    relu_backward, sigmoid_backward, silu_backward,
};
pub use ops::{
    adaptive_avg_pool, adaptive_max_pool, adaptive_max_pool_indexed, adaptive_pool,
    broadcast_mul, channel_concat, channel_max, channel_max_indexed, channel_mean,
    channel_slice, conv2d, maxpool2d, maxpool2d_indexed, relu, sigmoid, silu, PoolMode,
};

use std::fmt;

/// Element type for tensors. f32 is the production type; f64 exists solely
/// for finite-difference gradient checking.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Copy + Send + Sync + fmt::Debug + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Errors from tensor construction and ops. Shape failures name the
/// offending axis.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: data length {got} does not match shape product {expected}")]
    DataLength { op: &'static str, expected: usize, got: usize },
    #[error("{op}: expected rank {expected}, got rank {got}")]
    Rank { op: &'static str, expected: usize, got: usize },
    #[error("{op}: axis {axis} mismatch, expected {expected}, got {got}")]
    AxisMismatch { op: &'static str, axis: &'static str, expected: usize, got: usize },
    #[error("{op}: kernel {k}x{k} does not fit input {h}x{w} with padding {padding}")]
    KernelTooLarge { op: &'static str, k: usize, h: usize, w: usize, padding: usize },
    #[error("{op}: kernel size {k} must be odd")]
    EvenKernel { op: &'static str, k: usize },
    #[error("{op}: empty tensor")]
    Empty { op: &'static str },
    #[error("{op}: non-finite value at element {index}")]
    NonFinite { op: &'static str, index: usize },
}

/// Dense N-dimensional array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength { op: "Tensor::new", expected, got: data.len() });
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); len] }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..len).map(|i| f(i)).collect() }
    }

    /// Uniform samples in [lo, hi) from the supplied RNG, in index order.
    pub fn random_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl rand::Rng) -> Self {
        Self::from_fn(shape, |_| T::from_f64(rng.gen_range(lo..hi)))
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Interpret as NCHW; errors if the rank is not 4.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize), TensorError> {
        if self.shape.len() != 4 {
            return Err(TensorError::Rank { op, expected: 4, got: self.shape.len() });
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &b| a + b)
    }

    /// Elementwise in-place add; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| v.as_f64()).collect() }
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.as_f64() as f32).collect(),
        }
    }
}

/// Convolution parameters: OIHW weight, optional per-output-channel bias.
/// All kernels in this artifact are odd (1, 3 or 7).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Tensor<T>>, stride: usize, padding: usize) -> Self {
        Self { weight, bias, stride, padding }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Weights uniform in ±1/sqrt(fan_in), biases zero.
    pub fn init_uniform(
        out_ch: usize,
        in_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        Self::init_uniform_gain(out_ch, in_ch, k, stride, padding, 1.0, rng)
    }

    /// Uniform init with bound gain/sqrt(fan_in), biases zero. Feature-path
    /// convolutions in an unnormalized net need gain sqrt(6) to keep
    /// activation variance from collapsing layer over layer.
    pub fn init_uniform_gain(
        out_ch: usize,
        in_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        gain: f64,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let fan_in = (in_ch * k * k) as f64;
        let bound = gain / fan_in.sqrt();
        let weight = Tensor::random_uniform(&[out_ch, in_ch, k, k], -bound, bound, rng);
        let bias = Some(Tensor::zeros(&[out_ch]));
        Self { weight, bias, stride, padding }
    }

    pub fn to_f64(&self) -> ConvParams<f64> {
        ConvParams {
            weight: self.weight.to_f64(),
            bias: self.bias.as_ref().map(Tensor::to_f64),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

/// Parameter gradients for one convolution.
#[derive(Debug, Clone)]
pub struct ConvGrads<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length() {
        let err = Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert_eq!(err, TensorError::DataLength { op: "Tensor::new", expected: 6, got: 5 });
    }

    #[test]
    fn dims4_requires_rank_4() {
        let t = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(t.dims4("test"), Err(TensorError::Rank { .. })));
    }

    #[test]
    fn f64_round_trip() {
        let t = Tensor::<f32>::new(&[3], vec![1.0, -2.5, 0.125]).unwrap();
        assert_eq!(t.to_f64().to_f32(), t);
    }
}
