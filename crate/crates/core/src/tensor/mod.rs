//! Shaped arrays, the feature-axis convolution layer set, a reverse-mode
//! differentiation tape, parameters and the Adam optimizer.
//!
//! Feature maps are `M x 1 x C` tensors (feature axis, time axis of length
//! one, channels) stored row-major, so channel values of one feature row are
//! contiguous.

mod adam;
pub mod checkpoint;
pub(crate) mod kernels;
mod layers;
mod param;
mod tape;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};

pub use adam::{adam_update, AdamConfig};
pub use kernels::conv_geometry;
pub use layers::{convlstm_step, ConvLstmWeights};
pub use param::{glorot_uniform, ParamSet, Parameter};
pub use tape::{Gradients, Tape, Var};
pub(crate) use tape::{bin_weight, compressed_gain};

/// Floating-point element type of tensors.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + Default
    + Debug
    + PartialOrd
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
{
    const NAME: &'static str;
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const NAME: &'static str = stringify!($t);
            #[inline]
            fn zero() -> Self {
                0.0
            }
            #[inline]
            fn one() -> Self {
                1.0
            }
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.contains(&0) || n != data.len() {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("{shape:?} ({n} values)"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// Feature map of shape `rows x 1 x channels`.
    pub fn feature_map(rows: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec(vec![rows, 1, channels], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// `(rows, channels)` of an `M x 1 x C` feature map.
    pub fn feature_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[m, 1, c] => Ok((m, c)),
            other => Err(Error::shape(op, "[M, 1, C]", format!("{other:?}"))),
        }
    }
}

/// Feature-axis convolution layer description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_len: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub transposed: bool,
}

impl ConvSpec {
    pub fn conv(kernel_len: usize, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        ConvSpec {
            kernel_len,
            in_channels,
            out_channels,
            stride,
            transposed: false,
        }
    }

    pub fn deconv(kernel_len: usize, in_channels: usize, out_channels: usize, stride: usize) -> Self {
        ConvSpec {
            transposed: true,
            ..Self::conv(kernel_len, in_channels, out_channels, stride)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_len == 0 || !(1..=2).contains(&self.stride) {
            return Err(Error::Config(format!("invalid conv spec {self:?}")));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!("zero channels in {self:?}")));
        }
        Ok(())
    }

    /// Weight shape. A transposed layer stores its kernel in the layout of the
    /// forward convolution it is the adjoint of: `[N, C_out, C_in]`.
    pub fn weight_shape(&self) -> Vec<usize> {
        if self.transposed {
            vec![self.kernel_len, self.out_channels, self.in_channels]
        } else {
            vec![self.kernel_len, self.in_channels, self.out_channels]
        }
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        if self.transposed {
            input_len * self.stride
        } else {
            input_len.div_ceil(self.stride)
        }
    }

    pub fn num_params(&self, with_bias: bool) -> usize {
        self.kernel_len * self.in_channels * self.out_channels
            + if with_bias { self.out_channels } else { 0 }
    }
}

fn check_layer<T: Scalar>(
    op: &'static str,
    input: &Tensor<T>,
    spec: &ConvSpec,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<(usize, usize)> {
    spec.validate()?;
    let (m, c) = input.feature_dims(op)?;
    if c != spec.in_channels {
        return Err(Error::shape(op, format!("{} input channels", spec.in_channels), c));
    }
    if weights.shape() != spec.weight_shape() {
        return Err(Error::shape(
            op,
            format!("weights {:?}", spec.weight_shape()),
            format!("{:?}", weights.shape()),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(Error::shape(op, spec.out_channels, format!("bias {:?}", b.shape())));
        }
    }
    Ok((m, spec.output_len(m)))
}

/// "Same"-padded cross-correlation along the feature axis.
pub fn conv1d_feature<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if spec.transposed {
        return Err(Error::InvalidArgument("conv1d_feature given a transposed spec".into()));
    }
    let (m_in, m_out) = check_layer("conv1d_feature", input, spec, weights, bias)?;
    let mut out = vec![T::zero(); m_out * spec.out_channels];
    kernels::conv_forward(
        input.data(),
        m_in,
        spec.in_channels,
        weights.data(),
        bias.map(|b| b.data()),
        spec.out_channels,
        spec.kernel_len,
        spec.stride,
        &mut out,
    );
    Tensor::feature_map(m_out, spec.out_channels, out)
}

/// Transposed convolution: the adjoint of [`conv1d_feature`] with respect to
/// its input, plus bias. Stride-2 layers double the feature axis.
pub fn deconv1d_feature<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    if !spec.transposed {
        return Err(Error::InvalidArgument("deconv1d_feature needs a transposed spec".into()));
    }
    let (m_in, m_out) = check_layer("deconv1d_feature", input, spec, weights, bias)?;
    let mut out = vec![T::zero(); m_out * spec.out_channels];
    kernels::deconv_forward(
        input.data(),
        m_in,
        spec.in_channels,
        weights.data(),
        bias.map(|b| b.data()),
        spec.out_channels,
        spec.kernel_len,
        spec.stride,
        &mut out,
    );
    Tensor::feature_map(m_out, spec.out_channels, out)
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::from_f64(slope);
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| if v > T::zero() { v } else { s * v }).collect(),
    }
}

/// `clamp(0.2 x + 0.5, 0, 1)`.
pub fn hard_sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| kernels::hard_sigmoid(v)).collect(),
    }
}
