//! Two-stage Y-Net acoustic echo cancellation and noise suppression.
//!
//! The crate is organized along the processing chain:
//!
//! - [`dsp`]: high-pass, square-root-Hann STFT analysis and overlap-add synthesis, WAV I/O
//! - [`tensor`]: feature-axis convolution layers, a reverse-mode differentiation tape, Adam
//! - [`ynet`]: the two-input, one-output convolutional recurrent network
//! - [`pipeline`]: AEC stage, echo subtraction, postfilter stage and compressed complex mask
//! - [`synth`]: synthetic echo/near-end/noise mixtures for training and evaluation
//! - [`train`]: losses, BPTT batching, the two-step training protocol and LR schedule
//! - [`metrics`]: ERLE, delta-SNR, component decomposition, condition evaluation, RTF

pub mod dsp;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod ynet;

pub use dsp::{FrameConfig, Signal, Spectrum, SpectrumSeq};
pub use error::{Error, Result};
pub use pipeline::{FrameModel, FrameOutput, IdentityModel, Mode, PfInput, Y2Net, Y2NetConfig};
pub use tensor::{ParamSet, Scalar, Tensor};
pub use ynet::{Fusion, YNetConfig};
