//! Time/frequency front-end: DC-blocking high-pass, square-root-Hann framed
//! real DFT analysis, and the matching inverse DFT / overlap-add synthesis.
//!
//! Frame `l` covers samples `[l * shift, l * shift + frame_len)`. Each frame is
//! multiplied by a periodic square-root Hann window, zero-padded to the DFT
//! size and transformed. Synthesis inverts the DFT, truncates back to
//! `frame_len`, applies the same window and overlap-adds at 50% shift, so the
//! analysis/synthesis window product is a periodic Hann that sums to one.

mod stream;
pub mod wav;

use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use stream::{StreamingAnalyzer, StreamingSynthesizer};

/// One complex spectrum of `n_bins` non-redundant DFT bins.
pub type Spectrum = Vec<Complex64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    pub sample_rate_hz: u32,
    pub frame_len: usize,
    pub frame_shift: usize,
    pub dft_size: usize,
    pub n_bins: usize,
    /// Feature-axis length of the network tensors (bins plus zero padding).
    pub feature_dim: usize,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig {
            sample_rate_hz: 16_000,
            frame_len: 424,
            frame_shift: 212,
            dft_size: 512,
            n_bins: 257,
            feature_dim: 260,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.frame_len == 0 || !self.frame_len.is_multiple_of(2) {
            return fail(format!("frame_len {} must be positive and even", self.frame_len));
        }
        if self.frame_shift * 2 != self.frame_len {
            return fail(format!(
                "frame_shift {} must be half of frame_len {}",
                self.frame_shift, self.frame_len
            ));
        }
        if self.dft_size < self.frame_len {
            return fail(format!(
                "dft_size {} shorter than frame_len {}",
                self.dft_size, self.frame_len
            ));
        }
        if self.n_bins != self.dft_size / 2 + 1 {
            return fail(format!(
                "n_bins {} must equal dft_size/2 + 1 = {}",
                self.n_bins,
                self.dft_size / 2 + 1
            ));
        }
        if self.feature_dim < self.n_bins || !self.feature_dim.is_multiple_of(4) {
            return fail(format!(
                "feature_dim {} must be >= n_bins {} and divisible by 4",
                self.feature_dim, self.n_bins
            ));
        }
        if self.algorithmic_latency_ms() > 40.0 {
            return fail(format!(
                "algorithmic latency {} ms exceeds 40 ms",
                self.algorithmic_latency_ms()
            ));
        }
        Ok(())
    }

    pub fn frame_len_ms(&self) -> f64 {
        self.frame_len as f64 * 1000.0 / self.sample_rate_hz as f64
    }

    pub fn frame_shift_ms(&self) -> f64 {
        self.frame_shift as f64 * 1000.0 / self.sample_rate_hz as f64
    }

    /// Frame length plus frame shift, in milliseconds.
    pub fn algorithmic_latency_ms(&self) -> f64 {
        (self.frame_len + self.frame_shift) as f64 * 1000.0 / self.sample_rate_hz as f64
    }

    /// Number of complete frames in a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.frame_shift + 1
        }
    }

    /// Length of the overlap-add output for `num_frames` frames.
    pub fn output_len(&self, num_frames: usize) -> usize {
        if num_frames == 0 {
            0
        } else {
            (num_frames - 1) * self.frame_shift + self.frame_len
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Signal {
            samples,
            sample_rate_hz,
        }
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Self {
        Signal::new(vec![0.0; len], sample_rate_hz)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.samples.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("signal"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSeq {
    pub frames: Vec<Spectrum>,
    pub config: FrameConfig,
}

impl SpectrumSeq {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Pole of the DC-blocking high-pass.
pub const HIGHPASS_POLE: f64 = 0.99;

/// First-order DC blocker `y(n) = x(n) - x(n-1) + r * y(n-1)`.
#[derive(Debug, Clone, Copy)]
pub struct HighPass {
    pole: f64,
    prev_in: f64,
    prev_out: f64,
}

impl Default for HighPass {
    fn default() -> Self {
        HighPass::new(HIGHPASS_POLE)
    }
}

impl HighPass {
    pub fn new(pole: f64) -> Self {
        HighPass {
            pole,
            prev_in: 0.0,
            prev_out: 0.0,
        }
    }

    pub fn reset(&mut self) {
        self.prev_in = 0.0;
        self.prev_out = 0.0;
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = x - self.prev_in + self.pole * self.prev_out;
        self.prev_in = x;
        self.prev_out = y;
        y
    }
}

/// Causal DC removal from zero state.
pub fn highpass(signal: &Signal) -> Result<Signal> {
    if signal.is_empty() {
        return Err(Error::EmptyInput("highpass"));
    }
    let mut hp = HighPass::default();
    let samples = signal.samples.iter().map(|&x| hp.process(x)).collect();
    Ok(Signal::new(samples, signal.sample_rate_hz))
}

/// Periodic square-root Hann window of length `len`.
pub fn sqrt_hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| {
            let w = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos());
            w.sqrt()
        })
        .collect()
}

/// Planned forward/inverse transforms for one [`FrameConfig`].
///
/// Forward DFT is un-normalized; the inverse scales by `1/K`.
#[derive(Clone)]
pub struct Stft {
    config: FrameConfig,
    window: Vec<f64>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

impl Stft {
    pub fn new(config: FrameConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = RealFftPlanner::<f64>::new();
        Ok(Stft {
            config,
            window: sqrt_hann(config.frame_len),
            forward: planner.plan_fft_forward(config.dft_size),
            inverse: planner.plan_fft_inverse(config.dft_size),
        })
    }

    pub fn config(&self) -> &FrameConfig {
        &self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Window, zero-pad and transform exactly one frame of `frame_len` samples.
    pub fn analyze_frame(&self, frame: &[f64]) -> Result<Spectrum> {
        let cfg = &self.config;
        if frame.len() != cfg.frame_len {
            return Err(Error::shape("analyze_frame", cfg.frame_len, frame.len()));
        }
        let mut buf = vec![0.0; cfg.dft_size];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
            *b = x * w;
        }
        let mut out = self.forward.make_output_vec();
        self.forward
            .process(&mut buf, &mut out)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(out)
    }

    /// Inverse transform, truncation to `frame_len` and synthesis windowing.
    pub fn synthesize_frame(&self, spectrum: &[Complex64]) -> Result<Vec<f64>> {
        let cfg = &self.config;
        if spectrum.len() != cfg.n_bins {
            return Err(Error::shape("synthesize_frame", cfg.n_bins, spectrum.len()));
        }
        let mut spec = spectrum.to_vec();
        spec[0].im = 0.0;
        spec[cfg.n_bins - 1].im = 0.0;
        let mut buf = self.inverse.make_output_vec();
        self.inverse
            .process(&mut spec, &mut buf)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let scale = 1.0 / cfg.dft_size as f64;
        Ok(buf[..cfg.frame_len]
            .iter()
            .zip(&self.window)
            .map(|(&v, &w)| v * scale * w)
            .collect())
    }

    pub fn analyze(&self, signal: &Signal) -> Result<SpectrumSeq> {
        let cfg = &self.config;
        if signal.len() < cfg.frame_len {
            return Err(Error::SignalTooShort {
                len: signal.len(),
                needed: cfg.frame_len,
            });
        }
        let frames = (0..cfg.num_frames(signal.len()))
            .map(|l| {
                let start = l * cfg.frame_shift;
                self.analyze_frame(&signal.samples[start..start + cfg.frame_len])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SpectrumSeq {
            frames,
            config: *cfg,
        })
    }

    pub fn synthesize(&self, spectra: &[Spectrum]) -> Result<Signal> {
        let cfg = &self.config;
        if spectra.is_empty() {
            return Err(Error::EmptyInput("synthesize"));
        }
        let mut out = vec![0.0; cfg.output_len(spectra.len())];
        for (l, spec) in spectra.iter().enumerate() {
            if spec.len() != cfg.n_bins {
                return Err(Error::shape(
                    "synthesize",
                    format!("{} bins", cfg.n_bins),
                    format!("{} bins in frame {l}", spec.len()),
                ));
            }
            let frame = self.synthesize_frame(spec)?;
            let start = l * cfg.frame_shift;
            for (o, v) in out[start..start + cfg.frame_len].iter_mut().zip(frame) {
                *o += v;
            }
        }
        Ok(Signal::new(out, cfg.sample_rate_hz))
    }
}

pub fn analyze(signal: &Signal, config: &FrameConfig) -> Result<SpectrumSeq> {
    Stft::new(*config)?.analyze(signal)
}

pub fn synthesize(spectra: &SpectrumSeq, config: &FrameConfig) -> Result<Signal> {
    Stft::new(*config)?.synthesize(&spectra.frames)
}

/// Pack a spectrum into an `M x 1 x 2` feature tensor: real parts in channel
/// 0, imaginary parts in channel 1, rows past the last bin zero.
pub fn pack_features<T: Scalar>(spectrum: &[Complex64], config: &FrameConfig) -> Result<Tensor<T>> {
    if spectrum.len() != config.n_bins {
        return Err(Error::shape("pack_features", config.n_bins, spectrum.len()));
    }
    let mut data = vec![T::zero(); config.feature_dim * 2];
    for (k, c) in spectrum.iter().enumerate() {
        data[2 * k] = T::from_f64(c.re);
        data[2 * k + 1] = T::from_f64(c.im);
    }
    Tensor::from_vec(vec![config.feature_dim, 1, 2], data)
}

/// Inverse of [`pack_features`]. Padding rows are discarded and the DC and
/// Nyquist bins are forced real.
pub fn unpack_features<T: Scalar>(tensor: &Tensor<T>, config: &FrameConfig) -> Result<Spectrum> {
    let want = [config.feature_dim, 1, 2];
    if tensor.shape() != want {
        return Err(Error::shape(
            "unpack_features",
            format!("{want:?}"),
            format!("{:?}", tensor.shape()),
        ));
    }
    Ok(bins_from_rows(tensor.data(), config.n_bins))
}

/// Interpret the first `n_bins` rows of an interleaved (re, im) buffer as a
/// Hermitian-consistent half spectrum.
pub(crate) fn bins_from_rows<T: Scalar>(data: &[T], n_bins: usize) -> Spectrum {
    let mut out: Spectrum = (0..n_bins)
        .map(|k| Complex64::new(data[2 * k].to_f64(), data[2 * k + 1].to_f64()))
        .collect();
    out[0].im = 0.0;
    out[n_bins - 1].im = 0.0;
    out
}

/// Interleave a spectrum as a `n_bins x 1 x 2` tensor (no padding rows).
pub(crate) fn bins_tensor<T: Scalar>(spectrum: &[Complex64]) -> Tensor<T> {
    let data = spectrum
        .iter()
        .flat_map(|c| [T::from_f64(c.re), T::from_f64(c.im)])
        .collect();
    Tensor::from_vec(vec![spectrum.len(), 1, 2], data).expect("consistent length")
}
