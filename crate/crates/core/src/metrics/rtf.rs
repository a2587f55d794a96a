use std::time::{Duration, Instant};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{highpass, FrameConfig, Signal, Stft};
use crate::error::{Error, Result};
use crate::pipeline::{FrameModel, FrameOutput, IdentityModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtfReport {
    /// Median `process_frame` time divided by the frame shift.
    pub rtf: f64,
    pub median_frame_ms: f64,
    pub frame_shift_ms: f64,
    pub frame_len_ms: f64,
    pub algorithmic_latency_ms: f64,
    pub frames_timed: usize,
}

impl RtfReport {
    /// RTF with two decimals.
    pub fn rtf_display(&self) -> String {
        format!("{:.2}", self.rtf)
    }
}

/// Time every `process_frame` call on the frames of `(x, y)` over
/// `repetitions` passes. The first `warmup` calls are discarded.
pub fn rtf_bench(model: &mut dyn FrameModel, x: &Signal, y: &Signal, repetitions: usize, warmup: usize) -> Result<RtfReport> {
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be >= 1".into()));
    }
    let frame = model.frame_config();
    let stft = Stft::new(frame)?;
    let xs = stft.analyze(&highpass(x)?)?.frames;
    let ys = stft.analyze(&highpass(y)?)?.frames;
    if ys.is_empty() || xs.len() != ys.len() {
        return Err(Error::Data("benchmark signals yield no aligned frames".into()));
    }
    let mut times = Vec::with_capacity(repetitions * ys.len());
    for _ in 0..repetitions {
        model.reset();
        for (xf, yf) in xs.iter().zip(&ys) {
            let t0 = Instant::now();
            let out = model.process_frame(xf, yf)?;
            times.push(t0.elapsed());
            std::hint::black_box(out);
        }
    }
    if times.len() <= warmup {
        return Err(Error::InvalidArgument(format!("warm-up {warmup} discards all {} timed calls", times.len())));
    }
    let mut kept: Vec<Duration> = times.split_off(warmup);
    kept.sort_unstable();
    let median = if kept.len() % 2 == 1 {
        kept[kept.len() / 2].as_secs_f64()
    } else {
        (kept[kept.len() / 2 - 1].as_secs_f64() + kept[kept.len() / 2].as_secs_f64()) / 2.0
    };
    let shift_ms = frame.frame_shift_ms();
    Ok(RtfReport {
        rtf: median * 1000.0 / shift_ms,
        median_frame_ms: median * 1000.0,
        frame_shift_ms: shift_ms,
        frame_len_ms: frame.frame_len_ms(),
        algorithmic_latency_ms: frame.algorithmic_latency_ms(),
        frames_timed: kept.len(),
    })
}

/// Timing fixture: passes the microphone through and busy-waits for a fixed
/// time per frame.
#[derive(Debug, Clone)]
pub struct SleepModel {
    pub per_frame: Duration,
    pub frame: FrameConfig,
}

impl SleepModel {
    /// One frame shift per frame: RTF 1.
    pub fn real_time(frame: FrameConfig) -> Self {
        SleepModel {
            per_frame: Duration::from_secs_f64(frame.frame_shift_ms() / 1000.0),
            frame,
        }
    }
}

impl FrameModel for SleepModel {
    fn frame_config(&self) -> FrameConfig {
        self.frame
    }

    fn reset(&mut self) {}

    fn process_frame(&mut self, x: &[Complex64], y: &[Complex64]) -> Result<FrameOutput> {
        let t0 = Instant::now();
        let out = IdentityModel { frame: self.frame }.process_frame(x, y);
        while t0.elapsed() < self.per_frame {
            std::hint::spin_loop();
        }
        out
    }
}

/// Runs the inner model `times` times per frame and returns the last output.
#[derive(Debug, Clone)]
pub struct RepeatModel<M> {
    pub inner: M,
    pub times: usize,
}

impl<M: FrameModel> FrameModel for RepeatModel<M> {
    fn frame_config(&self) -> FrameConfig {
        self.inner.frame_config()
    }

    fn reset(&mut self) {
        self.inner.reset();
    }

    fn process_frame(&mut self, x: &[Complex64], y: &[Complex64]) -> Result<FrameOutput> {
        let mut out = self.inner.process_frame(x, y)?;
        for _ in 1..self.times {
            out = self.inner.process_frame(x, y)?;
        }
        Ok(out)
    }
}
