use std::collections::VecDeque;

use super::{FrameConfig, HighPass, Spectrum, Stft};
use crate::error::Result;

/// Sample-in, frame-out analysis with optional high-pass state.
///
/// Emits exactly the frames [`Stft::analyze`] would produce for the
/// concatenation of all pushed chunks.
#[derive(Debug, Clone)]
pub struct StreamingAnalyzer {
    stft: Stft,
    highpass: Option<HighPass>,
    pending: VecDeque<f64>,
}

impl StreamingAnalyzer {
    pub fn new(config: FrameConfig, with_highpass: bool) -> Result<Self> {
        Ok(StreamingAnalyzer {
            stft: Stft::new(config)?,
            highpass: with_highpass.then(HighPass::default),
            pending: VecDeque::with_capacity(config.frame_len * 2),
        })
    }

    pub fn reset(&mut self) {
        if let Some(hp) = self.highpass.as_mut() {
            hp.reset();
        }
        self.pending.clear();
    }

    pub fn push(&mut self, samples: &[f64]) -> Result<Vec<Spectrum>> {
        let cfg = *self.stft.config();
        for &s in samples {
            let v = match self.highpass.as_mut() {
                Some(hp) => hp.process(s),
                None => s,
            };
            self.pending.push_back(v);
        }
        let mut frames = Vec::new();
        let mut frame = vec![0.0; cfg.frame_len];
        while self.pending.len() >= cfg.frame_len {
            for (dst, src) in frame.iter_mut().zip(self.pending.iter()) {
                *dst = *src;
            }
            frames.push(self.stft.analyze_frame(&frame)?);
            self.pending.drain(..cfg.frame_shift);
        }
        Ok(frames)
    }
}

/// Frame-in, sample-out overlap-add synthesis.
///
/// Each pushed frame releases `frame_shift` finished samples; [`flush`]
/// returns the tail so the total equals [`Stft::synthesize`].
///
/// [`flush`]: StreamingSynthesizer::flush
#[derive(Debug, Clone)]
pub struct StreamingSynthesizer {
    stft: Stft,
    overlap: Vec<f64>,
    started: bool,
}

impl StreamingSynthesizer {
    pub fn new(config: FrameConfig) -> Result<Self> {
        Ok(StreamingSynthesizer {
            stft: Stft::new(config)?,
            overlap: vec![0.0; config.frame_len - config.frame_shift],
            started: false,
        })
    }

    pub fn reset(&mut self) {
        self.overlap.iter_mut().for_each(|v| *v = 0.0);
        self.started = false;
    }

    pub fn push(&mut self, spectrum: &Spectrum) -> Result<Vec<f64>> {
        let shift = self.stft.config().frame_shift;
        let frame = self.stft.synthesize_frame(spectrum)?;
        let mut out: Vec<f64> = frame[..shift]
            .iter()
            .zip(&self.overlap)
            .map(|(a, b)| a + b)
            .collect();
        // frame_len == 2 * shift, so the remaining half becomes the next overlap
        self.overlap.copy_from_slice(&frame[shift..]);
        self.started = true;
        out.shrink_to_fit();
        Ok(out)
    }

    pub fn flush(&mut self) -> Vec<f64> {
        if !self.started {
            return Vec::new();
        }
        let tail = self.overlap.clone();
        self.reset();
        tail
    }
}
