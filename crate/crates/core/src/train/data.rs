use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsp::{bins_tensor, highpass, pack_features, FrameConfig, Signal, Stft};
use crate::error::{Error, Result};
use crate::synth::{LoadedUtterance, UtteranceBundle};
use crate::tensor::{Scalar, Tensor};

/// Network inputs and targets of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensors<T> {
    /// Packed `M x 1 x 2` far-end spectrum.
    pub x: Tensor<T>,
    /// Packed `M x 1 x 2` microphone spectrum.
    pub y: Tensor<T>,
    /// `n_bins x 1 x 2` microphone, echo and near-end speech spectra.
    pub y_bins: Tensor<T>,
    pub d_bins: Tensor<T>,
    pub s_bins: Tensor<T>,
}

/// One analyzed utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainUtterance<T> {
    pub id: String,
    pub frames: Vec<FrameTensors<T>>,
}

impl<T: Scalar> TrainUtterance<T> {
    /// High-pass and analyze every track once. Targets are the spectra of
    /// the high-passed components, so `Y = S + D + N` holds per frame.
    pub fn from_signals(id: impl Into<String>, x: &Signal, y: &Signal, d: &Signal, s: &Signal, frame: &FrameConfig) -> Result<Self> {
        let id = id.into();
        if [x, d, s].iter().any(|t| t.len() != y.len()) {
            return Err(Error::LengthMismatch(format!("utterance {id}: track lengths differ")));
        }
        let stft = Stft::new(*frame)?;
        let spec = |sig: &Signal| -> Result<_> { Ok(stft.analyze(&highpass(sig)?)?.frames) };
        let (xs, ys, ds, ss) = (spec(x)?, spec(y)?, spec(d)?, spec(s)?);
        let frames = (0..ys.len())
            .map(|l| {
                Ok(FrameTensors {
                    x: pack_features(&xs[l], frame)?,
                    y: pack_features(&ys[l], frame)?,
                    y_bins: bins_tensor(&ys[l]),
                    d_bins: bins_tensor(&ds[l]),
                    s_bins: bins_tensor(&ss[l]),
                })
            })
            .collect::<Result<_>>()?;
        Ok(TrainUtterance { id, frames })
    }
}

/// Analyzed training or validation material.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainSet<T> {
    pub utterances: Vec<TrainUtterance<T>>,
}

impl<T: Scalar> TrainSet<T> {
    pub fn from_bundles(bundles: &[UtteranceBundle], frame: &FrameConfig) -> Result<Self> {
        let utterances = bundles
            .iter()
            .enumerate()
            .map(|(i, b)| TrainUtterance::from_signals(format!("utt{i:05}"), &b.x, &b.y, &b.d, &b.s, frame))
            .collect::<Result<_>>()?;
        Ok(TrainSet { utterances })
    }

    /// Requires echo and near-end components on every row.
    pub fn from_loaded(rows: &[LoadedUtterance], frame: &FrameConfig) -> Result<Self> {
        let utterances = rows
            .iter()
            .map(|u| {
                let (Some(d), Some(s)) = (&u.d, &u.s) else {
                    return Err(Error::Data(format!("utterance {} lacks d/s tracks needed for training", u.id)));
                };
                TrainUtterance::from_signals(u.id.clone(), &u.x, &u.y, d, s, frame)
            })
            .collect::<Result<_>>()?;
        Ok(TrainSet { utterances })
    }

    pub fn frame_counts(&self) -> Vec<usize> {
        self.utterances.iter().map(|u| u.frames.len()).collect()
    }

    pub fn window(&self, w: &Window) -> &[FrameTensors<T>] {
        &self.utterances[w.utt].frames[w.start..w.start + w.len]
    }
}

/// A run of consecutive frames of one utterance; recurrent state starts at
/// zero at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub utt: usize,
    pub start: usize,
    pub len: usize,
}

/// Non-overlapping `bptt_len`-frame windows; trailing partial windows are
/// dropped.
pub fn make_windows(frame_counts: &[usize], bptt_len: usize) -> Result<Vec<Window>> {
    if frame_counts.is_empty() {
        return Err(Error::Data("no utterances".into()));
    }
    if bptt_len == 0 {
        return Err(Error::Config("bptt_len must be >= 1".into()));
    }
    let windows: Vec<Window> = frame_counts
        .iter()
        .enumerate()
        .flat_map(|(utt, &n)| (0..n / bptt_len).map(move |k| Window { utt, start: k * bptt_len, len: bptt_len }))
        .collect();
    if windows.is_empty() {
        return Err(Error::Data(format!("no utterance has {bptt_len} frames")));
    }
    Ok(windows)
}

/// Windows shuffled across utterances by `seed`, grouped into batches of at
/// most `batch_size`.
pub fn make_batches(frame_counts: &[usize], bptt_len: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<Window>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut windows = make_windows(frame_counts, bptt_len)?;
    windows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(windows.chunks(batch_size).map(<[Window]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_second_utterance_gives_fifteen_windows() {
        let frames = FrameConfig::default().num_frames(160_000);
        assert_eq!(frames, 753);
        let w = make_windows(&[frames], 50).unwrap();
        assert_eq!(w.len(), 15);
        assert_eq!(w[14], Window { utt: 0, start: 700, len: 50 });
    }

    #[test]
    fn batches_are_seeded_and_cover_everything() {
        let a = make_batches(&[120, 75, 10], 25, 4, 3).unwrap();
        let b = make_batches(&[120, 75, 10], 25, 4, 3).unwrap();
        assert_eq!(a, b);
        let flat: Vec<Window> = a.concat();
        assert_eq!(flat.len(), 4 + 3);
        assert_eq!(a.len(), 2);
        assert_ne!(make_batches(&[120, 75, 10], 25, 4, 4).unwrap(), a);
        assert!(make_windows(&[], 50).is_err());
        assert!(make_windows(&[10], 50).is_err());
        assert!(make_batches(&[100], 50, 0, 0).is_err());
    }

    #[test]
    fn frames_are_aligned_across_tracks() {
        let frame = FrameConfig::default();
        let sig = |k: f64| Signal::new((0..2000).map(|i| (i as f64 * k).sin() * 0.1).collect(), 16_000);
        let (s, d) = (sig(0.05), sig(0.11));
        let y = Signal::new(s.samples.iter().zip(&d.samples).map(|(a, b)| a + b).collect(), 16_000);
        let u = TrainUtterance::<f64>::from_signals("u", &sig(0.2), &y, &d, &s, &frame).unwrap();
        assert_eq!(u.frames.len(), frame.num_frames(2000));
        for f in &u.frames {
            for k in 0..514 {
                let sum = f.s_bins.data()[k] + f.d_bins.data()[k];
                assert!((sum - f.y_bins.data()[k]).abs() < 1e-9);
            }
        }
    }
}
