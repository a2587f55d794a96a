//! Procedural stand-ins for speech and noise recordings, and WAV pools.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dsp::wav::read_wav;
use crate::error::{Error, Result};

/// Speech-like test signal: a glottal pulse train with drifting pitch shaped
/// by two resonances, gated into syllables separated by pauses.
pub fn speech_like(len: usize, sample_rate_hz: u32, rng: &mut impl Rng) -> Vec<f64> {
    let fs = sample_rate_hz as f64;
    let mut out = vec![0.0; len];
    let mut n = 0;
    while n < len {
        let pause = if n == 0 {
            (rng.gen_range(0.0..0.1) * fs) as usize
        } else {
            (rng.gen_range(0.05..0.35) * fs) as usize
        };
        n += pause;
        let syl = (rng.gen_range(0.12..0.45) * fs) as usize;
        let end = (n + syl).min(len);
        if n >= end {
            break;
        }
        let f0_start = rng.gen_range(90.0..240.0);
        let f0_end = f0_start * rng.gen_range(0.8..1.25);
        let formants = [rng.gen_range(300.0..900.0), rng.gen_range(900.0..2600.0)];
        let level = rng.gen_range(0.3..1.0);
        let mut filters: Vec<Resonator> = formants.iter().map(|&f| Resonator::new(f, 0.97, fs)).collect();
        let mut phase = 0.0;
        for (i, o) in out[n..end].iter_mut().enumerate() {
            let frac = i as f64 / (end - n) as f64;
            let f0 = f0_start + (f0_end - f0_start) * frac;
            phase += f0 / fs;
            let mut excitation = 0.02 * rng.sample::<f64, _>(StandardNormal);
            if phase >= 1.0 {
                phase -= 1.0;
                excitation += 1.0;
            }
            let voiced: f64 = filters.iter_mut().map(|r| r.process(excitation)).sum();
            let envelope = (std::f64::consts::PI * frac).sin().powf(0.6);
            *o = level * envelope * voiced;
        }
        n = end;
    }
    normalize_peak(&mut out, 0.5);
    out
}

/// Low-pass tilted Gaussian noise with peak 0.5.
pub fn colored_noise(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let pole = rng.gen_range(0.0..0.95);
    let mut state = 0.0;
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            state = pole * state + (1.0 - pole) * w;
            state
        })
        .collect();
    normalize_peak(&mut out, 0.5);
    out
}

fn normalize_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

/// Two-pole resonator with unit gain at DC scaled away.
struct Resonator {
    a1: f64,
    a2: f64,
    y1: f64,
    y2: f64,
    gain: f64,
}

impl Resonator {
    fn new(freq_hz: f64, radius: f64, fs: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * freq_hz / fs;
        Resonator {
            a1: 2.0 * radius * w.cos(),
            a2: -radius * radius,
            y1: 0.0,
            y2: 0.0,
            gain: 1.0 - radius,
        }
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// A directory of 16 kHz mono WAV files.
#[derive(Debug, Clone)]
pub struct WavPool {
    files: Vec<PathBuf>,
}

impl WavPool {
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        for entry in rd {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                files.push(path);
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(Error::Data(format!("no .wav files in pool {}", dir.display())));
        }
        Ok(WavPool { files })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// A random excerpt of `len` samples; short files are looped.
    pub fn draw(&self, len: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let path = self.files.choose(rng).expect("non-empty pool");
        let sig = read_wav(path)?;
        if sig.is_empty() {
            return Err(Error::Data(format!("empty pool file {}", path.display())));
        }
        let start = if sig.len() > len { rng.gen_range(0..=sig.len() - len) } else { 0 };
        Ok((0..len).map(|i| sig.samples[(start + i) % sig.len()]).collect())
    }
}
