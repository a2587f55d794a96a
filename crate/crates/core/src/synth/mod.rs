//! Synthetic echo, near-end speech and noise mixtures.
//!
//! Each utterance draws a scenario (T60, SER, SNR, loudspeaker distortion,
//! talk type) from its own RNG stream, builds the echo as
//! `d = conv(distort(x), h)`, mixes `y = s + d + n` at the drawn levels and
//! quantizes the components to 16 bit before summing.

mod distort;
mod ir;
pub mod manifest;
mod mix;
pub mod sources;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::wav::write_wav;
use crate::error::{Error, Result};

pub use distort::{convolve, make_echo, nonlinear_distort, Distortion};
pub use ir::{decay_envelope, gen_ir, ir_len_for};
pub use manifest::{load_manifest, read_manifest, write_manifest, LoadedUtterance, ManifestEntry};
pub use mix::{activity_mask, masked_power, mix, quantize_bundle, Mixed, UtteranceBundle, VAD_THRESHOLD_DB};
use sources::WavPool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TalkType {
    /// Near-end speech and echo.
    Double,
    /// Echo only; `s` is silent.
    FeOnly,
    /// Near-end speech only; `x` and `d` are silent.
    NeOnly,
}

impl std::str::FromStr for TalkType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double" => Ok(TalkType::Double),
            "fe-only" => Ok(TalkType::FeOnly),
            "ne-only" => Ok(TalkType::NeOnly),
            other => Err(Error::Config(format!("unknown talk type `{other}` (double, fe-only, ne-only)"))),
        }
    }
}

/// Everything drawn for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthScenario {
    pub index: usize,
    pub seed: u64,
    pub t60_s: f64,
    /// `None` when there is no echo or no near-end speech.
    pub ser_db: Option<f64>,
    pub snr_db: f64,
    pub nonlinear: bool,
    pub distortion: Distortion,
    pub talk_type: TalkType,
}

/// Dataset generation settings. Ranges are inclusive `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_utterances: usize,
    pub seed: u64,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub t60_range_s: [f64; 2],
    pub ser_range_db: [f64; 2],
    pub snr_range_db: [f64; 2],
    pub nonlinear_prob: f64,
    /// Fixed talk type; `None` draws double talk (60%), FE-only (20%) or
    /// NE-only (20%).
    pub talk: Option<TalkType>,
    /// Directories of 16 kHz mono WAVs; procedural sources when absent.
    pub fe_pool: Option<PathBuf>,
    pub ne_pool: Option<PathBuf>,
    pub noise_pool: Option<PathBuf>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_utterances: 10,
            seed: 0,
            duration_s: 10.0,
            sample_rate_hz: 16_000,
            t60_range_s: [0.2, 1.2],
            ser_range_db: [-10.0, 10.0],
            snr_range_db: [0.0, 40.0],
            nonlinear_prob: 0.8,
            talk: None,
            fe_pool: None,
            ne_pool: None,
            noise_pool: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if self.n_utterances == 0 {
            return fail("n_utterances must be >= 1".into());
        }
        if !(self.duration_s > 0.0) {
            return fail(format!("duration_s {} must be positive", self.duration_s));
        }
        for (name, r) in [("t60_range_s", self.t60_range_s), ("ser_range_db", self.ser_range_db), ("snr_range_db", self.snr_range_db)] {
            if !range_ok(r) {
                return fail(format!("{name} {r:?} is not an ordered finite range"));
            }
        }
        if self.t60_range_s[0] <= 0.0 {
            return fail("T60 must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.nonlinear_prob) {
            return fail(format!("nonlinear_prob {} outside [0, 1]", self.nonlinear_prob));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz as f64).round() as usize
    }

    /// The RNG of utterance `index`: seeded from the dataset seed, with the
    /// utterance index as stream.
    pub fn utterance_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

/// Draw the scenario of utterance `index`; `peak_x` scales the distortion
/// thresholds to the loudspeaker signal.
fn draw_scenario(cfg: &SynthConfig, index: usize, rng: &mut impl Rng, peak_x: f64) -> SynthScenario {
    let talk_type = cfg.talk.unwrap_or_else(|| match rng.gen_range(0.0..1.0) {
        u if u < 0.6 => TalkType::Double,
        u if u < 0.8 => TalkType::FeOnly,
        _ => TalkType::NeOnly,
    });
    let t60_s = uniform(rng, cfg.t60_range_s);
    let ser = uniform(rng, cfg.ser_range_db);
    let snr_db = uniform(rng, cfg.snr_range_db);
    let nonlinear = rng.gen_bool(cfg.nonlinear_prob);
    let peak = if peak_x > 0.0 { peak_x } else { 1.0 };
    let distortion = if !nonlinear {
        Distortion::None
    } else if rng.gen_bool(0.5) {
        Distortion::HardClip {
            c: rng.gen_range(0.3..0.8) * peak,
        }
    } else {
        Distortion::SoftTanh {
            g: rng.gen_range(1.0..4.0) / peak,
        }
    };
    SynthScenario {
        index,
        seed: cfg.seed,
        t60_s,
        ser_db: (talk_type == TalkType::Double).then_some(ser),
        snr_db,
        nonlinear,
        distortion,
        talk_type,
    }
}

/// Source pools; `None` entries fall back to procedural generators.
#[derive(Debug, Clone, Default)]
pub struct Pools {
    pub fe: Option<WavPool>,
    pub ne: Option<WavPool>,
    pub noise: Option<WavPool>,
}

impl Pools {
    pub fn open(cfg: &SynthConfig) -> Result<Self> {
        let open = |p: &Option<PathBuf>| p.as_ref().map(WavPool::from_dir).transpose();
        Ok(Pools {
            fe: open(&cfg.fe_pool)?,
            ne: open(&cfg.ne_pool)?,
            noise: open(&cfg.noise_pool)?,
        })
    }
}

fn draw_speech(pool: &Option<WavPool>, len: usize, fs: u32, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    match pool {
        Some(p) => p.draw(len, rng),
        None => Ok(sources::speech_like(len, fs, rng)),
    }
}

/// Generate utterance `index`.
pub fn synth_utterance(cfg: &SynthConfig, pools: &Pools, index: usize) -> Result<(SynthScenario, UtteranceBundle)> {
    let len = cfg.num_samples();
    let fs = cfg.sample_rate_hz;
    let mut rng = cfg.utterance_rng(index);
    let x = draw_speech(&pools.fe, len, fs, &mut rng)?;
    let s = draw_speech(&pools.ne, len, fs, &mut rng)?;
    let n = match &pools.noise {
        Some(p) => p.draw(len, &mut rng)?,
        None => sources::colored_noise(len, &mut rng),
    };
    let peak_x = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scenario = draw_scenario(cfg, index, &mut rng, peak_x);
    let ir = gen_ir(scenario.t60_s, ir_len_for(scenario.t60_s, fs), fs, &mut rng)?;

    let zeros = vec![0.0; len];
    let (x, s) = match scenario.talk_type {
        TalkType::Double => (x, s),
        TalkType::FeOnly => (x, zeros.clone()),
        TalkType::NeOnly => (zeros.clone(), s),
    };
    let d = make_echo(&x, &ir, &scenario.distortion)?;
    let mixed = mix(&s, &d, &n, scenario.ser_db, Some(scenario.snr_db))?;
    let bundle = quantize_bundle(&x, &mixed, fs)?;
    Ok((scenario, bundle))
}

/// Generate every utterance in memory, in parallel.
pub fn synth_bundles(cfg: &SynthConfig) -> Result<Vec<(SynthScenario, UtteranceBundle)>> {
    cfg.validate()?;
    let pools = Pools::open(cfg)?;
    (0..cfg.n_utterances)
        .into_par_iter()
        .map(|i| synth_utterance(cfg, &pools, i))
        .collect()
}

/// Generate the dataset into `out_dir`: five WAVs per utterance plus
/// `manifest.jsonl`. Returns the manifest path.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pools = Pools::open(cfg)?;
    let entries: Vec<ManifestEntry> = (0..cfg.n_utterances)
        .into_par_iter()
        .map(|i| -> Result<ManifestEntry> {
            let (scenario, b) = synth_utterance(cfg, &pools, i)?;
            let id = format!("utt{i:05}");
            let name = |track: &str, sig: &crate::dsp::Signal| -> Result<PathBuf> {
                let rel = PathBuf::from(format!("{id}_{track}.wav"));
                write_wav(out_dir.join(&rel), sig)?;
                Ok(rel)
            };
            Ok(ManifestEntry {
                x: name("x", &b.x)?,
                y: name("y", &b.y)?,
                s: Some(name("s", &b.s)?),
                d: Some(name("d", &b.d)?),
                n: Some(name("n", &b.n)?),
                id,
                scenario: Some(scenario),
            })
        })
        .collect::<Result<_>>()?;
    let path = out_dir.join("manifest.jsonl");
    write_manifest(&path, &entries)?;
    Ok(path)
}
