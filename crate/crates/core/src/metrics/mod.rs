//! Echo and noise reduction metrics, the white-box component decomposition,
//! the four-condition evaluation and the real-time-factor benchmark.

mod decompose;
mod eval;
mod report;
mod rtf;

use crate::dsp::{FrameConfig, Signal, Stft};
use crate::error::{Error, Result};

pub use decompose::{decompose_components, passthrough, Components};
pub use eval::{eval_conditions, eval_utterance};
pub use report::{AggregateMetrics, MetricsReport, UtteranceMetrics, CSV_HEADER};
pub use rtf::{rtf_bench, RepeatModel, RtfReport, SleepModel};

/// Coefficient of the one-pole power smoother.
pub const SMOOTHING: f64 = 0.99;
/// Upper bound of any per-sample ERLE value.
pub const ERLE_CAP_DB: f64 = 80.0;
/// Samples whose smoothed echo power is below this level relative to its
/// maximum are excluded from the ERLE average.
pub const ERLE_ACTIVITY_DB: f64 = -60.0;
/// Upper bound of the near-end SNR proxy.
pub const SNR_CAP_DB: f64 = 100.0;

/// `p(n) = a p(n-1) + (1 - a) v(n)^2` with `a` = [`SMOOTHING`].
pub fn smoothed_power(v: &[f64]) -> Vec<f64> {
    let mut p = 0.0;
    v.iter()
        .map(|x| {
            p = SMOOTHING * p + (1.0 - SMOOTHING) * x * x;
            p
        })
        .collect()
}

fn check_lengths(what: &str, a: &Signal, b: &Signal) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(format!("{what}: {} vs {} samples", a.len(), b.len())));
    }
    Ok(())
}

fn energy(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Echo return loss enhancement of the residual `d_tilde` against the echo
/// `d`, in dB.
///
/// Both instantaneous powers are smoothed with [`smoothed_power`]; the
/// per-sample ratio `10 log10(p_d / p_dtilde)` (capped at [`ERLE_CAP_DB`]) is
/// averaged over samples where `p_d` is within [`ERLE_ACTIVITY_DB`] of its
/// maximum.
pub fn erle(d: &Signal, d_tilde: &Signal) -> Result<f64> {
    check_lengths("erle", d, d_tilde)?;
    let pd = smoothed_power(&d.samples);
    let pr = smoothed_power(&d_tilde.samples);
    let peak = pd.iter().fold(0.0f64, |m, &v| m.max(v));
    if peak == 0.0 {
        return Err(Error::Data("ERLE of a zero-energy echo".into()));
    }
    let threshold = peak * 10f64.powf(ERLE_ACTIVITY_DB / 10.0);
    let (sum, count) = pd
        .iter()
        .zip(&pr)
        .filter(|(&p, _)| p > threshold)
        .fold((0.0, 0usize), |(s, c), (&p, &r)| {
            let v = if r == 0.0 { ERLE_CAP_DB } else { (10.0 * (p / r).log10()).min(ERLE_CAP_DB) };
            (s + v, c + 1)
        });
    Ok(sum / count as f64)
}

/// SNR improvement `10 log10(Σs̃²/Σñ²) − 10 log10(Σs²/Σn²)` in dB.
pub fn delta_snr(s: &Signal, n: &Signal, s_tilde: &Signal, n_tilde: &Signal) -> Result<f64> {
    check_lengths("delta_snr", s, n)?;
    check_lengths("delta_snr", s_tilde, n_tilde)?;
    let (es, en, est, ent) = (energy(&s.samples), energy(&n.samples), energy(&s_tilde.samples), energy(&n_tilde.samples));
    if en == 0.0 || ent == 0.0 || es == 0.0 || est == 0.0 {
        return Err(Error::Data("delta SNR with a zero-energy term".into()));
    }
    Ok(10.0 * (est / ent).log10() - 10.0 * (es / en).log10())
}

/// Noise-only variant `10 log10(Σn²/Σñ²)`.
pub fn delta_snr_component(n: &Signal, n_tilde: &Signal) -> Result<f64> {
    check_lengths("delta_snr_component", n, n_tilde)?;
    let (en, ent) = (energy(&n.samples), energy(&n_tilde.samples));
    if en == 0.0 || ent == 0.0 {
        return Err(Error::Data("delta SNR with a zero-energy term".into()));
    }
    Ok(10.0 * (en / ent).log10())
}

/// `10 log10(Σs² / Σ(ŝ − s)²)`, capped at [`SNR_CAP_DB`].
pub fn snr_db(reference: &Signal, estimate: &Signal) -> Result<f64> {
    check_lengths("snr_db", reference, estimate)?;
    let es = energy(&reference.samples);
    if es == 0.0 {
        return Err(Error::Data("SNR of a zero-energy reference".into()));
    }
    let err: f64 = reference.samples.iter().zip(&estimate.samples).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(if err == 0.0 { SNR_CAP_DB } else { (10.0 * (es / err).log10()).min(SNR_CAP_DB) })
}

/// Mean over active frames of the RMS difference of log power spectra, in dB.
/// Frames whose reference energy is below -60 dB of the loudest frame are
/// skipped.
pub fn log_spectral_distance(reference: &Signal, estimate: &Signal, frame: &FrameConfig) -> Result<f64> {
    check_lengths("log_spectral_distance", reference, estimate)?;
    let stft = Stft::new(*frame)?;
    let (r, e) = (stft.analyze(reference)?, stft.analyze(estimate)?);
    let frame_energy: Vec<f64> = r.frames.iter().map(|f| f.iter().map(|c| c.norm_sqr()).sum()).collect();
    let peak = frame_energy.iter().fold(0.0f64, |m, &v| m.max(v));
    if peak == 0.0 {
        return Err(Error::Data("log-spectral distance of a silent reference".into()));
    }
    let floor = peak * 1e-6;
    let eps = peak * 1e-12;
    let mut total = 0.0;
    let mut count = 0usize;
    for ((rf, ef), &en) in r.frames.iter().zip(&e.frames).zip(&frame_energy) {
        if en < floor {
            continue;
        }
        let ms: f64 = rf
            .iter()
            .zip(ef)
            .map(|(a, b)| {
                let diff = 10.0 * ((a.norm_sqr() + eps) / (b.norm_sqr() + eps)).log10();
                diff * diff
            })
            .sum::<f64>()
            / rf.len() as f64;
        total += ms.sqrt();
        count += 1;
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Signal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Signal::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16_000)
    }

    fn scaled(s: &Signal, g: f64) -> Signal {
        Signal::new(s.samples.iter().map(|v| v * g).collect(), s.sample_rate_hz)
    }

    #[test]
    fn erle_closed_forms() {
        let d = noise(4000, 1);
        assert_eq!(erle(&d, &d).unwrap(), 0.0);
        assert!((erle(&d, &scaled(&d, 0.1)).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(erle(&d, &Signal::zeros(4000, 16_000)).unwrap(), ERLE_CAP_DB);
        assert!(erle(&Signal::zeros(10, 16_000), &d).is_err());
        assert!(erle(&d, &noise(10, 2)).is_err());
    }

    #[test]
    fn erle_ignores_silent_echo_segments() {
        let mut d = noise(8000, 3);
        d.samples[4000..].iter_mut().for_each(|v| *v = 0.0);
        let mut r = scaled(&d, 0.1);
        // garbage in the residual where the smoothed echo has decayed away
        let late = noise(8000, 4);
        r.samples[7000..].copy_from_slice(&late.samples[7000..]);
        assert!((erle(&d, &r).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn delta_snr_closed_forms() {
        let (s, n) = (noise(1000, 5), noise(1000, 6));
        assert_eq!(delta_snr(&s, &n, &s, &n).unwrap(), 0.0);
        assert!((delta_snr(&s, &n, &s, &scaled(&n, 0.1)).unwrap() - 20.0).abs() < 1e-9);
        assert!((delta_snr_component(&n, &scaled(&n, 0.01)).unwrap() - 40.0).abs() < 1e-9);
        assert!(delta_snr(&s, &Signal::zeros(1000, 16_000), &s, &n).is_err());
        assert!(delta_snr_component(&n, &Signal::zeros(1000, 16_000)).is_err());
    }

    #[test]
    fn snr_and_lsd() {
        let s = noise(4000, 7);
        assert_eq!(snr_db(&s, &s).unwrap(), SNR_CAP_DB);
        assert!((snr_db(&s, &scaled(&s, 0.9)).unwrap() - 20.0).abs() < 1e-9);
        let frame = FrameConfig::default();
        assert_eq!(log_spectral_distance(&s, &s, &frame).unwrap(), 0.0);
        let lsd = log_spectral_distance(&s, &scaled(&s, 0.1), &frame).unwrap();
        assert!((lsd - 20.0).abs() < 1e-4, "{lsd}");
    }
}
