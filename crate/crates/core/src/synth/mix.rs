use crate::dsp::wav::{dequantize, quantize, PCM_SCALE};
use crate::dsp::Signal;
use crate::error::{Error, Result};

/// Energy threshold of the near-end activity mask relative to the peak.
pub const VAD_THRESHOLD_DB: f64 = -40.0;

/// One utterance: far-end reference `x` and microphone `y = s + d + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceBundle {
    pub x: Signal,
    pub y: Signal,
    pub s: Signal,
    pub d: Signal,
    pub n: Signal,
}

impl UtteranceBundle {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Samples where `v^2 >= 10^(threshold/10) * max v^2`.
pub fn activity_mask(v: &[f64]) -> Vec<bool> {
    let peak = v.iter().fold(0.0f64, |m, s| m.max(s * s));
    if peak == 0.0 {
        return vec![false; v.len()];
    }
    let thr = peak * 10f64.powf(VAD_THRESHOLD_DB / 10.0);
    v.iter().map(|s| s * s >= thr).collect()
}

/// Mean power of `v` over the samples selected by `mask`.
pub fn masked_power(v: &[f64], mask: &[bool]) -> f64 {
    let (sum, count) = v
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, c), (x, _)| (s + x * x, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Level-adjusted components.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixed {
    pub s: Vec<f64>,
    pub d: Vec<f64>,
    pub n: Vec<f64>,
}

/// Scale `d` and `n` to the requested ratios against `s`, both measured over
/// the near-end activity mask of `s`.
///
/// Without near-end speech (`ser_db = None`, `s` silent) the noise level is
/// set relative to the echo over the echo activity mask instead.
pub fn mix(s: &[f64], d: &[f64], n: &[f64], ser_db: Option<f64>, snr_db: Option<f64>) -> Result<Mixed> {
    if s.len() != d.len() || s.len() != n.len() {
        return Err(Error::LengthMismatch(format!("mix: s {}, d {}, n {}", s.len(), d.len(), n.len())));
    }
    let s_mask = activity_mask(s);
    let ps = masked_power(s, &s_mask);
    let scale_to = |v: &[f64], mask: &[bool], reference: f64, ratio_db: f64, what: &str| -> Result<Vec<f64>> {
        let p = masked_power(v, mask);
        if p == 0.0 {
            return Err(Error::Data(format!("{what} is silent on the active segment")));
        }
        let g = (reference / p / 10f64.powf(ratio_db / 10.0)).sqrt();
        Ok(v.iter().map(|x| x * g).collect())
    };
    let d_out = match ser_db {
        Some(ser) => {
            if ps == 0.0 {
                return Err(Error::Data("SER requested but near-end speech is silent".into()));
            }
            scale_to(d, &s_mask, ps, ser, "echo")?
        }
        None => d.to_vec(),
    };
    let n_out = match snr_db {
        Some(snr) if ps > 0.0 => scale_to(n, &s_mask, ps, snr, "noise")?,
        Some(snr) => {
            let d_mask = activity_mask(&d_out);
            let pd = masked_power(&d_out, &d_mask);
            if pd == 0.0 {
                return Err(Error::Data("SNR requested but both speech and echo are silent".into()));
            }
            scale_to(n, &d_mask, pd, snr, "noise")?
        }
        None => n.to_vec(),
    };
    Ok(Mixed {
        s: s.to_vec(),
        d: d_out,
        n: n_out,
    })
}

/// Quantize every component to 16 bit, then form `y` as their integer sum.
///
/// If the sum (or the reference) would clip, all tracks are scaled down
/// together first, so `y = s + d + n` holds exactly on the quantized grid.
pub fn quantize_bundle(x: &[f64], mixed: &Mixed, sample_rate_hz: u32) -> Result<UtteranceBundle> {
    let len = x.len();
    if mixed.s.len() != len || mixed.d.len() != len || mixed.n.len() != len {
        return Err(Error::LengthMismatch("quantize_bundle: component lengths differ from x".into()));
    }
    let limit = (i16::MAX as f64 - 1.0) / PCM_SCALE;
    let sum_peak = (0..len)
        .map(|i| (mixed.s[i] + mixed.d[i] + mixed.n[i]).abs())
        .fold(0.0f64, f64::max);
    let x_peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut gain = 1.0;
    if sum_peak > 0.0 {
        gain = f64::min(gain, 0.95 * limit / sum_peak);
    }
    let x_gain = if x_peak > limit { 0.95 * limit / x_peak } else { 1.0 };
    loop {
        let q = |v: &[f64], g: f64| -> Vec<i16> { v.iter().map(|&s| quantize(s * g)).collect() };
        let (qs, qd, qn) = (q(&mixed.s, gain), q(&mixed.d, gain), q(&mixed.n, gain));
        let sum: Vec<i32> = (0..len).map(|i| qs[i] as i32 + qd[i] as i32 + qn[i] as i32).collect();
        if sum.iter().all(|&v| v >= i16::MIN as i32 && v <= i16::MAX as i32) {
            let sig = |v: Vec<f64>| Signal::new(v, sample_rate_hz);
            let deq = |v: &[i16]| sig(v.iter().map(|&s| dequantize(s)).collect());
            return Ok(UtteranceBundle {
                x: sig(x.iter().map(|&s| dequantize(quantize(s * x_gain))).collect()),
                y: sig(sum.iter().map(|&s| dequantize(s as i16)).collect()),
                s: deq(&qs),
                d: deq(&qd),
                n: deq(&qn),
            });
        }
        gain *= 0.9;
    }
}
