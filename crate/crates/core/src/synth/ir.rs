use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative amplitude of the reverberant tail against the direct path.
const TAIL_GAIN: f64 = 0.3;

/// Exponentially decaying noise impulse response.
///
/// Sample `t` of the tail is Gaussian noise times `exp(-3 ln(10) t / T60)`,
/// so the amplitude envelope has fallen by 60 dB at `t = T60`. Index 0 holds
/// a direct-path spike. The result has unit energy.
pub fn gen_ir(t60_s: f64, len: usize, sample_rate_hz: u32, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(t60_s > 0.0) || !t60_s.is_finite() {
        return Err(Error::InvalidArgument(format!("T60 must be positive, got {t60_s}")));
    }
    if len == 0 {
        return Err(Error::InvalidArgument("impulse response length must be >= 1".into()));
    }
    let mut h: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / sample_rate_hz as f64;
            let noise: f64 = rng.sample(StandardNormal);
            TAIL_GAIN * noise * decay_envelope(t, t60_s)
        })
        .collect();
    h[0] = 1.0;
    let energy: f64 = h.iter().map(|v| v * v).sum();
    let norm = energy.sqrt();
    h.iter_mut().for_each(|v| *v /= norm);
    Ok(h)
}

/// Amplitude envelope `exp(-3 ln(10) t / T60)`.
pub fn decay_envelope(t_s: f64, t60_s: f64) -> f64 {
    (-3.0 * std::f64::consts::LN_10 * t_s / t60_s).exp()
}

/// Impulse-response length covering the 60 dB decay.
pub fn ir_len_for(t60_s: f64, sample_rate_hz: u32) -> usize {
    ((t60_s * sample_rate_hz as f64).ceil() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn envelope_is_minus_60_db_at_t60() {
        let db = 20.0 * decay_envelope(0.5, 0.5).log10();
        assert!((db + 60.0).abs() < 1e-9);
        assert_eq!(decay_envelope(0.0, 0.3), 1.0);
    }

    #[test]
    fn unit_energy_and_deterministic() {
        let a = gen_ir(0.4, 6400, 16_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = gen_ir(0.4, 6400, 16_000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let e: f64 = a.iter().map(|v| v * v).sum();
        assert!((e - 1.0).abs() < 1e-6);
        assert!(a[0] > a[1..].iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }

    #[test]
    fn tail_decays() {
        let h = gen_ir(0.2, 3200, 16_000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let early: f64 = h[1..400].iter().map(|v| v * v).sum();
        let late: f64 = h[2800..].iter().map(|v| v * v).sum();
        assert!(late < early * 1e-3);
    }

    #[test]
    fn invalid_t60() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(gen_ir(0.0, 10, 16_000, &mut rng).is_err());
        assert!(gen_ir(-1.0, 10, 16_000, &mut rng).is_err());
        assert!(gen_ir(f64::NAN, 10, 16_000, &mut rng).is_err());
        assert!(gen_ir(0.3, 0, 16_000, &mut rng).is_err());
    }
}
