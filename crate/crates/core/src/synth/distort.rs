use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Memoryless loudspeaker nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distortion {
    #[default]
    None,
    /// Clamp to `[-c, c]`.
    HardClip { c: f64 },
    /// `tanh(g x) / g`: unit slope at the origin, saturating at `±1/g`.
    SoftTanh { g: f64 },
}

impl Distortion {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Distortion::None => Ok(()),
            Distortion::HardClip { c } if c > 0.0 && c.is_finite() => Ok(()),
            Distortion::SoftTanh { g } if g > 0.0 && g.is_finite() => Ok(()),
            other => Err(Error::InvalidArgument(format!("invalid distortion parameters {other:?}"))),
        }
    }

    #[inline]
    pub fn apply_sample(&self, v: f64) -> f64 {
        match *self {
            Distortion::None => v,
            Distortion::HardClip { c } => v.clamp(-c, c),
            Distortion::SoftTanh { g } => (g * v).tanh() / g,
        }
    }
}

pub fn nonlinear_distort(x: &[f64], distortion: &Distortion) -> Result<Vec<f64>> {
    distortion.validate()?;
    Ok(x.iter().map(|&v| distortion.apply_sample(v)).collect())
}

/// Linear convolution `a * b` truncated to `out_len` samples, via FFT.
pub fn convolve(a: &[f64], b: &[f64], out_len: usize) -> Vec<f64> {
    if a.is_empty() || b.is_empty() || out_len == 0 {
        return vec![0.0; out_len];
    }
    let full = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 32 {
        let mut out = vec![0.0; out_len];
        for (i, &av) in a.iter().enumerate().take(out_len) {
            for (j, &bv) in b.iter().enumerate().take(out_len - i) {
                out[i + j] += av * bv;
            }
        }
        return out;
    }
    let n = full.next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let spectrum = |src: &[f64]| {
        let mut buf = vec![0.0; n];
        buf[..src.len()].copy_from_slice(src);
        let mut out = fwd.make_output_vec();
        fwd.process(&mut buf, &mut out).expect("fft sizes match");
        out
    };
    let (fa, fb) = (spectrum(a), spectrum(b));
    let mut prod: Vec<_> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    prod[0].im = 0.0;
    prod[n / 2].im = 0.0;
    let mut out = vec![0.0; n];
    inv.process(&mut prod, &mut out).expect("fft sizes match");
    let scale = 1.0 / n as f64;
    let mut res: Vec<f64> = out.into_iter().take(full.min(out_len)).map(|v| v * scale).collect();
    res.resize(out_len, 0.0);
    res
}

/// Echo path: distort the loudspeaker signal, convolve with the room IR,
/// keep the first `x.len()` samples.
pub fn make_echo(x: &[f64], ir: &[f64], distortion: &Distortion) -> Result<Vec<f64>> {
    let driven = nonlinear_distort(x, distortion)?;
    Ok(convolve(&driven, ir, x.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn hard_clip_examples() {
        let x = noise(100, 1);
        assert_eq!(nonlinear_distort(&x, &Distortion::HardClip { c: 1.0 }).unwrap(), x);
        assert_eq!(Distortion::HardClip { c: 0.5 }.apply_sample(0.8), 0.5);
        assert_eq!(Distortion::HardClip { c: 0.5 }.apply_sample(-0.8), -0.5);
        assert!(nonlinear_distort(&x, &Distortion::HardClip { c: 0.0 }).is_err());
    }

    #[test]
    fn soft_tanh_small_gain_is_near_identity() {
        let x = noise(1000, 2);
        let y = nonlinear_distort(&x, &Distortion::SoftTanh { g: 1e-3 }).unwrap();
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-5, "{err}");
        // slope at the origin is one for any gain
        let d = Distortion::SoftTanh { g: 3.0 };
        assert!((d.apply_sample(1e-7) / 1e-7 - 1.0).abs() < 1e-9);
        assert!(nonlinear_distort(&x, &Distortion::SoftTanh { g: -1.0 }).is_err());
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let a = noise(300, 3);
        let b = noise(120, 4);
        let fast = convolve(&a, &b, 350);
        for (n, &f) in fast.iter().enumerate() {
            let direct: f64 = (0..b.len()).filter(|&k| k <= n && n - k < a.len()).map(|k| a[n - k] * b[k]).sum();
            assert!((f - direct).abs() < 1e-9, "n={n}");
        }
        assert_eq!(convolve(&a, &b, 500).len(), 500);
        assert_eq!(convolve(&[], &b, 3), vec![0.0; 3]);
    }

    #[test]
    fn echo_of_impulses() {
        let x = noise(200, 5);
        assert_eq!(make_echo(&x, &[1.0], &Distortion::None).unwrap(), x);
        let mut ir = vec![0.0; 40];
        ir[7] = 1.0;
        let d = make_echo(&x, &ir, &Distortion::None).unwrap();
        assert_eq!(d.len(), x.len());
        assert!(d[..7].iter().all(|&v| v.abs() < 1e-12));
        for n in 7..200 {
            assert!((d[n] - x[n - 7]).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_energy_ir_does_not_amplify() {
        for seed in 0..10 {
            let x = noise(500, seed);
            let mut h = noise(64, seed + 100);
            let e: f64 = h.iter().map(|v| v * v).sum::<f64>().sqrt();
            h.iter_mut().for_each(|v| *v /= e);
            // energy bound holds for |h|_1 <= 1 in general; with |h|_2 = 1
            // check the Young-type bound |x * h|_2 <= |x|_2 |h|_1
            let l1: f64 = h.iter().map(|v| v.abs()).sum();
            let d = make_echo(&x, &h, &Distortion::None).unwrap();
            let ed: f64 = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ex: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(ed <= ex * l1 + 1e-9);
        }
    }
}
