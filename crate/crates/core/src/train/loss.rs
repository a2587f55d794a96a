use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::bin_weight;

/// Mean squared complex error over the full `dft_size`-point spectrum,
/// computed from the `dft_size / 2 + 1` non-redundant bins: DC and Nyquist
/// count once, every other bin twice (for its conjugate mirror).
pub fn spectral_mse(pred: &[Complex64], target: &[Complex64], dft_size: usize) -> Result<f64> {
    let n_bins = dft_size / 2 + 1;
    if pred.len() != n_bins || target.len() != n_bins {
        return Err(Error::LengthMismatch(format!(
            "spectral loss over {n_bins} bins got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .enumerate()
        .map(|(k, (p, t))| bin_weight(k, n_bins) * (p - t).norm_sqr())
        .sum();
    Ok(sum / dft_size as f64)
}

/// Echo-estimation loss of the AEC stage.
pub fn loss_aec(d_hat: &[Complex64], d: &[Complex64], dft_size: usize) -> Result<f64> {
    spectral_mse(d_hat, d, dft_size)
}

/// Near-end speech loss of the postfilter output.
pub fn loss_pf(s_hat: &[Complex64], s: &[Complex64], dft_size: usize) -> Result<f64> {
    spectral_mse(s_hat, s, dft_size)
}

/// `alpha * j_aec + (1 - alpha) * j_pf`.
pub fn loss_joint(j_aec: f64, j_pf: f64, alpha: f64) -> f64 {
    alpha * j_aec + (1.0 - alpha) * j_pf
}

/// Frame- and batch-averaged losses.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub j_aec: f64,
    pub j_pf: f64,
    /// The optimized objective of the phase.
    pub j: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.j.is_finite() && self.j_aec.is_finite() && self.j_pf.is_finite()
    }

    /// Weighted accumulation for averaging over windows.
    pub(crate) fn add_scaled(&mut self, other: &LossReport, w: f64) {
        self.j_aec += w * other.j_aec;
        self.j_pf += w * other.j_pf;
        self.j += w * other.j;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bin_example() {
        let z = vec![Complex64::new(0.0, 0.0); 257];
        let mut d = z.clone();
        d[5] = Complex64::new(1.0, 0.0);
        assert_eq!(loss_aec(&z, &d, 512).unwrap(), 2.0 / 512.0);
        assert_eq!(loss_aec(&d, &d, 512).unwrap(), 0.0);
        d[0] = Complex64::new(1.0, 0.0);
        assert_eq!(loss_pf(&z, &d, 512).unwrap(), 3.0 / 512.0);
        assert!(loss_pf(&z[..10], &d, 512).is_err());
    }

    #[test]
    fn homogeneity_and_joint() {
        let a: Vec<Complex64> = (0..257).map(|k| Complex64::new(k as f64, -1.0)).collect();
        let b: Vec<Complex64> = (0..257).map(|k| Complex64::new(0.5, k as f64 * 0.1)).collect();
        let c = 3.0;
        let sa: Vec<Complex64> = a.iter().map(|v| v * c).collect();
        let sb: Vec<Complex64> = b.iter().map(|v| v * c).collect();
        let l = loss_pf(&a, &b, 512).unwrap();
        assert!((loss_pf(&sa, &sb, 512).unwrap() - c * c * l).abs() < 1e-9 * l);
        assert_eq!(loss_joint(4.0, 8.0, 0.25), 7.0);
        assert_eq!(loss_joint(4.0, 8.0, 0.0), 8.0);
        assert_eq!(loss_joint(4.0, 8.0, 1.0), 4.0);
    }
}
