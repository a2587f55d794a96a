use num_complex::Complex64;

use crate::dsp::{highpass, FrameConfig, Signal, Spectrum, Stft};
use crate::error::{Error, Result};
use crate::pipeline::FrameOutput;

/// Per-component view of one processed utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    /// Pass-through references: high-pass, analysis and synthesis with unit
    /// gain, so they align sample by sample with the processed tracks.
    pub s_ref: Signal,
    pub d_ref: Signal,
    pub n_ref: Signal,
    /// Processed components `S G`, `(D - D̂) G`, `N G`.
    pub s_tilde: Signal,
    pub d_tilde: Signal,
    pub n_tilde: Signal,
    pub s_tilde_spec: Vec<Spectrum>,
    pub d_tilde_spec: Vec<Spectrum>,
    pub n_tilde_spec: Vec<Spectrum>,
}

/// High-pass, analyze and resynthesize `sig` unchanged.
pub fn passthrough(sig: &Signal, frame: &FrameConfig) -> Result<Signal> {
    let stft = Stft::new(*frame)?;
    stft.synthesize(&stft.analyze(&highpass(sig)?)?.frames)
}

/// Split the output of a two-stage run into near-end, residual-echo and
/// residual-noise parts, using `Ŝ = (S + D + N - D̂) G` per frame.
pub fn decompose_components(frames: &[FrameOutput], s: &Signal, d: &Signal, n: &Signal, frame: &FrameConfig) -> Result<Components> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("decompose_components"));
    }
    let stft = Stft::new(*frame)?;
    let spec = |sig: &Signal| -> Result<Vec<Spectrum>> { Ok(stft.analyze(&highpass(sig)?)?.frames) };
    let (ss, ds, ns) = (spec(s)?, spec(d)?, spec(n)?);
    if ss.len() != frames.len() || ds.len() != frames.len() || ns.len() != frames.len() {
        return Err(Error::LengthMismatch(format!(
            "{} processed frames vs {} component frames",
            frames.len(),
            ss.len()
        )));
    }
    let apply = |comp: &[Spectrum], minus_dhat: bool| -> Vec<Spectrum> {
        comp.iter()
            .zip(frames)
            .map(|(c, f)| {
                c.iter()
                    .enumerate()
                    .map(|(k, &v)| {
                        let v: Complex64 = if minus_dhat { v - f.d_hat[k] } else { v };
                        v * f.gain[k]
                    })
                    .collect()
            })
            .collect()
    };
    let (s_t, d_t, n_t) = (apply(&ss, false), apply(&ds, true), apply(&ns, false));
    Ok(Components {
        s_ref: stft.synthesize(&ss)?,
        d_ref: stft.synthesize(&ds)?,
        n_ref: stft.synthesize(&ns)?,
        s_tilde: stft.synthesize(&s_t)?,
        d_tilde: stft.synthesize(&d_t)?,
        n_tilde: stft.synthesize(&n_t)?,
        s_tilde_spec: s_t,
        d_tilde_spec: d_t,
        n_tilde_spec: n_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{run_utterance, IdentityModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64, amp: f64) -> Signal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Signal::new((0..len).map(|_| rng.gen_range(-amp..amp)).collect(), 16_000)
    }

    #[test]
    fn identity_decomposition_is_passthrough() {
        let frame = FrameConfig::default();
        let (s, d, n) = (noise(3000, 1, 0.3), noise(3000, 2, 0.3), noise(3000, 3, 0.05));
        let y = Signal::new((0..3000).map(|i| s.samples[i] + d.samples[i] + n.samples[i]).collect(), 16_000);
        let out = run_utterance(&mut IdentityModel::default(), &Signal::zeros(3000, 16_000), &y).unwrap();
        let c = decompose_components(&out.frames, &s, &d, &n, &frame).unwrap();
        assert_eq!(c.s_tilde, c.s_ref);
        assert_eq!(c.d_tilde, c.d_ref);
        assert_eq!(c.n_tilde, c.n_ref);
        assert_eq!(c.s_ref, passthrough(&s, &frame).unwrap());
        // pass-through matches the high-passed input away from the edges
        let hp = highpass(&s).unwrap();
        for i in 424..2500 {
            assert!((c.s_ref.samples[i] - hp.samples[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn perfect_echo_estimate_cancels_residual_echo() {
        let frame = FrameConfig::default();
        let stft = Stft::new(frame).unwrap();
        let (s, d, n) = (noise(2000, 4, 0.3), noise(2000, 5, 0.3), noise(2000, 6, 0.05));
        let ds = stft.analyze(&highpass(&d).unwrap()).unwrap().frames;
        let frames: Vec<FrameOutput> = ds
            .iter()
            .map(|dk| FrameOutput {
                d_hat: dk.clone(),
                e: dk.clone(),
                mask: dk.clone(),
                gain: vec![Complex64::new(0.3, -0.2); 257],
                s_hat: dk.clone(),
            })
            .collect();
        let c = decompose_components(&frames, &s, &d, &n, &frame).unwrap();
        assert!(c.d_tilde_spec.iter().flatten().all(|v| v.norm() == 0.0));
        assert!(decompose_components(&frames[..2], &s, &d, &n, &frame).is_err());
        assert!(decompose_components(&[], &s, &d, &n, &frame).is_err());
    }
}
