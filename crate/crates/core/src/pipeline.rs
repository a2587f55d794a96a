//! The two-stage system: an AEC Y-Net estimates the echo spectrum `D̂`, it is
//! subtracted from the microphone spectrum, and a postfilter Y-Net predicts a
//! complex mask that is compressed and applied to the difference.
//!
//! ```text
//! x(n) -> HP -> DFT -> X ---+---------------------------+
//!                            \                           \ (pf_input = x)
//! y(n) -> HP -> DFT -> Y -> AEC(X, Y) = D̂ -> E = Y - D̂ -> PF(E, D̂ | X) = M
//!                                                 \
//!                            Ŝ = E tanh|M| M/|M| -> IDFT/OLA -> ŝ(n)
//! ```
//!
//! The single-stage ablation runs one Y-Net on `(X, Y)` and applies its mask
//! to `Y`.

use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{bins_from_rows, bins_tensor, highpass, pack_features, FrameConfig, Signal, Spectrum, Stft};
use crate::error::{Error, Result};
use crate::tensor::{checkpoint, compressed_gain, ParamSet, Scalar, Tape, Var};
use crate::ynet::{TapeState, YNet, YNetConfig, YNetState};

/// Second input of the postfilter stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PfInput {
    /// The echo estimate of the AEC stage.
    #[default]
    Dhat,
    /// The far-end reference spectrum.
    X,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TwoStage,
    SingleStage,
}

/// Architecture of a complete model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Y2NetConfig {
    TwoStage {
        #[serde(default)]
        frame: FrameConfig,
        aec: YNetConfig,
        pf: YNetConfig,
        #[serde(default)]
        pf_input: PfInput,
    },
    SingleStage {
        #[serde(default)]
        frame: FrameConfig,
        net: YNetConfig,
    },
}

impl Y2NetConfig {
    /// Two-stage model with the given AEC network and an EF postfilter.
    pub fn two_stage(aec: YNetConfig, pf_input: PfInput) -> Self {
        Y2NetConfig::TwoStage {
            frame: FrameConfig::default(),
            aec,
            pf: YNetConfig::postfilter(),
            pf_input,
        }
    }

    pub fn single_stage() -> Self {
        Y2NetConfig::SingleStage {
            frame: FrameConfig::default(),
            net: YNetConfig::single_stage(),
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Y2NetConfig::TwoStage { .. } => Mode::TwoStage,
            Y2NetConfig::SingleStage { .. } => Mode::SingleStage,
        }
    }

    pub fn frame(&self) -> &FrameConfig {
        match self {
            Y2NetConfig::TwoStage { frame, .. } | Y2NetConfig::SingleStage { frame, .. } => frame,
        }
    }

    pub fn frame_mut(&mut self) -> &mut FrameConfig {
        match self {
            Y2NetConfig::TwoStage { frame, .. } | Y2NetConfig::SingleStage { frame, .. } => frame,
        }
    }

    /// Networks in processing order.
    pub fn networks(&self) -> Vec<&YNetConfig> {
        match self {
            Y2NetConfig::TwoStage { aec, pf, .. } => vec![aec, pf],
            Y2NetConfig::SingleStage { net, .. } => vec![net],
        }
    }

    pub fn networks_mut(&mut self) -> Vec<&mut YNetConfig> {
        match self {
            Y2NetConfig::TwoStage { aec, pf, .. } => vec![aec, pf],
            Y2NetConfig::SingleStage { net, .. } => vec![net],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frame = self.frame();
        frame.validate()?;
        for net in self.networks() {
            net.validate()?;
            if net.feature_dim != frame.feature_dim {
                return Err(Error::Config(format!(
                    "network feature_dim {} differs from frame feature_dim {}",
                    net.feature_dim, frame.feature_dim
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Y2NetConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-bin complex gain `tanh(|M|) M / |M|`, zero at `M = 0`.
pub fn mask_gain(m: Complex64) -> Complex64 {
    let (gr, gi) = compressed_gain(m.re, m.im);
    Complex64::new(gr, gi)
}

/// Apply the compressed mask `M` to `E` bin by bin.
pub fn apply_mask(e: &[Complex64], m: &[Complex64]) -> Result<Spectrum> {
    if e.len() != m.len() {
        return Err(Error::LengthMismatch(format!("apply_mask: {} vs {} bins", e.len(), m.len())));
    }
    Ok(e.iter().zip(m).map(|(&e, &m)| e * mask_gain(m)).collect())
}

/// Everything one frame produces.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    /// Echo estimate; zero in single-stage mode.
    pub d_hat: Spectrum,
    /// `Y - D̂`.
    pub e: Spectrum,
    /// Raw postfilter output.
    pub mask: Spectrum,
    /// Compressed gain derived from `mask`.
    pub gain: Spectrum,
    /// `E * gain`.
    pub s_hat: Spectrum,
}

/// A causal frame-by-frame spectral processor.
pub trait FrameModel {
    fn frame_config(&self) -> FrameConfig;

    /// Clear all recurrent state before a new utterance.
    fn reset(&mut self);

    fn process_frame(&mut self, x: &[Complex64], y: &[Complex64]) -> Result<FrameOutput>;
}

/// Pass-through model: `D̂ = 0`, unit gain, `Ŝ = Y`.
///
/// The reported `mask` is `+inf`, the limit in which the compressed gain is 1.
#[derive(Debug, Clone, Default)]
pub struct IdentityModel {
    pub frame: FrameConfig,
}

impl FrameModel for IdentityModel {
    fn frame_config(&self) -> FrameConfig {
        self.frame
    }

    fn reset(&mut self) {}

    fn process_frame(&mut self, _x: &[Complex64], y: &[Complex64]) -> Result<FrameOutput> {
        let n = y.len();
        Ok(FrameOutput {
            d_hat: vec![Complex64::new(0.0, 0.0); n],
            e: y.to_vec(),
            mask: vec![Complex64::new(f64::INFINITY, 0.0); n],
            gain: vec![Complex64::new(1.0, 0.0); n],
            s_hat: y.to_vec(),
        })
    }
}

/// Output of [`run_utterance`].
#[derive(Debug, Clone)]
pub struct UtteranceOutput {
    pub s_hat: Signal,
    pub frames: Vec<FrameOutput>,
}

impl UtteranceOutput {
    /// Resynthesize one of the per-frame spectra, e.g. `|f| &f.d_hat`.
    pub fn synthesize_track(&self, frame: &FrameConfig, pick: impl Fn(&FrameOutput) -> &Spectrum) -> Result<Signal> {
        let spectra: Vec<Spectrum> = self.frames.iter().map(|f| pick(f).clone()).collect();
        Stft::new(*frame)?.synthesize(&spectra)
    }
}

/// High-pass both signals, analyze, run `model` from a reset state over
/// every frame, and overlap-add `Ŝ`.
pub fn run_utterance(model: &mut dyn FrameModel, x: &Signal, y: &Signal) -> Result<UtteranceOutput> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(format!("x has {} samples, y has {}", x.len(), y.len())));
    }
    let frame = model.frame_config();
    let stft = Stft::new(frame)?;
    let xs = stft.analyze(&highpass(x)?)?;
    let ys = stft.analyze(&highpass(y)?)?;
    model.reset();
    let mut frames = Vec::with_capacity(ys.len());
    for (xf, yf) in xs.frames.iter().zip(&ys.frames) {
        frames.push(model.process_frame(xf, yf)?);
    }
    let spectra: Vec<Spectrum> = frames.iter().map(|f| f.s_hat.clone()).collect();
    let s_hat = stft.synthesize(&spectra)?;
    Ok(UtteranceOutput { s_hat, frames })
}

/// Tape handles produced by one differentiable frame step.
#[derive(Debug, Clone, Copy)]
pub struct FrameVars {
    /// `n_bins x 1 x 2`; `None` in single-stage mode.
    pub d_hat: Option<Var>,
    pub e: Var,
    pub mask: Var,
    pub s_hat: Var,
}

/// Recurrent state on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapePipelineState {
    pub first: TapeState,
    pub second: Option<TapeState>,
}

/// Recurrent state of a running stream.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState<T> {
    pub aec_state: YNetState<T>,
    pub pf_state: Option<YNetState<T>>,
}

/// A model with its parameters.
#[derive(Debug, Clone)]
pub struct Y2Net<T> {
    config: Y2NetConfig,
    first: YNet,
    second: Option<YNet>,
    pf_input: PfInput,
    params: ParamSet<T>,
}

impl<T: Scalar> Y2Net<T> {
    /// Freshly initialized parameters from `seed`.
    pub fn new(config: Y2NetConfig, seed: u64) -> Result<Self> {
        let mut net = Self::skeleton(config, ParamSet::new())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        net.first.register_params(&mut net.params, &mut rng)?;
        if let Some(pf) = &net.second {
            pf.register_params(&mut net.params, &mut rng)?;
        }
        Ok(net)
    }

    /// Wrap existing parameters after checking names and shapes.
    pub fn from_params(config: Y2NetConfig, params: ParamSet<T>) -> Result<Self> {
        let net = Self::skeleton(config, params)?;
        net.first.check_params(&net.params)?;
        if let Some(pf) = &net.second {
            pf.check_params(&net.params)?;
        }
        Ok(net)
    }

    fn skeleton(config: Y2NetConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let (first, second, pf_input) = match &config {
            Y2NetConfig::TwoStage { aec, pf, pf_input, .. } => {
                (YNet::new(*aec, "aec")?, Some(YNet::new(*pf, "pf")?), *pf_input)
            }
            Y2NetConfig::SingleStage { net, .. } => (YNet::new(*net, "net")?, None, PfInput::X),
        };
        Ok(Y2Net {
            config,
            first,
            second,
            pf_input,
            params,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (json, params) = checkpoint::load::<T>(path)?;
        let config = Y2NetConfig::from_json(&json).map_err(|e| Error::Checkpoint(format!("bad config header: {e}")))?;
        Self::from_params(config, params).map_err(|e| match e {
            Error::MissingParam(_) | Error::Shape { .. } => Error::Checkpoint(format!("parameters do not match the config: {e}")),
            e => e,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, &self.config.to_json()?, &self.params)
    }

    pub fn config(&self) -> &Y2NetConfig {
        &self.config
    }

    pub fn frame(&self) -> &FrameConfig {
        self.config.frame()
    }

    pub fn mode(&self) -> Mode {
        self.config.mode()
    }

    /// The AEC network (two-stage) or the only network (single-stage).
    pub fn first(&self) -> &YNet {
        &self.first
    }

    pub fn second(&self) -> Option<&YNet> {
        self.second.as_ref()
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_values()
    }

    /// Convert to another precision.
    pub fn cast<U: Scalar>(&self) -> Y2Net<U> {
        Y2Net {
            config: self.config.clone(),
            first: self.first.clone(),
            second: self.second.clone(),
            pf_input: self.pf_input,
            params: self.params.cast(),
        }
    }

    pub fn init_state(&self) -> PipelineState<T> {
        PipelineState {
            aec_state: self.first.init_state(),
            pf_state: self.second.as_ref().map(|n| n.init_state()),
        }
    }

    pub fn tape_state(&self, tape: &mut Tape<'_, T>) -> TapePipelineState {
        TapePipelineState {
            first: self.first.tape_state(tape),
            second: self.second.as_ref().map(|n| n.tape_state(tape)),
        }
    }

    fn tape_state_from(&self, tape: &mut Tape<'_, T>, state: &PipelineState<T>) -> TapePipelineState {
        TapePipelineState {
            first: TapeState::from_state(tape, &state.aec_state),
            second: state.pf_state.as_ref().map(|s| TapeState::from_state(tape, s)),
        }
    }

    /// Leaves for one frame: `(X packed, Y packed, Y bins)`.
    pub fn frame_leaves(&self, tape: &mut Tape<'_, T>, x: &[Complex64], y: &[Complex64]) -> Result<(Var, Var, Var)> {
        let frame = self.frame();
        if x.len() != frame.n_bins || y.len() != frame.n_bins {
            return Err(Error::shape("Y2Net::frame_leaves", frame.n_bins, format!("{} / {}", x.len(), y.len())));
        }
        let xp = tape.leaf(pack_features(x, frame)?);
        let yp = tape.leaf(pack_features(y, frame)?);
        let yb = tape.leaf(bins_tensor(y));
        Ok((xp, yp, yb))
    }

    /// Differentiable frame step on packed inputs `x`, `y` (`M x 1 x 2`) and
    /// the unpadded microphone bins `y_bins` (`n_bins x 1 x 2`).
    pub fn forward_frame(
        &self,
        tape: &mut Tape<'_, T>,
        x: Var,
        y: Var,
        y_bins: Var,
        state: TapePipelineState,
    ) -> Result<(FrameVars, TapePipelineState)> {
        let frame = *self.frame();
        let (w, first) = self.first.forward(tape, x, y, state.first)?;
        let Some(pf) = &self.second else {
            let mask = tape.spectral_bins(w, frame.n_bins)?;
            let s_hat = tape.compressed_mask(y_bins, mask)?;
            let vars = FrameVars {
                d_hat: None,
                e: y_bins,
                mask,
                s_hat,
            };
            return Ok((vars, TapePipelineState { first, second: None }));
        };
        let pf_state = state
            .second
            .ok_or_else(|| Error::InvalidArgument("two-stage model needs a postfilter state".into()))?;
        let d_hat = tape.spectral_bins(w, frame.n_bins)?;
        let e = tape.sub(y_bins, d_hat)?;
        let e_packed = tape.pad_rows(e, frame.feature_dim)?;
        let v = match self.pf_input {
            PfInput::Dhat => tape.pad_rows(d_hat, frame.feature_dim)?,
            PfInput::X => x,
        };
        let (m, second) = pf.forward(tape, e_packed, v, pf_state)?;
        let mask = tape.spectral_bins(m, frame.n_bins)?;
        let s_hat = tape.compressed_mask(e, mask)?;
        let vars = FrameVars {
            d_hat: Some(d_hat),
            e,
            mask,
            s_hat,
        };
        Ok((
            vars,
            TapePipelineState {
                first,
                second: Some(second),
            },
        ))
    }

    /// Only the AEC network, for pretraining: returns `D̂` bins.
    pub fn forward_aec(
        &self,
        tape: &mut Tape<'_, T>,
        x: Var,
        y: Var,
        state: TapeState,
    ) -> Result<(Var, TapeState)> {
        if self.second.is_none() {
            return Err(Error::Config("single-stage model has no AEC stage".into()));
        }
        let (w, next) = self.first.forward(tape, x, y, state)?;
        Ok((tape.spectral_bins(w, self.frame().n_bins)?, next))
    }

    /// One streaming step with explicit state.
    pub fn process_frame(&self, x: &[Complex64], y: &[Complex64], state: &mut PipelineState<T>) -> Result<FrameOutput> {
        if self.second.is_some() != state.pf_state.is_some() {
            return Err(Error::InvalidArgument("pipeline state does not match the model mode".into()));
        }
        for (s, net) in std::iter::once((&state.aec_state, &self.first))
            .chain(state.pf_state.iter().zip(self.second.iter()))
        {
            let want = net.config().state_shape();
            if s.h.shape() != want || s.c.shape() != want {
                return Err(Error::shape("Y2Net::process_frame", format!("state {want:?}"), format!("{:?}", s.h.shape())));
            }
        }
        let mut tape = Tape::new(&self.params);
        let (xp, yp, yb) = self.frame_leaves(&mut tape, x, y)?;
        let st = self.tape_state_from(&mut tape, state);
        let (vars, next) = self.forward_frame(&mut tape, xp, yp, yb, st)?;
        state.aec_state = next.first.to_state(&tape);
        state.pf_state = next.second.map(|s| s.to_state(&tape));

        let n = self.frame().n_bins;
        let read = |v: Var| bins_from_rows(tape.value(v).data(), n);
        let mask = read(vars.mask);
        let gain: Spectrum = mask.iter().map(|&m| mask_gain(m)).collect();
        Ok(FrameOutput {
            d_hat: vars.d_hat.map(read).unwrap_or_else(|| vec![Complex64::new(0.0, 0.0); n]),
            e: read(vars.e),
            mask,
            gain,
            s_hat: read(vars.s_hat),
        })
    }

    /// A streaming handle that owns its recurrent state.
    pub fn stream(&self) -> Y2NetStream<'_, T> {
        Y2NetStream {
            net: self,
            state: self.init_state(),
        }
    }

    pub fn process_utterance(&self, x: &Signal, y: &Signal) -> Result<UtteranceOutput> {
        run_utterance(&mut self.stream(), x, y)
    }
}

/// One audio stream running a shared [`Y2Net`].
#[derive(Debug, Clone)]
pub struct Y2NetStream<'a, T> {
    net: &'a Y2Net<T>,
    state: PipelineState<T>,
}

impl<T: Scalar> Y2NetStream<'_, T> {
    pub fn state(&self) -> &PipelineState<T> {
        &self.state
    }
}

impl<T: Scalar> FrameModel for Y2NetStream<'_, T> {
    fn frame_config(&self) -> FrameConfig {
        *self.net.frame()
    }

    fn reset(&mut self) {
        self.state = self.net.init_state();
    }

    fn process_frame(&mut self, x: &[Complex64], y: &[Complex64]) -> Result<FrameOutput> {
        self.net.process_frame(x, y, &mut self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Parameter, Tensor};
    use crate::ynet::Fusion;
    use rand::Rng;

    pub(crate) fn tiny_config(mode: Mode, pf_input: PfInput) -> Y2NetConfig {
        let net = YNetConfig {
            kernel_len: 5,
            ..YNetConfig::new(3, Fusion::Ef)
        };
        match mode {
            Mode::TwoStage => Y2NetConfig::TwoStage {
                frame: FrameConfig::default(),
                aec: net,
                pf: net,
                pf_input,
            },
            Mode::SingleStage => Y2NetConfig::SingleStage {
                frame: FrameConfig::default(),
                net,
            },
        }
    }

    fn random_spectrum(rng: &mut ChaCha8Rng) -> Spectrum {
        let mut s: Spectrum = (0..257)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        s[0].im = 0.0;
        s[256].im = 0.0;
        s
    }

    /// Set every bias to `value` so zero inputs produce nonzero activity.
    fn with_biases(mut net: Y2Net<f64>, value: f64) -> Y2Net<f64> {
        for p in net.params_mut().iter_mut() {
            if p.name.ends_with(".b") {
                p.tensor.data_mut().iter_mut().for_each(|v| *v = value);
            }
        }
        net
    }

    #[test]
    fn mask_examples() {
        let e = [Complex64::new(1.0, 0.0)];
        let s = apply_mask(&e, &[Complex64::new(0.0, 1.0)]).unwrap();
        assert!((s[0].im - 1f64.tanh()).abs() < 1e-15 && s[0].re == 0.0);
        assert!((s[0].im - 0.76159).abs() < 1e-5);
        assert_eq!(apply_mask(&e, &[Complex64::new(0.0, 0.0)]).unwrap()[0], Complex64::new(0.0, 0.0));
        let big = apply_mask(&e, &[Complex64::new(1e3, 0.0)]).unwrap();
        assert!((big[0] - e[0]).norm() < 1e-12);
        assert!(apply_mask(&e, &[]).is_err());
    }

    #[test]
    fn config_json_round_trip_and_validation() {
        let cfg = Y2NetConfig::two_stage(YNetConfig::aec_lf(), PfInput::X);
        let back = Y2NetConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(Y2NetConfig::single_stage().mode(), Mode::SingleStage);
        let mut bad = tiny_config(Mode::TwoStage, PfInput::Dhat);
        if let Y2NetConfig::TwoStage { pf, .. } = &mut bad {
            pf.feature_dim = 256;
        }
        assert!(bad.validate().is_err());
        assert!(Y2NetConfig::from_json(r#"{"mode":"two_stage","aec":1}"#).is_err());
    }

    #[test]
    fn zero_inputs_zero_outputs() {
        for mode in [Mode::TwoStage, Mode::SingleStage] {
            let net = Y2Net::<f64>::new(tiny_config(mode, PfInput::Dhat), 1).unwrap();
            let mut st = net.init_state();
            let z = vec![Complex64::new(0.0, 0.0); 257];
            let out = net.process_frame(&z, &z, &mut st).unwrap();
            for s in [&out.d_hat, &out.e, &out.mask, &out.s_hat] {
                assert!(s.iter().all(|c| c.norm() == 0.0));
            }
        }
    }

    #[test]
    fn stub_aec_returning_y_cancels_everything() {
        // D̂ = Y gives E = 0, so any mask yields zero
        let net = Y2Net::<f64>::new(tiny_config(Mode::TwoStage, PfInput::Dhat), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = random_spectrum(&mut rng);
        let mut tape = Tape::new(net.params());
        let yb = tape.leaf(bins_tensor(&y));
        let d_hat = tape.leaf(bins_tensor(&y));
        let e = tape.sub(yb, d_hat).unwrap();
        let m = tape.leaf(bins_tensor(&random_spectrum(&mut rng)));
        let s = tape.compressed_mask(e, m).unwrap();
        assert!(tape.value(s).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pf_input_switch_changes_only_second_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, y) = (random_spectrum(&mut rng), random_spectrum(&mut rng));
        let a = Y2Net::<f64>::new(tiny_config(Mode::TwoStage, PfInput::Dhat), 5).unwrap();
        let b = Y2Net::<f64>::from_params(tiny_config(Mode::TwoStage, PfInput::X), a.params().clone()).unwrap();
        let oa = a.process_frame(&x, &y, &mut a.init_state()).unwrap();
        let ob = b.process_frame(&x, &y, &mut b.init_state()).unwrap();
        assert_eq!(oa.d_hat, ob.d_hat);
        assert_eq!(oa.e, ob.e);
        assert_ne!(oa.mask, ob.mask);

        // running the X variant's postfilter on (E, D̂) reproduces the D̂ variant
        let mut tape = Tape::new(b.params());
        let ep = tape.leaf(pack_features(&oa.e, b.frame()).unwrap());
        let dp = tape.leaf(pack_features(&oa.d_hat, b.frame()).unwrap());
        let pf = b.second().unwrap();
        let st = pf.tape_state(&mut tape);
        let (m, _) = pf.forward(&mut tape, ep, dp, st).unwrap();
        let mask = bins_from_rows(tape.value(m).data(), 257);
        for (p, q) in mask.iter().zip(&oa.mask) {
            assert!((p - q).norm() < 1e-12);
        }
    }

    #[test]
    fn magnitude_bound_and_decomposition() {
        let net = with_biases(Y2Net::<f64>::new(tiny_config(Mode::TwoStage, PfInput::Dhat), 6).unwrap(), 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut st = net.init_state();
        for _ in 0..3 {
            let (x, y) = (random_spectrum(&mut rng), random_spectrum(&mut rng));
            let out = net.process_frame(&x, &y, &mut st).unwrap();
            for k in 0..257 {
                assert!(out.s_hat[k].norm() <= out.e[k].norm() + 1e-12);
                let want = (y[k] - out.d_hat[k]) * out.gain[k];
                assert!((out.s_hat[k] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn single_stage_mask_bound() {
        let net = with_biases(Y2Net::<f64>::new(tiny_config(Mode::SingleStage, PfInput::X), 8).unwrap(), 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (x, y) = (random_spectrum(&mut rng), random_spectrum(&mut rng));
        let out = net.process_frame(&x, &y, &mut net.init_state()).unwrap();
        assert!(out.d_hat.iter().all(|c| c.norm() == 0.0));
        for k in 0..257 {
            assert!(out.s_hat[k].norm() <= y[k].norm() + 1e-12);
        }
        let mut tape = Tape::new(net.params());
        let (xp, yp, _) = net.frame_leaves(&mut tape, &x, &y).unwrap();
        let st = net.first().tape_state(&mut tape);
        assert!(net.forward_aec(&mut tape, xp, yp, st).is_err());
    }

    #[test]
    fn state_mismatch_rejected() {
        let two = Y2Net::<f64>::new(tiny_config(Mode::TwoStage, PfInput::Dhat), 1).unwrap();
        let one = Y2Net::<f64>::new(tiny_config(Mode::SingleStage, PfInput::X), 1).unwrap();
        let z = vec![Complex64::new(0.0, 0.0); 257];
        assert!(two.process_frame(&z, &z, &mut one.init_state()).is_err());
        assert!(two.process_frame(&z[..10], &z, &mut two.init_state()).is_err());
    }

    #[test]
    fn utterance_length_law_and_zero_mic() {
        let net = Y2Net::<f64>::new(tiny_config(Mode::TwoStage, PfInput::Dhat), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let len = 5000;
        let x = Signal::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16_000);
        let y = Signal::zeros(len, 16_000);
        let out = net.process_utterance(&x, &y).unwrap();
        let frames = FrameConfig::default().num_frames(len);
        assert_eq!(frames, 22);
        assert_eq!(out.s_hat.len(), (frames - 1) * 212 + 424);
        // the two-stage echo estimate depends on x, so a silent microphone
        // yields silence only when the mask is applied to y directly
        let single = Y2Net::<f64>::new(tiny_config(Mode::SingleStage, PfInput::X), 3).unwrap();
        let out = single.process_utterance(&x, &y).unwrap();
        assert!(out.s_hat.samples.iter().all(|&v| v == 0.0));
        assert!(net.process_utterance(&x, &Signal::zeros(len - 1, 16_000)).is_err());
    }

    #[test]
    fn identity_model_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = Signal::new((0..4000).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16_000);
        let out = run_utterance(&mut IdentityModel::default(), &Signal::zeros(4000, 16_000), &y).unwrap();
        let reference = Stft::new(FrameConfig::default())
            .unwrap()
            .synthesize(&Stft::new(FrameConfig::default()).unwrap().analyze(&highpass(&y).unwrap()).unwrap().frames)
            .unwrap();
        assert_eq!(out.s_hat, reference);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Y2Net::<f32>::new(tiny_config(Mode::TwoStage, PfInput::X), 12).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        net.save(&path).unwrap();
        let back = Y2Net::<f32>::load(&path).unwrap();
        assert_eq!(back.config(), net.config());
        assert_eq!(back.params().num_values(), net.params().num_values());
        for (a, b) in back.params().iter().zip(net.params().iter()) {
            assert_eq!(a.tensor, b.tensor);
        }
        let mut other = ParamSet::<f64>::new();
        other.push(Parameter::new("aec.enc1.w", Tensor::zeros(vec![1]))).unwrap();
        assert!(Y2Net::from_params(tiny_config(Mode::TwoStage, PfInput::X), other.clone()).is_err());
        let bad = dir.path().join("bad.ckpt");
        crate::tensor::checkpoint::save(&bad, &net.config().to_json().unwrap(), &other).unwrap();
        assert!(matches!(Y2Net::<f32>::load(&bad), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn causal_frames() {
        let net = with_biases(Y2Net::<f64>::new(tiny_config(Mode::TwoStage, PfInput::Dhat), 13).unwrap(), 0.02);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let xs: Vec<Spectrum> = (0..4).map(|_| random_spectrum(&mut rng)).collect();
        let ys: Vec<Spectrum> = (0..4).map(|_| random_spectrum(&mut rng)).collect();
        let run = |ys: &[Spectrum]| {
            let mut st = net.init_state();
            xs.iter().zip(ys).map(|(x, y)| net.process_frame(x, y, &mut st).unwrap().s_hat).collect::<Vec<_>>()
        };
        let a = run(&ys);
        let mut ys2 = ys.clone();
        ys2[3] = random_spectrum(&mut rng);
        let b = run(&ys2);
        assert_eq!(a[..3], b[..3]);
        assert_ne!(a[3], b[3]);
    }
}
