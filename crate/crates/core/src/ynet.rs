//! The Y-Net: a fully convolutional recurrent network with two spectral
//! inputs `U`, `V` and one spectral output `W`.
//!
//! ```text
//! [U | V] (M x 4)
//!   Conv(F)      M   x F    ----------------------------+
//!   Conv(F)/2    M/2 x F                                |
//!   Conv(2F)     M/2 x 2F   -------------+              |
//!   Conv(2F)/2   M/4 x 2F                |              |
//!   ConvLSTM(F)  M/4 x F                 |              |
//!   Deconv(2F)/2 M/2 x 2F  <- add -------+              |
//!   Deconv(2F)   M/2 x 2F                               |
//!   Deconv(F)/2  M   x F   <- add ----------------------+
//!   Deconv(F)    M   x F
//!   Conv(C)      M   x C   (linear)
//! ```
//!
//! With late fusion, `U` and `V` get separate encoders whose outputs are
//! concatenated in front of the ConvLSTM; skips come from the `V` encoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    convlstm_step, glorot_uniform, ConvLstmWeights, ConvSpec, ParamSet, Parameter, Scalar, Tape,
    Tensor, Var,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Inputs concatenated on channels before a single encoder.
    Ef,
    /// One encoder per input, concatenated before the ConvLSTM.
    Lf,
}

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YNetConfig {
    /// Feature-axis length M.
    pub feature_dim: usize,
    /// Kernel length N along the feature axis.
    pub kernel_len: usize,
    /// Number of feature maps F.
    pub filters: usize,
    /// Channels per spectral input/output C (real and imaginary part).
    pub channels: usize,
    pub fusion: Fusion,
    pub leaky_slope: f64,
    /// Every conv, deconv and ConvLSTM layer carries a bias.
    pub bias: bool,
}

impl YNetConfig {
    pub fn new(filters: usize, fusion: Fusion) -> Self {
        YNetConfig {
            feature_dim: 260,
            kernel_len: 24,
            filters,
            channels: 2,
            fusion,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            bias: true,
        }
    }

    /// AEC stage with early fusion, F = 70.
    pub fn aec_ef() -> Self {
        Self::new(70, Fusion::Ef)
    }

    /// AEC stage with late fusion, F = 60.
    pub fn aec_lf() -> Self {
        Self::new(60, Fusion::Lf)
    }

    /// Postfilter stage, early fusion, F = 70.
    pub fn postfilter() -> Self {
        Self::new(70, Fusion::Ef)
    }

    /// Single-stage ablation network, early fusion, F = 100.
    pub fn single_stage() -> Self {
        Self::new(100, Fusion::Ef)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.feature_dim == 0 || !self.feature_dim.is_multiple_of(4) {
            return fail(format!("feature_dim {} must be a positive multiple of 4", self.feature_dim));
        }
        if self.filters == 0 || self.kernel_len == 0 {
            return fail("filters and kernel_len must be >= 1".into());
        }
        if self.channels != 2 {
            return fail(format!("channels must be 2 (re, im), got {}", self.channels));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return fail(format!("leaky_slope {} outside (0, 1)", self.leaky_slope));
        }
        Ok(())
    }

    /// Shape of the ConvLSTM state `h` and `c`.
    pub fn state_shape(&self) -> [usize; 3] {
        [self.feature_dim / 4, 1, self.filters]
    }

    /// Channel count entering the ConvLSTM.
    pub fn bottleneck_channels(&self) -> usize {
        match self.fusion {
            Fusion::Ef => 2 * self.filters,
            Fusion::Lf => 4 * self.filters,
        }
    }
}

/// One named layer of a Y-Net.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub spec: ConvSpec,
    pub bias: bool,
}

/// Recurrent state of one Y-Net stream.
#[derive(Debug, Clone, PartialEq)]
pub struct YNetState<T> {
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

/// State handles while a sequence is being recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapeState {
    pub h: Var,
    pub c: Var,
}

impl TapeState {
    pub fn from_state<T: Scalar>(tape: &mut Tape<'_, T>, state: &YNetState<T>) -> Self {
        TapeState {
            h: tape.leaf(state.h.clone()),
            c: tape.leaf(state.c.clone()),
        }
    }

    pub fn to_state<T: Scalar>(&self, tape: &Tape<'_, T>) -> YNetState<T> {
        YNetState {
            h: tape.value(self.h).clone(),
            c: tape.value(self.c).clone(),
        }
    }
}

/// (layer name, output shape) pairs collected during a forward pass.
pub type ShapeTrace = Vec<(String, Vec<usize>)>;

/// A Y-Net whose parameters live in a shared [`ParamSet`] under `prefix`.
#[derive(Debug, Clone, PartialEq)]
pub struct YNet {
    config: YNetConfig,
    prefix: String,
}

const ENCODER: [&str; 4] = ["enc1", "enc2", "enc3", "enc4"];

impl YNet {
    pub fn new(config: YNetConfig, prefix: impl Into<String>) -> Result<Self> {
        config.validate()?;
        Ok(YNet {
            config,
            prefix: prefix.into(),
        })
    }

    pub fn config(&self) -> &YNetConfig {
        &self.config
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn encoder_specs(&self, path: &str, in_channels: usize) -> Vec<LayerSpec> {
        let (n, f) = (self.config.kernel_len, self.config.filters);
        let b = self.config.bias;
        let dims = [(in_channels, f, 1), (f, f, 2), (f, 2 * f, 1), (2 * f, 2 * f, 2)];
        ENCODER
            .iter()
            .zip(dims)
            .map(|(name, (ci, co, s))| LayerSpec {
                name: format!("{path}{name}"),
                spec: ConvSpec::conv(n, ci, co, s),
                bias: b,
            })
            .collect()
    }

    /// Every layer in forward order. The ConvLSTM appears as two entries:
    /// `lstm_x` (input kernel, with the gate bias) and `lstm_h` (recurrent
    /// kernel, no bias).
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let cfg = &self.config;
        let (n, f, c) = (cfg.kernel_len, cfg.filters, cfg.channels);
        let mut layers = match cfg.fusion {
            Fusion::Ef => self.encoder_specs("", 2 * c),
            Fusion::Lf => {
                let mut l = self.encoder_specs("enc_u.", c);
                l.extend(self.encoder_specs("enc_v.", c));
                l
            }
        };
        let spec = |name: &str, spec: ConvSpec, bias: bool| LayerSpec {
            name: name.to_string(),
            spec,
            bias,
        };
        layers.push(spec("lstm_x", ConvSpec::conv(n, cfg.bottleneck_channels(), 4 * f, 1), cfg.bias));
        layers.push(spec("lstm_h", ConvSpec::conv(n, f, 4 * f, 1), false));
        layers.push(spec("dec1", ConvSpec::deconv(n, f, 2 * f, 2), cfg.bias));
        layers.push(spec("dec2", ConvSpec::deconv(n, 2 * f, 2 * f, 1), cfg.bias));
        layers.push(spec("dec3", ConvSpec::deconv(n, 2 * f, f, 2), cfg.bias));
        layers.push(spec("dec4", ConvSpec::deconv(n, f, f, 1), cfg.bias));
        layers.push(spec("out", ConvSpec::conv(n, f, c, 1), cfg.bias));
        layers
    }

    pub fn num_params(&self) -> usize {
        self.layer_specs().iter().map(|l| l.spec.num_params(l.bias)).sum()
    }

    fn weight_name(&self, layer: &str) -> String {
        format!("{}.{layer}.w", self.prefix)
    }

    fn bias_name(&self, layer: &str) -> String {
        format!("{}.{layer}.b", self.prefix)
    }

    /// Add this network's parameters to `params`: Glorot-uniform kernels,
    /// zero biases.
    pub fn register_params<T: Scalar>(&self, params: &mut ParamSet<T>, rng: &mut impl Rng) -> Result<()> {
        for layer in self.layer_specs() {
            let s = layer.spec;
            let (fan_in, fan_out) = (s.kernel_len * s.in_channels, s.kernel_len * s.out_channels);
            let w = glorot_uniform(rng, s.weight_shape(), fan_in, fan_out);
            params.push(Parameter::new(self.weight_name(&layer.name), w))?;
            if layer.bias {
                params.push(Parameter::new(self.bias_name(&layer.name), Tensor::zeros(vec![s.out_channels])))?;
            }
        }
        Ok(())
    }

    /// Check that `params` holds every tensor of this network with the right shape.
    pub fn check_params<T: Scalar>(&self, params: &ParamSet<T>) -> Result<()> {
        for layer in self.layer_specs() {
            let mut expect = vec![(self.weight_name(&layer.name), layer.spec.weight_shape())];
            if layer.bias {
                expect.push((self.bias_name(&layer.name), vec![layer.spec.out_channels]));
            }
            for (name, shape) in expect {
                let p = params.by_name(&name).ok_or_else(|| Error::MissingParam(name.clone()))?;
                if p.tensor.shape() != shape {
                    return Err(Error::shape("YNet::check_params", format!("{name} {shape:?}"), format!("{:?}", p.tensor.shape())));
                }
            }
        }
        Ok(())
    }

    pub fn init_state<T: Scalar>(&self) -> YNetState<T> {
        let shape = self.config.state_shape().to_vec();
        YNetState {
            h: Tensor::zeros(shape.clone()),
            c: Tensor::zeros(shape),
        }
    }

    pub fn tape_state<T: Scalar>(&self, tape: &mut Tape<'_, T>) -> TapeState {
        TapeState::from_state(tape, &self.init_state())
    }

    fn layer<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        name: &str,
        x: Var,
        transposed: bool,
        stride: usize,
        activation: bool,
        trace: &mut Option<&mut ShapeTrace>,
    ) -> Result<Var> {
        let w = tape.param_by_name(&self.weight_name(name))?;
        let b = if self.config.bias {
            Some(tape.param_by_name(&self.bias_name(name))?)
        } else {
            None
        };
        let y = if transposed {
            tape.deconv(x, w, b, stride)?
        } else {
            tape.conv(x, w, b, stride)?
        };
        let y = if activation {
            tape.leaky_relu(y, self.config.leaky_slope)?
        } else {
            y
        };
        if let Some(t) = trace.as_deref_mut() {
            t.push((name.to_string(), tape.shape(y).to_vec()));
        }
        Ok(y)
    }

    /// Encoder path; returns (first-layer tap, third-layer tap, output).
    fn encode<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        path: &str,
        input: Var,
        trace: &mut Option<&mut ShapeTrace>,
    ) -> Result<(Var, Var, Var)> {
        let l = |i: usize| format!("{path}{}", ENCODER[i]);
        let e1 = self.layer(tape, &l(0), input, false, 1, true, trace)?;
        let e2 = self.layer(tape, &l(1), e1, false, 2, true, trace)?;
        let e3 = self.layer(tape, &l(2), e2, false, 1, true, trace)?;
        let e4 = self.layer(tape, &l(3), e3, false, 2, true, trace)?;
        Ok((e1, e3, e4))
    }

    /// One frame: `(U, V)` of shape `M x 1 x C` each, returns `W` (`M x 1 x C`)
    /// and the next recurrent state.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        u: Var,
        v: Var,
        state: TapeState,
    ) -> Result<(Var, TapeState)> {
        self.forward_traced(tape, u, v, state, None)
    }

    pub fn forward_traced<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        u: Var,
        v: Var,
        state: TapeState,
        mut trace: Option<&mut ShapeTrace>,
    ) -> Result<(Var, TapeState)> {
        let cfg = &self.config;
        let want = [cfg.feature_dim, 1, cfg.channels];
        for x in [u, v] {
            if tape.shape(x) != want {
                return Err(Error::shape("YNet::forward", format!("{want:?}"), format!("{:?}", tape.shape(x))));
            }
        }
        let (skip_full, skip_half, bottleneck) = match cfg.fusion {
            Fusion::Ef => {
                let input = tape.concat_channels(&[u, v])?;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(("input".into(), tape.shape(input).to_vec()));
                }
                self.encode(tape, "", input, &mut trace)?
            }
            Fusion::Lf => {
                let (_, _, eu) = self.encode(tape, "enc_u.", u, &mut trace)?;
                let (s1, s3, ev) = self.encode(tape, "enc_v.", v, &mut trace)?;
                let fused = tape.concat_channels(&[eu, ev])?;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(("fused".into(), tape.shape(fused).to_vec()));
                }
                (s1, s3, fused)
            }
        };

        let weights = ConvLstmWeights {
            input_kernel: tape.param_by_name(&self.weight_name("lstm_x"))?,
            recurrent_kernel: tape.param_by_name(&self.weight_name("lstm_h"))?,
            bias: tape.param_by_name(&self.bias_name("lstm_x"))?,
        };
        let (h, c) = convlstm_step(tape, bottleneck, state.h, state.c, weights)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(("convlstm".into(), tape.shape(h).to_vec()));
        }

        let d1 = self.layer(tape, "dec1", h, true, 2, true, &mut trace)?;
        let d1 = tape.add(d1, skip_half)?;
        let d2 = self.layer(tape, "dec2", d1, true, 1, true, &mut trace)?;
        let d3 = self.layer(tape, "dec3", d2, true, 2, true, &mut trace)?;
        let d3 = tape.add(d3, skip_full)?;
        let d4 = self.layer(tape, "dec4", d3, true, 1, true, &mut trace)?;
        let w = self.layer(tape, "out", d4, false, 1, false, &mut trace)?;
        Ok((w, TapeState { h, c }))
    }

    /// Run a whole sequence from zero state, differentiable across frames.
    pub fn forward_sequence<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        u_seq: &[Var],
        v_seq: &[Var],
    ) -> Result<Vec<Var>> {
        if u_seq.len() != v_seq.len() {
            return Err(Error::LengthMismatch(format!(
                "forward_sequence: {} U frames vs {} V frames",
                u_seq.len(),
                v_seq.len()
            )));
        }
        let mut state = self.tape_state(tape);
        let mut out = Vec::with_capacity(u_seq.len());
        for (&u, &v) in u_seq.iter().zip(v_seq) {
            let (w, next) = self.forward(tape, u, v, state)?;
            out.push(w);
            state = next;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build(cfg: YNetConfig, seed: u64) -> (YNet, ParamSet<f64>) {
        let net = YNet::new(cfg, "net").unwrap();
        let mut ps = ParamSet::new();
        net.register_params(&mut ps, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (net, ps)
    }

    fn tiny(fusion: Fusion) -> YNetConfig {
        YNetConfig {
            feature_dim: 20,
            kernel_len: 5,
            filters: 3,
            ..YNetConfig::new(3, fusion)
        }
    }

    fn random_input(rows: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::feature_map(rows, 2, (0..rows * 2).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn init_state_shapes() {
        let ef = YNet::new(YNetConfig::aec_ef(), "a").unwrap();
        let s = ef.init_state::<f32>();
        assert_eq!(s.h.shape(), &[65, 1, 70]);
        assert!(s.c.data().iter().all(|&v| v == 0.0));
        let lf = YNet::new(YNetConfig::aec_lf(), "a").unwrap();
        assert_eq!(lf.init_state::<f32>().h.shape(), &[65, 1, 60]);
        assert_eq!(YNetConfig::aec_lf().bottleneck_channels(), 240);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = YNetConfig::aec_ef();
        cfg.feature_dim = 258;
        assert!(YNet::new(cfg, "x").is_err());
        let mut cfg = YNetConfig::aec_ef();
        cfg.channels = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let (net, ps) = build(tiny(Fusion::Ef), 1);
        let mut tape = Tape::new(&ps);
        let z = tape.leaf(Tensor::zeros(vec![20, 1, 2]));
        let st = net.tape_state(&mut tape);
        let (w, _) = net.forward(&mut tape, z, z, st).unwrap();
        assert_eq!(tape.shape(w), &[20, 1, 2]);
        assert!(tape.value(w).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ef_and_lf_output_shapes_agree() {
        for fusion in [Fusion::Ef, Fusion::Lf] {
            let (net, ps) = build(tiny(fusion), 2);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut tape = Tape::new(&ps);
            let u = tape.leaf(random_input(20, &mut rng));
            let v = tape.leaf(random_input(20, &mut rng));
            let st = net.tape_state(&mut tape);
            let (w, st2) = net.forward(&mut tape, u, v, st).unwrap();
            assert_eq!(tape.shape(w), &[20, 1, 2]);
            assert_eq!(tape.shape(st2.h), &[5, 1, 3]);
        }
    }

    #[test]
    fn missing_params_reported() {
        let net = YNet::new(tiny(Fusion::Ef), "net").unwrap();
        let ps = ParamSet::<f64>::new();
        assert!(net.check_params(&ps).is_err());
        let mut tape = Tape::new(&ps);
        let z = tape.leaf(Tensor::zeros(vec![20, 1, 2]));
        let st = net.tape_state(&mut tape);
        assert!(matches!(net.forward(&mut tape, z, z, st), Err(Error::MissingParam(_))));
    }

    #[test]
    fn sequence_equals_stepwise_and_split() {
        let (net, ps) = build(tiny(Fusion::Lf), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frames: Vec<(Tensor<f64>, Tensor<f64>)> =
            (0..6).map(|_| (random_input(20, &mut rng), random_input(20, &mut rng))).collect();

        let mut tape = Tape::new(&ps);
        let us: Vec<Var> = frames.iter().map(|f| tape.leaf(f.0.clone())).collect();
        let vs: Vec<Var> = frames.iter().map(|f| tape.leaf(f.1.clone())).collect();
        let whole: Vec<Vec<f64>> = net
            .forward_sequence(&mut tape, &us, &vs)
            .unwrap()
            .into_iter()
            .map(|w| tape.value(w).data().to_vec())
            .collect();

        // one fresh tape per frame, carrying state as plain tensors
        let mut state = net.init_state::<f64>();
        for (l, (u, v)) in frames.iter().enumerate() {
            let mut t = Tape::new(&ps);
            let (u, v) = (t.leaf(u.clone()), t.leaf(v.clone()));
            let st = TapeState::from_state(&mut t, &state);
            let (w, next) = net.forward(&mut t, u, v, st).unwrap();
            assert_eq!(t.value(w).data(), whole[l].as_slice(), "frame {l}");
            state = next.to_state(&t);
        }

        // length-1 sequence equals a single forward from zero state
        let mut t = Tape::new(&ps);
        let (u, v) = (t.leaf(frames[0].0.clone()), t.leaf(frames[0].1.clone()));
        let w = net.forward_sequence(&mut t, &[u], &[v]).unwrap();
        assert_eq!(t.value(w[0]).data(), whole[0].as_slice());

        let mut t = Tape::new(&ps);
        assert!(net.forward_sequence(&mut t, &[u], &[]).is_err());
    }

    #[test]
    fn causality_future_frame_does_not_change_past() {
        let (net, ps) = build(tiny(Fusion::Ef), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<Tensor<f64>> = (0..4).map(|_| random_input(20, &mut rng)).collect();
        let mut b = a.clone();
        b[3] = random_input(20, &mut rng);
        let run = |frames: &[Tensor<f64>]| {
            let mut t = Tape::new(&ps);
            let vs: Vec<Var> = frames.iter().map(|f| t.leaf(f.clone())).collect();
            net.forward_sequence(&mut t, &vs, &vs)
                .unwrap()
                .into_iter()
                .map(|w| t.value(w).data().to_vec())
                .collect::<Vec<_>>()
        };
        let (ra, rb) = (run(&a), run(&b));
        assert_eq!(ra[..3], rb[..3]);
        assert_ne!(ra[3], rb[3]);
    }
}
