//! Helpers shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use y2net_core::tensor::{Parameter, ParamSet, Tape, Var};
use y2net_core::{Result, Tensor};

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut impl Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), random_vec(rng, len, scale)).unwrap()
}

pub fn params(entries: Vec<(&str, Tensor<f64>)>) -> ParamSet<f64> {
    let mut set = ParamSet::new();
    for (name, t) in entries {
        set.push(Parameter::new(name, t)).unwrap();
    }
    set
}

/// Contract a tensor-valued output to a scalar with a fixed random weight
/// pattern, so every output element contributes to the checked loss.
pub fn project(tape: &mut Tape<'_, f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let w = random_tensor(&mut rng(seed), &shape, 1.0);
    let w = tape.leaf(w);
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

/// Largest per-parameter relative error `|g - g_fd| / max(|g|, |g_fd|)`
/// (2-norms over each parameter tensor) between tape gradients and central
/// differences of the scalar built by `f`.
pub fn gradient_error(mut set: ParamSet<f64>, f: impl Fn(&mut Tape<'_, f64>) -> Result<Var>) -> f64 {
    let analytic = {
        let mut tape = Tape::new(&set);
        let loss = f(&mut tape).unwrap();
        tape.backward(loss).unwrap()
    };
    let eval = |set: &ParamSet<f64>| -> f64 {
        let mut tape = Tape::new(set);
        let loss = f(&mut tape).unwrap();
        tape.item(loss)
    };
    let mut worst = 0.0f64;
    for i in 0..set.len() {
        let len = set.get(i).tensor.len();
        let g = analytic.dense(i, len);
        let mut numeric = vec![0.0; len];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = set.get(i).tensor.data()[j];
            set.get_mut(i).tensor.data_mut()[j] = orig + FD_STEP;
            let up = eval(&set);
            set.get_mut(i).tensor.data_mut()[j] = orig - FD_STEP;
            let down = eval(&set);
            set.get_mut(i).tensor.data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        let diff = g.iter().zip(&numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
        let err = if scale < 1e-10 { diff } else { diff / scale };
        worst = worst.max(err);
    }
    worst
}

/// One named gradient check per differentiable op, each on small random
/// inputs that are all parameters.
pub fn layer_gradient_errors() -> Vec<(&'static str, f64)> {
    use y2net_core::tensor::{convlstm_step, ConvLstmWeights, ConvSpec};
    let mut r = rng(11);
    let fm = |r: &mut ChaCha8Rng, rows: usize, c: usize| random_tensor(r, &[rows, 1, c], 1.0);
    let mut out = Vec::new();

    for (name, stride) in [("conv stride 1", 1), ("conv stride 2", 2)] {
        let spec = ConvSpec::conv(5, 3, 4, stride);
        let set = params(vec![
            ("x", fm(&mut r, 10, 3)),
            ("w", random_tensor(&mut r, &spec.weight_shape(), 0.5)),
            ("b", random_tensor(&mut r, &[4], 0.5)),
        ]);
        out.push((name, gradient_error(set, |t| {
            let (x, w, b) = (t.param(0), t.param(1), t.param(2));
            let y = t.conv(x, w, Some(b), stride)?;
            project(t, y, 1)
        })));
    }
    for (name, stride) in [("deconv stride 1", 1), ("deconv stride 2", 2)] {
        let spec = ConvSpec::deconv(5, 3, 4, stride);
        let set = params(vec![
            ("x", fm(&mut r, 5, 3)),
            ("w", random_tensor(&mut r, &spec.weight_shape(), 0.5)),
            ("b", random_tensor(&mut r, &[4], 0.5)),
        ]);
        out.push((name, gradient_error(set, |t| {
            let (x, w, b) = (t.param(0), t.param(1), t.param(2));
            let y = t.deconv(x, w, Some(b), stride)?;
            project(t, y, 2)
        })));
    }

    let unary: [(&'static str, fn(&mut Tape<'_, f64>, Var) -> Result<Var>); 3] = [
        ("leaky_relu", |t, x| t.leaky_relu(x, 0.3)),
        ("hard_sigmoid", |t, x| t.hard_sigmoid(x)),
        ("tanh", |t, x| t.tanh(x)),
    ];
    for (name, op) in unary {
        let set = params(vec![("x", random_tensor(&mut r, &[12, 1, 2], 3.0))]);
        out.push((name, gradient_error(set, |t| {
            let x = t.param(0);
            let y = op(t, x)?;
            project(t, y, 3)
        })));
    }

    let binary: [(&'static str, fn(&mut Tape<'_, f64>, Var, Var) -> Result<Var>); 4] = [
        ("add", |t, a, b| t.add(a, b)),
        ("sub", |t, a, b| t.sub(a, b)),
        ("mul", |t, a, b| t.mul(a, b)),
        ("concat_channels", |t, a, b| t.concat_channels(&[a, b])),
    ];
    for (name, op) in binary {
        let set = params(vec![("a", fm(&mut r, 6, 2)), ("b", fm(&mut r, 6, 2))]);
        out.push((name, gradient_error(set, |t| {
            let (a, b) = (t.param(0), t.param(1));
            let y = op(t, a, b)?;
            project(t, y, 4)
        })));
    }

    let set = params(vec![("x", fm(&mut r, 6, 5))]);
    out.push(("slice_channels", gradient_error(set, |t| {
        let x = t.param(0);
        let y = t.slice_channels(x, 1, 3)?;
        project(t, y, 5)
    })));
    let set = params(vec![("x", fm(&mut r, 8, 2))]);
    out.push(("spectral_bins", gradient_error(set, |t| {
        let x = t.param(0);
        let y = t.spectral_bins(x, 5)?;
        project(t, y, 6)
    })));
    let set = params(vec![("x", fm(&mut r, 5, 2))]);
    out.push(("pad_rows", gradient_error(set, |t| {
        let x = t.param(0);
        let y = t.pad_rows(x, 8)?;
        project(t, y, 7)
    })));

    let mut m = fm(&mut r, 9, 2);
    // One bin in the small-magnitude series branch.
    m.data_mut()[0] = 3e-5;
    m.data_mut()[1] = -2e-5;
    let set = params(vec![("e", fm(&mut r, 9, 2)), ("m", m)]);
    out.push(("compressed_mask", gradient_error(set, |t| {
        let (e, m) = (t.param(0), t.param(1));
        let y = t.compressed_mask(e, m)?;
        project(t, y, 8)
    })));
    let set = params(vec![("p", fm(&mut r, 9, 2)), ("q", fm(&mut r, 9, 2))]);
    out.push(("spectral_mse", gradient_error(set, |t| {
        let (p, q) = (t.param(0), t.param(1));
        t.spectral_mse(p, q, 16)
    })));
    let set = params(vec![("a", fm(&mut r, 4, 2)), ("b", fm(&mut r, 4, 2))]);
    out.push(("weighted_sum", gradient_error(set, |t| {
        let (a, b) = (t.param(0), t.param(1));
        let (sa, sb) = (project(t, a, 9)?, project(t, b, 10)?);
        let sq = t.mul(sb, sb)?;
        t.weighted_sum(&[(sa, 0.25), (sq, 0.75)])
    })));

    let (rows, c_in, f, n) = (6, 3, 2, 3);
    let set = params(vec![
        ("x0", fm(&mut r, rows, c_in)),
        ("x1", fm(&mut r, rows, c_in)),
        ("wx", random_tensor(&mut r, &ConvSpec::conv(n, c_in, 4 * f, 1).weight_shape(), 0.5)),
        ("wh", random_tensor(&mut r, &ConvSpec::conv(n, f, 4 * f, 1).weight_shape(), 0.5)),
        ("b", random_tensor(&mut r, &[4 * f], 0.5)),
        ("h0", fm(&mut r, rows, f)),
        ("c0", fm(&mut r, rows, f)),
    ]);
    out.push(("convlstm (2 steps)", gradient_error(set, |t| {
        let weights = ConvLstmWeights {
            input_kernel: t.param(2),
            recurrent_kernel: t.param(3),
            bias: t.param(4),
        };
        let (mut h, mut c) = (t.param(5), t.param(6));
        for i in 0..2 {
            let x = t.param(i);
            (h, c) = convlstm_step(t, x, h, c, weights)?;
        }
        let both = t.concat_channels(&[h, c])?;
        project(t, both, 11)
    })));
    out
}

/// Gradient check of a whole Y-Net with `feature_dim` 20 and `filters` 4
/// unrolled over two frames.
pub fn tiny_ynet_gradient_error(fusion: y2net_core::Fusion) -> f64 {
    use y2net_core::ynet::YNet;
    use y2net_core::YNetConfig;
    let cfg = YNetConfig {
        feature_dim: 20,
        ..YNetConfig::new(4, fusion)
    };
    let net = YNet::new(cfg, "net").unwrap();
    let mut set = ParamSet::new();
    let mut r = rng(21);
    net.register_params(&mut set, &mut r).unwrap();
    // Non-zero biases so every bias path is exercised.
    for p in set.iter_mut() {
        if p.name.ends_with(".b") {
            let len = p.tensor.len();
            p.tensor.data_mut().copy_from_slice(&random_vec(&mut r, len, 0.1));
        }
    }
    let inputs: Vec<Tensor<f64>> = (0..4).map(|_| random_tensor(&mut r, &[20, 1, 2], 1.0)).collect();
    gradient_error(set, |t| {
        let u: Vec<Var> = inputs[..2].iter().map(|x| t.leaf(x.clone())).collect();
        let v: Vec<Var> = inputs[2..].iter().map(|x| t.leaf(x.clone())).collect();
        let outs = net.forward_sequence(t, &u, &v)?;
        let both = t.concat_channels(&outs)?;
        project(t, both, 12)
    })
}
