//! Reverse-mode differentiation tape.
//!
//! Every op appends a node holding its output value and enough of its inputs
//! to run the vector-Jacobian product later. Parameters are referenced by
//! index into a borrowed [`ParamSet`] instead of copied. A tape is
//! single-owner; data-parallel training builds one tape per batch element.

use super::kernels;
use super::{ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
    },
    Deconv {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    HardSigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ConcatChannels(Vec<Var>),
    SliceChannels {
        x: Var,
        start: usize,
    },
    SpectralBins(Var),
    PadRows(Var),
    CompressedMask {
        e: Var,
        m: Var,
    },
    SpectralMse {
        pred: Var,
        target: Var,
        dft_size: usize,
    },
    WeightedSum(Vec<(Var, f64)>),
    Sum(Var),
}

enum Value<T> {
    Owned(Tensor<T>),
    Param(usize),
}

struct Node<T> {
    value: Value<T>,
    op: Op,
    requires_grad: bool,
}

/// Gradients of the parameters of one [`ParamSet`]; `None` for parameters
/// that are not on the loss path.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn empty(n_params: usize) -> Self {
        Gradients {
            grads: vec![None; n_params],
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&[T]> {
        self.grads.get(index).and_then(|g| g.as_deref())
    }

    /// Gradient of parameter `index`, zeros when not on the loss path.
    pub fn dense(&self, index: usize, len: usize) -> Vec<T> {
        self.get(index).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); len])
    }

    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (_, None) => {}
                (Some(m), Some(t)) => m.iter_mut().zip(t).for_each(|(a, &b)| *a += b),
                (None, Some(t)) => *mine = Some(t.clone()),
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        let f = T::from_f64(factor);
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= f);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Global L2 norm over all present gradients.
    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|v| v.to_f64() * v.to_f64())
            .sum::<f64>()
            .sqrt()
    }
}

pub struct Tape<'p, T> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    validate: bool,
    backward_done: bool,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            validate: false,
            backward_done: false,
        }
    }

    /// Check every op output for NaN/inf and fail with [`Error::NonFinite`].
    pub fn with_validation(mut self, on: bool) -> Self {
        self.validate = on;
        self
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(i) => &self.params.get(*i).tensor,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if self.validate && !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(index),
            op: Op::Param(index),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[index] = Some(v);
        v
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<Var> {
        let idx = self
            .params
            .index_of(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))?;
        Ok(self.param(idx))
    }

    fn layer_dims(
        &self,
        op: &'static str,
        x: Var,
        w: Var,
        b: Option<Var>,
        transposed: bool,
    ) -> Result<(usize, usize, usize, usize)> {
        let (m, c_in) = self.value(x).feature_dims(op)?;
        let ws = self.shape(w);
        if ws.len() != 3 {
            return Err(Error::shape(op, "3-d weights", format!("{ws:?}")));
        }
        let (n, w_in, c_out) = if transposed {
            (ws[0], ws[2], ws[1])
        } else {
            (ws[0], ws[1], ws[2])
        };
        if w_in != c_in {
            return Err(Error::shape(op, format!("{w_in} input channels"), c_in));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::shape(op, format!("bias [{c_out}]"), format!("{:?}", self.shape(b))));
            }
        }
        Ok((m, c_in, c_out, n))
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        if !(1..=2).contains(&stride) {
            return Err(Error::InvalidArgument(format!("stride {stride}")));
        }
        let (m, c_in, c_out, n) = self.layer_dims("conv", x, w, b, false)?;
        let (m_out, _) = kernels::conv_geometry(m, n, stride);
        let mut out = vec![T::zero(); m_out * c_out];
        kernels::conv_forward(
            self.value(x).data(),
            m,
            c_in,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            c_out,
            n,
            stride,
            &mut out,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::feature_map(m_out, c_out, out)?, Op::Conv { x, w, b, stride }, rg, "conv")
    }

    pub fn deconv(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        if !(1..=2).contains(&stride) {
            return Err(Error::InvalidArgument(format!("stride {stride}")));
        }
        let (m, c_in, c_out, n) = self.layer_dims("deconv", x, w, b, true)?;
        let m_out = m * stride;
        let mut out = vec![T::zero(); m_out * c_out];
        kernels::deconv_forward(
            self.value(x).data(),
            m,
            c_in,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            c_out,
            n,
            stride,
            &mut out,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::feature_map(m_out, c_out, out)?, Op::Deconv { x, w, b, stride }, rg, "deconv")
    }

    fn unary(&mut self, x: Var, op: Op, name: &'static str, f: impl Fn(T) -> T) -> Result<Var> {
        let src = self.value(x);
        let out = Tensor::from_vec(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect())?;
        let rg = self.rg(x);
        self.push(out, op, rg, name)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let s = T::from_f64(slope);
        self.unary(x, Op::LeakyRelu { x, slope }, "leaky_relu", |v| {
            if v > T::zero() {
                v
            } else {
                s * v
            }
        })
    }

    pub fn hard_sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::HardSigmoid(x), "hard_sigmoid", kernels::hard_sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), "tanh", T::tanh)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, format!("{:?}", ta.shape()), format!("{:?}", tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_vec(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, op, rg, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Concatenate feature maps with equal row counts along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput("concat_channels"))?;
        let (rows, _) = self.value(first).feature_dims("concat_channels")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).feature_dims("concat_channels")?;
            if r != rows {
                return Err(Error::shape("concat_channels", format!("{rows} rows"), r));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for m in 0..rows {
            for (&p, &c) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[m * c..(m + 1) * c]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::feature_map(rows, total, out)?, Op::ConcatChannels(parts.to_vec()), rg, "concat")
    }

    /// Channels `start..start + len` of a feature map.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, c) = self.value(x).feature_dims("slice_channels")?;
        if len == 0 || start + len > c {
            return Err(Error::shape("slice_channels", format!("<= {c} channels"), start + len));
        }
        let src = self.value(x).data();
        let out: Vec<T> = (0..rows).flat_map(|m| src[m * c + start..m * c + start + len].iter().copied()).collect();
        let rg = self.rg(x);
        self.push(Tensor::feature_map(rows, len, out)?, Op::SliceChannels { x, start }, rg, "slice")
    }

    /// First `n_bins` rows of a 2-channel (re, im) map, with the imaginary
    /// parts of the first and last bin forced to zero.
    pub fn spectral_bins(&mut self, x: Var, n_bins: usize) -> Result<Var> {
        let (rows, c) = self.value(x).feature_dims("spectral_bins")?;
        if c != 2 || n_bins < 2 || n_bins > rows {
            return Err(Error::shape("spectral_bins", format!("[>={n_bins}, 1, 2]"), format!("[{rows}, 1, {c}]")));
        }
        let mut out = self.value(x).data()[..2 * n_bins].to_vec();
        out[1] = T::zero();
        out[2 * n_bins - 1] = T::zero();
        let rg = self.rg(x);
        self.push(Tensor::feature_map(n_bins, 2, out)?, Op::SpectralBins(x), rg, "spectral_bins")
    }

    /// Append zero rows up to `rows`.
    pub fn pad_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let (r, c) = self.value(x).feature_dims("pad_rows")?;
        if rows < r {
            return Err(Error::shape("pad_rows", format!(">= {r} rows"), rows));
        }
        let mut out = self.value(x).data().to_vec();
        out.resize(rows * c, T::zero());
        let rg = self.rg(x);
        self.push(Tensor::feature_map(rows, c, out)?, Op::PadRows(x), rg, "pad_rows")
    }

    /// Complex mask with amplitude compression: `E * tanh(|M|) * M / |M|`,
    /// zero where `M = 0`. Both inputs are `K x 1 x 2` (re, im) maps.
    pub fn compressed_mask(&mut self, e: Var, m: Var) -> Result<Var> {
        let (te, tm) = (self.value(e), self.value(m));
        if te.shape() != tm.shape() || te.feature_dims("compressed_mask")?.1 != 2 {
            return Err(Error::shape("compressed_mask", format!("{:?}", te.shape()), format!("{:?}", tm.shape())));
        }
        let mut out = vec![T::zero(); te.len()];
        for (k, o) in out.chunks_mut(2).enumerate() {
            let (er, ei) = (te.data()[2 * k].to_f64(), te.data()[2 * k + 1].to_f64());
            let (mr, mi) = (tm.data()[2 * k].to_f64(), tm.data()[2 * k + 1].to_f64());
            let (gr, gi) = compressed_gain(mr, mi);
            o[0] = T::from_f64(er * gr - ei * gi);
            o[1] = T::from_f64(er * gi + ei * gr);
        }
        let rg = self.rg(e) || self.rg(m);
        let shape = te.shape().to_vec();
        self.push(Tensor::from_vec(shape, out)?, Op::CompressedMask { e, m }, rg, "compressed_mask")
    }

    /// `(1/K) * sum_k w_k |pred_k - target_k|^2` over `n_bins = K/2 + 1`
    /// half-spectrum bins, with `w = 1` at DC and Nyquist and `w = 2`
    /// elsewhere. Equals the full `K`-bin mean for Hermitian spectra.
    pub fn spectral_mse(&mut self, pred: Var, target: Var, dft_size: usize) -> Result<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        let (n_bins, c) = tp.feature_dims("spectral_mse")?;
        if tp.shape() != tt.shape() || c != 2 || n_bins != dft_size / 2 + 1 {
            return Err(Error::shape("spectral_mse", format!("[{}, 1, 2]", dft_size / 2 + 1), format!("{:?} vs {:?}", tp.shape(), tt.shape())));
        }
        let mut acc = 0.0f64;
        for k in 0..n_bins {
            let wk = bin_weight(k, n_bins);
            let dr = (tp.data()[2 * k] - tt.data()[2 * k]).to_f64();
            let di = (tp.data()[2 * k + 1] - tt.data()[2 * k + 1]).to_f64();
            acc += wk * (dr * dr + di * di);
        }
        let rg = self.rg(pred) || self.rg(target);
        let v = T::from_f64(acc / dft_size as f64);
        self.push(Tensor::scalar(v), Op::SpectralMse { pred, target, dft_size }, rg, "spectral_mse")
    }

    /// `sum_i c_i * x_i` over one-element nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc = 0.0;
        for &(v, c) in terms {
            if self.value(v).len() != 1 {
                return Err(Error::shape("weighted_sum", "scalar", format!("{:?}", self.shape(v))));
            }
            acc += c * self.item(v).to_f64();
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        self.push(Tensor::scalar(T::from_f64(acc)), Op::WeightedSum(terms.to_vec()), rg, "weighted_sum")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg, "sum")
    }

    /// Exact reverse-mode gradients of the scalar `loss` with respect to every
    /// parameter referenced on this tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", "scalar loss", format!("{:?}", self.shape(loss))));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::empty(self.params.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            match self.nodes[idx].op.clone() {
                Op::Leaf => {}
                Op::Param(p) => out.grads[p] = Some(g),
                Op::Conv { x, w, b, stride } => {
                    let xv = self.value(x);
                    let (m, c_in) = xv.feature_dims("conv")?;
                    let ws = self.shape(w).to_vec();
                    let mut gx = self.rg(x).then(|| vec![T::zero(); xv.len()]);
                    let mut gw = self.rg(w).then(|| vec![T::zero(); self.value(w).len()]);
                    let mut gb = b.filter(|&b| self.rg(b)).map(|_| vec![T::zero(); ws[2]]);
                    kernels::conv_backward(
                        xv.data(),
                        m,
                        c_in,
                        self.value(w).data(),
                        ws[2],
                        ws[0],
                        stride,
                        &g,
                        gx.as_deref_mut(),
                        gw.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                    accumulate(&mut grads, x, gx);
                    accumulate(&mut grads, w, gw);
                    if let Some(b) = b {
                        accumulate(&mut grads, b, gb);
                    }
                }
                Op::Deconv { x, w, b, stride } => {
                    let xv = self.value(x);
                    let (m, c_in) = xv.feature_dims("deconv")?;
                    let ws = self.shape(w).to_vec();
                    let mut gx = self.rg(x).then(|| vec![T::zero(); xv.len()]);
                    let mut gw = self.rg(w).then(|| vec![T::zero(); self.value(w).len()]);
                    let mut gb = b.filter(|&b| self.rg(b)).map(|_| vec![T::zero(); ws[1]]);
                    kernels::deconv_backward(
                        xv.data(),
                        m,
                        c_in,
                        self.value(w).data(),
                        ws[1],
                        ws[0],
                        stride,
                        &g,
                        gx.as_deref_mut(),
                        gw.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                    accumulate(&mut grads, x, gx);
                    accumulate(&mut grads, w, gw);
                    if let Some(b) = b {
                        accumulate(&mut grads, b, gb);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let s = T::from_f64(slope);
                    let gx = self
                        .value(x)
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gv)| if v > T::zero() { gv } else { s * gv })
                        .collect();
                    accumulate(&mut grads, x, Some(gx));
                }
                Op::HardSigmoid(x) => {
                    let slope = T::from_f64(0.2);
                    let lim = T::from_f64(2.5);
                    let gx = self
                        .value(x)
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gv)| if v > -lim && v < lim { slope * gv } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, x, Some(gx));
                }
                Op::Tanh(x) => {
                    let out = self.value(Var(idx)).data();
                    let gx = out.iter().zip(&g).map(|(&y, &gv)| (T::one() - y * y) * gv).collect();
                    accumulate(&mut grads, x, Some(gx));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, self.rg(a).then(|| g.clone()));
                    accumulate(&mut grads, b, self.rg(b).then_some(g));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, a, self.rg(a).then(|| g.clone()));
                    accumulate(&mut grads, b, self.rg(b).then(|| g.iter().map(|&v| -v).collect()));
                }
                Op::Mul(a, b) => {
                    let ga = self.rg(a).then(|| {
                        self.value(b).data().iter().zip(&g).map(|(&y, &gv)| y * gv).collect()
                    });
                    let gb = self.rg(b).then(|| {
                        self.value(a).data().iter().zip(&g).map(|(&x, &gv)| x * gv).collect()
                    });
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::ConcatChannels(parts) => {
                    let total: usize = self.value(Var(idx)).feature_dims("concat")?.1;
                    let rows = g.len() / total;
                    let mut offset = 0;
                    for p in parts {
                        let c = self.value(p).feature_dims("concat")?.1;
                        if self.rg(p) {
                            let gp = (0..rows)
                                .flat_map(|m| g[m * total + offset..m * total + offset + c].iter().copied())
                                .collect();
                            accumulate(&mut grads, p, Some(gp));
                        }
                        offset += c;
                    }
                }
                Op::SliceChannels { x, start } => {
                    let (rows, c) = self.value(x).feature_dims("slice")?;
                    let len = g.len() / rows;
                    let mut gx = vec![T::zero(); rows * c];
                    for m in 0..rows {
                        gx[m * c + start..m * c + start + len].copy_from_slice(&g[m * len..(m + 1) * len]);
                    }
                    accumulate(&mut grads, x, Some(gx));
                }
                Op::SpectralBins(x) => {
                    let mut gx = vec![T::zero(); self.value(x).len()];
                    gx[..g.len()].copy_from_slice(&g);
                    gx[1] = T::zero();
                    gx[g.len() - 1] = T::zero();
                    accumulate(&mut grads, x, Some(gx));
                }
                Op::PadRows(x) => {
                    let n = self.value(x).len();
                    accumulate(&mut grads, x, Some(g[..n].to_vec()));
                }
                Op::CompressedMask { e, m } => {
                    let (te, tm) = (self.value(e).data(), self.value(m).data());
                    let mut ge = vec![T::zero(); te.len()];
                    let mut gm = vec![T::zero(); tm.len()];
                    for k in 0..te.len() / 2 {
                        let (er, ei) = (te[2 * k].to_f64(), te[2 * k + 1].to_f64());
                        let (mr, mi) = (tm[2 * k].to_f64(), tm[2 * k + 1].to_f64());
                        let (sr, si) = (g[2 * k].to_f64(), g[2 * k + 1].to_f64());
                        let (gr, gi) = compressed_gain(mr, mi);
                        ge[2 * k] = T::from_f64(sr * gr + si * gi);
                        ge[2 * k + 1] = T::from_f64(-sr * gi + si * gr);
                        // gradient w.r.t. the gain, then through G = phi(|M|) M
                        let dgr = sr * er + si * ei;
                        let dgi = -sr * ei + si * er;
                        let (dmr, dmi) = compressed_gain_vjp(mr, mi, dgr, dgi);
                        gm[2 * k] = T::from_f64(dmr);
                        gm[2 * k + 1] = T::from_f64(dmi);
                    }
                    accumulate(&mut grads, e, self.rg(e).then_some(ge));
                    accumulate(&mut grads, m, self.rg(m).then_some(gm));
                }
                Op::SpectralMse { pred, target, dft_size } => {
                    let (tp, tt) = (self.value(pred).data(), self.value(target).data());
                    let n_bins = tp.len() / 2;
                    let scale = g[0].to_f64() * 2.0 / dft_size as f64;
                    let diff: Vec<T> = (0..tp.len())
                        .map(|i| T::from_f64(bin_weight(i / 2, n_bins) * scale * (tp[i] - tt[i]).to_f64()))
                        .collect();
                    let gt = self.rg(target).then(|| diff.iter().map(|&v| -v).collect());
                    accumulate(&mut grads, pred, self.rg(pred).then_some(diff));
                    accumulate(&mut grads, target, gt);
                }
                Op::WeightedSum(terms) => {
                    for (v, c) in terms {
                        if self.rg(v) {
                            accumulate(&mut grads, v, Some(vec![T::from_f64(c) * g[0]]));
                        }
                    }
                }
                Op::Sum(x) => {
                    let n = self.value(x).len();
                    accumulate(&mut grads, x, Some(vec![g[0]; n]));
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Option<Vec<T>>) {
    let Some(g) = g else { return };
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub(crate) fn bin_weight(k: usize, n_bins: usize) -> f64 {
    if k == 0 || k + 1 == n_bins {
        1.0
    } else {
        2.0
    }
}

/// `tanh(r)/r` and `(d/dr)(tanh(r)/r) / r` for `r = |M|`, with series
/// expansions near zero.
fn gain_factor(r: f64) -> (f64, f64) {
    if r < 1e-4 {
        let r2 = r * r;
        (1.0 - r2 / 3.0, -2.0 / 3.0 + 8.0 / 15.0 * r2)
    } else {
        let t = r.tanh();
        let sech2 = 1.0 - t * t;
        (t / r, (r * sech2 - t) / (r * r * r))
    }
}

/// Complex gain `tanh(|M|) M / |M|`, defined as zero at `M = 0`.
pub(crate) fn compressed_gain(mr: f64, mi: f64) -> (f64, f64) {
    let r = mr.hypot(mi);
    if r == 0.0 {
        return (0.0, 0.0);
    }
    let (phi, _) = gain_factor(r);
    (phi * mr, phi * mi)
}

/// Pull back a gradient on the gain `(dgr, dgi)` to the mask components.
fn compressed_gain_vjp(mr: f64, mi: f64, dgr: f64, dgi: f64) -> (f64, f64) {
    let r = mr.hypot(mi);
    let (phi, dphi_over_r) = gain_factor(r);
    let proj = mr * dgr + mi * dgi;
    (phi * dgr + dphi_over_r * proj * mr, phi * dgi + dphi_over_r * proj * mi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Parameter;

    fn set(values: Vec<(&str, Vec<usize>, Vec<f64>)>) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        for (name, shape, data) in values {
            ps.push(Parameter::new(name, Tensor::from_vec(shape, data).unwrap())).unwrap();
        }
        ps
    }

    #[test]
    fn sum_of_product_gradient_is_input() {
        let ps = set(vec![("w", vec![3], vec![0.5, -1.0, 2.0])]);
        let mut tape = Tape::new(&ps);
        let w = tape.param(0);
        let x = tape.leaf(Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let p = tape.mul(w, x).unwrap();
        let loss = tape.sum(p).unwrap();
        assert_eq!(tape.item(loss), 0.5 - 2.0 + 6.0);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(0).unwrap(), &[1.0, 2.0, 3.0]);
        assert!(matches!(tape.backward(loss), Err(Error::BackwardTwice)));
    }

    #[test]
    fn off_path_parameter_has_no_gradient() {
        let ps = set(vec![("a", vec![1], vec![2.0]), ("unused", vec![1], vec![5.0])]);
        let mut tape = Tape::new(&ps);
        let a = tape.param(0);
        let _b = tape.param(1);
        let loss = tape.sum(a).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(0).unwrap(), &[1.0]);
        assert!(g.get(1).is_none());
        assert_eq!(g.dense(1, 1), vec![0.0]);
    }

    #[test]
    fn leaky_relu_gradient_at_negative_is_slope() {
        let ps = set(vec![("x", vec![1], vec![-1.0])]);
        let mut tape = Tape::new(&ps);
        let x = tape.param(0);
        let y = tape.leaky_relu(x, 0.3).unwrap();
        assert_eq!(tape.item(y), -0.3);
        let g = tape.backward(y).unwrap();
        assert!((g.get(0).unwrap()[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn validation_catches_nan() {
        let ps = set(vec![("x", vec![1], vec![f64::NAN])]);
        let mut tape = Tape::new(&ps).with_validation(true);
        let x = tape.param(0);
        assert!(matches!(tape.tanh(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn gain_is_zero_at_origin_and_bounded() {
        assert_eq!(compressed_gain(0.0, 0.0), (0.0, 0.0));
        let (gr, gi) = compressed_gain(0.0, 1.0);
        assert_eq!(gr, 0.0);
        assert!((gi - 1f64.tanh()).abs() < 1e-15);
        let (gr, _) = compressed_gain(50.0, 0.0);
        assert!((gr - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gain_factor_series_is_continuous() {
        let (a, da) = gain_factor(0.99e-4);
        let (b, db) = gain_factor(1.01e-4);
        assert!((a - b).abs() < 1e-9);
        assert!((da - db).abs() < 1e-6);
    }
}
