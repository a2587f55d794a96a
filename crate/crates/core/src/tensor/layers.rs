use super::{Scalar, Tape, Var};
use crate::error::{Error, Result};

/// Tape handles of one ConvLSTM cell's weights.
///
/// `input_kernel` is `[N, C_in, 4F]` and `recurrent_kernel` is `[N, F, 4F]`;
/// output channels are grouped as input, forget, candidate and output gate.
/// There is a single bias per gate and no peephole terms.
#[derive(Debug, Clone, Copy)]
pub struct ConvLstmWeights {
    pub input_kernel: Var,
    pub recurrent_kernel: Var,
    pub bias: Var,
}

/// One ConvLSTM step on `M x 1 x C` input with `M x 1 x F` state.
///
/// ```text
/// i, f, o = hard_sigmoid(conv(x) + conv(h) + b)
/// g       = tanh(conv(x) + conv(h) + b)
/// c'      = f * c + i * g
/// h'      = o * tanh(c')
/// ```
///
/// Returns `(h', c')`; `h'` is also the layer output.
pub fn convlstm_step<T: Scalar>(
    tape: &mut Tape<'_, T>,
    x: Var,
    h: Var,
    c: Var,
    weights: ConvLstmWeights,
) -> Result<(Var, Var)> {
    let (rows, filters) = tape.value(h).feature_dims("convlstm_step")?;
    if tape.shape(c) != tape.shape(h) {
        return Err(Error::shape(
            "convlstm_step",
            format!("cell {:?}", tape.shape(h)),
            format!("{:?}", tape.shape(c)),
        ));
    }
    let (x_rows, _) = tape.value(x).feature_dims("convlstm_step")?;
    if x_rows != rows {
        return Err(Error::shape("convlstm_step", format!("{rows} input rows"), x_rows));
    }
    if tape.shape(weights.bias) != [4 * filters] {
        return Err(Error::shape(
            "convlstm_step",
            format!("bias [{}]", 4 * filters),
            format!("{:?}", tape.shape(weights.bias)),
        ));
    }
    let zx = tape.conv(x, weights.input_kernel, Some(weights.bias), 1)?;
    let zh = tape.conv(h, weights.recurrent_kernel, None, 1)?;
    let z = tape.add(zx, zh)?;
    let zi = tape.slice_channels(z, 0, filters)?;
    let zf = tape.slice_channels(z, filters, filters)?;
    let zg = tape.slice_channels(z, 2 * filters, filters)?;
    let zo = tape.slice_channels(z, 3 * filters, filters)?;
    let i = tape.hard_sigmoid(zi)?;
    let f = tape.hard_sigmoid(zf)?;
    let g = tape.tanh(zg)?;
    let o = tape.hard_sigmoid(zo)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_new = tape.add(fc, ig)?;
    let tc = tape.tanh(c_new)?;
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c_new))
}
