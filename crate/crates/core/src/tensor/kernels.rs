//! Slice-level kernels shared by the eager layer functions and the tape.
//!
//! Layouts: feature maps `[rows][channels]`, conv weights `[tap][in][out]`,
//! transposed-conv weights `[tap][out][in]`.

use super::Scalar;

/// Output length and left padding of a "same" convolution. The total padding
/// is split with the extra zero at the high-index end.
pub fn conv_geometry(len_in: usize, kernel_len: usize, stride: usize) -> (usize, usize) {
    let len_out = len_in.div_ceil(stride);
    let total = ((len_out - 1) * stride + kernel_len).saturating_sub(len_in);
    (len_out, total / 2)
}

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Input row feeding output row `m` at tap `t`, if inside the signal.
#[inline]
fn src_row(m: usize, t: usize, stride: usize, pad: usize, len_in: usize) -> Option<usize> {
    let pos = (m * stride + t).checked_sub(pad)?;
    (pos < len_in).then_some(pos)
}

#[allow(clippy::too_many_arguments)]
pub fn conv_forward<T: Scalar>(
    x: &[T],
    len_in: usize,
    c_in: usize,
    w: &[T],
    bias: Option<&[T]>,
    c_out: usize,
    kernel_len: usize,
    stride: usize,
    out: &mut [T],
) {
    let (len_out, pad) = conv_geometry(len_in, kernel_len, stride);
    debug_assert_eq!(out.len(), len_out * c_out);
    for m in 0..len_out {
        let orow = &mut out[m * c_out..(m + 1) * c_out];
        match bias {
            Some(b) => orow.copy_from_slice(b),
            None => orow.iter_mut().for_each(|v| *v = T::zero()),
        }
        for t in 0..kernel_len {
            let Some(src) = src_row(m, t, stride, pad, len_in) else {
                continue;
            };
            let xrow = &x[src * c_in..(src + 1) * c_in];
            let wt = &w[t * c_in * c_out..(t + 1) * c_in * c_out];
            for (i, &xv) in xrow.iter().enumerate() {
                if xv != T::zero() {
                    axpy(xv, &wt[i * c_out..(i + 1) * c_out], orow);
                }
            }
        }
    }
}

/// Accumulates input, weight and bias gradients of [`conv_forward`].
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    x: &[T],
    len_in: usize,
    c_in: usize,
    w: &[T],
    c_out: usize,
    kernel_len: usize,
    stride: usize,
    grad_out: &[T],
    mut grad_x: Option<&mut [T]>,
    mut grad_w: Option<&mut [T]>,
    grad_b: Option<&mut [T]>,
) {
    let (len_out, pad) = conv_geometry(len_in, kernel_len, stride);
    if let Some(gb) = grad_b {
        for m in 0..len_out {
            for (b, &g) in gb.iter_mut().zip(&grad_out[m * c_out..(m + 1) * c_out]) {
                *b += g;
            }
        }
    }
    for m in 0..len_out {
        let grow = &grad_out[m * c_out..(m + 1) * c_out];
        for t in 0..kernel_len {
            let Some(src) = src_row(m, t, stride, pad, len_in) else {
                continue;
            };
            let wt = &w[t * c_in * c_out..(t + 1) * c_in * c_out];
            if let Some(gx) = grad_x.as_deref_mut() {
                let gxrow = &mut gx[src * c_in..(src + 1) * c_in];
                for (i, gxv) in gxrow.iter_mut().enumerate() {
                    *gxv += dot(&wt[i * c_out..(i + 1) * c_out], grow);
                }
            }
            if let Some(gw) = grad_w.as_deref_mut() {
                let xrow = &x[src * c_in..(src + 1) * c_in];
                let gwt = &mut gw[t * c_in * c_out..(t + 1) * c_in * c_out];
                for (i, &xv) in xrow.iter().enumerate() {
                    if xv != T::zero() {
                        axpy(xv, grow, &mut gwt[i * c_out..(i + 1) * c_out]);
                    }
                }
            }
        }
    }
}

/// Transposed convolution from `len_in` to `len_in * stride` rows.
#[allow(clippy::too_many_arguments)]
pub fn deconv_forward<T: Scalar>(
    x: &[T],
    len_in: usize,
    c_in: usize,
    w: &[T],
    bias: Option<&[T]>,
    c_out: usize,
    kernel_len: usize,
    stride: usize,
    out: &mut [T],
) {
    let len_out = len_in * stride;
    let (_, pad) = conv_geometry(len_out, kernel_len, stride);
    debug_assert_eq!(out.len(), len_out * c_out);
    match bias {
        Some(b) => out.chunks_mut(c_out).for_each(|row| row.copy_from_slice(b)),
        None => out.iter_mut().for_each(|v| *v = T::zero()),
    }
    for m in 0..len_in {
        let xrow = &x[m * c_in..(m + 1) * c_in];
        for t in 0..kernel_len {
            let Some(dst) = src_row(m, t, stride, pad, len_out) else {
                continue;
            };
            let wt = &w[t * c_out * c_in..(t + 1) * c_out * c_in];
            let orow = &mut out[dst * c_out..(dst + 1) * c_out];
            for (a, o) in orow.iter_mut().enumerate() {
                *o += dot(&wt[a * c_in..(a + 1) * c_in], xrow);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn deconv_backward<T: Scalar>(
    x: &[T],
    len_in: usize,
    c_in: usize,
    w: &[T],
    c_out: usize,
    kernel_len: usize,
    stride: usize,
    grad_out: &[T],
    mut grad_x: Option<&mut [T]>,
    mut grad_w: Option<&mut [T]>,
    grad_b: Option<&mut [T]>,
) {
    let len_out = len_in * stride;
    let (_, pad) = conv_geometry(len_out, kernel_len, stride);
    if let Some(gb) = grad_b {
        for row in grad_out.chunks(c_out) {
            for (b, &g) in gb.iter_mut().zip(row) {
                *b += g;
            }
        }
    }
    for m in 0..len_in {
        let xrow = &x[m * c_in..(m + 1) * c_in];
        for t in 0..kernel_len {
            let Some(dst) = src_row(m, t, stride, pad, len_out) else {
                continue;
            };
            let wt = &w[t * c_out * c_in..(t + 1) * c_out * c_in];
            let grow = &grad_out[dst * c_out..(dst + 1) * c_out];
            if let Some(gx) = grad_x.as_deref_mut() {
                let gxrow = &mut gx[m * c_in..(m + 1) * c_in];
                for (a, &g) in grow.iter().enumerate() {
                    if g != T::zero() {
                        axpy(g, &wt[a * c_in..(a + 1) * c_in], gxrow);
                    }
                }
            }
            if let Some(gw) = grad_w.as_deref_mut() {
                let gwt = &mut gw[t * c_out * c_in..(t + 1) * c_out * c_in];
                for (a, &g) in grow.iter().enumerate() {
                    if g != T::zero() {
                        axpy(g, xrow, &mut gwt[a * c_in..(a + 1) * c_in]);
                    }
                }
            }
        }
    }
}

#[inline]
pub fn hard_sigmoid<T: Scalar>(v: T) -> T {
    let y = T::from_f64(0.2) * v + T::from_f64(0.5);
    if y < T::zero() {
        T::zero()
    } else if y > T::one() {
        T::one()
    } else {
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_matches_ladder() {
        assert_eq!(conv_geometry(260, 24, 1), (260, 11));
        assert_eq!(conv_geometry(260, 24, 2), (130, 11));
        assert_eq!(conv_geometry(130, 24, 2), (65, 11));
        assert_eq!(conv_geometry(4, 3, 1), (4, 1));
        assert_eq!(conv_geometry(5, 1, 2), (3, 0));
    }
}
