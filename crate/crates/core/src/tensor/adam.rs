use super::{Gradients, ParamSet, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step. Parameters without a gradient are left
/// untouched, including their step count. Moments are kept in `f64`
/// arithmetic and stored back at the parameter precision.
pub fn adam_update<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &Gradients<T>,
    lr: f64,
    cfg: AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::shape("adam_update", params.len(), grads.len()));
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    for (idx, p) in params.iter_mut().enumerate() {
        let Some(g) = grads.get(idx) else { continue };
        if g.len() != p.tensor.len() {
            return Err(Error::shape("adam_update", p.tensor.len(), g.len()));
        }
        p.step_count += 1;
        let t = p.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (((w, m), v), &gv) in p
            .tensor
            .data_mut()
            .iter_mut()
            .zip(p.adam_m.iter_mut())
            .zip(p.adam_v.iter_mut())
            .zip(g)
        {
            let gv = gv.to_f64();
            let m_new = cfg.beta1 * m.to_f64() + (1.0 - cfg.beta1) * gv;
            let v_new = cfg.beta2 * v.to_f64() + (1.0 - cfg.beta2) * gv * gv;
            *m = T::from_f64(m_new);
            *v = T::from_f64(v_new);
            let step = lr * (m_new / bc1) / ((v_new / bc2).sqrt() + cfg.eps);
            *w = T::from_f64(w.to_f64() - step);
        }
    }
    Ok(())
}
