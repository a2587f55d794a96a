use rayon::prelude::*;

use super::{decompose_components, delta_snr, delta_snr_component, erle, log_spectral_distance, passthrough, snr_db, MetricsReport, UtteranceMetrics};
use crate::dsp::Signal;
use crate::error::{Error, Result};
use crate::pipeline::{run_utterance, FrameModel};
use crate::synth::LoadedUtterance;

fn active(sig: &Signal) -> bool {
    sig.samples.iter().any(|&v| v != 0.0)
}

/// Evaluate one utterance under the four microphone conditions: the full
/// mixture (white-box decomposition), echo only with the far end unchanged,
/// noise only and near-end speech only with a silent far end.
pub fn eval_utterance(model: &mut dyn FrameModel, u: &LoadedUtterance) -> Result<UtteranceMetrics> {
    let (Some(s), Some(d), Some(n)) = (&u.s, &u.d, &u.n) else {
        return Err(Error::Data(format!("utterance {} lacks component tracks", u.id)));
    };
    let frame = model.frame_config();
    let silent = Signal::zeros(u.x.len(), u.x.sample_rate_hz);
    let mut m = UtteranceMetrics {
        id: u.id.clone(),
        ..UtteranceMetrics::default()
    };

    let full = run_utterance(model, &u.x, &u.y)?;
    let c = decompose_components(&full.frames, s, d, n, &frame)?;
    if active(&c.d_ref) {
        m.erle_wb_db = Some(erle(&c.d_ref, &c.d_tilde)?);
    }
    if [&c.s_ref, &c.n_ref, &c.s_tilde, &c.n_tilde].iter().all(|t| active(t)) {
        m.delta_snr_wb_db = Some(delta_snr(&c.s_ref, &c.n_ref, &c.s_tilde, &c.n_tilde)?);
    }

    let d_ref = passthrough(d, &frame)?;
    if active(&d_ref) {
        let out = run_utterance(model, &u.x, d)?;
        m.erle_component_db = Some(erle(&d_ref, &out.s_hat)?);
    }

    let n_ref = passthrough(n, &frame)?;
    if active(&n_ref) {
        let out = run_utterance(model, &silent, n)?;
        if active(&out.s_hat) {
            m.dsnr_component_db = Some(delta_snr_component(&n_ref, &out.s_hat)?);
        }
    }

    let s_ref = passthrough(s, &frame)?;
    if active(&s_ref) {
        let out = run_utterance(model, &silent, s)?;
        m.ne_lsd_db = Some(log_spectral_distance(&s_ref, &out.s_hat, &frame)?);
        m.ne_snr_db = Some(snr_db(&s_ref, &out.s_hat)?);
    }
    Ok(m)
}

/// Evaluate every utterance in parallel; `make_model` builds one stream per
/// worker.
pub fn eval_conditions<M: FrameModel>(
    name: &str,
    make_model: impl Fn() -> Result<M> + Sync,
    utterances: &[LoadedUtterance],
) -> Result<MetricsReport> {
    if utterances.is_empty() {
        return Err(Error::Data("no utterances to evaluate".into()));
    }
    let per_utt = utterances
        .par_iter()
        .map(|u| {
            let mut model = make_model()?;
            eval_utterance(&mut model, u)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::new(name, per_utt))
}
