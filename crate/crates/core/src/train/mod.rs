//! Losses, BPTT batching, the learning-rate controller and the training
//! loop for the three phases: AEC pretraining, joint training of both stages
//! and single-stage training.

mod data;
mod loss;
mod schedule;

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Mode, Y2Net};
use crate::tensor::{adam_update, AdamConfig, Gradients, Scalar, Tape, Var};

pub use data::{make_batches, make_windows, FrameTensors, TrainSet, TrainUtterance, Window};
pub use loss::{loss_aec, loss_joint, loss_pf, spectral_mse, LossReport};
pub use schedule::{no_improvement_trajectory, Decision, LrController, StopReason};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// AEC network alone on the echo loss.
    Pretrain,
    /// Both stages on `alpha * J_AEC + (1 - alpha) * J_PF`.
    Joint,
    /// The single-stage network on the speech loss.
    SingleStage,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Joint => "joint",
            Phase::SingleStage => "single-stage",
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" | "pretrain-aec" => Ok(Phase::Pretrain),
            "joint" => Ok(Phase::Joint),
            "single-stage" => Ok(Phase::SingleStage),
            other => Err(Error::Config(format!("unknown phase `{other}` (pretrain, joint, single-stage)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub phase: Phase,
    pub batch_size: usize,
    pub bptt_len: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub patience_decay: usize,
    /// `None` disables the no-improvement stop.
    pub patience_stop: Option<usize>,
    pub max_epochs: usize,
    pub lr_floor: f64,
    pub alpha: f64,
    pub seed: u64,
    /// Check every op output for NaN/inf (slow).
    pub validate_numerics: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            phase: Phase::Pretrain,
            batch_size: 16,
            bptt_len: 50,
            lr0: 5e-3,
            lr_decay: 0.6,
            patience_decay: 3,
            patience_stop: Some(10),
            max_epochs: 100,
            lr_floor: 5e-4,
            alpha: 0.25,
            seed: 0,
            validate_numerics: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.batch_size == 0 || self.bptt_len == 0 || self.max_epochs == 0 || self.patience_decay == 0 {
            return fail("batch_size, bptt_len, max_epochs and patience_decay must be >= 1".into());
        }
        if self.patience_stop == Some(0) {
            return fail("patience_stop must be >= 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr_floor >= 0.0 && self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return fail("lr0 and lr_decay in (0, 1) must be positive, lr_floor non-negative".into());
        }
        Ok(())
    }

    pub fn controller(&self) -> LrController {
        LrController::new(
            self.lr0,
            self.lr_decay,
            self.patience_decay,
            self.patience_stop,
            self.lr_floor,
            self.max_epochs,
        )
    }

    fn check_model(&self, mode: Mode) -> Result<()> {
        match (self.phase, mode) {
            (Phase::Pretrain | Phase::Joint, Mode::TwoStage) | (Phase::SingleStage, Mode::SingleStage) => Ok(()),
            (phase, mode) => Err(Error::Config(format!("phase {} cannot train a {mode:?} model", phase.as_str()))),
        }
    }
}

/// Loss of one window and, optionally, its parameter gradients.
pub fn window_objective<T: Scalar>(
    model: &Y2Net<T>,
    frames: &[FrameTensors<T>],
    phase: Phase,
    alpha: f64,
    with_grad: bool,
    validate_numerics: bool,
) -> Result<(LossReport, Option<Gradients<T>>)> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("window"));
    }
    let dft = model.frame().dft_size;
    let inv_t = 1.0 / frames.len() as f64;
    let mut tape = Tape::new(model.params()).with_validation(validate_numerics);
    let mut aec_terms: Vec<(Var, f64)> = Vec::new();
    let mut pf_terms: Vec<(Var, f64)> = Vec::new();

    if phase == Phase::Pretrain {
        let mut state = model.first().tape_state(&mut tape);
        for f in frames {
            let x = tape.leaf(f.x.clone());
            let y = tape.leaf(f.y.clone());
            let d = tape.leaf(f.d_bins.clone());
            let (d_hat, next) = model.forward_aec(&mut tape, x, y, state)?;
            state = next;
            aec_terms.push((tape.spectral_mse(d_hat, d, dft)?, inv_t));
        }
    } else {
        let mut state = model.tape_state(&mut tape);
        for f in frames {
            let x = tape.leaf(f.x.clone());
            let y = tape.leaf(f.y.clone());
            let yb = tape.leaf(f.y_bins.clone());
            let (vars, next) = model.forward_frame(&mut tape, x, y, yb, state)?;
            state = next;
            if let Some(d_hat) = vars.d_hat {
                let d = tape.leaf(f.d_bins.clone());
                aec_terms.push((tape.spectral_mse(d_hat, d, dft)?, inv_t));
            }
            let s = tape.leaf(f.s_bins.clone());
            pf_terms.push((tape.spectral_mse(vars.s_hat, s, dft)?, inv_t));
        }
    }

    let mean = |tape: &Tape<'_, T>, terms: &[(Var, f64)]| -> f64 {
        if terms.is_empty() {
            f64::NAN
        } else {
            terms.iter().map(|&(v, w)| w * tape.item(v).to_f64()).sum()
        }
    };
    let (j_aec, j_pf) = (mean(&tape, &aec_terms), mean(&tape, &pf_terms));
    let objective: Vec<(Var, f64)> = match phase {
        Phase::Pretrain => aec_terms,
        Phase::SingleStage => pf_terms,
        Phase::Joint => aec_terms
            .iter()
            .map(|&(v, w)| (v, alpha * w))
            .chain(pf_terms.iter().map(|&(v, w)| (v, (1.0 - alpha) * w)))
            .collect(),
    };
    let loss = tape.weighted_sum(&objective)?;
    let j = tape.item(loss).to_f64();
    let grads = if with_grad { Some(tape.backward(loss)?) } else { None };
    Ok((LossReport { j_aec, j_pf, j }, grads))
}

/// Mean loss over every window of `set`; parameters are only read.
pub fn evaluate<T: Scalar>(model: &Y2Net<T>, set: &TrainSet<T>, cfg: &TrainConfig) -> Result<LossReport> {
    let windows = make_windows(&set.frame_counts(), cfg.bptt_len)?;
    let reports: Vec<LossReport> = windows
        .par_iter()
        .map(|w| window_objective(model, set.window(w), cfg.phase, cfg.alpha, false, false).map(|r| r.0))
        .collect::<Result<_>>()?;
    let mut acc = LossReport::default();
    let scale = 1.0 / reports.len() as f64;
    reports.iter().for_each(|r| acc.add_scaled(r, scale));
    Ok(acc)
}

/// One optimizer step on a batch: per-window gradients are computed in
/// parallel, summed, averaged and applied with Adam.
pub fn train_step<T: Scalar>(
    model: &mut Y2Net<T>,
    set: &TrainSet<T>,
    batch: &[Window],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<LossReport> {
    let results: Vec<(LossReport, Gradients<T>)> = batch
        .par_iter()
        .map(|w| {
            let (r, g) = window_objective(model, set.window(w), cfg.phase, cfg.alpha, true, cfg.validate_numerics)?;
            Ok((r, g.expect("gradients requested")))
        })
        .collect::<Result<_>>()?;
    let scale = 1.0 / results.len() as f64;
    let mut report = LossReport::default();
    let mut grads = Gradients::empty(model.params().len());
    for (r, g) in &results {
        report.add_scaled(r, scale);
        grads.accumulate(g);
    }
    grads.scale(scale);
    if !report.j.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    adam_update(model.params_mut(), &grads, lr, AdamConfig::default())?;
    Ok(report)
}

/// One line of the training history; epoch 0 holds the losses before
/// training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossReport,
    pub val: LossReport,
    pub improved: bool,
    pub phase: Phase,
    pub alpha: f64,
}

pub const HISTORY_HEADER: &str = "epoch,phase,alpha,lr,train_j,train_j_aec,train_j_pf,val_j,val_j_aec,val_j_pf,improved";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            self.epoch,
            self.phase.as_str(),
            self.alpha,
            self.lr,
            self.train.j,
            self.train.j_aec,
            self.train.j_pf,
            self.val.j,
            self.val.j_aec,
            self.val.j_pf,
            self.improved
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
    pub best_val: f64,
    /// Training-set loss of the initial and of the retained parameters.
    pub initial_train: LossReport,
    pub final_train: LossReport,
}

/// Where training writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Best-validation checkpoint, rewritten on every improvement.
    pub checkpoint: Option<PathBuf>,
    pub history_csv: Option<PathBuf>,
    /// Directory for a parameter dump when the loss diverges.
    pub dump_dir: Option<PathBuf>,
}

fn write_history(path: &PathBuf, history: &[EpochRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from(HISTORY_HEADER);
    text.push('\n');
    for r in history {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn diverged<T: Scalar>(model: &Y2Net<T>, epoch: usize, opts: &TrainOptions) -> Error {
    let dump = opts.dump_dir.as_ref().and_then(|dir| {
        let path = dir.join(format!("diverged_epoch{epoch}.ckpt"));
        std::fs::create_dir_all(dir).ok()?;
        model.save(&path).ok()?;
        Some(path)
    });
    Error::Diverged { epoch, dump }
}

/// Train `model` in place. On return the model holds the parameters with
/// the best validation loss.
pub fn train<T: Scalar>(
    model: &mut Y2Net<T>,
    train_set: &TrainSet<T>,
    val_set: &TrainSet<T>,
    cfg: &TrainConfig,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    cfg.check_model(model.mode())?;
    let counts = train_set.frame_counts();
    make_windows(&counts, cfg.bptt_len)?;

    let mut ctl = cfg.controller();
    let initial_train = evaluate(model, train_set, cfg)?;
    let initial_val = evaluate(model, val_set, cfg)?;
    if !initial_val.j.is_finite() || !initial_train.j.is_finite() {
        return Err(diverged(model, 0, opts));
    }
    ctl.set_baseline(initial_val.j);
    let mut history = vec![EpochRecord {
        epoch: 0,
        lr: cfg.lr0,
        train: initial_train,
        val: initial_val,
        improved: false,
        phase: cfg.phase,
        alpha: cfg.alpha,
    }];
    on_epoch(&history[0]);
    if let Some(p) = &opts.checkpoint {
        model.save(p)?;
    }
    let mut best_params = model.params().clone();
    let mut best_epoch = 0;
    let mut lr = cfg.lr0;
    let stop_reason = loop {
        let epoch = history.len();
        let batches = make_batches(&counts, cfg.bptt_len, cfg.batch_size, cfg.seed.wrapping_add(epoch as u64))?;
        let mut running = LossReport::default();
        for batch in &batches {
            let r = match train_step(model, train_set, batch, cfg, lr) {
                Ok(r) => r,
                Err(Error::NonFinite(_)) => return Err(diverged(model, epoch, opts)),
                Err(e) => return Err(e),
            };
            running.add_scaled(&r, 1.0 / batches.len() as f64);
        }
        let val = evaluate(model, val_set, cfg)?;
        if !val.j.is_finite() {
            return Err(diverged(model, epoch, opts));
        }
        let improved = ctl.improves(val.j);
        if improved {
            best_params = model.params().clone();
            best_epoch = epoch;
            if let Some(p) = &opts.checkpoint {
                model.save(p)?;
            }
        }
        let record = EpochRecord {
            epoch,
            lr,
            train: running,
            val,
            improved,
            phase: cfg.phase,
            alpha: cfg.alpha,
        };
        on_epoch(&record);
        history.push(record);
        if let Some(p) = &opts.history_csv {
            write_history(p, &history)?;
        }
        match ctl.observe(val.j) {
            Decision::Continue { lr: next } => lr = next,
            Decision::Stop(reason) => break reason,
        }
    };
    *model.params_mut() = best_params;
    let final_train = evaluate(model, train_set, cfg)?;
    if let Some(p) = &opts.history_csv {
        write_history(p, &history)?;
    }
    Ok(TrainOutcome {
        history,
        stop_reason,
        best_epoch,
        best_val: ctl.best(),
        initial_train,
        final_train,
    })
}

/// Copy the AEC parameters of a pretrained model into `model`.
pub fn load_pretrained_aec<T: Scalar>(model: &mut Y2Net<T>, pretrained: &Y2Net<T>) -> Result<usize> {
    if pretrained.mode() != Mode::TwoStage || model.mode() != Mode::TwoStage {
        return Err(Error::Config("pretrained AEC transfer needs two-stage models".into()));
    }
    if pretrained.first().config() != model.first().config() {
        return Err(Error::Config("pretrained AEC architecture differs from the model's".into()));
    }
    let n = model.params_mut().copy_matching(pretrained.params(), "aec.")?;
    model.params_mut().iter_mut().for_each(|p| p.reset_optimizer());
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FrameConfig;
    use crate::pipeline::{PfInput, Y2NetConfig};
    use crate::synth::{synth_bundles, SynthConfig, TalkType};
    use crate::ynet::{Fusion, YNetConfig};

    fn tiny_model(mode: Mode, seed: u64) -> Y2Net<f64> {
        let net = YNetConfig {
            kernel_len: 5,
            ..YNetConfig::new(3, Fusion::Ef)
        };
        let cfg = match mode {
            Mode::TwoStage => Y2NetConfig::TwoStage {
                frame: FrameConfig::default(),
                aec: net,
                pf: net,
                pf_input: PfInput::Dhat,
            },
            Mode::SingleStage => Y2NetConfig::SingleStage {
                frame: FrameConfig::default(),
                net,
            },
        };
        Y2Net::new(cfg, seed).unwrap()
    }

    fn tiny_set(n: usize, seed: u64) -> TrainSet<f64> {
        let cfg = SynthConfig {
            n_utterances: n,
            seed,
            duration_s: 0.25,
            t60_range_s: [0.05, 0.1],
            talk: Some(TalkType::Double),
            ..SynthConfig::default()
        };
        let bundles: Vec<_> = synth_bundles(&cfg).unwrap().into_iter().map(|(_, b)| b).collect();
        TrainSet::from_bundles(&bundles, &FrameConfig::default()).unwrap()
    }

    fn cfg(phase: Phase) -> TrainConfig {
        TrainConfig {
            phase,
            batch_size: 2,
            bptt_len: 4,
            max_epochs: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn joint_gradient_reaches_aec_through_both_terms() {
        let model = tiny_model(Mode::TwoStage, 1);
        let set = tiny_set(1, 2);
        let frames = &set.utterances[0].frames[..3];
        let aec_idx = model.params().index_of("aec.enc1.w").unwrap();
        let pf_idx = model.params().index_of("pf.enc1.w").unwrap();
        let grad = |alpha: f64| {
            let (_, g) = window_objective(&model, frames, Phase::Joint, alpha, true, true).unwrap();
            g.unwrap()
        };
        let (g_pf_only, g_joint) = (grad(0.0), grad(0.25));
        let norm = |g: Option<&[f64]>| g.map(|v| v.iter().map(|x| x * x).sum::<f64>()).unwrap_or(0.0);
        assert!(norm(g_pf_only.get(aec_idx)) > 0.0, "PF loss must reach the AEC");
        assert_ne!(g_pf_only.get(aec_idx), g_joint.get(aec_idx));
        let (_, g_pre) = window_objective(&model, frames, Phase::Pretrain, 0.25, true, false).unwrap();
        assert!(g_pre.unwrap().get(pf_idx).is_none());
    }

    #[test]
    fn joint_report_is_convex_combination() {
        let model = tiny_model(Mode::TwoStage, 3);
        let set = tiny_set(1, 4);
        let (r, _) = window_objective(&model, &set.utterances[0].frames[..4], Phase::Joint, 0.25, false, false).unwrap();
        assert!((r.j - loss_joint(r.j_aec, r.j_pf, 0.25)).abs() < 1e-12 * r.j.max(1e-30));
    }

    #[test]
    fn evaluation_does_not_touch_parameters() {
        let model = tiny_model(Mode::TwoStage, 5);
        let set = tiny_set(2, 6);
        let before = model.params().clone();
        evaluate(&model, &set, &cfg(Phase::Joint)).unwrap();
        assert_eq!(&before, model.params());
    }

    #[test]
    fn short_training_is_reproducible_and_writes_history() {
        let set = tiny_set(2, 7);
        let dir = tempfile::tempdir().unwrap();
        let opts = TrainOptions {
            checkpoint: Some(dir.path().join("best.ckpt")),
            history_csv: Some(dir.path().join("history.csv")),
            dump_dir: None,
        };
        let run = || {
            let mut m = tiny_model(Mode::TwoStage, 8);
            let out = train(&mut m, &set, &set, &cfg(Phase::Joint), &opts, |_| {}).unwrap();
            (out, m)
        };
        let (a, ma) = run();
        let (b, _) = run();
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 3);
        assert_eq!(a.stop_reason, StopReason::MaxEpochs);
        assert_eq!(a.history[1].alpha, 0.25);
        let csv = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
        assert!(csv.starts_with(HISTORY_HEADER));
        assert_eq!(csv.lines().count(), 4);
        let saved = Y2Net::<f64>::load(dir.path().join("best.ckpt")).unwrap();
        assert_eq!(saved.config(), ma.config());
    }

    #[test]
    fn phase_must_match_model() {
        let set = tiny_set(1, 9);
        let mut single = tiny_model(Mode::SingleStage, 1);
        let err = train(&mut single, &set, &set, &cfg(Phase::Joint), &TrainOptions::default(), |_| {});
        assert!(matches!(err, Err(Error::Config(_))));
        let mut two = tiny_model(Mode::TwoStage, 1);
        let mut c = cfg(Phase::Pretrain);
        c.alpha = 1.5;
        assert!(train(&mut two, &set, &set, &c, &TrainOptions::default(), |_| {}).is_err());
        assert!("joint".parse::<Phase>().is_ok() && "foo".parse::<Phase>().is_err());
    }

    #[test]
    fn pretrained_aec_transfer() {
        let pre = tiny_model(Mode::TwoStage, 10);
        let mut fresh = tiny_model(Mode::TwoStage, 11);
        let n = load_pretrained_aec(&mut fresh, &pre).unwrap();
        assert_eq!(n, pre.first().layer_specs().iter().map(|l| 1 + l.bias as usize).sum::<usize>());
        assert_eq!(fresh.params().by_name("aec.dec2.w"), pre.params().by_name("aec.dec2.w"));
        assert_ne!(fresh.params().by_name("pf.dec2.w"), pre.params().by_name("pf.dec2.w"));
    }
}
