use std::path::PathBuf;

use anyhow::Context;
use y2net_core::synth::load_manifest;
use y2net_core::train::{load_pretrained_aec, train, Phase, TrainOptions, TrainSet, HISTORY_HEADER};
use y2net_core::{FrameConfig, Fusion, PfInput, Y2Net, Y2NetConfig, YNetConfig};

use crate::config::{self, TrainFile};
use crate::ConfigError;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// TOML or JSON file with paths, a `[train]` and a `[model]` table; flags
    /// override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training manifest (JSON lines with x, y, s, d paths).
    #[arg(long, env = "Y2NET_TRAIN_MANIFEST")]
    train_manifest: Option<PathBuf>,
    /// Validation manifest; defaults to the training manifest.
    #[arg(long, env = "Y2NET_VAL_MANIFEST")]
    val_manifest: Option<PathBuf>,
    /// Run directory for the checkpoint, history and effective config.
    #[arg(long, env = "Y2NET_TRAIN_OUT")]
    out: Option<PathBuf>,
    /// pretrain, joint or single-stage.
    #[arg(long)]
    phase: Option<Phase>,
    /// Pretrained checkpoint providing the AEC for joint training.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Allow joint training without a pretrained AEC.
    #[arg(long)]
    from_scratch: bool,
    /// Postfilter second input: dhat (echo estimate) or x (far-end reference).
    #[arg(long, value_parser = parse_pf_input)]
    pf_input: Option<PfInput>,
    /// AEC fusion: ef or lf. Without --F the filter count follows the
    /// fusion (70 for EF, 60 for LF).
    #[arg(long, value_parser = parse_fusion)]
    fusion: Option<Fusion>,
    /// Filter count F of the AEC (two-stage) or of the single network.
    #[arg(long = "F", id = "filters")]
    filters: Option<usize>,
    /// Filter count of the postfilter.
    #[arg(long = "pf-F", id = "pf_filters")]
    pf_filters: Option<usize>,
    /// Kernel length N of every layer.
    #[arg(long)]
    kernel_len: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Unrolled sequence length in frames.
    #[arg(long)]
    bptt: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs without improvement before stopping; 0 disables the rule.
    #[arg(long)]
    patience_stop: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Check every intermediate value for NaN/inf.
    #[arg(long)]
    validate_numerics: bool,
}

fn parse_pf_input(s: &str) -> Result<PfInput, String> {
    match s {
        "dhat" => Ok(PfInput::Dhat),
        "x" => Ok(PfInput::X),
        other => Err(format!("unknown postfilter input `{other}` (dhat, x)")),
    }
}

fn parse_fusion(s: &str) -> Result<Fusion, String> {
    match s {
        "ef" => Ok(Fusion::Ef),
        "lf" => Ok(Fusion::Lf),
        other => Err(format!("unknown fusion `{other}` (ef, lf)")),
    }
}

fn default_model(phase: Phase) -> Y2NetConfig {
    match phase {
        Phase::SingleStage => Y2NetConfig::single_stage(),
        Phase::Pretrain | Phase::Joint => Y2NetConfig::two_stage(YNetConfig::aec_ef(), PfInput::Dhat),
    }
}

/// Apply the architecture flags to `model`.
fn override_model(model: &mut Y2NetConfig, a: &Args) -> anyhow::Result<()> {
    match model {
        Y2NetConfig::TwoStage { aec, pf, pf_input, .. } => {
            if let Some(f) = a.fusion {
                let base = match f {
                    Fusion::Ef => YNetConfig::aec_ef(),
                    Fusion::Lf => YNetConfig::aec_lf(),
                };
                aec.fusion = f;
                aec.filters = base.filters;
            }
            if let Some(f) = a.filters {
                aec.filters = f;
            }
            if let Some(f) = a.pf_filters {
                pf.filters = f;
            }
            if let Some(p) = a.pf_input {
                *pf_input = p;
            }
        }
        Y2NetConfig::SingleStage { net, .. } => {
            if a.fusion.is_some() || a.pf_filters.is_some() || a.pf_input.is_some() {
                return Err(ConfigError("--fusion, --pf-F and --pf-input apply to two-stage models only".into()).into());
            }
            if let Some(f) = a.filters {
                net.filters = f;
            }
        }
    }
    if let Some(n) = a.kernel_len {
        model.networks_mut().into_iter().for_each(|net| net.kernel_len = n);
    }
    model.validate()?;
    Ok(())
}

/// Merge the config file and flags into the effective run description.
fn resolve(a: &Args) -> anyhow::Result<TrainFile> {
    let mut file: TrainFile = match &a.config {
        Some(p) => config::load(p)?,
        None => TrainFile::default(),
    };
    for (slot, flag) in [
        (&mut file.train_manifest, &a.train_manifest),
        (&mut file.val_manifest, &a.val_manifest),
        (&mut file.out, &a.out),
        (&mut file.init, &a.init),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    file.from_scratch |= a.from_scratch;
    let t = &mut file.train;
    if let Some(p) = a.phase {
        t.phase = p;
    }
    if let Some(v) = a.alpha {
        t.alpha = v;
    }
    if let Some(v) = a.epochs {
        t.max_epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.bptt {
        t.bptt_len = v;
    }
    if let Some(v) = a.lr {
        t.lr0 = v;
    }
    if let Some(v) = a.patience_stop {
        t.patience_stop = (v > 0).then_some(v);
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    t.validate_numerics |= a.validate_numerics;
    t.validate()?;

    let mut model = file.model.clone().unwrap_or_else(|| default_model(file.train.phase));
    override_model(&mut model, a)?;
    file.model = Some(model);

    if file.train.phase == Phase::Joint && file.init.is_none() && !file.from_scratch {
        return Err(ConfigError("joint training needs a pretrained AEC (--init) or --from-scratch".into()).into());
    }
    if file.train.phase != Phase::Joint && file.init.is_some() {
        return Err(ConfigError("--init only applies to --phase joint".into()).into());
    }
    Ok(file)
}

fn frame_of(model: &Y2NetConfig) -> FrameConfig {
    *model.frame()
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let file = resolve(&a)?;
    let model_cfg = file.model.clone().expect("resolved");
    let cfg = &file.train;
    let train_manifest = file
        .train_manifest
        .clone()
        .ok_or_else(|| ConfigError("no training manifest (--train-manifest)".into()))?;
    let out = file.out.clone().ok_or_else(|| ConfigError("no run directory (--out)".into()))?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    config::write(&out.join("train_config.toml"), &file)?;

    let frame = frame_of(&model_cfg);
    let train_rows = load_manifest(&train_manifest)?;
    let train_set: TrainSet<f32> = TrainSet::from_loaded(&train_rows, &frame)?;
    let val_set: TrainSet<f32> = match &file.val_manifest {
        Some(p) => TrainSet::from_loaded(&load_manifest(p)?, &frame)?,
        None => train_set.clone(),
    };

    let mut model = Y2Net::<f32>::new(model_cfg, cfg.seed)?;
    if let Some(init) = &file.init {
        let pretrained = Y2Net::<f32>::load(init)?;
        let n = load_pretrained_aec(&mut model, &pretrained)?;
        println!("initialized {n} AEC tensors from {}", init.display());
    }
    println!(
        "phase {} | {} parameters | {} training utterances ({} frames)",
        cfg.phase.as_str(),
        model.num_params(),
        train_set.utterances.len(),
        train_set.frame_counts().iter().sum::<usize>()
    );
    println!("{HISTORY_HEADER}");
    let opts = TrainOptions {
        checkpoint: Some(out.join("model.ckpt")),
        history_csv: Some(out.join("history.csv")),
        dump_dir: Some(out.join("dump")),
    };
    let outcome = train(&mut model, &train_set, &val_set, cfg, &opts, |r| println!("{}", r.csv_row()))?;
    println!(
        "stopped: {:?}; best validation J {:.6e} at epoch {}; checkpoint {}",
        outcome.stop_reason,
        outcome.best_val,
        outcome.best_epoch,
        out.join("model.ckpt").display()
    );
    Ok(())
}
