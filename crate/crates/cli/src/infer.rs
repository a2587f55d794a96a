use std::path::{Path, PathBuf};

use anyhow::Context;

use y2net_core::dsp::wav::{read_wav, write_wav};
use y2net_core::pipeline::run_utterance;
use y2net_core::{Error, IdentityModel, Y2Net};

use crate::config;
use crate::ConfigError;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Model checkpoint.
    #[arg(long, env = "Y2NET_CHECKPOINT", required_unless_present = "identity")]
    checkpoint: Option<PathBuf>,
    /// Pass the microphone through unchanged instead of loading a model.
    #[arg(long, conflicts_with = "checkpoint")]
    identity: bool,
    /// Far-end (loudspeaker) reference WAV.
    #[arg(long)]
    x: PathBuf,
    /// Microphone WAV.
    #[arg(long)]
    y: PathBuf,
    /// Enhanced output WAV.
    #[arg(long)]
    out: PathBuf,
    /// Also write the echo estimate and the AEC output next to `--out`.
    #[arg(long)]
    dump_intermediates: bool,
}

#[derive(serde::Serialize)]
struct InferRecord<'a> {
    checkpoint: Option<&'a Path>,
    identity: bool,
    x: &'a Path,
    y: &'a Path,
    out: &'a Path,
    model: Option<y2net_core::Y2NetConfig>,
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!("{stem}{suffix}"))
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let x = read_wav(&a.x)?;
    let y = read_wav(&a.y)?;
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(format!("x has {} samples, y has {}", x.len(), y.len())).into());
    }
    let model = match &a.checkpoint {
        Some(p) if !a.identity => Some(Y2Net::<f32>::load(p)?),
        _ => None,
    };
    let frame = model.as_ref().map(|m| *m.frame()).unwrap_or_default();
    if x.sample_rate_hz != frame.sample_rate_hz {
        return Err(ConfigError(format!(
            "input sample rate {} Hz differs from the model's {} Hz",
            x.sample_rate_hz, frame.sample_rate_hz
        ))
        .into());
    }
    let out = match &model {
        Some(m) => run_utterance(&mut m.stream(), &x, &y)?,
        None => run_utterance(&mut IdentityModel { frame }, &x, &y)?,
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_wav(&a.out, &out.s_hat)?;
    if a.dump_intermediates {
        let d_hat = out.synthesize_track(&frame, |f| &f.d_hat)?;
        let e = out.synthesize_track(&frame, |f| &f.e)?;
        write_wav(sibling(&a.out, "_dhat.wav"), &d_hat)?;
        write_wav(sibling(&a.out, "_e.wav"), &e)?;
    }
    let record = InferRecord {
        checkpoint: a.checkpoint.as_deref(),
        identity: a.identity,
        x: &a.x,
        y: &a.y,
        out: &a.out,
        model: model.map(|m| m.config().clone()),
    };
    config::write(&sibling(&a.out, "_config.json"), &record)?;
    println!(
        "{} frames, {} -> {} samples, wrote {}",
        out.frames.len(),
        y.len(),
        out.s_hat.len(),
        a.out.display()
    );
    Ok(())
}
