use std::path::PathBuf;

use y2net_core::synth::{synth_dataset, TalkType};

use crate::config::{self, parse_range, SynthFile};
use crate::ConfigError;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// TOML or JSON file with `out` and a `[synth]` table; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the WAVs and `manifest.jsonl`.
    #[arg(long, env = "Y2NET_SYNTH_OUT")]
    out: Option<PathBuf>,
    /// Number of utterances.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Utterance length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Fix the talk type: double, fe-only or ne-only.
    #[arg(long)]
    talk: Option<TalkType>,
    /// Reverberation time range `lo:hi` in seconds.
    #[arg(long, value_parser = parse_range)]
    t60: Option<[f64; 2]>,
    /// Signal-to-echo ratio range `lo:hi` in dB.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    ser: Option<[f64; 2]>,
    /// Signal-to-noise ratio range `lo:hi` in dB.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    snr: Option<[f64; 2]>,
    /// Probability of a nonlinear loudspeaker model.
    #[arg(long)]
    nonlinear_prob: Option<f64>,
    /// Directories of 16 kHz mono WAVs; procedural sources when absent.
    #[arg(long, env = "Y2NET_FE_POOL")]
    fe_pool: Option<PathBuf>,
    #[arg(long, env = "Y2NET_NE_POOL")]
    ne_pool: Option<PathBuf>,
    #[arg(long, env = "Y2NET_NOISE_POOL")]
    noise_pool: Option<PathBuf>,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let mut file: SynthFile = match &a.config {
        Some(p) => config::load(p)?,
        None => SynthFile::default(),
    };
    let s = &mut file.synth;
    if let Some(v) = a.n {
        s.n_utterances = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if let Some(v) = a.duration {
        s.duration_s = v;
    }
    if a.talk.is_some() {
        s.talk = a.talk;
    }
    if let Some(v) = a.t60 {
        s.t60_range_s = v;
    }
    if let Some(v) = a.ser {
        s.ser_range_db = v;
    }
    if let Some(v) = a.snr {
        s.snr_range_db = v;
    }
    if let Some(v) = a.nonlinear_prob {
        s.nonlinear_prob = v;
    }
    for (slot, flag) in [(&mut s.fe_pool, a.fe_pool), (&mut s.ne_pool, a.ne_pool), (&mut s.noise_pool, a.noise_pool)] {
        if flag.is_some() {
            *slot = flag;
        }
    }
    if a.out.is_some() {
        file.out = a.out;
    }
    let out = file
        .out
        .clone()
        .ok_or_else(|| ConfigError("no output directory (--out or `out` in the config file)".into()))?;
    file.synth.validate()?;

    let manifest = synth_dataset(&file.synth, &out)?;
    config::write(&out.join("synth_config.toml"), &file)?;
    println!(
        "wrote {} utterances of {} s to {}",
        file.synth.n_utterances,
        file.synth.duration_s,
        manifest.display()
    );
    Ok(())
}
