use std::path::PathBuf;

use y2net_core::metrics::{rtf_bench, RtfReport, SleepModel};
use y2net_core::synth::{synth_bundles, SynthConfig, TalkType};
use y2net_core::{FrameConfig, Signal, Y2Net};

use crate::{config, BudgetError, ConfigError};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Model checkpoint.
    #[arg(long, env = "Y2NET_CHECKPOINT", required_unless_present = "stub")]
    checkpoint: Option<PathBuf>,
    /// Time a pass-through stub that spends one frame shift per frame.
    #[arg(long, conflicts_with = "checkpoint")]
    stub: bool,
    /// Length of the synthetic benchmark signal in seconds.
    #[arg(long, default_value_t = 5.0)]
    seconds: f64,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// Leading calls excluded from the statistics.
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    /// Exit with code 4 when the RTF is 1.0 or higher.
    #[arg(long)]
    enforce_rt: bool,
    /// Write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(serde::Serialize)]
struct BenchRecord<'a> {
    checkpoint: Option<&'a std::path::Path>,
    stub: bool,
    seconds: f64,
    repetitions: usize,
    warmup: usize,
    report: RtfReport,
}

fn signals(seconds: f64) -> anyhow::Result<(Signal, Signal)> {
    let cfg = SynthConfig {
        n_utterances: 1,
        seed: 1,
        duration_s: seconds,
        talk: Some(TalkType::Double),
        ..SynthConfig::default()
    };
    let (_, b) = synth_bundles(&cfg)?.remove(0);
    Ok((b.x, b.y))
}

pub fn run(a: Args) -> anyhow::Result<()> {
    if !(a.seconds > 0.0) {
        return Err(ConfigError("--seconds must be positive".into()).into());
    }
    let (x, y) = signals(a.seconds)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    let report = match &a.checkpoint {
        Some(p) if !a.stub => {
            let model = Y2Net::<f32>::load(p)?;
            pool.install(|| rtf_bench(&mut model.stream(), &x, &y, a.repetitions, a.warmup))?
        }
        _ => pool.install(|| rtf_bench(&mut SleepModel::real_time(FrameConfig::default()), &x, &y, a.repetitions, a.warmup))?,
    };
    println!("frame length        {} ms", report.frame_len_ms);
    println!("frame shift         {} ms", report.frame_shift_ms);
    println!("algorithmic latency {} ms", report.algorithmic_latency_ms);
    println!("median frame time   {:.3} ms over {} calls", report.median_frame_ms, report.frames_timed);
    println!("RTF                 {}", report.rtf_display());
    if let Some(out) = &a.out {
        config::write(
            out,
            &BenchRecord {
                checkpoint: a.checkpoint.as_deref(),
                stub: a.stub,
                seconds: a.seconds,
                repetitions: a.repetitions,
                warmup: a.warmup,
                report,
            },
        )?;
    }
    if a.enforce_rt && report.rtf >= 1.0 {
        return Err(BudgetError(format!("RTF {} is not below 1.0", report.rtf_display())).into());
    }
    Ok(())
}
