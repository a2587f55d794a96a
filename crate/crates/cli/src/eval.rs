use std::path::PathBuf;

use anyhow::Context;
use y2net_core::metrics::{eval_conditions, rtf_bench, MetricsReport};
use y2net_core::synth::load_manifest;
use y2net_core::{IdentityModel, Y2Net};

use crate::config;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Model checkpoint.
    #[arg(long, env = "Y2NET_CHECKPOINT", required_unless_present = "identity")]
    checkpoint: Option<PathBuf>,
    /// Evaluate the pass-through model instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    identity: bool,
    /// Manifest whose rows carry s, d and n component tracks.
    #[arg(long, env = "Y2NET_EVAL_MANIFEST")]
    manifest: PathBuf,
    /// Directory for metrics.json, metrics.csv and metrics.txt.
    #[arg(long, env = "Y2NET_EVAL_OUT")]
    out: PathBuf,
    /// Also time per-frame processing on the first utterance (one thread).
    #[arg(long)]
    rtf: bool,
}

#[derive(serde::Serialize)]
struct EvalRecord<'a> {
    checkpoint: Option<&'a std::path::Path>,
    identity: bool,
    manifest: &'a std::path::Path,
    rtf: bool,
    model: Option<y2net_core::Y2NetConfig>,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let utts = load_manifest(&a.manifest)?;
    let model = match &a.checkpoint {
        Some(p) if !a.identity => Some(Y2Net::<f32>::load(p)?),
        _ => None,
    };
    let name = match &a.checkpoint {
        Some(p) if !a.identity => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into()),
        _ => "identity".into(),
    };
    let mut report: MetricsReport = match &model {
        Some(m) => eval_conditions(&name, || Ok(m.stream()), &utts)?,
        None => eval_conditions(&name, || Ok(IdentityModel::default()), &utts)?,
    };
    if a.rtf {
        let u = &utts[0];
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
        let r = pool.install(|| match &model {
            Some(m) => rtf_bench(&mut m.stream(), &u.x, &u.y, 1, 5),
            None => rtf_bench(&mut IdentityModel::default(), &u.x, &u.y, 1, 5),
        })?;
        report.rtf = Some(r.rtf);
    }

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let write = |file: &str, text: String| {
        let p = a.out.join(file);
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    };
    write("metrics.json", report.to_json()?)?;
    write("metrics.csv", report.to_csv())?;
    let table = report.to_table();
    write("metrics.txt", table.clone())?;
    config::write(
        &a.out.join("eval_config.json"),
        &EvalRecord {
            checkpoint: a.checkpoint.as_deref(),
            identity: a.identity,
            manifest: &a.manifest,
            rtf: a.rtf,
            model: model.map(|m| m.config().clone()),
        },
    )?;
    print!("{table}");
    Ok(())
}
