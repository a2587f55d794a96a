//! Run configuration files (TOML or JSON) and the effective-config record.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use y2net_core::synth::SynthConfig;
use y2net_core::train::TrainConfig;
use y2net_core::Y2NetConfig;

use crate::ConfigError;

/// `synth --config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFile {
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub synth: SynthConfig,
}

/// `train --config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub train_manifest: Option<PathBuf>,
    /// Defaults to the training manifest.
    pub val_manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Pretrained checkpoint whose AEC initializes joint training.
    pub init: Option<PathBuf>,
    #[serde(default)]
    pub from_scratch: bool,
    #[serde(default)]
    pub train: TrainConfig,
    pub model: Option<Y2NetConfig>,
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Parse a TOML file, or JSON when the extension is `.json`. Unknown keys
/// are rejected.
pub fn load<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let parsed = if is_json(path) {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    Ok(parsed.map_err(|e| ConfigError(format!("{}: {e}", path.display())))?)
}

/// Write `value` as TOML (or JSON for a `.json` path).
pub fn write<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = if is_json(path) {
        serde_json::to_string_pretty(value)?
    } else {
        toml::to_string_pretty(value).context("serializing the effective configuration")?
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Parse `lo:hi` into an inclusive range.
pub fn parse_range(s: &str) -> Result<[f64; 2], String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got `{s}`"))?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad lower bound in `{s}`"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad upper bound in `{s}`"))?;
    if !(lo <= hi) {
        return Err(format!("empty range `{s}`"));
    }
    Ok([lo, hi])
}

#[cfg(test)]
mod tests {
    use super::*;
    use y2net_core::{Fusion, PfInput, YNetConfig};

    #[test]
    fn ranges() {
        assert_eq!(parse_range("0.2:1.2").unwrap(), [0.2, 1.2]);
        assert!(parse_range("1.2:0.2").is_err());
        assert!(parse_range("0.2").is_err());
        assert!(parse_range("a:1").is_err());
    }

    #[test]
    fn train_file_round_trips_through_toml_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let file = TrainFile {
            train_manifest: Some("data/manifest.jsonl".into()),
            out: Some("run".into()),
            model: Some(Y2NetConfig::two_stage(YNetConfig::new(60, Fusion::Lf), PfInput::X)),
            ..TrainFile::default()
        };
        for name in ["cfg.toml", "cfg.json"] {
            let path = dir.path().join(name);
            write(&path, &file).unwrap();
            let back: TrainFile = load(&path).unwrap();
            assert_eq!(back, file);
        }
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "out = \"x\"\n[synth]\nn_utterances = 3\nbogus = 1\n").unwrap();
        let err = load::<SynthFile>(&path).unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
        std::fs::write(&path, "typo = 1\n").unwrap();
        assert!(load::<TrainFile>(&path).is_err());
    }
}
