//! JSON-lines dataset manifest. Paths are stored relative to the manifest
//! file and resolved on read.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SynthScenario;
use crate::dsp::wav::read_wav;
use crate::dsp::Signal;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub x: PathBuf,
    pub y: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<SynthScenario>,
}

/// Signals of one manifest row; components are absent for real recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedUtterance {
    pub id: String,
    pub x: Signal,
    pub y: Signal,
    pub s: Option<Signal>,
    pub d: Option<Signal>,
    pub n: Option<Signal>,
}

impl LoadedUtterance {
    pub fn from_bundle(id: impl Into<String>, b: &super::UtteranceBundle) -> Self {
        LoadedUtterance {
            id: id.into(),
            x: b.x.clone(),
            y: b.y.clone(),
            s: Some(b.s.clone()),
            d: Some(b.d.clone()),
            n: Some(b.n.clone()),
        }
    }

    pub fn has_components(&self) -> bool {
        self.s.is_some() && self.d.is_some() && self.n.is_some()
    }
}

impl ManifestEntry {
    pub fn load(&self) -> Result<LoadedUtterance> {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(read_wav).transpose();
        let u = LoadedUtterance {
            id: self.id.clone(),
            x: read_wav(&self.x)?,
            y: read_wav(&self.y)?,
            s: opt(&self.s)?,
            d: opt(&self.d)?,
            n: opt(&self.n)?,
        };
        let len = u.y.len();
        let lens = [Some(&u.x), u.s.as_ref(), u.d.as_ref(), u.n.as_ref()];
        if lens.iter().flatten().any(|s| s.len() != len) {
            return Err(Error::Data(format!("utterance {}: track lengths differ", self.id)));
        }
        Ok(u)
    }

    fn map_paths(&self, f: impl Fn(&Path) -> PathBuf) -> Self {
        ManifestEntry {
            x: f(&self.x),
            y: f(&self.y),
            s: self.s.as_deref().map(&f),
            d: self.d.as_deref().map(&f),
            n: self.n.as_deref().map(&f),
            ..self.clone()
        }
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(entry.map_paths(|p| if p.is_absolute() { p.to_path_buf() } else { base.join(p) }));
    }
    if out.is_empty() {
        return Err(Error::Data(format!("manifest {} is empty", path.display())));
    }
    Ok(out)
}

/// Write entries whose paths are relative to the manifest directory.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut text = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut text, e)?;
        text.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&text).map_err(|e| Error::io(path, e))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<LoadedUtterance>> {
    read_manifest(path)?.iter().map(ManifestEntry::load).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::wav::write_wav;

    #[test]
    fn relative_paths_resolve_against_manifest_dir() {
        let dir = tempfile::tempdir().unwrap();
        let sig = Signal::new(vec![0.25; 500], 16_000);
        write_wav(dir.path().join("x.wav"), &sig).unwrap();
        write_wav(dir.path().join("y.wav"), &sig).unwrap();
        let entry = ManifestEntry {
            id: "u0".into(),
            x: "x.wav".into(),
            y: "y.wav".into(),
            s: None,
            d: None,
            n: None,
            scenario: None,
        };
        let path = dir.path().join("m.jsonl");
        write_manifest(&path, &[entry]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "{\"id\":\"u0\",\"x\":\"x.wav\",\"y\":\"y.wav\"}\n");
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded[0].y, sig);
        assert!(!loaded[0].has_components());
    }

    #[test]
    fn bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(&path, "\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Data(_))));
        std::fs::write(&path, "{\"id\":\"a\",\"x\":\"x\",\"y\":\"y\",\"bogus\":1}\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Data(_))));
        assert!(read_manifest(dir.path().join("none")).is_err());
    }
}
