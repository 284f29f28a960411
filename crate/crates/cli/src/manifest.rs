use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spinboson_ml::{Error, Result};

use crate::config::Seeds;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub argv: Vec<String>,
    pub config_hash: String,
    pub seeds: Seeds,
    /// Files read by the stage, as given.
    pub inputs: Vec<String>,
    /// Files written, relative to the run directory.
    pub artifacts: Vec<String>,
}

/// Provenance for a run directory. Stages are keyed by command, plus the
/// model id for per-model commands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seeds: Option<Seeds>,
    pub stages: BTreeMap<String, StageRecord>,
    /// Union of every stage's artifacts plus the manifest's own config copy.
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn load_or_default(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path,
            reason: e.to_string(),
        })
    }

    pub fn record(&mut self, key: String, stage: StageRecord) {
        self.config_hash = stage.config_hash.clone();
        self.seeds = Some(stage.seeds);
        self.stages.insert(key, stage);
        let all: BTreeSet<String> = self
            .stages
            .values()
            .flat_map(|s| s.artifacts.iter().cloned())
            .collect();
        self.artifacts = all.into_iter().collect();
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        w.flush()?;
        Ok(path)
    }
}

/// `path` relative to `dir` with forward slashes.
pub fn relative(dir: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(dir).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stage(files: &[&str]) -> StageRecord {
        StageRecord {
            argv: vec!["x".into()],
            config_hash: "h".into(),
            seeds: Seeds::default(),
            inputs: vec![],
            artifacts: files.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn rerun_replaces_stage_artifacts() {
        let mut m = Manifest::default();
        m.record("a".into(), stage(&["x.csv", "y.csv"]));
        m.record("b".into(), stage(&["y.csv", "z.csv"]));
        assert_eq!(m.artifacts, ["x.csv", "y.csv", "z.csv"]);
        m.record("a".into(), stage(&["w.csv"]));
        assert_eq!(m.artifacts, ["w.csv", "y.csv", "z.csv"]);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::default();
        m.record("generate".into(), stage(&["trajectories/index.csv"]));
        m.save(dir.path()).unwrap();
        assert_eq!(Manifest::load_or_default(dir.path()).unwrap(), m);
    }

    #[test]
    fn relative_paths() {
        let d = Path::new("/r/run");
        assert_eq!(relative(d, &d.join("data").join("train.csv")), "data/train.csv");
    }
}
