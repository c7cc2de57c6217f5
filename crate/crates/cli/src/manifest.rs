//! Per-stage completion records. A stage is skipped when its inputs and
//! config hash are unchanged and its outputs are still on disk intact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use qgen_core::seed::content_hash;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    /// Input name to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output path (relative to the output directory) to content hash.
    pub outputs: BTreeMap<String, String>,
    pub complete: bool,
    pub started_unix: u64,
    pub seconds: f64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn hash_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(content_hash(&bytes))
}

impl Manifest {
    pub fn load(out_dir: &Path) -> anyhow::Result<Self> {
        let path = out_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = fs::read_to_string(&path)?;
        match serde_json::from_str(&text) {
            Ok(m) => Ok(m),
            Err(e) => {
                log::warn!("ignoring unreadable manifest {}: {e}", path.display());
                Ok(Manifest::default())
            }
        }
    }

    pub fn save(&self, out_dir: &Path) -> anyhow::Result<()> {
        let path = out_dir.join(MANIFEST_FILE);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(self)? + "\n")?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn is_up_to_date(&self, stage: &str, out_dir: &Path, config_hash: &str, inputs: &BTreeMap<String, String>) -> bool {
        let Some(rec) = self.stages.get(stage) else {
            return false;
        };
        rec.complete
            && rec.config_hash == config_hash
            && &rec.inputs == inputs
            && rec
                .outputs
                .iter()
                .all(|(rel, hash)| hash_file(&out_dir.join(rel)).is_ok_and(|h| &h == hash))
    }
}

/// Tracks one stage run from start to the manifest write.
pub struct StageRun {
    pub name: &'static str,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    started: Instant,
    started_unix: u64,
}

impl StageRun {
    pub fn new(name: &'static str, config_hash: String) -> Self {
        StageRun {
            name,
            config_hash,
            inputs: BTreeMap::new(),
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn input_file(&mut self, name: &str, path: &Path) -> anyhow::Result<()> {
        self.inputs.insert(name.to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn input_value(&mut self, name: &str, value: &str) {
        self.inputs.insert(name.to_string(), content_hash(value.as_bytes()));
    }

    /// Record the stage as complete with the given outputs.
    pub fn finish(self, out_dir: &Path, outputs: &[PathBuf]) -> anyhow::Result<()> {
        let mut manifest = Manifest::load(out_dir)?;
        let mut hashes = BTreeMap::new();
        for p in outputs {
            let rel = p.strip_prefix(out_dir).unwrap_or(p).to_string_lossy().into_owned();
            hashes.insert(rel, hash_file(p)?);
        }
        manifest.stages.insert(
            self.name.to_string(),
            StageRecord {
                config_hash: self.config_hash,
                inputs: self.inputs,
                outputs: hashes,
                complete: true,
                started_unix: self.started_unix,
                seconds: self.started.elapsed().as_secs_f64(),
            },
        );
        manifest.save(out_dir)
    }
}
