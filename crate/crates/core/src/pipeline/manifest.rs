use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::ExperimentConfig;

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// One completed stage: where it wrote, what it read, and checksums of what it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// Directory relative to the run root, `<stage>-v<N>`.
    pub dir: String,
    /// Directories of the stage records this stage consumed.
    pub inputs: Vec<String>,
    /// SHA-256 of every output file, keyed by path relative to `dir`.
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_secs: f64,
    /// Stage-specific facts, such as learning-rate endpoints.
    #[serde(default)]
    pub notes: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Configuration in force at the most recent stage.
    pub config: ExperimentConfig,
    pub versions: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new(config: ExperimentConfig) -> Self {
        let versions = BTreeMap::from([(env!("CARGO_PKG_NAME").to_string(), env!("CARGO_PKG_VERSION").to_string())]);
        Self {
            config,
            versions,
            stages: Vec::new(),
        }
    }

    /// Loads `root/run_manifest.json`, or starts a fresh manifest when none exists.
    pub fn open(root: &Path, config: &ExperimentConfig) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(config.clone()));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: RunManifest = serde_json::from_str(&text)?;
        m.config = config.clone();
        Ok(m)
    }

    pub fn latest(&self, stage: &str) -> Option<&StageRecord> {
        self.stages.iter().rev().find(|s| s.stage == stage)
    }

    /// Latest record of `stage`, or an actionable error naming the command to run first.
    pub fn require(&self, stage: &str, command: &str) -> Result<&StageRecord> {
        self.latest(stage)
            .ok_or_else(|| Error::Config(format!("no `{stage}` output in this run; run `{command}` first")))
    }

    /// Writes the manifest through a temporary file and a rename.
    pub fn save(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let path = root.join(MANIFEST_FILE);
        let tmp = root.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

/// Next unused `<stage>-v<N>` directory under `root`, created empty.
pub fn next_stage_dir(root: &Path, stage: &str) -> Result<(String, PathBuf)> {
    let prefix = format!("{stage}-v");
    let mut n = 1;
    if let Ok(entries) = fs::read_dir(root) {
        for e in entries.flatten() {
            let name = e.file_name().to_string_lossy().into_owned();
            if let Some(v) = name.strip_prefix(&prefix).and_then(|v| v.parse::<usize>().ok()) {
                n = n.max(v + 1);
            }
        }
    }
    let rel = format!("{prefix}{n}");
    let dir = root.join(&rel);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok((rel, dir))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Checksums of every file below `dir`, keyed by `/`-separated relative path.
pub fn checksum_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = e.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p
                    .strip_prefix(dir)
                    .expect("walk stays below its root")
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/");
                out.insert(rel, sha256_file(&p)?);
            }
        }
    }
    Ok(out)
}

/// Confirms that the files a stage is about to read still match their recorded checksums.
pub fn verify(root: &Path, record: &StageRecord) -> Result<()> {
    let dir = root.join(&record.dir);
    for (rel, sum) in &record.outputs {
        let actual = sha256_file(&dir.join(rel))?;
        if &actual != sum {
            return Err(Error::Checkpoint(format!(
                "{}/{rel} changed since it was written (checksum mismatch)",
                record.dir
            )));
        }
    }
    Ok(())
}
