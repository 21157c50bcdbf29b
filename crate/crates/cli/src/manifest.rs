use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dbksvd::TrainingConfig;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub toolkit: String,
    pub version: String,
    pub seed: u64,
    pub config: TrainingConfig,
    pub inputs: Vec<InputDigest>,
    #[serde(default)]
    pub validation: Option<String>,
    #[serde(default)]
    pub init: Option<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub peak_memory_estimate_bytes: u64,
    pub started: String,
    pub finished: Option<String>,
    pub status: String,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn digest(path: &Path) -> Result<InputDigest> {
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: sha256_file(path)?,
    })
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| dbksvd::Error::InvalidConfig(format!("manifest {}: {e}", path.display())).into())
    }

    pub fn store(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}
