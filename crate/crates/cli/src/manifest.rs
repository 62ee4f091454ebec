use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use dwellcut_core::rng::RNG_ALGORITHM;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// One per run, written next to the primary output.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a, C: Serialize> {
    pub command: &'a str,
    pub tool: &'a str,
    pub version: &'a str,
    pub rng: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub config: &'a C,
    pub inputs: &'a [FileDigest],
    pub outputs: &'a [FileDigest],
    pub started_at: &'a str,
    pub finished_at: String,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    pub notes: &'a [String],
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Tracks every file a command reads or writes.
pub struct Run {
    command: &'static str,
    started_at: String,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    pub notes: Vec<String>,
}

impl Run {
    pub fn start(command: &'static str) -> Self {
        Self { command, started_at: now(), inputs: Vec::new(), outputs: Vec::new(), notes: Vec::new() }
    }

    pub fn read(&mut self, path: &Path) -> std::io::Result<Vec<u8>> {
        let bytes = fs::read(path)?;
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> std::io::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, bytes)?;
        self.outputs.push(FileDigest { path: path.display().to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<(), dwellcut_core::Error> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(path, &bytes)?;
        Ok(())
    }

    pub fn finish<C: Serialize>(self, manifest: &Path, seed: Option<u64>, config: &C) -> Result<(), dwellcut_core::Error> {
        let m = RunManifest {
            command: self.command,
            tool: dwellcut_core::pipeline::TOOL_NAME,
            version: dwellcut_core::pipeline::TOOL_VERSION,
            rng: RNG_ALGORITHM,
            seed,
            config,
            inputs: &self.inputs,
            outputs: &self.outputs,
            started_at: &self.started_at,
            finished_at: now(),
            notes: &self.notes,
        };
        let mut bytes = serde_json::to_vec_pretty(&m)?;
        bytes.push(b'\n');
        fs::write(manifest, bytes)?;
        Ok(())
    }
}

/// `<path>.manifest.json`
pub fn manifest_path(primary: &Path) -> PathBuf {
    sibling(primary, "manifest.json")
}

/// `<path>.<suffix>`
pub fn sibling(primary: &Path, suffix: &str) -> PathBuf {
    let mut s = primary.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
