//! Run manifests: what was run, on which inputs, producing which outputs.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

impl Artifact {
    pub fn hash(path: &Path) -> std::io::Result<Self> {
        Ok(Self { path: path.display().to_string(), sha256: sha256_file(path)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Command-line arguments after the program name; replaying them reruns the command.
    pub args: Vec<String>,
    pub seed: Option<u64>,
    /// Resolved settings of the run.
    pub config: serde_json::Value,
    pub inputs: Vec<Artifact>,
    /// Output files, named relative to the output directory.
    pub outputs: Vec<Artifact>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: invalid manifest: {e}", path.display()))
    }
}

/// Collects what a command needs to describe its run.
pub struct Recorder {
    command: String,
    args: Vec<String>,
    started_unix: u64,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

impl Recorder {
    pub fn new(command: &str, args: &[String]) -> Self {
        Self {
            command: command.to_string(),
            args: args.to_vec(),
            started_unix: now(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Registers a file written into the output directory.
    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    /// Hashes every artifact and writes `manifest.json` into `out_dir`.
    pub fn finish(self, out_dir: &Path) -> std::io::Result<RunManifest> {
        let inputs = self.inputs.iter().map(|p| Artifact::hash(p)).collect::<std::io::Result<Vec<_>>>()?;
        let outputs = self
            .outputs
            .iter()
            .map(|name| Ok(Artifact { path: name.clone(), sha256: sha256_file(&out_dir.join(name))? }))
            .collect::<std::io::Result<Vec<_>>>()?;
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command,
            args: self.args,
            seed: self.seed,
            config: self.config,
            inputs,
            outputs,
            started_unix: self.started_unix,
            finished_unix: now(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(out_dir.join(FILE_NAME), text + "\n")?;
        Ok(manifest)
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
