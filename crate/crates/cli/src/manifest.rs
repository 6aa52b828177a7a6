use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use hyps_core::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written next to every run's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_seconds: f64,
}

/// Collects outputs as a command writes them.
pub struct Run {
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    dir: PathBuf,
    started: Instant,
}

impl Run {
    pub fn start(command: &str, config: impl Serialize, seed: Option<u64>, dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            command: command.into(),
            config: serde_json::to_value(config).expect("config serializes"),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            dir: dir.to_path_buf(),
            started: Instant::now(),
        })
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `bytes` to `<out>/<name>` and records it.
    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        std::fs::write(&p, bytes)?;
        self.outputs.push(p.clone());
        Ok(p)
    }

    /// Records a file written by other means.
    pub fn output(&mut self, p: PathBuf) {
        self.outputs.push(p);
    }

    pub fn finish(self) -> Result<()> {
        let m = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            inputs: self.inputs,
            outputs: self.outputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        std::fs::write(self.dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }
}
