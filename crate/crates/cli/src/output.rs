//! CSV files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes CSVs into the output directory and records what it wrote.
pub struct RunOutput {
    dir: PathBuf,
    files: Vec<OutputFile>,
    timings: Vec<Timing>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
    pub rows: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    args: &'a [String],
    config_file: &'static str,
    config_sha256: String,
    seed: u64,
    user_seed: Option<u64>,
    drops: usize,
    workers: usize,
    timings: &'a [Timing],
    outputs: &'a [OutputFile],
}

/// Fields of the manifest that come from the run itself.
pub struct RunInfo<'a> {
    pub command: &'a str,
    pub args: &'a [String],
    pub config_toml: &'a str,
    pub seed: u64,
    pub user_seed: Option<u64>,
    pub drops: usize,
    pub workers: usize,
}

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";

impl RunOutput {
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            timings: Vec::new(),
        })
    }

    /// Run `f` and record its wall time under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(Timing {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    /// Write `rows` under `header` to `name`.
    pub fn write_csv<R: Serialize>(&mut self, name: &str, header: &[&str], rows: &[R]) -> Result<(), Failure> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        let io = |e: csv::Error| Failure::Io(format!("{name}: {e}"));
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.serialize(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Failure::Io(format!("{name}: {e}")))?;
        self.write_file(name, &bytes, rows.len())
    }

    fn write_file(&mut self, name: &str, bytes: &[u8], rows: usize) -> Result<(), Failure> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        self.files.push(OutputFile {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
            rows,
        });
        Ok(())
    }

    /// Write the resolved configuration and the manifest.
    pub fn finish(self, info: &RunInfo) -> Result<(), Failure> {
        let cfg_path = self.dir.join(CONFIG_FILE);
        fs::write(&cfg_path, info.config_toml).map_err(|e| Failure::Io(format!("{}: {e}", cfg_path.display())))?;
        let manifest = Manifest {
            tool: "leo-isac",
            version: env!("CARGO_PKG_VERSION"),
            command: info.command,
            args: info.args,
            config_file: CONFIG_FILE,
            config_sha256: sha256_hex(info.config_toml.as_bytes()),
            seed: info.seed,
            user_seed: info.user_seed,
            drops: info.drops,
            workers: info.workers,
            timings: &self.timings,
            outputs: &self.files,
        };
        let text = toml::to_string(&manifest).map_err(|e| Failure::Io(format!("manifest: {e}")))?;
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
    }
}
