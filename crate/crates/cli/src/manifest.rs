use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Written next to the outputs of every command. `argv` is the fully
/// resolved argument list (config file expanded), enough to re-run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config_file: Option<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub started_unix_s: u64,
    pub wall_clock_s: f64,
}

/// Output directory bookkeeping for one command.
pub struct Run {
    pub out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
    started_unix_s: u64,
}

impl Run {
    /// Creates `out`, refusing a non-empty directory unless `force`.
    pub fn prepare(out: &Path, force: bool) -> Result<Self> {
        if out.exists() {
            if !out.is_dir() {
                bail!("output path {} exists and is not a directory", out.display());
            }
            let occupied = std::fs::read_dir(out)?.next().is_some();
            if occupied && !force {
                bail!("output directory {} is not empty; pass --force to overwrite", out.display());
            }
        }
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let started_unix_s = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Ok(Self { out: out.to_path_buf(), inputs: Vec::new(), outputs: Vec::new(), started: Instant::now(), started_unix_s })
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn read(&mut self, path: &Path) -> Result<String> {
        self.input(path);
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
    }

    /// Writes `contents` to `out/rel`, creating parent directories.
    pub fn write(&mut self, rel: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    pub fn record_output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn finish(mut self, command: &str, argv: &[String], config_file: Option<String>, config: serde_json::Value, seed: u64) -> Result<()> {
        let path = self.out.join(MANIFEST_FILE);
        self.outputs.push(path.clone());
        let manifest = Manifest {
            command: command.to_string(),
            argv: argv.to_vec(),
            config_file,
            config,
            seed,
            inputs: self.inputs,
            outputs: self.outputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_s: self.started_unix_s,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
        };
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

pub fn load(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
