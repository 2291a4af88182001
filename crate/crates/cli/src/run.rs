//! Per-run output directories with a config echo and a content manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, Local};
use grm::config::RunConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub const OUTPUT_ROOT_VAR: &str = "GRM_OUTPUT_ROOT";
pub const MANIFEST: &str = "MANIFEST.json";
pub const CONFIG_ECHO: &str = "config.toml";

pub struct RunDir {
    pub path: PathBuf,
    command: String,
    started: DateTime<Local>,
    inputs: Vec<PathBuf>,
    seeds: BTreeMap<String, u64>,
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct InputEntry {
    path: String,
    files: usize,
    /// digest of the file, or of every `relative path + digest` line for a directory
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    argv: Vec<String>,
    version: &'static str,
    started: String,
    finished: String,
    seeds: &'a BTreeMap<String, u64>,
    inputs: Vec<InputEntry>,
    outputs: Vec<FileEntry>,
    summary: serde_json::Value,
}

impl RunDir {
    /// Creates `out`, or a fresh `<root>/<command>-<timestamp>` directory,
    /// and writes the resolved configuration into it.
    pub fn create(command: &str, out: Option<&Path>, cfg: &RunConfig) -> Result<Self> {
        let started = Local::now();
        let path = match out {
            Some(p) => p.to_path_buf(),
            None => {
                let root = std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
                let stem = format!("{command}-{}", started.format("%Y%m%d-%H%M%S"));
                let mut p = root.join(&stem);
                let mut k = 2;
                while p.exists() {
                    p = root.join(format!("{stem}-{k}"));
                    k += 1;
                }
                p
            }
        };
        fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        fs::write(path.join(CONFIG_ECHO), cfg.echo())
            .with_context(|| format!("writing config echo in {}", path.display()))?;
        let mut seeds = BTreeMap::new();
        seeds.insert("seed".to_string(), cfg.seed);
        log::info!("run directory {}", path.display());
        Ok(Self {
            path,
            command: command.to_string(),
            started,
            inputs: Vec::new(),
            seeds,
        })
    }

    pub fn join(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.path.join(rel)
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// Hashes inputs and every file under the run directory into MANIFEST.json.
    pub fn finish(self, summary: serde_json::Value) -> Result<PathBuf> {
        let mut inputs = Vec::with_capacity(self.inputs.len());
        for p in &self.inputs {
            inputs.push(hash_input(p)?);
        }
        let outputs = list_files(&self.path)?
            .into_iter()
            .filter(|(rel, _)| rel != MANIFEST)
            .map(|(rel, abs)| {
                let (sha256, bytes) = hash_file(&abs)?;
                Ok(FileEntry {
                    path: rel,
                    bytes,
                    sha256,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest {
            command: &self.command,
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            started: self.started.to_rfc3339(),
            finished: Local::now().to_rfc3339(),
            seeds: &self.seeds,
            inputs,
            outputs,
            summary,
        };
        let path = self.path.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(self.path)
    }
}

/// Files under `root` as sorted `(relative path with '/', absolute path)`.
pub fn list_files(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for e in WalkDir::new(root).sort_by_file_name() {
        let e = e.with_context(|| format!("walking {}", root.display()))?;
        if e.file_type().is_file() {
            let rel = e.path().strip_prefix(root)?;
            let rel: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect();
            out.push((rel.join("/"), e.path().to_path_buf()));
        }
    }
    Ok(out)
}

pub fn hash_file(path: &Path) -> Result<(String, u64)> {
    let mut f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0;
    loop {
        let n = f
            .read(&mut buf)
            .with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex(&h.finalize()), total))
}

fn hash_input(p: &Path) -> Result<InputEntry> {
    if p.is_dir() {
        let files = list_files(p)?;
        let mut h = Sha256::new();
        for (rel, abs) in &files {
            h.update(format!("{rel} {}\n", hash_file(abs)?.0));
        }
        Ok(InputEntry {
            path: p.display().to_string(),
            files: files.len(),
            sha256: hex(&h.finalize()),
        })
    } else {
        Ok(InputEntry {
            path: p.display().to_string(),
            files: 1,
            sha256: hash_file(p)?.0,
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
