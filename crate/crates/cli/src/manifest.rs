use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_paths: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub tool_version: String,
    pub threads: usize,
    /// sha256 per input file.
    pub inputs: BTreeMap<String, String>,
    /// sha256 per output file, keyed relative to the manifest directory.
    pub outputs: BTreeMap<String, String>,
    pub wall_time_s: f64,
}

pub struct Recorder {
    start: Instant,
    pub manifest: RunManifest,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

impl Recorder {
    pub fn new(command: &str, threads: usize) -> Self {
        Self {
            start: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                args: std::env::args().skip(1).collect(),
                config_paths: Vec::new(),
                seeds: BTreeMap::new(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                threads,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                wall_time_s: 0.0,
            },
        }
    }

    pub fn config(&mut self, path: &Path) -> Result<()> {
        self.manifest.config_paths.push(path.display().to_string());
        self.input(path)
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            let mut files = Vec::new();
            walk(path, &mut files)?;
            for f in files.iter().filter(|f| !is_manifest(f)) {
                self.manifest.inputs.insert(f.display().to_string(), sha256_file(f)?);
            }
        } else {
            self.manifest.inputs.insert(path.display().to_string(), sha256_file(path)?);
        }
        Ok(())
    }

    pub fn seed(&mut self, name: &str, v: u64) {
        self.manifest.seeds.insert(name.to_string(), v);
    }

    /// Hash `outputs` (files or directories) and write the manifest to `path`.
    pub fn finish(mut self, path: &Path, outputs: &[&Path]) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut files = Vec::new();
        for o in outputs {
            if o.is_dir() {
                walk(o, &mut files)?;
            } else {
                files.push(o.to_path_buf());
            }
        }
        for f in files.iter().filter(|f| !is_manifest(f)) {
            let key = f.strip_prefix(base).unwrap_or(f).display().to_string();
            self.manifest.outputs.insert(key, sha256_file(f)?);
        }
        self.manifest.wall_time_s = self.start.elapsed().as_secs_f64();
        std::fs::write(path, serde_json::to_string_pretty(&self.manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn is_manifest(p: &Path) -> bool {
    p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with("manifest.json"))
}

/// Manifest location for a single-file output: `<stem>.manifest.json` beside it.
pub fn beside(file: &Path) -> PathBuf {
    let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    file.with_file_name(format!("{stem}.manifest.json"))
}
