//! Run manifests written next to every output artifact.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Host {
    pub os: &'static str,
    pub arch: &'static str,
    pub hostname: String,
    pub threads: usize,
}

impl Host {
    fn detect() -> Self {
        let hostname = std::env::var("HOSTNAME")
            .ok()
            .or_else(|| std::fs::read_to_string("/etc/hostname").ok())
            .map(|s| s.trim().to_string())
            .unwrap_or_default();
        Self {
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            hostname,
            threads: rayon::current_num_threads(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub config_path: PathBuf,
    pub config_hash: String,
    pub code_version: String,
    /// Master seed and the named substream seeds derived from it.
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub started_unix_s: u64,
    pub wall_clock_s: f64,
    pub host: Host,
    /// Headline numbers of the run, if any.
    pub summary: BTreeMap<String, f64>,
    #[serde(skip)]
    started: Instant,
}

pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// `out.ext` → `out.ext.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

impl RunManifest {
    pub fn new(subcommand: &str, config_path: &Path, config_hash: [u8; 32], seed: u64) -> Self {
        let mut seeds = BTreeMap::new();
        seeds.insert("master".to_string(), seed);
        Self {
            subcommand: subcommand.to_string(),
            argv: std::env::args().collect(),
            config_path: config_path.to_path_buf(),
            config_hash: hex::encode(config_hash),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_clock_s: 0.0,
            host: Host::detect(),
            summary: BTreeMap::new(),
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        self.inputs.push(Artifact {
            path: path.to_path_buf(),
            sha256: file_sha256(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> std::io::Result<()> {
        self.outputs.push(Artifact {
            path: path.to_path_buf(),
            sha256: file_sha256(path)?,
        });
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: f64) {
        self.summary.insert(key.to_string(), value);
    }

    /// Writes one copy beside each output.
    pub fn finish(mut self) -> std::io::Result<Vec<PathBuf>> {
        self.wall_clock_s = self.started.elapsed().as_secs_f64();
        let json = serde_json::to_string_pretty(&self).map_err(std::io::Error::other)?;
        let mut written = Vec::new();
        for o in &self.outputs {
            let p = manifest_path(&o.path);
            std::fs::write(&p, &json)?;
            written.push(p);
        }
        Ok(written)
    }
}
