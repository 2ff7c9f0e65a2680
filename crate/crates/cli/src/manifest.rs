//! `manifest.json` written next to every command's artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rqmir::config::RunConfig;
use rqmir::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
struct Artifact {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Versions {
    rqmir: &'static str,
    manifest: u32,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    args: Vec<String>,
    versions: Versions,
    fingerprint: Option<String>,
    config: Option<serde_json::Value>,
    wall_time_s: f64,
    artifacts: Vec<Artifact>,
}

fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
}

/// Record `artifacts` (paths inside `dir`) with the config that produced them.
pub fn write_manifest(dir: &Path, command: &str, cfg: Option<&RunConfig>, start: Instant, artifacts: &[PathBuf]) -> Result<()> {
    let mut list = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        let (bytes, sha256) = sha256_file(a)?;
        let rel = a.strip_prefix(dir).unwrap_or(a);
        list.push(Artifact {
            path: rel.to_string_lossy().replace('\\', "/"),
            bytes,
            sha256,
        });
    }
    list.sort_by(|a, b| a.path.cmp(&b.path));
    let m = Manifest {
        command,
        args: std::env::args().skip(1).collect(),
        versions: Versions {
            rqmir: env!("CARGO_PKG_VERSION"),
            manifest: 1,
        },
        fingerprint: cfg.map(RunConfig::fingerprint),
        config: cfg.map(|c| serde_json::to_value(c).expect("config serializes")),
        wall_time_s: start.elapsed().as_secs_f64(),
        artifacts: list,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
