//! Run-directory bookkeeping: the lock file, per-subcommand run manifests
//! with artifact digests, and environment probes (git state, device).

use std::fs;
use std::io::{ErrorKind, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::anyhow;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::errors::{CliError, CliResult};

pub const LOCK_FILE: &str = "run.lock";
pub const MANIFEST_DIR: &str = "manifests";

/// Holds the run directory's lock file; removed on drop, including during
/// unwinding, so a failed subcommand does not wedge the directory.
pub struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Creates the run directory and takes its lock. A pre-existing lock file
/// means another process is writing there (or crashed hard); we refuse to
/// interleave rather than corrupt artifacts.
pub fn acquire_lock(dir: &Path) -> CliResult<LockGuard> {
    fs::create_dir_all(dir)?;
    let path = dir.join(LOCK_FILE);
    match fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(&path)
    {
        Ok(mut f) => {
            writeln!(f, "{}", std::process::id())?;
            Ok(LockGuard { path })
        }
        Err(e) if e.kind() == ErrorKind::AlreadyExists => {
            let holder = fs::read_to_string(&path).unwrap_or_default();
            Err(CliError::Other(anyhow!(
                "run directory {} is locked (run.lock held by pid {}); \
                 wait for the other neutralyze process or delete the lock \
                 file if none is running",
                dir.display(),
                holder.trim()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct ArtifactEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    version: &'static str,
    device: String,
    config_hash: &'a str,
    seed: u64,
    git_describe: Option<String>,
    wall_time_secs: f64,
    parameters: serde_json::Value,
    /// Digest over the artifact table; equal digests mean byte-identical
    /// outputs.
    artifacts_hash: String,
    artifacts: Vec<ArtifactEntry>,
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// All files under `dir`, recursively, sorted by relative path.
pub fn walk_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Writes `manifests/<name>.json` under the run directory: configuration
/// hash, seed, git state, wall time, and a SHA-256 digest of every listed
/// artifact (paths stored relative to the run directory).
pub fn write_run_manifest(
    out_dir: &Path,
    name: &str,
    config_hash: &str,
    seed: u64,
    started: Instant,
    parameters: serde_json::Value,
    artifacts: &[PathBuf],
) -> CliResult<PathBuf> {
    let mut entries = Vec::with_capacity(artifacts.len());
    for path in artifacts {
        let rel = path
            .strip_prefix(out_dir)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        entries.push(ArtifactEntry {
            path: rel,
            sha256: sha256_file(path)?,
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));

    let mut combined = Sha256::new();
    for e in &entries {
        combined.update(e.path.as_bytes());
        combined.update(b":");
        combined.update(e.sha256.as_bytes());
        combined.update(b"\n");
    }
    let artifacts_hash: String = combined
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();

    let manifest = RunManifest {
        subcommand: name,
        version: env!("CARGO_PKG_VERSION"),
        device: device(),
        config_hash,
        seed,
        git_describe: git_describe(),
        wall_time_secs: started.elapsed().as_secs_f64(),
        parameters,
        artifacts_hash,
        artifacts: entries,
    };
    let dir = out_dir.join(MANIFEST_DIR);
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Effective compute device. `NEUTRALYZE_DEVICE` selects it; this build
/// implements only `cpu`, so anything else falls back with a warning.
pub fn device() -> String {
    match std::env::var("NEUTRALYZE_DEVICE") {
        Ok(v) if v.is_empty() || v.eq_ignore_ascii_case("cpu") => "cpu".into(),
        Ok(v) => {
            eprintln!("warning: NEUTRALYZE_DEVICE={v} is not available in this build; using cpu");
            "cpu".into()
        }
        Err(_) => "cpu".into(),
    }
}

/// Current git revision (`git describe --always --dirty --tags`), if the
/// working directory is a repository and git is installed.
pub fn git_describe() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()?;
    if !out.status.success() {
        return None;
    }
    let s = String::from_utf8_lossy(&out.stdout).trim().to_string();
    (!s.is_empty()).then_some(s)
}
