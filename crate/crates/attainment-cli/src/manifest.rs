//! Run manifests and advisory output locks.
//!
//! Every command that writes files drops a `<output>.manifest.json` next to
//! its first output, recording the exact argv, seeds, inputs, outputs, a
//! config hash, the tool version and the wall-clock duration. Replaying the
//! manifest's argv reproduces the outputs byte for byte (the manifest itself
//! carries the only non-deterministic field, the duration).

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub duration_ms: u128,
    pub flags: serde_json::Map<String, serde_json::Value>,
}

pub struct ManifestBuilder {
    started: Instant,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &impl Serialize) -> ManifestBuilder {
        let config_json = serde_json::to_string(config).unwrap_or_default();
        ManifestBuilder {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                argv: std::env::args().collect(),
                seed: None,
                config_hash: format!("{:016x}", fnv1a(config_json.as_bytes())),
                inputs: Vec::new(),
                outputs: Vec::new(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                duration_ms: 0,
                flags: serde_json::Map::new(),
            },
        }
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.manifest.seed = Some(seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.manifest.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.manifest.outputs.push(path.to_path_buf());
        self
    }

    pub fn flag(&mut self, name: &str, value: impl Into<serde_json::Value>) -> &mut Self {
        self.manifest.flags.insert(name.to_string(), value.into());
        self
    }

    /// Writes `<first output>.manifest.json`. No outputs, no manifest.
    pub fn write(mut self) -> std::io::Result<()> {
        let Some(first) = self.manifest.outputs.first().cloned() else {
            return Ok(());
        };
        self.manifest.duration_ms = self.started.elapsed().as_millis();
        let path = manifest_path(&first);
        let mut file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut file, &self.manifest).map_err(std::io::Error::other)?;
        file.write_all(b"\n")?;
        Ok(())
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325_u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Advisory lock: `<output>.lock` created exclusively for the write's
/// duration so two invocations cannot race on the same artifact.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(output: &Path) -> std::io::Result<OutputLock> {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".lock");
        let path = output.with_file_name(name);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    format!(
                        "output {} is locked by another invocation (remove {} if stale)",
                        output.display(),
                        path.display()
                    ),
                ))
            }
            Err(e) => Err(e),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
