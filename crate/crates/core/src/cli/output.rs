//! File emission. Every text output starts with the same block of `#`
//! manifest lines, and each run ends by writing `manifest.json` listing the
//! emitted files with their SHA-256 digests. Nothing time- or host-dependent is
//! recorded, so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::CliError;
use crate::hyperfine::PhysicalConstants;

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub constants: PhysicalConstants,
    /// Command-specific records (grids, predictions, fit summaries).
    pub details: BTreeMap<String, serde_json::Value>,
    pub outputs: Vec<OutputRecord>,
}

/// Writes files below one output directory and records them in the manifest.
#[derive(Debug)]
pub struct Emitter {
    dir: PathBuf,
    manifest: Manifest,
}

impl Emitter {
    pub fn new(
        dir: &Path,
        command: &str,
        config_sha256: String,
        seed: u64,
        constants: PhysicalConstants,
    ) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                tool: TOOL,
                version: VERSION,
                command: command.to_string(),
                config_sha256,
                seed,
                constants,
                details: BTreeMap::new(),
                outputs: Vec::new(),
            },
        })
    }

    /// The `#` comment block placed at the top of every text output.
    pub fn header(&self) -> String {
        let m = &self.manifest;
        let c = &m.constants;
        let mut out = String::new();
        let _ = writeln!(out, "# tool = {} {}", m.tool, m.version);
        let _ = writeln!(out, "# command = {}", m.command);
        let _ = writeln!(out, "# config_sha256 = {}", m.config_sha256);
        let _ = writeln!(out, "# seed = {}", m.seed);
        let _ = writeln!(out, "# gamma_e_rad_s_T = {:.16e}", c.gamma_e);
        let _ = writeln!(out, "# gamma_c_rad_s_T = {:.16e}", c.gamma_c);
        let _ = writeln!(out, "# hbar_J_s = {:.16e}", c.hbar);
        let _ = writeln!(out, "# mu0_over_4pi_T_m_A = {:.16e}", c.mu0_over_4pi);
        out
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) -> Result<(), CliError> {
        let value = serde_json::to_value(value)
            .map_err(|e| CliError::Validation(format!("serializing {key}: {e}")))?;
        self.manifest.details.insert(key.to_string(), value);
        Ok(())
    }

    /// Writes `header + body` to `name` (relative to the output directory).
    pub fn write(&mut self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let text = format!("{}{body}", self.header());
        self.write_raw(name, text.as_bytes())
    }

    fn write_raw(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::io(format!("creating {}", parent.display()), e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        self.manifest.outputs.push(OutputRecord {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    /// Writes `manifest.json` and returns the manifest.
    pub fn finish(self) -> Result<Manifest, CliError> {
        let mut json = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| CliError::Validation(format!("serializing manifest: {e}")))?;
        json.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, json).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        Ok(self.manifest)
    }
}
