//! Provenance record written next to every output.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::ResolvedConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    /// SHA-256 of the content-determining configuration lines.
    pub config_digest: String,
    pub base_seed: u64,
    pub tool_version: String,
    /// UTC, ISO-8601.
    pub timestamp: String,
    pub output_files: Vec<PathBuf>,
    pub resolved: Vec<String>,
}

pub fn config_digest(config: &ResolvedConfig) -> String {
    let mut hasher = Sha256::new();
    for line in config.content_lines() {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

impl RunManifest {
    pub fn new(config: &ResolvedConfig, output_files: Vec<PathBuf>) -> Self {
        RunManifest {
            config_digest: config_digest(config),
            base_seed: config.seed,
            tool_version: TOOL_VERSION.to_owned(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            output_files,
            resolved: config.to_string().lines().map(str::to_owned).collect(),
        }
    }

    /// `<output>.manifest`.
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest");
        PathBuf::from(name)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "config_digest=sha256:{}", self.config_digest)?;
        writeln!(w, "base_seed={}", self.base_seed)?;
        writeln!(w, "tool_version={}", self.tool_version)?;
        writeln!(w, "timestamp={}", self.timestamp)?;
        let files: Vec<String> = self.output_files.iter().map(|p| p.display().to_string()).collect();
        writeln!(w, "output_files={}", files.join(","))?;
        for line in &self.resolved {
            writeln!(w, "config.{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, output: &Path) -> io::Result<PathBuf> {
        let path = Self::path_for(output);
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(&path, buf)?;
        Ok(path)
    }
}
