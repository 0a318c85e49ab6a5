use std::path::{Path, PathBuf};
use std::time::Duration;

use densedial::io::write_atomic;
use densedial::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::args::Cli;
use crate::run::Touched;

#[derive(Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    /// Hex SHA-256, absent when the file could not be read.
    pub sha256: Option<String>,
}

/// What ran, on which inputs, and how long it took.
#[derive(Serialize)]
pub struct RunManifest<'a> {
    pub command: &'static str,
    pub version: &'static str,
    pub flags: &'a Cli,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_ms: f64,
    pub exit_code: u8,
}

fn digest(path: &Path) -> FileDigest {
    let sha256 = std::fs::read(path).ok().map(|bytes| {
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    });
    FileDigest { path: path.to_path_buf(), sha256 }
}

fn digests(paths: &[PathBuf]) -> Vec<FileDigest> {
    let mut seen = std::collections::HashSet::new();
    paths.iter().filter(|p| seen.insert(p.as_path())).map(|p| digest(p)).collect()
}

impl<'a> RunManifest<'a> {
    pub fn new(cli: &'a Cli, touched: &Touched, elapsed: Duration, exit_code: u8) -> Self {
        RunManifest {
            command: cli.command.name(),
            version: env!("CARGO_PKG_VERSION"),
            flags: cli,
            seed: cli.command.seed(),
            inputs: digests(&touched.inputs),
            outputs: digests(&touched.outputs),
            wall_ms: elapsed.as_secs_f64() * 1e3,
            exit_code,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json();
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }
}
