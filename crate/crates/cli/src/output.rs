//! Output files and the run manifest.

use crate::scenario::hex;
use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> anyhow::Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    Ok(writer.into_inner().map_err(|e| e.into_error())?)
}

pub fn json_bytes<T: Serialize>(rows: &[T]) -> anyhow::Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(rows)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Collects output files in memory and writes them, plus a manifest, once
/// the run has finished.
pub struct OutputSet {
    format: Format,
    files: BTreeMap<String, Vec<u8>>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    scenario_sha256: &'a str,
    seed: Option<u64>,
    versions: BTreeMap<&'a str, &'a str>,
    format: &'a str,
    files: BTreeMap<&'a str, String>,
}

impl OutputSet {
    pub fn new(format: Format) -> Self {
        Self {
            format,
            files: BTreeMap::new(),
        }
    }

    /// Adds `<stem>.csv` or `<stem>.json`.
    pub fn table<T: Serialize>(&mut self, stem: &str, rows: &[T]) -> anyhow::Result<()> {
        let bytes = match self.format {
            Format::Csv => csv_bytes(rows)?,
            Format::Json => json_bytes(rows)?,
        };
        self.files
            .insert(format!("{stem}.{}", self.format.extension()), bytes);
        Ok(())
    }

    pub fn write(
        self,
        dir: &Path,
        command: &str,
        scenario_sha256: &str,
        seed: Option<u64>,
    ) -> anyhow::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }
        let manifest = Manifest {
            command,
            scenario_sha256,
            seed,
            versions: BTreeMap::from([
                ("marketsim", env!("CARGO_PKG_VERSION")),
                ("marketsim-core", marketsim_core::VERSION),
            ]),
            format: self.format.extension(),
            files: self
                .files
                .iter()
                .map(|(name, bytes)| (name.as_str(), hex(&Sha256::digest(bytes))))
                .collect(),
        };
        let path = dir.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
        Ok(written)
    }
}
