//! Artifact writing and per-run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Loaded;
use crate::error::{CliError, CliResult};

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Everything needed to audit one subcommand run. Contains no timestamps or
/// absolute paths, so identical runs give identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

/// Collects inputs and outputs of one subcommand.
pub struct Run<'a> {
    pub cfg: &'a Loaded,
    command: &'static str,
    inputs: Vec<FileEntry>,
    outputs: Vec<FileEntry>,
}

impl<'a> Run<'a> {
    pub fn new(cfg: &'a Loaded, command: &'static str) -> CliResult<Self> {
        fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::io(&cfg.out_dir, e))?;
        Ok(Run {
            cfg,
            command,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    /// Path label that does not depend on where the run lives.
    fn label(&self, path: &Path) -> String {
        let rel = path
            .strip_prefix(&self.cfg.out_dir)
            .map(|p| PathBuf::from("$OUT").join(p))
            .or_else(|_| path.strip_prefix(&self.cfg.base_dir).map(Path::to_path_buf))
            .unwrap_or_else(|_| path.to_path_buf());
        rel.to_string_lossy().replace('\\', "/")
    }

    /// Reads an input artifact; `produced_by` names the subcommand that makes it.
    pub fn read_input(&mut self, path: &Path, produced_by: &str) -> CliResult<Vec<u8>> {
        if !path.exists() {
            return Err(CliError::missing(path, produced_by));
        }
        let data = fs::read(path).map_err(|e| CliError::io(path, e))?;
        let label = self.label(path);
        if !self.inputs.iter().any(|f| f.path == label) {
            self.inputs.push(FileEntry {
                path: label,
                sha256: sha256_hex(&data),
                bytes: data.len(),
            });
        }
        Ok(data)
    }

    pub fn write(&mut self, name: &str, data: &[u8]) -> CliResult<()> {
        let path = self.out(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(&path, data).map_err(|e| CliError::io(&path, e))?;
        self.outputs.push(FileEntry {
            path: name.to_string(),
            sha256: sha256_hex(data),
            bytes: data.len(),
        });
        Ok(())
    }

    pub fn write_table(&mut self, name: &str, table: Table) -> CliResult<()> {
        self.write(name, &table.finish())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::new(crate::error::Kind::Io, e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes the manifest and prints the summary to stdout.
    pub fn finish(mut self, summary: &str) -> CliResult<()> {
        self.write(&format!("{}_summary.txt", self.command), summary.as_bytes())?;
        let mut outputs = std::mem::take(&mut self.outputs);
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let mut inputs = std::mem::take(&mut self.inputs);
        inputs.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.command.to_string(),
            seed: self.cfg.config.seed,
            config_sha256: self.cfg.sha256.clone(),
            inputs,
            outputs,
        };
        self.write_json(&format!("manifest.{}.json", self.command), &manifest)?;
        print!("{summary}");
        Ok(())
    }
}

/// In-memory CSV table with a declared header.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
    width: usize,
}

impl Table {
    pub fn new(header: &[&str]) -> Table {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Table {
            writer,
            width: header.len(),
        }
    }

    pub fn row<S: AsRef<str>>(&mut self, cells: &[S]) {
        assert_eq!(cells.len(), self.width, "row width differs from header");
        self.writer
            .write_record(cells.iter().map(|c| c.as_ref()))
            .expect("in-memory write");
    }

    pub fn finish(self) -> Vec<u8> {
        self.writer.into_inner().expect("in-memory flush")
    }
}

/// Shortest round-trip text of a float; NaN and infinities spelled out.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else if x.is_infinite() {
        if x > 0.0 { "Inf" } else { "-Inf" }.into()
    } else {
        format!("{x}")
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_else(|| "NA".into())
}
