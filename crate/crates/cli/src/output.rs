//! Atomic artifact writes and the run manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use testbandit::seed::fnv1a64;

use crate::CliError;

/// Collects the artifacts of one run in `--out-dir`; [`OutDir::finish`]
/// writes `manifest.json` listing every artifact with its content hash.
pub struct OutDir {
    dir: PathBuf,
    artifacts: Vec<(String, u64, usize)>,
    inputs: Vec<(String, u64)>,
    pub manifest_id: String,
}

impl OutDir {
    pub fn create(dir: &Path, manifest_id: String) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::internal(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
            inputs: Vec::new(),
            manifest_id,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Write-temp-then-rename inside the output directory.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let target = self.dir.join(name);
        let fail = |e: std::io::Error| CliError::internal(format!("cannot write {}: {e}", target.display()));
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(fail)?;
        tmp.write_all(bytes).map_err(fail)?;
        tmp.as_file().sync_all().map_err(fail)?;
        tmp.persist(&target).map_err(|e| fail(e.error))?;
        if name != MANIFEST {
            self.artifacts.retain(|a| a.0 != name);
            self.artifacts.push((name.to_string(), fnv1a64(bytes), bytes.len()));
        }
        Ok(())
    }

    pub fn record_input(&mut self, path: &Path) {
        let hash = std::fs::read(path).map(|b| fnv1a64(&b)).unwrap_or(0);
        self.inputs.push((path.display().to_string(), hash));
    }

    pub fn finish(mut self, header: &RunHeader, started: &str) -> Result<(), CliError> {
        let artifacts: Vec<Value> = self
            .artifacts
            .iter()
            .map(|(name, hash, bytes)| json!({ "path": name, "fnv1a64": format!("{hash:016x}"), "bytes": bytes }))
            .collect();
        let inputs: Vec<Value> = self
            .inputs
            .iter()
            .map(|(path, hash)| json!({ "path": path, "fnv1a64": format!("{hash:016x}") }))
            .collect();
        let manifest = json!({
            "manifest_id": self.manifest_id,
            "subcommand": header.subcommand,
            "arguments": header.arguments,
            "config": header.config,
            "seed": header.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "out_dir": self.dir.display().to_string(),
            "inputs": inputs,
            "outputs": artifacts,
            "started": started,
            "finished": timestamp(),
        });
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::internal(e.to_string()))?;
        text.push('\n');
        self.write(MANIFEST, text.as_bytes())
    }
}

pub const MANIFEST: &str = "manifest.json";

pub struct RunHeader {
    pub subcommand: String,
    pub arguments: Vec<String>,
    pub config: Option<String>,
    pub seed: u64,
}

impl RunHeader {
    /// Stable id from the command line and the tool version.
    pub fn manifest_id(&self) -> String {
        let mut text = format!("{}\u{1f}{}\u{1f}{}", env!("CARGO_PKG_VERSION"), self.subcommand, self.seed);
        for a in &self.arguments {
            text.push('\u{1f}');
            text.push_str(a);
        }
        format!("{:016x}", fnv1a64(text.as_bytes()))
    }
}

/// RFC 3339 time, pinned by `SOURCE_DATE_EPOCH` when set so reruns are
/// byte-identical.
pub fn timestamp() -> String {
    let pinned = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|s| chrono::DateTime::from_timestamp(s, 0));
    pinned.unwrap_or_else(chrono::Utc::now).to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Minimal CSV builder; every field here is numeric or an identifier.
#[derive(Default)]
pub struct Table {
    text: String,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut t = Self::default();
        t.row(header);
        t
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) {
        let line: Vec<&str> = fields.iter().map(AsRef::as_ref).collect();
        self.text.push_str(&line.join(","));
        self.text.push('\n');
    }

    pub fn bytes(&self) -> &[u8] {
        self.text.as_bytes()
    }
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
