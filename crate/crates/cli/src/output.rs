//! Output files: history CSV, run manifests, dataset hashes and the out-dir lock.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use symrd::training::{HistoryRecord, TrainConfig};

use crate::exit;

pub const HISTORY_VERSION: u32 = 1;
pub const SUMMARY_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(exit::CONFIG, message)
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self::new(exit::IO, format!("{}: {err}", path.display()))
    }

    pub fn code(&self) -> u8 {
        self.code
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<symrd::Error> for CliError {
    fn from(e: symrd::Error) -> Self {
        use symrd::Error as E;
        let code = match &e {
            E::Io(_) | E::Json(_) | E::Format(_) | E::FormatVersion { .. } => exit::IO,
            _ => exit::CONFIG,
        };
        Self::new(code, e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let mut f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

pub fn unix_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// `git describe` of the working directory when available, else the crate version.
pub fn version_string() -> String {
    let pkg = env!("CARGO_PKG_VERSION");
    let described = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    match described {
        Some(d) => format!("{pkg} ({d})"),
        None => pkg.to_string(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedSeed {
    pub stream: String,
    pub seed: u64,
}

/// Everything needed to rerun the command that produced `outputs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub command: String,
    pub version: String,
    pub config: Option<String>,
    pub seeds: Vec<NamedSeed>,
    pub datasets: Vec<DatasetHash>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            manifest_version: MANIFEST_VERSION,
            command: command.to_string(),
            version: version_string(),
            config: None,
            seeds: Vec::new(),
            datasets: Vec::new(),
            started_unix: unix_seconds(),
            finished_unix: 0,
            outputs: Vec::new(),
        }
    }

    pub fn seed(&mut self, stream: &str, seed: u64) {
        self.seeds.push(NamedSeed {
            stream: stream.to_string(),
            seed,
        });
    }

    pub fn write(mut self, path: &Path) -> CliResult {
        self.finished_unix = unix_seconds();
        let text = serde_json::to_string_pretty(&self)
            .map_err(|e| CliError::new(exit::IO, e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}

/// Manifest path accompanying an output file: `<file>.manifest.json`.
pub fn manifest_path_for(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    file.with_file_name(name)
}

/// Exclusive use of an output directory for the lifetime of the guard.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(".symrd.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::new(
                exit::IO,
                format!("{} is locked by another run ({})", dir.display(), path.display()),
            )),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// One row of a history CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub method: String,
    pub task: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: u64,
    pub val_cost: f64,
    pub l1_gap: Option<f64>,
    pub ssd_loss: Option<f64>,
    pub wall_ms: u64,
}

impl HistoryRow {
    pub fn new(cfg: &TrainConfig, rec: &HistoryRecord) -> Self {
        Self {
            method: cfg.method.to_string(),
            task: cfg.task.to_string(),
            n: cfg.n,
            seed: cfg.seed,
            k: rec.k,
            val_cost: rec.val_cost,
            l1_gap: rec.l1_gap,
            ssd_loss: rec.ssd_loss,
            wall_ms: rec.wall_ms,
        }
    }
}

fn version_line(kind: &str, version: u32) -> String {
    format!("# symrd-{kind} v{version}")
}

fn write_versioned<T: Serialize>(path: &Path, kind: &str, version: u32, rows: &[T]) -> CliResult {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    writeln!(f, "{}", version_line(kind, version)).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(f);
    for r in rows {
        w.serialize(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn read_versioned<T: for<'de> Deserialize<'de>>(
    path: &Path,
    kind: &str,
    version: u32,
) -> CliResult<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = BufReader::new(f);
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| CliError::io(path, e))?;
    if first.trim_end() != version_line(kind, version) {
        return Err(CliError::io(
            path,
            format!("expected header `{}`", version_line(kind, version)),
        ));
    }
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize()
        .map(|row| row.map_err(|e| CliError::io(path, e)))
        .collect()
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> CliResult {
    write_versioned(path, "history", HISTORY_VERSION, rows)
}

pub fn read_history(path: &Path) -> CliResult<Vec<HistoryRow>> {
    read_versioned(path, "history", HISTORY_VERSION)
}

/// One row of a comparison summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config: String,
    pub method: String,
    pub task: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: u64,
    pub seeds: usize,
    pub mean_val_cost: f64,
    /// Sample standard deviation (divisor `n − 1`); empty for a single seed.
    pub std_val_cost: Option<f64>,
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> CliResult {
    write_versioned(path, "summary", SUMMARY_VERSION, rows)
}

#[cfg(test)]
pub fn read_summary(path: &Path) -> CliResult<Vec<SummaryRow>> {
    read_versioned(path, "summary", SUMMARY_VERSION)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std_uses_n_minus_one() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, None));
    }

    #[test]
    fn summary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let rows = vec![SummaryRow {
            config: "a".into(),
            method: "symrd".into(),
            task: "tsp".into(),
            n: 5,
            k: 100,
            seeds: 1,
            mean_val_cost: 2.5,
            std_val_cost: None,
        }];
        write_summary(&p, &rows).unwrap();
        assert_eq!(read_summary(&p).unwrap(), rows);
    }

    #[test]
    fn manifest_path_appends_suffix() {
        assert_eq!(
            manifest_path_for(Path::new("/tmp/a/val.jsonl")),
            PathBuf::from("/tmp/a/val.jsonl.manifest.json")
        );
    }
}
