//! On-disk formats of a run directory: field snapshots, the diagnostics CSV
//! and the append-only JSON-lines manifest.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fpl_core::dynamics::DiagnosticsSink;
use fpl_core::lattice::{GridSpec, VelocityField};
use fpl_core::Record;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"FPLS";
pub const SNAPSHOT_VERSION: u32 = 1;
pub const SNAPSHOT_HEADER_LEN: usize = 64;
pub const MANIFEST_NAME: &str = "manifest.jsonl";
pub const DIAGNOSTICS_NAME: &str = "diagnostics.csv";

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn payload_checksum(payload: &[u8]) -> u64 {
    let d = Sha256::digest(payload);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// A field at one instant, as stored in an `FPLS` file.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub step: u64,
    pub field: VelocityField<f64>,
}

impl Snapshot {
    /// Header layout (little endian): magic, version u32, N u32, reserved
    /// u32, L f64, t f64, step u64, payload checksum u64, value count u64,
    /// zero padding to 64 bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let grid = self.field.grid();
        let mut payload = Vec::with_capacity(8 * grid.len());
        for x in self.field.values() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        let mut out = Vec::with_capacity(SNAPSHOT_HEADER_LEN + payload.len());
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(grid.n_modes() as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        out.extend_from_slice(&grid.half_length().to_le_bytes());
        out.extend_from_slice(&self.t.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&payload_checksum(&payload).to_le_bytes());
        out.extend_from_slice(&(grid.len() as u64).to_le_bytes());
        out.resize(SNAPSHOT_HEADER_LEN, 0);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < SNAPSHOT_HEADER_LEN {
            return Err(format!("truncated header ({} bytes)", bytes.len()));
        }
        if &bytes[..4] != SNAPSHOT_MAGIC {
            return Err("not a snapshot file".into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if u32_at(4) != SNAPSHOT_VERSION {
            return Err(format!("unsupported snapshot version {}", u32_at(4)));
        }
        let n = u32_at(8) as usize;
        let half_length = f64_at(16);
        let t = f64_at(24);
        let step = u64_at(32);
        let stored = u64_at(40);
        let count = u64_at(48) as usize;
        if count != n * n * n {
            return Err(format!("value count {count} does not match N = {n}"));
        }
        let payload = &bytes[SNAPSHOT_HEADER_LEN..];
        if payload.len() != 8 * count {
            return Err(format!("payload has {} bytes, {} expected", payload.len(), 8 * count));
        }
        if payload_checksum(payload) != stored {
            return Err("payload checksum mismatch".into());
        }
        let grid = GridSpec::new(n, half_length).map_err(|e| e.to_string())?;
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let field = VelocityField::new(grid, values).map_err(|e| e.to_string())?;
        Ok(Self { t, step, field })
    }

    pub fn save(&self, path: &Path) -> Result<String, CliError> {
        let bytes = self.to_bytes();
        fs::write(path, &bytes).map_err(|e| io_err(path, e))?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

/// A file written by a command, with its content hash. The path is relative
/// to the run directory for files inside it and absolute otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

impl Artifact {
    pub fn of_file(run_dir: &Path, path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        let shown = match path.strip_prefix(run_dir) {
            Ok(rel) => rel.to_path_buf(),
            Err(_) => fs::canonicalize(path).map_err(|e| io_err(path, e))?,
        };
        Ok(Self {
            path: shown.display().to_string(),
            sha256: sha256_hex(&bytes),
        })
    }

    pub fn resolve(&self, run_dir: &Path) -> PathBuf {
        run_dir.join(&self.path)
    }
}

/// One line of `manifest.jsonl`. A command appends a `start` entry before
/// doing any work and an `end` entry when it finishes, whatever the outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum ManifestEntry {
    Start {
        command: String,
        code_version: String,
        started_unix: f64,
        config: serde_json::Value,
    },
    End {
        command: String,
        finished_unix: f64,
        exit_status: i32,
        message: Option<String>,
        table_checksum: Option<String>,
        halt_time: Option<f64>,
        max_drift: Option<f64>,
        artifacts: Vec<Artifact>,
    },
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Appends one entry to the manifest of `dir`, creating it if needed.
pub fn append_manifest(dir: &Path, entry: &ManifestEntry) -> Result<(), CliError> {
    let path = dir.join(MANIFEST_NAME);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| io_err(&path, e))?;
    let line = serde_json::to_string(entry).map_err(|e| io_err(&path, e))?;
    writeln!(f, "{line}").map_err(|e| io_err(&path, e))?;
    f.sync_data().map_err(|e| io_err(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| io_err(&path, e)))
        .collect()
}

/// Recomputes the hash of every artifact recorded in the manifest of `dir`
/// and returns the paths whose content no longer matches.
pub fn tampered_artifacts(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut bad = Vec::new();
    for entry in read_manifest(dir)? {
        if let ManifestEntry::End { artifacts, .. } = entry {
            for a in artifacts {
                match fs::read(a.resolve(dir)) {
                    Ok(bytes) if sha256_hex(&bytes) == a.sha256 => {}
                    _ => bad.push(a.path),
                }
            }
        }
    }
    Ok(bad)
}

/// Diagnostics sink writing one CSV row per record, flushed immediately.
pub struct CsvSink {
    writer: csv::Writer<BufWriter<File>>,
    pub rows: usize,
    pub first: Option<Record>,
    pub last: Option<Record>,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(BufWriter::new(file));
        writer.write_record(Record::FIELDS).map_err(|e| io_err(path, e))?;
        writer.flush().map_err(|e| io_err(path, e))?;
        Ok(Self {
            writer,
            rows: 0,
            first: None,
            last: None,
        })
    }
}

/// Formats a record row; integer columns are written without a fraction.
pub fn format_row(record: &Record) -> Vec<String> {
    let row = record.to_row();
    row.iter()
        .enumerate()
        .map(|(i, x)| match Record::FIELDS[i] {
            "step" | "rho_nonpositive" => format!("{}", *x as u64),
            _ => format!("{x:e}"),
        })
        .collect()
}

impl DiagnosticsSink<f64> for CsvSink {
    fn emit(&mut self, record: &Record) -> Result<(), String> {
        self.writer.write_record(format_row(record)).map_err(|e| e.to_string())?;
        self.writer.flush().map_err(|e| e.to_string())?;
        self.rows += 1;
        if self.first.is_none() {
            self.first = Some(*record);
        }
        self.last = Some(*record);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let grid = GridSpec::<f64>::new(8, 2.5).unwrap();
        let field = VelocityField::from_fn(grid, |v| (v[0] - 0.3 * v[1]).sin() / 7.0 + v[2]);
        let snap = Snapshot { t: 0.125, step: 42, field };
        let bytes = snap.to_bytes();
        assert_eq!(bytes.len(), SNAPSHOT_HEADER_LEN + 8 * 512);
        let back = Snapshot::from_bytes(&bytes).unwrap();
        assert_eq!(back.t.to_bits(), snap.t.to_bits());
        assert_eq!(back.step, 42);
        for (a, b) in back.field.values().iter().zip(snap.field.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn damaged_snapshot_is_rejected() {
        let grid = GridSpec::<f64>::new(8, 1.0).unwrap();
        let snap = Snapshot {
            t: 0.0,
            step: 0,
            field: VelocityField::from_fn(grid, |v| v[0]),
        };
        let mut bytes = snap.to_bytes();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert!(Snapshot::from_bytes(&bytes).unwrap_err().contains("checksum"));
        assert!(Snapshot::from_bytes(&bytes[..100]).is_err());
        assert!(Snapshot::from_bytes(&[0u8; 80]).is_err());
    }

    #[test]
    fn manifest_lines_round_trip() {
        let entry = ManifestEntry::End {
            command: "run".into(),
            finished_unix: 1.5,
            exit_status: 4,
            message: Some("halted".into()),
            table_checksum: Some("00ff".into()),
            halt_time: Some(0.25),
            max_drift: None,
            artifacts: vec![],
        };
        let line = serde_json::to_string(&entry).unwrap();
        assert!(line.contains("\"event\":\"end\""));
        let back: ManifestEntry = serde_json::from_str(&line).unwrap();
        assert_eq!(back, entry);
    }
}
