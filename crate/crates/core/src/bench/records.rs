//! Per-iteration metrics rows and their CSV form.

use std::path::{Path, PathBuf};

use thiserror::Error;

use super::config::Scheme;
use super::fsutil::write_atomic;

pub const CSV_HEADER: &str = "run_id,seed,scheme,iteration,eta,reward,throughput_mbps,power_w,violations";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub scheme: Scheme,
    pub iteration: usize,
    pub eta: f64,
    pub reward: f64,
    pub throughput_mbps: f64,
    pub power_w: f64,
    pub violations: usize,
}

#[derive(Debug, Error)]
pub enum RecordsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: header does not match `{CSV_HEADER}`")]
    Header { path: PathBuf },
    #[error("{path}, row {row}: {reason}")]
    Parse {
        path: PathBuf,
        row: usize,
        reason: String,
    },
    #[error("no records")]
    Empty,
}

/// Fixed 12-significant-digit scientific notation.
pub fn format_float(x: f64) -> String {
    format!("{x:.11e}")
}

/// Rows ordered by seed, then iteration; ties keep their input order.
pub fn sorted(records: &[MetricsRecord]) -> Vec<&MetricsRecord> {
    let mut rows: Vec<&MetricsRecord> = records.iter().collect();
    rows.sort_by_key(|r| (r.seed, r.iteration));
    rows
}

pub fn to_csv_string(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in sorted(records) {
        let fields = [
            r.run_id.clone(),
            r.seed.to_string(),
            r.scheme.to_string(),
            r.iteration.to_string(),
            format_float(r.eta),
            format_float(r.reward),
            format_float(r.throughput_mbps),
            format_float(r.power_w),
            r.violations.to_string(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(records: &[MetricsRecord], path: &Path) -> Result<(), RecordsError> {
    write_atomic(path, to_csv_string(records).as_bytes()).map_err(|source| RecordsError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>, RecordsError> {
    let csv_err = |source| RecordsError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(RecordsError::Header {
            path: path.to_owned(),
        });
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let bad = |reason: String| RecordsError::Parse {
            path: path.to_owned(),
            row: i + 1,
            reason,
        };
        let field = |k: usize| row.get(k).ok_or_else(|| bad(format!("missing column {k}")));
        fn num<T: std::str::FromStr>(s: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            s.parse::<T>().map_err(|e| format!("`{s}`: {e}"))
        }
        out.push(MetricsRecord {
            run_id: field(0)?.to_owned(),
            seed: num(field(1)?).map_err(bad)?,
            scheme: field(2)?.parse().map_err(bad)?,
            iteration: num(field(3)?).map_err(bad)?,
            eta: num(field(4)?).map_err(bad)?,
            reward: num(field(5)?).map_err(bad)?,
            throughput_mbps: num(field(6)?).map_err(bad)?,
            power_w: num(field(7)?).map_err(bad)?,
            violations: num(field(8)?).map_err(bad)?,
        });
    }
    Ok(out)
}
