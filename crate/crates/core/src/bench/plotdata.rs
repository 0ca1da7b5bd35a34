//! Efficiency-versus-iteration series for external plotting tools.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::fsutil::write_atomic;
use super::records::{format_float, MetricsRecord, RecordsError};

pub const INDEX_FILE: &str = "index.tsv";

pub fn series_file_name(scheme: &str, seed: u64) -> String {
    format!("{scheme}_seed{seed}.dat")
}

/// Writes one `iteration eta` file per (scheme, seed) plus an index listing
/// every series. Returns the written series paths in index order.
pub fn emit_plot_data(records: &[MetricsRecord], dir: &Path) -> Result<Vec<PathBuf>, RecordsError> {
    if records.is_empty() {
        return Err(RecordsError::Empty);
    }
    let io_err = |path: &Path| {
        let path = path.to_owned();
        move |source| RecordsError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;

    let mut series: BTreeMap<(&str, u64), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        series.entry((r.scheme.as_str(), r.seed)).or_default().push(r);
    }

    let mut index = String::from("scheme\tseed\tpoints\tfile\n");
    let mut written = Vec::with_capacity(series.len());
    for ((scheme, seed), mut rows) in series {
        rows.sort_by_key(|r| r.iteration);
        let mut body = String::new();
        for r in &rows {
            let _ = writeln!(body, "{}\t{}", r.iteration, format_float(r.eta));
        }
        let name = series_file_name(scheme, seed);
        let path = dir.join(&name);
        write_atomic(&path, body.as_bytes()).map_err(io_err(&path))?;
        let _ = writeln!(index, "{scheme}\t{seed}\t{}\t{name}", rows.len());
        written.push(path);
    }
    let index_path = dir.join(INDEX_FILE);
    write_atomic(&index_path, index.as_bytes()).map_err(io_err(&index_path))?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::config::Scheme;

    fn rec(scheme: Scheme, seed: u64, iteration: usize) -> MetricsRecord {
        MetricsRecord {
            run_id: format!("{scheme}-s{seed}"),
            seed,
            scheme,
            iteration,
            eta: 1000.0 + iteration as f64,
            reward: 1.0,
            throughput_mbps: 1.0,
            power_w: 1.0,
            violations: 0,
        }
    }

    #[test]
    fn static_scheme_gives_one_line() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_plot_data(&[rec(Scheme::MaxPower, 3, 0)], dir.path()).unwrap();
        assert_eq!(paths.len(), 1);
        let body = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(body, "0\t1.00000000000e3\n");
    }

    #[test]
    fn series_lengths_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs: Vec<_> = (0..7).map(|i| rec(Scheme::Dpt, 1, i)).collect();
        recs.extend((0..4).rev().map(|i| rec(Scheme::Dpt, 2, i)));
        let paths = emit_plot_data(&recs, dir.path()).unwrap();
        let lens: Vec<usize> = paths
            .iter()
            .map(|p| std::fs::read_to_string(p).unwrap().lines().count())
            .collect();
        assert_eq!(lens, vec![7, 4]);
        let first: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
        let index = std::fs::read(dir.path().join(INDEX_FILE)).unwrap();
        emit_plot_data(&recs, dir.path()).unwrap();
        let second: Vec<Vec<u8>> = paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
        assert_eq!(index, std::fs::read(dir.path().join(INDEX_FILE)).unwrap());
        assert!(emit_plot_data(&[], dir.path()).is_err());
    }
}
