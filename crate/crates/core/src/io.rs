//! IV-log CSV ingestion and table/JSON emission.
//!
//! Numbers are written with 17 significant digits so every value
//! round-trips exactly.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::workflow::{DatasetMeta, DischargeDataset};

pub const COL_TIME: &str = "t_s";
pub const COL_CURRENT: &str = "current_a";
pub const COL_VOLTAGE: &str = "voltage_v";

/// Full round-trip precision.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Loads an IV log with header `t_s,current_a,voltage_v` (any column order,
/// extra columns ignored).
pub fn load_dataset(path: &Path, noise_variance: f64, meta: DatasetMeta) -> Result<DischargeDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let display = path.to_path_buf();
    let headers = reader.headers().map_err(|e| Error::Parse {
        path: display.clone(),
        line: 1,
        message: e.to_string(),
    })?;
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingHeader {
                path: display.clone(),
                column: name.to_string(),
            })
    };
    let cols = [column(COL_TIME)?, column(COL_CURRENT)?, column(COL_VOLTAGE)?];

    let mut values: [Vec<f64>; 3] = Default::default();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: display.clone(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        for (dst, &c) in values.iter_mut().zip(&cols) {
            let field = record.get(c).unwrap_or("");
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: display.clone(),
                line,
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: display.clone(),
                    line,
                    message: format!("non-finite value `{field}`"),
                });
            }
            dst.push(v);
        }
    }
    let [times, currents, voltages] = values;
    DischargeDataset::new(times, currents, voltages, noise_variance, meta)
}

pub fn save_dataset(path: &Path, dataset: &DischargeDataset) -> Result<()> {
    let columns = [
        (COL_TIME, dataset.times.as_slice()),
        (COL_CURRENT, dataset.currents.as_slice()),
        (COL_VOLTAGE, dataset.voltages.as_slice()),
    ];
    write_columns(path, &columns)
}

/// Writes equal-length numeric columns.
pub fn write_columns(path: &Path, columns: &[(&str, &[f64])]) -> Result<()> {
    let rows = columns.first().map_or(0, |c| c.1.len());
    if columns.iter().any(|c| c.1.len() != rows) {
        return Err(Error::InvalidParameter("columns differ in length".into()));
    }
    let header: Vec<String> = columns.iter().map(|c| c.0.to_string()).collect();
    let body = (0..rows).map(|r| columns.iter().map(|c| fmt_f64(c.1[r])).collect());
    write_table(path, &header, body)
}

/// Writes a CSV with LF line endings.
pub fn write_table<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    let to_err = |e: csv::Error| Error::Config(format!("writing {}: {e}", path.display()));
    writer.write_record(header).map_err(to_err)?;
    for row in rows {
        writer.write_record(&row).map_err(to_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "t_s,current_a,voltage_v\n0,-3,4.1\n1,-3,4.0\n2,-3,3.9\n");
        let ds = load_dataset(&p, 2.5e-5, DatasetMeta::default()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.voltages, vec![4.1, 4.0, 3.9]);
    }

    #[test]
    fn missing_voltage_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "t_s,current_a\n0,-3\n");
        match load_dataset(&p, 2.5e-5, DatasetMeta::default()) {
            Err(Error::MissingHeader { column, .. }) => assert_eq!(column, "voltage_v"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "t_s,current_a,voltage_v\n0,-3,4.1\n1,-3,abc\n");
        match load_dataset(&p, 2.5e-5, DatasetMeta::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn time_must_increase() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "t_s,current_a,voltage_v\n0,-3,4.1\n1,-3,4.0\n1,-3,3.9\n");
        assert!(matches!(
            load_dataset(&p, 2.5e-5, DatasetMeta::default()),
            Err(Error::NonMonotoneTime { row: 2, .. })
        ));
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let times: Vec<f64> = (0..50).map(|k| k as f64 * 0.1).collect();
        let currents: Vec<f64> = times.iter().map(|t| -1.0 / (1.0 + t)).collect();
        let voltages: Vec<f64> = times.iter().map(|t| 4.0 - t.sqrt() / 7.0).collect();
        let ds = DischargeDataset::new(times, currents, voltages, 2.5e-5, DatasetMeta::default()).unwrap();
        let p = dir.path().join("sub/rt.csv");
        save_dataset(&p, &ds).unwrap();
        let back = load_dataset(&p, 2.5e-5, DatasetMeta::default()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn formatting_has_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
