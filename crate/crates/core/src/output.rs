//! Atomic file output and the prediction-file format shared with external
//! regressors.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluation::PredictionSet;

/// Writes `contents` to a temporary file next to `path`, then renames it
/// into place, so readers never observe a partially written file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Renders rows as CSV text.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const PREDICTION_HEADER: [&str; 4] = ["run_id", "row_id", "y_true", "y_pred"];

/// Serializes prediction sets in the `run_id,row_id,y_true,y_pred` format.
pub fn prediction_file_bytes(sets: &[&PredictionSet]) -> Result<Vec<u8>> {
    let rows = sets.iter().flat_map(|s| {
        (0..s.len()).map(move |i| {
            vec![
                s.run_id.to_string(),
                s.row_ids[i].to_string(),
                s.y_true[i].to_string(),
                s.y_pred[i].to_string(),
            ]
        })
    });
    csv_bytes(&PREDICTION_HEADER, rows)
}

/// Row ids, true values and predictions of one run.
type RunColumns = (Vec<usize>, Vec<f64>, Vec<f64>);

/// Reads a prediction file into one set per run, ordered by run id.
pub fn read_prediction_file(path: &Path, method: &str) -> Result<Vec<PredictionSet>> {
    let table = crate::data::read_table(path)?;
    let col = |name: &str| {
        table.column(name).ok_or_else(|| Error::Ingest {
            path: path.to_path_buf(),
            reason: format!("missing column '{name}' (expected {})", PREDICTION_HEADER.join(",")),
        })
    };
    let (run, row, yt, yp) = (col("run_id")?, col("row_id")?, col("y_true")?, col("y_pred")?);
    let as_index = |v: f64, what: &str, line: usize| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::Cell {
                path: path.to_path_buf(),
                row: line,
                column: what.to_string(),
                reason: format!("{v} is not a non-negative integer"),
            })
        }
    };
    let mut by_run: BTreeMap<usize, RunColumns> = BTreeMap::new();
    for i in 0..table.rows() {
        let line = i + 2;
        let entry = by_run.entry(as_index(run[i], "run_id", line)?).or_default();
        entry.0.push(as_index(row[i], "row_id", line)?);
        entry.1.push(yt[i]);
        entry.2.push(yp[i]);
    }
    by_run
        .into_iter()
        .map(|(run_id, (rows, t, p))| PredictionSet::new(method, run_id, 0, rows, t, p))
        .collect()
}

/// Method name for a prediction file: explicit `name=path`, else the file
/// stem without a leading `predictions_`.
pub fn split_method_spec(spec: &str) -> (String, &Path) {
    if let Some((name, path)) = spec.split_once('=') {
        if !name.is_empty() && !name.contains(std::path::MAIN_SEPARATOR) {
            return (name.to_string(), Path::new(path));
        }
    }
    let path = Path::new(spec);
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| spec.to_string());
    let name = stem.strip_prefix("predictions_").unwrap_or(&stem).to_string();
    (name, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_file_round_trip() {
        let a = PredictionSet::new("m", 0, 0, vec![4, 9], vec![1.5, 2.0], vec![1.25, 3.0]).unwrap();
        let b = PredictionSet::new("m", 2, 0, vec![1], vec![7.0], vec![6.5]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictions_m.csv");
        write_atomic(&path, &prediction_file_bytes(&[&a, &b]).unwrap()).unwrap();
        let back = read_prediction_file(&path, "m").unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn method_names() {
        assert_eq!(split_method_spec("xgb=out/p.csv").0, "xgb");
        assert_eq!(split_method_spec("out/predictions_rf.csv").0, "rf");
        assert_eq!(split_method_spec("mlp.csv").0, "mlp");
    }

    #[test]
    fn bad_run_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "run_id,row_id,y_true,y_pred\n0.5,1,2,3\n").unwrap();
        assert!(matches!(read_prediction_file(&path, "p"), Err(Error::Cell { .. })));
        std::fs::write(&path, "run,row_id,y_true,y_pred\n0,1,2,3\n").unwrap();
        assert!(matches!(read_prediction_file(&path, "p"), Err(Error::Ingest { .. })));
    }
}
