//! Tabular datasets: CSV ingestion, the two split protocols, min-max
//! scaling and the synthetic tuning functions.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)`. Row
//! permutations use the Fisher-Yates shuffle of `rand::seq::SliceRandom`
//! and noise uses `rand_distr::Normal`, so a given seed reproduces the
//! same split or dataset on every platform.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TARGET: &str = "critical_temp";

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub target: DVector<f64>,
    pub feature_names: Vec<String>,
    pub target_name: String,
}

impl Dataset {
    pub fn new(
        features: DMatrix<f64>,
        target: DVector<f64>,
        feature_names: Vec<String>,
        target_name: impl Into<String>,
    ) -> Result<Self> {
        if features.nrows() != target.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} targets",
                features.nrows(),
                target.len()
            )));
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::Dimension(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        Ok(Dataset {
            features,
            target,
            feature_names,
            target_name: target_name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            target: self.target.select_rows(rows),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.feature_names.clone();
        header.push(self.target_name.clone());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.target[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A table of named numeric columns, as read from disk.
#[derive(Debug, Clone)]
pub struct Table {
    pub names: Vec<String>,
    /// Column-major values.
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }
}

/// Reads a headed CSV whose cells are all finite reals.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Ingest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if names.is_empty() {
        return Err(Error::Ingest {
            path: path.to_path_buf(),
            reason: "missing header row".into(),
        });
    }
    let mut columns = vec![Vec::new(); names.len()];
    for (r, record) in reader.records().enumerate() {
        // file line number: header is line 1
        let line = r + 2;
        let record = record.map_err(|e| Error::Ingest {
            path: path.to_path_buf(),
            reason: format!("line {line}: {e}"),
        })?;
        if record.len() != names.len() {
            return Err(Error::Ingest {
                path: path.to_path_buf(),
                reason: format!(
                    "line {line}: expected {} fields, found {}",
                    names.len(),
                    record.len()
                ),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            let cell_error = |reason: String| Error::Cell {
                path: path.to_path_buf(),
                row: line,
                column: names[c].clone(),
                reason,
            };
            if cell.is_empty() {
                return Err(cell_error("missing value".into()));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| cell_error(format!("'{cell}' is not a number")))?;
            if !v.is_finite() {
                return Err(cell_error(format!("'{cell}' is not finite")));
            }
            columns[c].push(v);
        }
    }
    Ok(Table { names, columns })
}

pub fn load_csv(path: &Path, target_column: &str) -> Result<Dataset> {
    let table = read_table(path)?;
    let t = table
        .names
        .iter()
        .position(|n| n == target_column)
        .ok_or_else(|| Error::Ingest {
            path: path.to_path_buf(),
            reason: format!("target column '{target_column}' not found"),
        })?;
    let n = table.rows();
    let feature_idx: Vec<usize> = (0..table.names.len()).filter(|&c| c != t).collect();
    let features = DMatrix::from_fn(n, feature_idx.len(), |i, j| table.columns[feature_idx[j]][i]);
    let target = DVector::from_column_slice(&table.columns[t]);
    let names = feature_idx.iter().map(|&c| table.names[c].clone()).collect();
    Dataset::new(features, target, names, target_column)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    OutOfSample,
    OutOfDomain,
}

#[derive(Debug, Clone)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
    /// Original row indices of `train` and `test`.
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub protocol: Protocol,
    pub seed: u64,
    /// Out-of-domain only: smallest target in the test pool.
    pub threshold: Option<f64>,
}

/// Random 2/3 – 1/3 partition.
pub fn split_out_of_sample(ds: &Dataset, seed: u64) -> Result<SplitPair> {
    let n = ds.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("need at least 3 rows to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(seed));
    let cut = 2 * n / 3;
    let (train_rows, test_rows) = (order[..cut].to_vec(), order[cut..].to_vec());
    Ok(SplitPair {
        train: ds.select_rows(&train_rows),
        test: ds.select_rows(&test_rows),
        train_rows,
        test_rows,
        protocol: Protocol::OutOfSample,
        seed,
        threshold: None,
    })
}

/// Train on the low end of the target range, test on the high end.
///
/// Rows are ordered by target (then row index) and cut after
/// `⌊quantile·n⌋` rows. Rows tied with the first test-pool target are moved
/// into the test pool so that every training target is strictly below the
/// threshold. A seeded random `⌊len/2⌋`-sized subset (for `subsample = 0.5`)
/// of each pool is returned.
pub fn split_out_of_domain(
    ds: &Dataset,
    quantile: f64,
    seed: u64,
    subsample: f64,
) -> Result<SplitPair> {
    let n = ds.len();
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::Config(format!("quantile must lie in (0, 1), got {quantile}")));
    }
    if !(subsample > 0.0 && subsample <= 1.0) {
        return Err(Error::Config(format!("subsample must lie in (0, 1], got {subsample}")));
    }
    if n < 2 || ds.target.min() == ds.target.max() {
        return Err(Error::InsufficientData(
            "out-of-domain split needs at least two distinct target values".into(),
        ));
    }
    let y = &ds.target;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));

    let mut cut = ((quantile * n as f64).floor() as usize).clamp(1, n - 1);
    let threshold_value = y[order[cut]];
    while cut > 0 && y[order[cut - 1]] == threshold_value {
        cut -= 1;
    }
    if cut == 0 {
        return Err(Error::InsufficientData(format!(
            "no target lies below the {quantile} quantile value {threshold_value}"
        )));
    }

    let mut rng = seeded_rng(seed);
    let mut train_pool = order[..cut].to_vec();
    let mut test_pool = order[cut..].to_vec();
    train_pool.shuffle(&mut rng);
    test_pool.shuffle(&mut rng);
    let take = |len: usize| (((len as f64) * subsample).floor() as usize).max(1);
    train_pool.truncate(take(cut));
    test_pool.truncate(take(n - cut));

    Ok(SplitPair {
        train: ds.select_rows(&train_pool),
        test: ds.select_rows(&test_pool),
        train_rows: train_pool,
        test_rows: test_pool,
        protocol: Protocol::OutOfDomain,
        seed,
        threshold: Some(threshold_value),
    })
}

/// Per-column `(min, max)` of the training features.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMax {
    pub bounds: Vec<(f64, f64)>,
}

pub fn minmax_fit(train: &Dataset) -> MinMax {
    MinMax {
        bounds: train
            .features
            .column_iter()
            .map(|c| (c.min(), c.max()))
            .collect(),
    }
}

/// `(x − min) / (max − min)` without clamping; constant columns map to 0.
pub fn minmax_apply(params: &MinMax, ds: &Dataset) -> Result<Dataset> {
    if params.bounds.len() != ds.features.ncols() {
        return Err(Error::Dimension(format!(
            "scaler fitted on {} columns, dataset has {}",
            params.bounds.len(),
            ds.features.ncols()
        )));
    }
    let mut out = ds.clone();
    for (j, mut col) in out.features.column_iter_mut().enumerate() {
        let (lo, hi) = params.bounds[j];
        let width = hi - lo;
        for v in col.iter_mut() {
            *v = if width > 0.0 { (*v - lo) / width } else { 0.0 };
        }
    }
    Ok(out)
}

/// Evenly spaced points over `[lo, hi]`.
fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn synthetic(
    n: usize,
    range: (f64, f64),
    noise_sd: f64,
    seed: u64,
    f: impl Fn(f64) -> f64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    if !(range.0 <= range.1) || !range.0.is_finite() || !range.1.is_finite() {
        return Err(Error::Config(format!("invalid range [{}, {}]", range.0, range.1)));
    }
    let noise = Normal::new(0.0, noise_sd)
        .map_err(|e| Error::Config(format!("noise standard deviation {noise_sd}: {e}")))?;
    let mut rng = seeded_rng(seed);
    let xs = grid(n, range.0, range.1);
    let ys: Vec<f64> = xs.iter().map(|&x| f(x) + noise.sample(&mut rng)).collect();
    Dataset::new(
        DMatrix::from_column_slice(n, 1, &xs),
        DVector::from_vec(ys),
        vec!["x".into()],
        "y",
    )
}

pub const GAMMA_RANGE: (f64, f64) = (0.5, 6.0);
pub const GAMMA_NOISE_SD: f64 = 1.0;
pub const SINC_RANGE: (f64, f64) = (-10.0, 10.0);
pub const SINC_NOISE_SD: f64 = 0.05;

/// Noisy samples of the gamma function on a uniform grid.
pub fn gen_gamma(n: usize, range: (f64, f64), noise_sd: f64, seed: u64) -> Result<Dataset> {
    // poles at 0, -1, -2, ...
    let k = range.0.ceil();
    if k <= 0.0 && k <= range.1 {
        return Err(Error::Config(format!(
            "range [{}, {}] contains a pole of the gamma function at {k}",
            range.0, range.1
        )));
    }
    synthetic(n, range, noise_sd, seed, statrs::function::gamma::gamma)
}

pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Noisy samples of `sin(x)/x` on a uniform grid.
pub fn gen_sinc(n: usize, range: (f64, f64), noise_sd: f64, seed: u64) -> Result<Dataset> {
    synthetic(n, range, noise_sd, seed, sinc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::collections::HashSet;

    fn toy(n: usize) -> Dataset {
        let x = DMatrix::from_fn(n, 2, |i, j| (i * 10 + j) as f64);
        let y = DVector::from_fn(n, |i, _| (i + 1) as f64);
        Dataset::new(x, y, vec!["a".into(), "b".into()], "y").unwrap()
    }

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_toy_file_in_order() {
        let f = write_tmp("a,critical_temp,b\n1,10,2\n3,20,4\n5,30,6\n");
        let ds = load_csv(f.path(), "critical_temp").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.feature_names, vec!["a", "b"]);
        assert_eq!(ds.features.row(1).iter().copied().collect::<Vec<_>>(), vec![3.0, 4.0]);
        assert_eq!(ds.target.as_slice(), &[10.0, 20.0, 30.0]);
    }

    #[test]
    fn blank_cell_names_location() {
        let f = write_tmp("a,critical_temp\n1,10\n,20\n");
        match load_csv(f.path(), "critical_temp") {
            Err(Error::Cell { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("a,critical_temp\nfoo,10\n");
        assert!(matches!(load_csv(f.path(), "critical_temp"), Err(Error::Cell { .. })));
        let f = write_tmp("a,b\n1,2\n");
        assert!(matches!(load_csv(f.path(), "critical_temp"), Err(Error::Ingest { .. })));
    }

    #[test]
    fn out_of_sample_sizes_and_determinism() {
        let ds = toy(9);
        let s = split_out_of_sample(&ds, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (6, 3));
        let again = split_out_of_sample(&ds, 1).unwrap();
        assert_eq!(s.train_rows, again.train_rows);
        let mut all: Vec<usize> = s.train_rows.iter().chain(&s.test_rows).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..9).collect::<Vec<_>>());
        assert_eq!(2 * 21263 / 3, 14175);
        assert!(split_out_of_sample(&toy(2), 1).is_err());
    }

    #[test]
    fn out_of_domain_pools() {
        let ds = toy(10);
        let s = split_out_of_domain(&ds, 0.9, 3, 1.0).unwrap();
        assert_eq!(s.threshold, Some(10.0));
        assert_eq!(s.test_rows, vec![9]);
        let mut train = s.train_rows.clone();
        train.sort_unstable();
        assert_eq!(train, (0..9).collect::<Vec<_>>());

        let half = split_out_of_domain(&ds, 0.9, 3, 0.5).unwrap();
        assert_eq!(half.train.len(), 4);
        assert_eq!(half.test.len(), 1);
        let again = split_out_of_domain(&ds, 0.9, 3, 0.5).unwrap();
        assert_eq!(half.train_rows, again.train_rows);
    }

    #[test]
    fn out_of_domain_ties_go_to_test() {
        let x = DMatrix::from_fn(6, 1, |i, _| i as f64);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 3.0, 3.0, 4.0]);
        let ds = Dataset::new(x, y, vec!["x".into()], "y").unwrap();
        let s = split_out_of_domain(&ds, 0.5, 0, 1.0).unwrap();
        assert_eq!(s.threshold, Some(3.0));
        assert!(s.train.target.max() < 3.0);
        assert_eq!(s.test.len(), 4);

        let flat = Dataset::new(
            DMatrix::zeros(4, 1),
            DVector::from_element(4, 2.0),
            vec!["x".into()],
            "y",
        )
        .unwrap();
        assert!(split_out_of_domain(&flat, 0.9, 0, 0.5).is_err());
    }

    #[test]
    fn out_of_domain_separation_random() {
        let mut rng = seeded_rng(77);
        for seed in 0..50 {
            let n = 20 + seed as usize;
            let y = DVector::from_fn(n, |_, _| {
                (rand::Rng::random_range(&mut rng, 0..15)) as f64
            });
            let ds = Dataset::new(DMatrix::zeros(n, 1), y, vec!["x".into()], "y").unwrap();
            let Ok(s) = split_out_of_domain(&ds, 0.9, seed, 0.5) else { continue };
            let t = s.threshold.unwrap();
            assert!(s.train.target.max() < t);
            assert!(s.test.target.min() >= t);
            let a: HashSet<_> = s.train_rows.iter().collect();
            assert!(s.test_rows.iter().all(|r| !a.contains(r)));
        }
    }

    #[test]
    fn minmax_examples() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 7.0, 5.0, 7.0, 10.0, 7.0]);
        let train = Dataset::new(x, DVector::zeros(3), vec!["a".into(), "c".into()], "y").unwrap();
        let p = minmax_fit(&train);
        let scaled = minmax_apply(&p, &train).unwrap();
        assert_eq!(scaled.features[(1, 0)], 0.5);
        assert!(scaled.features.column(1).iter().all(|&v| v == 0.0));

        let test = Dataset::new(
            DMatrix::from_row_slice(1, 2, &[12.0, 9.0]),
            DVector::zeros(1),
            vec!["a".into(), "c".into()],
            "y",
        )
        .unwrap();
        let scaled = minmax_apply(&p, &test).unwrap();
        assert_abs_diff_eq!(scaled.features[(0, 0)], 1.2, epsilon = 1e-15);
    }

    #[test]
    fn generators() {
        let s = gen_sinc(101, (-5.0, 5.0), 0.0, 1).unwrap();
        assert_eq!(s.len(), 101);
        assert_eq!(s.features[(50, 0)], 0.0);
        assert_eq!(s.target[50], 1.0);

        let g = gen_gamma(5, (2.0, 6.0), 0.0, 1).unwrap();
        assert_abs_diff_eq!(g.target[2], 6.0, epsilon = 1e-10);

        let a = gen_gamma(50, GAMMA_RANGE, GAMMA_NOISE_SD, 9).unwrap();
        let b = gen_gamma(50, GAMMA_RANGE, GAMMA_NOISE_SD, 9).unwrap();
        assert_eq!(a, b);
        let c = gen_gamma(50, GAMMA_RANGE, GAMMA_NOISE_SD, 10).unwrap();
        assert_ne!(a, c);

        assert!(gen_gamma(10, (-0.5, 2.0), 1.0, 0).is_err());
        assert!(gen_gamma(10, (-2.5, -1.5), 1.0, 0).is_err());
        assert!(gen_gamma(10, (-1.7, -1.2), 1.0, 0).is_ok());
        assert!(gen_gamma(10, (0.0, 1.0), 1.0, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ds = gen_gamma(20, GAMMA_RANGE, 1.0, 4).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let f = write_tmp(std::str::from_utf8(&buf).unwrap());
        let back = load_csv(f.path(), "y").unwrap();
        assert_eq!(back, ds);
    }
}
