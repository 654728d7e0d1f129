//! Cross-method tables: top-k predictions, threshold P/N counts and
//! pairwise agreement.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::evaluation::{cohen_kappa, kappa_label, median, threshold_counts, top_k_table, PredictionSet};
use crate::output::{csv_bytes, fmt_opt};

/// Relative tolerance when comparing `y_true` from different sources.
pub const Y_TRUE_TOLERANCE: f64 = 1e-9;

/// Fails when two sets disagree on `y_true` for the same `(run, row)`.
pub fn check_consistent(sets: &[PredictionSet]) -> Result<()> {
    let mut seen: HashMap<(usize, usize), (f64, &str)> = HashMap::new();
    for set in sets {
        for (i, &row) in set.row_ids.iter().enumerate() {
            let y = set.y_true[i];
            match seen.get(&(set.run_id, row)) {
                Some(&(prev, who)) => {
                    if (prev - y).abs() > Y_TRUE_TOLERANCE * prev.abs().max(y.abs()).max(1.0) {
                        return Err(Error::Dimension(format!(
                            "run {} row {row}: y_true is {prev} in '{who}' but {y} in '{}'",
                            set.run_id, set.method_name
                        )));
                    }
                }
                None => {
                    seen.insert((set.run_id, row), (y, &set.method_name));
                }
            }
        }
    }
    Ok(())
}

fn methods_in_order(sets: &[PredictionSet]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in sets {
        if !out.contains(&s.method_name) {
            out.push(s.method_name.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnRow {
    pub method_name: String,
    pub runs: usize,
    pub p_total: usize,
    pub n_total: usize,
    pub median_p: f64,
    /// Runs with at least one prediction at or above the threshold.
    pub runs_with_p: usize,
}

/// Runs without a threshold are skipped.
pub fn pn_table(sets: &[PredictionSet], thresholds: &BTreeMap<usize, f64>) -> Result<Vec<PnRow>> {
    let mut rows = Vec::new();
    for method in methods_in_order(sets) {
        let counts: Vec<(usize, usize)> = sets
            .iter()
            .filter(|s| s.method_name == method)
            .filter_map(|s| thresholds.get(&s.run_id).map(|&t| threshold_counts(&s.y_pred, t)))
            .collect();
        if counts.is_empty() {
            continue;
        }
        let ps: Vec<f64> = counts.iter().map(|c| c.0 as f64).collect();
        rows.push(PnRow {
            method_name: method,
            runs: counts.len(),
            p_total: counts.iter().map(|c| c.0).sum(),
            n_total: counts.iter().map(|c| c.1).sum(),
            median_p: median(&ps)?,
            runs_with_p: counts.iter().filter(|c| c.0 > 0).count(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaRow {
    pub method_a: String,
    pub method_b: String,
    /// Number of `(run, row)` pairs both methods predicted.
    pub pairs: usize,
    pub kappa: f64,
    pub label: &'static str,
}

/// Agreement on `y_pred ≥ θ` pooled over every shared `(run, row)`.
pub fn kappa_table(
    sets: &[PredictionSet],
    thresholds: &BTreeMap<usize, f64>,
) -> Result<Vec<KappaRow>> {
    check_consistent(sets)?;
    let methods = methods_in_order(sets);
    let labels: Vec<BTreeMap<(usize, usize), bool>> = methods
        .iter()
        .map(|m| {
            let mut map = BTreeMap::new();
            for s in sets.iter().filter(|s| &s.method_name == m) {
                if let Some(&t) = thresholds.get(&s.run_id) {
                    for (i, &row) in s.row_ids.iter().enumerate() {
                        map.insert((s.run_id, row), s.y_pred[i] >= t);
                    }
                }
            }
            map
        })
        .collect();
    let mut rows = Vec::new();
    for a in 0..methods.len() {
        for b in a + 1..methods.len() {
            let (mut la, mut lb) = (Vec::new(), Vec::new());
            for (key, &va) in &labels[a] {
                if let Some(&vb) = labels[b].get(key) {
                    la.push(va);
                    lb.push(vb);
                }
            }
            if la.is_empty() {
                continue;
            }
            let kappa = cohen_kappa(&la, &lb)?;
            rows.push(KappaRow {
                method_a: methods[a].clone(),
                method_b: methods[b].clone(),
                pairs: la.len(),
                kappa,
                label: kappa_label(kappa),
            });
        }
    }
    Ok(rows)
}

pub fn pn_csv(rows: &[PnRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &["method", "runs", "p_total", "n_total", "median_p", "runs_with_p"],
        rows.iter().map(|r| {
            vec![
                r.method_name.clone(),
                r.runs.to_string(),
                r.p_total.to_string(),
                r.n_total.to_string(),
                r.median_p.to_string(),
                r.runs_with_p.to_string(),
            ]
        }),
    )
}

pub fn kappa_csv(rows: &[KappaRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &["method_a", "method_b", "pairs", "kappa", "agreement"],
        rows.iter().map(|r| {
            vec![
                r.method_a.clone(),
                r.method_b.clone(),
                r.pairs.to_string(),
                r.kappa.to_string(),
                r.label.to_string(),
            ]
        }),
    )
}

/// Top-k rows and summaries per method for a single run.
pub fn top_k_csv(sets: &[PredictionSet], run_id: usize, k: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut detail = Vec::new();
    let mut summary = Vec::new();
    for s in sets.iter().filter(|s| s.run_id == run_id) {
        let table = top_k_table(s, k.min(s.len()))?;
        for (rank, &(row, yt, yp)) in table.rows.iter().enumerate() {
            detail.push(vec![
                s.method_name.clone(),
                run_id.to_string(),
                (rank + 1).to_string(),
                row.to_string(),
                yt.to_string(),
                yp.to_string(),
            ]);
        }
        summary.push(vec![
            s.method_name.clone(),
            run_id.to_string(),
            table.rows.len().to_string(),
            table.mean_true.to_string(),
            table.mean_pred.to_string(),
            fmt_opt(table.mean_relative_error),
            table.rmse.to_string(),
        ]);
    }
    Ok((
        csv_bytes(&["method", "run_id", "rank", "row_id", "y_true", "y_pred"], detail)?,
        csv_bytes(
            &["method", "run_id", "k", "mean_true", "mean_pred", "mean_relative_error", "rmse"],
            summary,
        )?,
    ))
}
