//! Error metrics, threshold counts, agreement statistics and cross-method
//! summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let sse: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).powi(2)).sum();
    Ok((sse / y_true.len() as f64).sqrt())
}

/// Mean of `|ŷ − y| / |y|`.
pub fn mean_relative_error(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let mut acc = 0.0;
    for (i, (t, p)) in y_true.iter().zip(y_pred).enumerate() {
        if *t == 0.0 {
            return Err(Error::ZeroTarget(i));
        }
        acc += (p - t).abs() / t.abs();
    }
    Ok(acc / y_true.len() as f64)
}

/// `(#{ŷ ≥ θ}, #{ŷ < θ})`.
pub fn threshold_counts(y_pred: &[f64], threshold: f64) -> (usize, usize) {
    let p = y_pred.iter().filter(|&&v| v >= threshold).count();
    (p, y_pred.len() - p)
}

/// Number of predictions strictly above the largest training target.
pub fn count_beyond_training_max(y_pred: &[f64], training_target_max: f64) -> usize {
    y_pred.iter().filter(|&&v| v > training_target_max).count()
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::Empty);
    }
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "{} true values but {} predictions",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Cohen's kappa between two binary labelings (`true` = positive).
///
/// When both raters assign one identical constant label the chance
/// agreement is 1 and kappa is taken to be 1.
pub fn cohen_kappa(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Empty);
    }
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} labels", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let pa = a.iter().filter(|&&v| v).count() as f64 / n;
    let pb = b.iter().filter(|&&v| v).count() as f64 / n;
    let p_o = agree / n;
    let p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
    if p_e == 1.0 {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Conventional verbal band for a kappa value.
pub fn kappa_label(kappa: f64) -> &'static str {
    if kappa < 0.0 {
        "none"
    } else if kappa <= 0.20 {
        "none to slight"
    } else if kappa <= 0.40 {
        "fair"
    } else if kappa <= 0.60 {
        "moderate"
    } else if kappa <= 0.80 {
        "substantial"
    } else {
        "almost perfect"
    }
}

/// One method's predictions on one test split.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub method_name: String,
    pub run_id: usize,
    pub seed: u64,
    pub row_ids: Vec<usize>,
    pub y_true: Vec<f64>,
    pub y_pred: Vec<f64>,
}

impl PredictionSet {
    pub fn new(
        method_name: impl Into<String>,
        run_id: usize,
        seed: u64,
        row_ids: Vec<usize>,
        y_true: Vec<f64>,
        y_pred: Vec<f64>,
    ) -> Result<Self> {
        if y_true.len() != y_pred.len() || row_ids.len() != y_true.len() {
            return Err(Error::Dimension(format!(
                "prediction set lengths differ: {} rows, {} true, {} predicted",
                row_ids.len(),
                y_true.len(),
                y_pred.len()
            )));
        }
        if y_true.iter().chain(&y_pred).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("prediction set contains non-finite values".into()));
        }
        Ok(PredictionSet {
            method_name: method_name.into(),
            run_id,
            seed,
            row_ids,
            y_true,
            y_pred,
        })
    }

    pub fn len(&self) -> usize {
        self.y_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_true.is_empty()
    }
}

/// Metrics of one method on one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method_name: String,
    pub run_id: usize,
    pub seed: u64,
    pub rmse: f64,
    /// Undefined when a true value is zero.
    pub mean_relative_error: Option<f64>,
    /// Only present when the split defines a threshold.
    pub p_count: Option<usize>,
    pub n_count: Option<usize>,
    pub beyond_training_max: Option<usize>,
    #[serde(skip)]
    pub fit_seconds: f64,
}

impl RunReport {
    pub fn from_predictions(
        set: &PredictionSet,
        threshold: Option<f64>,
        training_target_max: Option<f64>,
        fit_seconds: f64,
    ) -> Result<Self> {
        let counts = threshold.map(|t| threshold_counts(&set.y_pred, t));
        Ok(RunReport {
            method_name: set.method_name.clone(),
            run_id: set.run_id,
            seed: set.seed,
            rmse: rmse(&set.y_true, &set.y_pred)?,
            mean_relative_error: mean_relative_error(&set.y_true, &set.y_pred).ok(),
            p_count: counts.map(|c| c.0),
            n_count: counts.map(|c| c.1),
            beyond_training_max: training_target_max
                .map(|m| count_beyond_training_max(&set.y_pred, m)),
            fit_seconds,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopKTable {
    /// `(row_id, y_true, y_pred)` sorted by prediction, highest first.
    pub rows: Vec<(usize, f64, f64)>,
    pub mean_true: f64,
    pub mean_pred: f64,
    pub mean_relative_error: Option<f64>,
    pub rmse: f64,
}

/// The `k` highest predictions (ties broken by position) with summaries
/// over exactly those rows.
pub fn top_k_table(set: &PredictionSet, k: usize) -> Result<TopKTable> {
    if k == 0 {
        return Err(Error::Empty);
    }
    if k > set.len() {
        return Err(Error::Dimension(format!(
            "top-{k} requested from {} predictions",
            set.len()
        )));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.y_pred[b].total_cmp(&set.y_pred[a]).then(a.cmp(&b)));
    order.truncate(k);
    let t: Vec<f64> = order.iter().map(|&i| set.y_true[i]).collect();
    let p: Vec<f64> = order.iter().map(|&i| set.y_pred[i]).collect();
    Ok(TopKTable {
        rows: order
            .iter()
            .map(|&i| (set.row_ids[i], set.y_true[i], set.y_pred[i]))
            .collect(),
        mean_true: t.iter().sum::<f64>() / k as f64,
        mean_pred: p.iter().sum::<f64>() / k as f64,
        mean_relative_error: mean_relative_error(&t, &p).ok(),
        rmse: rmse(&t, &p)?,
    })
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Ok((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method_name: String,
    pub runs: usize,
    pub median_rmse: f64,
    pub std_rmse: f64,
}

/// Methods in order of first appearance.
fn method_order(reports: &[RunReport]) -> Vec<String> {
    let mut methods: Vec<String> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method_name) {
            methods.push(r.method_name.clone());
        }
    }
    methods
}

pub fn aggregate(reports: &[RunReport]) -> Result<Vec<MethodSummary>> {
    let methods = method_order(reports);
    let mut out = Vec::with_capacity(methods.len());
    for method in methods {
        let values: Vec<f64> = reports
            .iter()
            .filter(|r| r.method_name == method)
            .map(|r| r.rmse)
            .collect();
        out.push(MethodSummary {
            method_name: method,
            runs: values.len(),
            median_rmse: median(&values)?,
            std_rmse: population_std(&values)?,
        });
    }
    if let Some(first) = out.first() {
        if let Some(bad) = out.iter().find(|s| s.runs != first.runs) {
            return Err(Error::Dimension(format!(
                "method '{}' has {} runs but '{}' has {}",
                bad.method_name, bad.runs, first.method_name, first.runs
            )));
        }
    }
    Ok(out)
}

/// Per-run ranks of each method by RMSE (1 = best, ties averaged).
#[derive(Debug, Clone, PartialEq)]
pub struct RankMatrix {
    pub methods: Vec<String>,
    pub run_ids: Vec<usize>,
    /// `ranks[r][m]` for run `run_ids[r]` and method `methods[m]`.
    pub ranks: Vec<Vec<f64>>,
}

impl RankMatrix {
    pub fn mean_ranks(&self) -> Vec<f64> {
        let runs = self.ranks.len() as f64;
        (0..self.methods.len())
            .map(|m| self.ranks.iter().map(|row| row[m]).sum::<f64>() / runs)
            .collect()
    }
}

/// Average ranks of `values`, 1-based, ascending.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end share the mean of ranks start+1 ..= end
        let shared = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = shared;
        }
        start = end;
    }
    ranks
}

pub fn rank_matrix(reports: &[RunReport]) -> Result<RankMatrix> {
    let methods = method_order(reports);
    let mut run_ids: Vec<usize> = reports.iter().map(|r| r.run_id).collect();
    run_ids.sort_unstable();
    run_ids.dedup();
    let mut ranks = Vec::with_capacity(run_ids.len());
    for &run in &run_ids {
        let mut row = Vec::with_capacity(methods.len());
        for m in &methods {
            let mut hits = reports.iter().filter(|r| r.run_id == run && &r.method_name == m);
            match (hits.next(), hits.next()) {
                (Some(r), None) => row.push(r.rmse),
                (None, _) => {
                    return Err(Error::Dimension(format!("method '{m}' has no report for run {run}")))
                }
                (Some(_), Some(_)) => {
                    return Err(Error::Dimension(format!(
                        "method '{m}' has several reports for run {run}"
                    )))
                }
            }
        }
        ranks.push(average_ranks(&row));
    }
    Ok(RankMatrix {
        methods,
        run_ids,
        ranks,
    })
}
