//! Repeated train/test experiments comparing the continued fraction
//! regressor with the linear baseline and any externally supplied
//! predictions.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::cfr::{fit, FitConfig, LinearModel};
use crate::data::{split_out_of_domain, split_out_of_sample, Dataset, Protocol, SplitPair};
use crate::error::{Error, Result};
use crate::evaluation::{aggregate, rank_matrix, MethodSummary, PredictionSet, RankMatrix, RunReport};
use crate::output::{csv_bytes, fmt_opt, prediction_file_bytes, write_atomic};
use crate::report::{check_consistent, kappa_csv, kappa_table, pn_csv, pn_table, KappaRow, PnRow};

pub const SPLN_CFR: &str = "spln-cfr";
pub const LINEAR: &str = "l-regr";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub protocol: Protocol,
    pub runs: usize,
    pub base_seed: u64,
    pub fit: FitConfig,
    /// Out-of-domain cut point.
    pub quantile: f64,
    /// Fraction of each out-of-domain pool kept per run.
    pub subsample: f64,
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            protocol: Protocol::OutOfSample,
            runs: 100,
            base_seed: 0,
            fit: FitConfig::default(),
            quantile: 0.9,
            subsample: 0.5,
            parallel: true,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        self.fit.validate()
    }
}

#[derive(Debug, Clone)]
pub struct SplitInfo {
    pub run_id: usize,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub threshold: Option<f64>,
    pub training_target_max: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub split: SplitInfo,
    pub predictions: Vec<PredictionSet>,
    pub reports: Vec<RunReport>,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub splits: Vec<SplitInfo>,
    pub predictions: Vec<PredictionSet>,
    pub reports: Vec<RunReport>,
    pub summaries: Vec<MethodSummary>,
    pub ranks: RankMatrix,
    pub pn: Vec<PnRow>,
    pub kappa: Vec<KappaRow>,
}

pub fn make_split(ds: &Dataset, cfg: &BenchConfig, seed: u64) -> Result<SplitPair> {
    match cfg.protocol {
        Protocol::OutOfSample => split_out_of_sample(ds, seed),
        Protocol::OutOfDomain => split_out_of_domain(ds, cfg.quantile, seed, cfg.subsample),
    }
}

/// One run: split, fit both built-in methods, score them on the test rows.
pub fn run_once(ds: &Dataset, cfg: &BenchConfig, run_id: usize) -> Result<RunOutcome> {
    let seed = cfg.base_seed.wrapping_add(run_id as u64);
    let wrap = |e: Error| Error::Run { run: run_id, seed, source: Box::new(e) };
    let split = make_split(ds, cfg, seed).map_err(wrap)?;
    let training_target_max = split.train.target.max();
    let ood_max = split.threshold.map(|_| training_target_max);

    let mut predictions = Vec::with_capacity(2);
    let mut reports = Vec::with_capacity(2);
    let mut score = |name: &str, pred: Vec<f64>, seconds: f64| -> Result<()> {
        let set = PredictionSet::new(
            name,
            run_id,
            seed,
            split.test_rows.clone(),
            split.test.target.as_slice().to_vec(),
            pred,
        )?;
        reports.push(RunReport::from_predictions(&set, split.threshold, ood_max, seconds)?);
        predictions.push(set);
        Ok(())
    };

    let start = Instant::now();
    let model = fit(&split.train.features, &split.train.target, &cfg.fit).map_err(wrap)?;
    let seconds = start.elapsed().as_secs_f64();
    let pred = model.predict(&split.test.features).map_err(wrap)?;
    score(SPLN_CFR, pred, seconds).map_err(wrap)?;

    let start = Instant::now();
    let linear = LinearModel::fit(&split.train.features, &split.train.target).map_err(wrap)?;
    let seconds = start.elapsed().as_secs_f64();
    let pred = linear.predict(&split.test.features).map_err(wrap)?;
    score(LINEAR, pred, seconds).map_err(wrap)?;

    Ok(RunOutcome {
        split: SplitInfo {
            run_id,
            seed,
            train_size: split.train.len(),
            test_size: split.test.len(),
            threshold: split.threshold,
            training_target_max,
        },
        predictions,
        reports,
    })
}

/// Runs every split, joins `external` predictions and builds all tables.
///
/// External sets must cover exactly the runs of this experiment and agree
/// with it on `y_true` for every shared row.
pub fn run_bench(ds: &Dataset, cfg: &BenchConfig, external: Vec<PredictionSet>) -> Result<BenchResult> {
    cfg.validate()?;
    let outcomes: Vec<Result<RunOutcome>> = if cfg.parallel {
        (0..cfg.runs).into_par_iter().map(|r| run_once(ds, cfg, r)).collect()
    } else {
        (0..cfg.runs).map(|r| run_once(ds, cfg, r)).collect()
    };

    let mut splits = Vec::with_capacity(cfg.runs);
    let mut predictions = Vec::new();
    let mut reports = Vec::new();
    for outcome in outcomes {
        let outcome = outcome?;
        log::info!(
            "run {} (seed {}): {}",
            outcome.split.run_id,
            outcome.split.seed,
            outcome
                .reports
                .iter()
                .map(|r| format!("{} rmse {:.4}", r.method_name, r.rmse))
                .collect::<Vec<_>>()
                .join(", ")
        );
        splits.push(outcome.split);
        predictions.extend(outcome.predictions);
        reports.extend(outcome.reports);
    }

    let by_run: BTreeMap<usize, &SplitInfo> = splits.iter().map(|s| (s.run_id, s)).collect();
    for mut set in external {
        let info = by_run.get(&set.run_id).ok_or_else(|| {
            Error::Dimension(format!(
                "predictions for '{}' refer to run {}, but the experiment has runs 0..{}",
                set.method_name,
                set.run_id,
                cfg.runs - 1
            ))
        })?;
        set.seed = info.seed;
        let max = info.threshold.map(|_| info.training_target_max);
        reports.push(RunReport::from_predictions(&set, info.threshold, max, 0.0)?);
        predictions.push(set);
    }
    check_consistent(&predictions)?;

    let thresholds: BTreeMap<usize, f64> =
        splits.iter().filter_map(|s| s.threshold.map(|t| (s.run_id, t))).collect();
    Ok(BenchResult {
        summaries: aggregate(&reports)?,
        ranks: rank_matrix(&reports)?,
        pn: pn_table(&predictions, &thresholds)?,
        kappa: kappa_table(&predictions, &thresholds)?,
        splits,
        predictions,
        reports,
    })
}

pub fn runs_csv(reports: &[RunReport]) -> Result<Vec<u8>> {
    csv_bytes(
        &[
            "method",
            "run_id",
            "seed",
            "rmse",
            "mean_relative_error",
            "p_count",
            "n_count",
            "beyond_training_max",
        ],
        reports.iter().map(|r| {
            vec![
                r.method_name.clone(),
                r.run_id.to_string(),
                r.seed.to_string(),
                r.rmse.to_string(),
                fmt_opt(r.mean_relative_error),
                fmt_opt(r.p_count),
                fmt_opt(r.n_count),
                fmt_opt(r.beyond_training_max),
            ]
        }),
    )
}

pub fn timings_csv(reports: &[RunReport]) -> Result<Vec<u8>> {
    csv_bytes(
        &["method", "run_id", "seed", "fit_seconds"],
        reports.iter().map(|r| {
            vec![
                r.method_name.clone(),
                r.run_id.to_string(),
                r.seed.to_string(),
                r.fit_seconds.to_string(),
            ]
        }),
    )
}

pub fn aggregate_csv(summaries: &[MethodSummary], ranks: &RankMatrix) -> Result<Vec<u8>> {
    let mean_ranks = ranks.mean_ranks();
    csv_bytes(
        &["method", "runs", "median_rmse", "std_rmse", "mean_rank"],
        summaries.iter().map(|s| {
            let rank = ranks
                .methods
                .iter()
                .position(|m| m == &s.method_name)
                .map(|i| mean_ranks[i]);
            vec![
                s.method_name.clone(),
                s.runs.to_string(),
                s.median_rmse.to_string(),
                s.std_rmse.to_string(),
                fmt_opt(rank),
            ]
        }),
    )
}

pub fn ranks_csv(ranks: &RankMatrix) -> Result<Vec<u8>> {
    let mut header = vec!["run_id"];
    header.extend(ranks.methods.iter().map(String::as_str));
    csv_bytes(
        &header,
        ranks.run_ids.iter().zip(&ranks.ranks).map(|(run, row)| {
            std::iter::once(run.to_string())
                .chain(row.iter().map(f64::to_string))
                .collect::<Vec<_>>()
        }),
    )
}

pub fn splits_csv(splits: &[SplitInfo]) -> Result<Vec<u8>> {
    csv_bytes(
        &["run_id", "seed", "train_size", "test_size", "threshold", "training_target_max"],
        splits.iter().map(|s| {
            vec![
                s.run_id.to_string(),
                s.seed.to_string(),
                s.train_size.to_string(),
                s.test_size.to_string(),
                fmt_opt(s.threshold),
                s.training_target_max.to_string(),
            ]
        }),
    )
}

/// File name and contents of every bench artifact.
pub fn render(result: &BenchResult) -> Result<Vec<(String, Vec<u8>)>> {
    let mut files = vec![
        ("runs.csv".to_string(), runs_csv(&result.reports)?),
        ("timings.csv".to_string(), timings_csv(&result.reports)?),
        ("aggregate.csv".to_string(), aggregate_csv(&result.summaries, &result.ranks)?),
        ("ranks.csv".to_string(), ranks_csv(&result.ranks)?),
        ("splits.csv".to_string(), splits_csv(&result.splits)?),
    ];
    if result.splits.iter().any(|s| s.threshold.is_some()) {
        files.push(("pn.csv".to_string(), pn_csv(&result.pn)?));
        files.push(("kappa.csv".to_string(), kappa_csv(&result.kappa)?));
    }
    for method in &result.ranks.methods {
        let sets: Vec<&PredictionSet> =
            result.predictions.iter().filter(|s| &s.method_name == method).collect();
        files.push((format!("predictions_{method}.csv"), prediction_file_bytes(&sets)?));
    }
    Ok(files)
}

/// Writes rendered files into `dir`, each via write-then-rename.
pub fn write_files(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        write_atomic(&dir.join(name), bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_sinc;

    fn toy() -> Dataset {
        gen_sinc(90, (-6.0, 6.0), 0.05, 11).unwrap()
    }

    fn quick(protocol: Protocol) -> BenchConfig {
        BenchConfig {
            protocol,
            runs: 3,
            base_seed: 40,
            fit: FitConfig { max_depth: 2, norm: 1.0, ..FitConfig::default() },
            ..BenchConfig::default()
        }
    }

    #[test]
    fn three_runs_per_method() {
        let res = run_bench(&toy(), &quick(Protocol::OutOfSample), vec![]).unwrap();
        assert_eq!(res.reports.len(), 6);
        assert_eq!(res.summaries.len(), 2);
        assert!(res.summaries.iter().all(|s| s.runs == 3));
        assert_eq!(res.splits.iter().map(|s| s.seed).collect::<Vec<_>>(), vec![40, 41, 42]);
        assert!(res.reports.iter().all(|r| r.p_count.is_none()));
        assert!(res.pn.is_empty());
    }

    #[test]
    fn parallel_matches_sequential() {
        let mut cfg = quick(Protocol::OutOfDomain);
        let a = render(&run_bench(&toy(), &cfg, vec![]).unwrap()).unwrap();
        cfg.parallel = false;
        let b = render(&run_bench(&toy(), &cfg, vec![]).unwrap()).unwrap();
        let strip = |f: Vec<(String, Vec<u8>)>| {
            f.into_iter().filter(|(n, _)| n != "timings.csv").collect::<Vec<_>>()
        };
        assert_eq!(strip(a), strip(b));
    }

    #[test]
    fn ood_reports_threshold_counts() {
        let res = run_bench(&toy(), &quick(Protocol::OutOfDomain), vec![]).unwrap();
        for r in &res.reports {
            let total = r.p_count.unwrap() + r.n_count.unwrap();
            let split = &res.splits[r.run_id];
            assert_eq!(total, split.test_size);
            assert!(split.training_target_max < split.threshold.unwrap());
        }
        assert_eq!(res.kappa.len(), 1);
    }

    #[test]
    fn external_predictions_join() {
        let ds = toy();
        let cfg = quick(Protocol::OutOfDomain);
        let base = run_bench(&ds, &cfg, vec![]).unwrap();
        let ext: Vec<PredictionSet> = base
            .predictions
            .iter()
            .filter(|s| s.method_name == LINEAR)
            .map(|s| PredictionSet { method_name: "copy".into(), seed: 0, ..s.clone() })
            .collect();
        let res = run_bench(&ds, &cfg, ext.clone()).unwrap();
        assert_eq!(res.summaries.len(), 3);
        let k = res.kappa.iter().find(|k| k.method_a == LINEAR && k.method_b == "copy").unwrap();
        assert_eq!(k.kappa, 1.0);

        let mut bad = ext.clone();
        bad[0].y_true[0] += 1.0;
        assert!(run_bench(&ds, &cfg, bad).is_err());
        let mut stray = ext;
        stray[0].run_id = 99;
        assert!(run_bench(&ds, &cfg, stray).is_err());
    }

    #[test]
    fn failing_run_names_index_and_seed() {
        let ds = gen_sinc(2, (-1.0, 1.0), 0.0, 1).unwrap();
        match run_bench(&ds, &quick(Protocol::OutOfSample), vec![]) {
            Err(Error::Run { run, seed, .. }) => assert_eq!((run, seed), (0, 40)),
            other => panic!("expected run failure, got {other:?}"),
        }
    }

    #[test]
    fn rendered_file_set() {
        let res = run_bench(&toy(), &quick(Protocol::OutOfDomain), vec![]).unwrap();
        let names: Vec<String> = render(&res).unwrap().into_iter().map(|f| f.0).collect();
        for want in ["runs.csv", "aggregate.csv", "ranks.csv", "pn.csv", "kappa.csv", "predictions_spln-cfr.csv"] {
            assert!(names.iter().any(|n| n == want), "missing {want}");
        }
    }
}
