//! Command-line front end.
//!
//! Settings resolve in order: command-line flag, then `--config` file, then
//! built-in default. The config file holds `key = value` lines whose keys are
//! the long flag names (`max-depth` or `max_depth`); `#` starts a comment.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::bench::{self, BenchConfig};
use crate::cfr::{document, fit_traced, DepthTrace, FitConfig};
use crate::data::{self, Protocol, DEFAULT_TARGET};
use crate::error::{Error, Result};
use crate::evaluation::{aggregate, rank_matrix, PredictionSet, RunReport};
use crate::output::{csv_bytes, read_prediction_file, split_method_spec, write_atomic};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "spln-cfr", version, about = "Spline continued fraction regression")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a CSV file and write the model document.
    Fit(FitArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Repeated out-of-sample or out-of-domain experiments.
    Bench(BenchArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Tables from prediction files.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Oos,
    Ood,
}

impl FromStr for ProtocolArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <ProtocolArg as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Gamma,
    Sinc,
}

#[derive(Debug, Args)]
pub struct FitFlags {
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Knots added per depth.
    #[arg(long)]
    pub knots: Option<usize>,
    #[arg(long)]
    pub norm: Option<f64>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub auto_depth: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub literal_final_offset: Option<bool>,
    #[arg(long)]
    pub offset_epsilon: Option<f64>,
    #[arg(long)]
    pub denom_floor: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
    #[command(flatten)]
    pub fit: FitFlags,
    /// Model document path.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Fit log path (default: model path with `.log.json`).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Target column to echo as y_true (default: the one the model was fitted on).
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub protocol: Option<ProtocolArg>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Run r uses seed + r.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub fit: FitFlags,
    #[arg(long)]
    pub quantile: Option<f64>,
    #[arg(long)]
    pub subsample: Option<f64>,
    /// External prediction files, as `path` or `name=path`.
    #[arg(long, num_args = 1..)]
    pub predictions: Vec<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads (1 runs sequentially; default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub kind: SynthKind,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub hi: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Prediction files, as `path` or `name=path`.
    #[arg(long, num_args = 1.., required = true)]
    pub predictions: Vec<String>,
    /// Per-run thresholds from a bench `splits.csv`.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// One threshold for every run (overrides --splits).
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Run shown in the top-k table (default: the first).
    #[arg(long)]
    pub run: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

const CONFIG_KEYS: &[&str] = &[
    "data",
    "target",
    "protocol",
    "runs",
    "seed",
    "lambda",
    "knots",
    "norm",
    "max-depth",
    "auto-depth",
    "literal-final-offset",
    "offset-epsilon",
    "denom-floor",
    "quantile",
    "subsample",
    "predictions",
    "out-dir",
    "threads",
];

/// Flat `key = value` settings.
#[derive(Debug, Default)]
pub struct ConfigFile {
    path: PathBuf,
    values: HashMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<ConfigFile> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Ingest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut values = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| Error::Ingest {
                path: path.to_path_buf(),
                reason: format!("line {}: {reason}", i + 1),
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = value, got '{line}'")))?;
            let key = key.trim().replace('_', "-");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(bad(format!("unknown key '{key}'")));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(ConfigFile { path: path.to_path_buf(), values })
    }

    fn lookup<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| Error::Ingest {
                    path: self.path.clone(),
                    reason: format!("bad value '{v}' for {key}: {e}"),
                })
            })
            .transpose()
    }

    /// Flag, else config entry, else `default`.
    pub fn resolve<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.lookup(key)?.unwrap_or(default)),
        }
    }

    fn resolve_opt<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.lookup(key),
        }
    }

    fn fit_config(&self, f: &FitFlags) -> Result<FitConfig> {
        let d = FitConfig::default();
        let cfg = FitConfig {
            lambda: self.resolve("lambda", f.lambda, d.lambda)?,
            knots_per_depth: self.resolve("knots", f.knots, d.knots_per_depth)?,
            norm: self.resolve("norm", f.norm, d.norm)?,
            max_depth: self.resolve("max-depth", f.max_depth, d.max_depth)?,
            auto_depth: self.resolve("auto-depth", f.auto_depth, d.auto_depth)?,
            offset_epsilon: self.resolve("offset-epsilon", f.offset_epsilon, d.offset_epsilon)?,
            denom_floor: self.resolve("denom-floor", f.denom_floor, d.denom_floor)?,
            literal_final_offset: self.resolve(
                "literal-final-offset",
                f.literal_final_offset,
                d.literal_final_offset,
            )?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn data_path(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        self.resolve_opt("data", flag)?
            .ok_or_else(|| Error::Config("no dataset given (--data or `data` in the config file)".into()))
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Report(a) => cmd_report(a),
    }
}

#[derive(Serialize)]
struct FitLog<'a> {
    data: &'a Path,
    target: &'a str,
    rows: usize,
    features: usize,
    config: &'a FitConfig,
    depths: &'a [DepthTrace],
    chosen_depth: usize,
    fit_seconds: f64,
}

fn default_log_path(model: &Path) -> PathBuf {
    let mut name = model.file_stem().unwrap_or_default().to_os_string();
    name.push(".log.json");
    model.with_file_name(name)
}

pub fn cmd_fit(a: FitArgs) -> Result<()> {
    let conf = ConfigFile::load(a.config.as_deref())?;
    let fit_cfg = conf.fit_config(&a.fit)?;
    let path = conf.data_path(a.data)?;
    let target = conf.resolve("target", a.target, DEFAULT_TARGET.to_string())?;
    let ds = data::load_csv(&path, &target)?;

    let start = Instant::now();
    let (mut model, trace) = fit_traced(&ds.features, &ds.target, &fit_cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    model.feature_names = ds.feature_names.clone();
    model.target_name = Some(target.clone());

    for d in &trace.depths {
        log::info!(
            "depth {}: train rmse {:.6}, {} knots, offset {:.6}",
            d.depth,
            d.train_rmse,
            d.knot_count,
            d.offset
        );
    }
    log::info!("chosen depth {} in {seconds:.3} s", trace.chosen_depth);

    let fit_log = FitLog {
        data: &path,
        target: &target,
        rows: ds.len(),
        features: ds.features.ncols(),
        config: &fit_cfg,
        depths: &trace.depths,
        chosen_depth: trace.chosen_depth,
        fit_seconds: seconds,
    };
    let log_text =
        serde_json::to_string_pretty(&fit_log).map_err(|e| Error::Numeric(e.to_string()))?;
    let model_text = document::to_json(&model)?;
    let log_path = a.log.unwrap_or_else(|| default_log_path(&a.out));
    write_atomic(&a.out, model_text.as_bytes())?;
    write_atomic(&log_path, log_text.as_bytes())?;
    Ok(())
}

pub fn cmd_predict(a: PredictArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.model).map_err(|e| Error::Ingest {
        path: a.model.clone(),
        reason: e.to_string(),
    })?;
    let model = document::from_json(&text)?;
    if model.feature_names.is_empty() {
        return Err(Error::Ingest {
            path: a.model.clone(),
            reason: "model has no feature names; cannot match columns".into(),
        });
    }
    let table = data::read_table(&a.data)?;
    let missing: Vec<&str> = model
        .feature_names
        .iter()
        .filter(|n| table.column(n).is_none())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Ingest {
            path: a.data.clone(),
            reason: format!("missing feature columns: {}", missing.join(", ")),
        });
    }
    let target = a.target.or(model.target_name.clone());
    let truth = target.as_deref().and_then(|t| table.column(t));
    for name in &table.names {
        if !model.feature_names.contains(name) && Some(name.as_str()) != target.as_deref() {
            log::warn!("ignoring unknown column '{name}'");
        }
    }
    let n = table.rows();
    let columns: Vec<&[f64]> = model
        .feature_names
        .iter()
        .map(|name| table.column(name).expect("checked above"))
        .collect();
    let x = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    let pred = model.predict(&x)?;

    let mut header = vec!["row_id", "y_pred"];
    if truth.is_some() {
        header.push("y_true");
    }
    let bytes = csv_bytes(
        &header,
        (0..n).map(|i| {
            let mut row = vec![i.to_string(), pred[i].to_string()];
            if let Some(t) = truth {
                row.push(t[i].to_string());
            }
            row
        }),
    )?;
    write_atomic(&a.out, &bytes)
}

fn load_predictions(specs: &[String]) -> Result<Vec<PredictionSet>> {
    let mut out = Vec::new();
    for spec in specs {
        let (name, path) = split_method_spec(spec);
        out.extend(read_prediction_file(path, &name)?);
    }
    Ok(out)
}

pub fn cmd_bench(a: BenchArgs) -> Result<()> {
    let conf = ConfigFile::load(a.config.as_deref())?;
    let d = BenchConfig::default();
    let protocol = match conf.resolve("protocol", a.protocol, ProtocolArg::Oos)? {
        ProtocolArg::Oos => Protocol::OutOfSample,
        ProtocolArg::Ood => Protocol::OutOfDomain,
    };
    let threads: Option<usize> = conf.resolve_opt("threads", a.threads)?;
    let cfg = BenchConfig {
        protocol,
        runs: conf.resolve("runs", a.runs, d.runs)?,
        base_seed: conf.resolve("seed", a.seed, d.base_seed)?,
        fit: conf.fit_config(&a.fit)?,
        quantile: conf.resolve("quantile", a.quantile, d.quantile)?,
        subsample: conf.resolve("subsample", a.subsample, d.subsample)?,
        parallel: threads != Some(1),
    };
    cfg.validate()?;
    let out_dir = conf.resolve("out-dir", a.out_dir, PathBuf::from("bench-out"))?;
    let path = conf.data_path(a.data)?;
    let target = conf.resolve("target", a.target, DEFAULT_TARGET.to_string())?;
    let mut specs = a.predictions;
    if specs.is_empty() {
        if let Some(list) = conf.lookup::<String>("predictions")? {
            specs = list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        }
    }

    let ds = data::load_csv(&path, &target)?;
    let external = load_predictions(&specs)?;
    let result = match threads {
        Some(t) if t > 1 => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| bench::run_bench(&ds, &cfg, external))?,
        _ => bench::run_bench(&ds, &cfg, external)?,
    };
    for s in &result.summaries {
        log::info!("{}: median rmse {:.4} ± {:.4} over {} runs", s.method_name, s.median_rmse, s.std_rmse, s.runs);
    }
    let files = bench::render(&result)?;
    bench::write_files(&out_dir, &files)
}

pub fn cmd_synth(a: SynthArgs) -> Result<()> {
    let ds = match a.kind {
        SynthKind::Gamma => data::gen_gamma(
            a.n,
            (a.lo.unwrap_or(data::GAMMA_RANGE.0), a.hi.unwrap_or(data::GAMMA_RANGE.1)),
            a.noise.unwrap_or(data::GAMMA_NOISE_SD),
            a.seed,
        )?,
        SynthKind::Sinc => data::gen_sinc(
            a.n,
            (a.lo.unwrap_or(data::SINC_RANGE.0), a.hi.unwrap_or(data::SINC_RANGE.1)),
            a.noise.unwrap_or(data::SINC_NOISE_SD),
            a.seed,
        )?,
    };
    let mut bytes = Vec::new();
    ds.write_csv(&mut bytes)?;
    write_atomic(&a.out, &bytes)
}

fn read_thresholds(path: &Path) -> Result<BTreeMap<usize, f64>> {
    let ingest = |reason: String| Error::Ingest { path: path.to_path_buf(), reason };
    let mut reader = csv::Reader::from_path(path).map_err(|e| ingest(e.to_string()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| ingest(format!("missing column '{name}'")))
    };
    let (run_col, t_col) = (col("run_id")?, col("threshold")?);
    let mut out = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let cell = |c: usize| rec.get(c).unwrap_or("").trim();
        if cell(t_col).is_empty() {
            continue;
        }
        let parse_err = |what: &str, v: &str| Error::Cell {
            path: path.to_path_buf(),
            row: i + 2,
            column: what.into(),
            reason: format!("cannot parse '{v}'"),
        };
        let run: usize = cell(run_col).parse().map_err(|_| parse_err("run_id", cell(run_col)))?;
        let t: f64 = cell(t_col).parse().map_err(|_| parse_err("threshold", cell(t_col)))?;
        out.insert(run, t);
    }
    Ok(out)
}

pub fn cmd_report(a: ReportArgs) -> Result<()> {
    let sets = load_predictions(&a.predictions)?;
    if sets.is_empty() {
        return Err(Error::Empty);
    }
    report::check_consistent(&sets)?;
    let runs: Vec<usize> = {
        let mut r: Vec<usize> = sets.iter().map(|s| s.run_id).collect();
        r.sort_unstable();
        r.dedup();
        r
    };
    let thresholds: BTreeMap<usize, f64> = match (a.threshold, &a.splits) {
        (Some(t), _) => runs.iter().map(|&r| (r, t)).collect(),
        (None, Some(p)) => read_thresholds(p)?,
        (None, None) => BTreeMap::new(),
    };
    let run = a.run.unwrap_or(runs[0]);
    if !runs.contains(&run) {
        return Err(Error::Config(format!("no predictions for run {run}")));
    }

    let reports = sets
        .iter()
        .map(|s| RunReport::from_predictions(s, thresholds.get(&s.run_id).copied(), None, 0.0))
        .collect::<Result<Vec<_>>>()?;
    let summaries = aggregate(&reports)?;
    let ranks = rank_matrix(&reports)?;
    let (top, top_summary) = report::top_k_csv(&sets, run, a.top_k)?;
    let mut files = vec![
        ("topk.csv".to_string(), top),
        ("topk_summary.csv".to_string(), top_summary),
        ("runs.csv".to_string(), bench::runs_csv(&reports)?),
        ("aggregate.csv".to_string(), bench::aggregate_csv(&summaries, &ranks)?),
        ("ranks.csv".to_string(), bench::ranks_csv(&ranks)?),
    ];
    if !thresholds.is_empty() {
        files.push(("pn.csv".to_string(), report::pn_csv(&report::pn_table(&sets, &thresholds)?)?));
        files.push((
            "kappa.csv".to_string(),
            report::kappa_csv(&report::kappa_table(&sets, &thresholds)?)?,
        ));
    }
    bench::write_files(&a.out_dir, &files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conf(text: &str) -> Result<ConfigFile> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.conf");
        std::fs::write(&p, text).unwrap();
        ConfigFile::load(Some(&p))
    }

    #[test]
    fn flags_override_config() {
        let c = conf("# comment\nlambda = 0.1\nmax_depth=7\nauto-depth = true\n").unwrap();
        let flags = FitFlags {
            lambda: Some(2.0),
            knots: None,
            norm: None,
            max_depth: None,
            auto_depth: Some(false),
            literal_final_offset: None,
            offset_epsilon: None,
            denom_floor: None,
        };
        let cfg = c.fit_config(&flags).unwrap();
        assert_eq!(cfg.lambda, 2.0);
        assert_eq!(cfg.max_depth, 7);
        assert!(!cfg.auto_depth);
        assert_eq!(cfg.knots_per_depth, 5);
    }

    #[test]
    fn bad_config_lines() {
        assert!(conf("depth = 3\n").is_err());
        assert!(conf("lambda 3\n").is_err());
        let c = conf("runs = many\n").unwrap();
        assert!(c.resolve::<usize>("runs", None, 1).is_err());
    }

    #[test]
    fn parse_examples() {
        let cli = Cli::try_parse_from([
            "spln-cfr", "bench", "--data", "d.csv", "--protocol", "ood", "--runs", "3",
            "--auto-depth", "--predictions", "a.csv", "b=c.csv",
        ])
        .unwrap();
        match cli.command {
            Command::Bench(b) => {
                assert_eq!(b.protocol, Some(ProtocolArg::Ood));
                assert_eq!(b.fit.auto_depth, Some(true));
                assert_eq!(b.predictions.len(), 2);
            }
            _ => panic!(),
        }
        assert!(Cli::try_parse_from(["spln-cfr", "bench", "--protocol", "xyz"]).is_err());
    }

    #[test]
    fn log_path_beside_model() {
        assert_eq!(default_log_path(Path::new("out/m.json")), PathBuf::from("out/m.log.json"));
    }
}
