//! Command-line front end: `estimate`, `simulate` and `bench`.
//!
//! Exit codes are 0 on success, 1 on runtime errors and 2 on usage errors.
//! Errors are reported on stderr as a single JSON object
//! `{"error": <kind>, "message": <text>}`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::baselines::{aipw_ci, interval_from_scores};
use crate::bench::{run_experiment_with, CsvSink, ExperimentGrid};
use crate::cate::evaluate_dataset;
use crate::dataset::{load_csv, CsvSchema, Dataset, Role};
use crate::error::{Error, Result};
use crate::nuisance::{DEFAULT_CLIP_EPSILON, DEFAULT_FOLDS, DEFAULT_LAMBDA};
use crate::pipeline::{d1_scores, fit_predictor, EstimateConfig};
use crate::ppi::{pp_interval, pp_interval_finite_pop, pp_interval_shifted, rectifier, PPInterval};
use crate::scores::{score_dataset, ScoreInput};
use crate::synthgen::{generate, DgpConfig, Scenario, SimulationMeta};

#[derive(Debug, Parser)]
#[command(name = "ppate", version, about = "Prediction-powered confidence intervals for average treatment effects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Interval for the ATE from a small unconfounded and a large auxiliary CSV.
    Estimate(EstimateArgs),
    /// Write one synthetic (D¹, D²) pair plus metadata.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo coverage experiment from a JSON grid.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Small dataset whose treatment assignment is unconfounded.
    #[arg(long)]
    pub d1: PathBuf,
    /// Large, possibly confounded dataset.
    #[arg(long)]
    pub d2: PathBuf,
    /// JSON file with defaults for the flags below; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// D¹ is randomized with known propensities (IPW scores).
    #[arg(long)]
    pub rct: bool,
    /// Column of D¹ holding the known propensities.
    #[arg(long)]
    pub propensity_col: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Propensity clipping epsilon.
    #[arg(long)]
    pub clip: Option<f64>,
    /// Density-ratio weights for D¹ rows (one numeric column).
    #[arg(long)]
    pub weights_d1: Option<PathBuf>,
    /// Density-ratio weights for D² rows (one numeric column).
    #[arg(long)]
    pub weights_d2: Option<PathBuf>,
    /// Per-row bounds `lower,upper` on the D¹ rectifier terms.
    #[arg(long)]
    pub finite_pop_bounds: Option<PathBuf>,
    /// Comma-separated covariate columns. Default: every column starting with `x`.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    #[arg(long)]
    pub treatment_col: Option<String>,
    #[arg(long)]
    pub outcome_col: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub scenario: u8,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(2..))]
    pub n: u64,
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(4..))]
    pub n2: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Make D¹ a randomized trial with this treatment probability.
    #[arg(long)]
    pub rct_propensity: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: u64,
    /// Results CSV. The JSON summary goes next to it with a `.json` extension.
    #[arg(long)]
    pub out: PathBuf,
}

/// Optional defaults for `estimate`, read from `--config`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateFile {
    pub alpha: Option<f64>,
    pub rct: Option<bool>,
    pub propensity_col: Option<String>,
    pub folds: Option<usize>,
    pub seed: Option<u64>,
    pub clip: Option<f64>,
    pub covariates: Option<Vec<String>>,
    pub treatment_col: Option<String>,
    pub outcome_col: Option<String>,
}

#[derive(Debug, Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

/// Outcome of a subcommand that failed.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            report(stderr, "usage", e.to_string().trim().to_string());
            return 2;
        }
    };
    let outcome = match cli.command {
        Command::Estimate(a) => cmd_estimate(&a, stdout),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Bench(a) => cmd_bench(&a, stderr),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(message)) => {
            report(stderr, "usage", message);
            2
        }
        Err(Failure::Runtime(e)) => {
            report(stderr, e.kind(), e.to_string());
            1
        }
    }
}

fn report(stderr: &mut dyn Write, kind: &str, message: String) {
    let body = ErrorReport { error: kind, message };
    let _ = writeln!(
        stderr,
        "{}",
        serde_json::to_string(&body).expect("error report serializes")
    );
}

/// Resolved `estimate` settings after merging the config file and flags.
#[derive(Debug, Clone, PartialEq)]
struct EstimateSettings {
    cfg: EstimateConfig,
    rct: bool,
    propensity_col: Option<String>,
    covariates: Option<Vec<String>>,
    treatment_col: String,
    outcome_col: String,
}

fn resolve(args: &EstimateArgs) -> std::result::Result<EstimateSettings, Failure> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<EstimateFile>(&text).map_err(Error::from)?
        }
        None => EstimateFile::default(),
    };
    let alpha = args.alpha.or(file.alpha).unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Failure::Usage(format!("--alpha must lie in (0, 1), got {alpha}")));
    }
    let folds = args.folds.or(file.folds).unwrap_or(DEFAULT_FOLDS);
    if folds < 2 {
        return Err(Failure::Usage(format!("--folds must be at least 2, got {folds}")));
    }
    let clip = args.clip.or(file.clip).unwrap_or(DEFAULT_CLIP_EPSILON);
    if !(clip > 0.0 && clip < 0.5) {
        return Err(Failure::Usage(format!("--clip must lie in (0, 0.5), got {clip}")));
    }
    let rct = args.rct || file.rct.unwrap_or(false);
    let propensity_col = args.propensity_col.clone().or(file.propensity_col);
    if rct && propensity_col.is_none() {
        return Err(Failure::Usage("--rct requires --propensity-col".into()));
    }
    if args.weights_d1.is_some() != args.weights_d2.is_some() {
        return Err(Failure::Usage(
            "--weights-d1 and --weights-d2 must be given together".into(),
        ));
    }
    Ok(EstimateSettings {
        cfg: EstimateConfig {
            folds,
            seed: args.seed.or(file.seed).unwrap_or(0),
            lambda: DEFAULT_LAMBDA,
            clip_epsilon: clip,
            alpha,
        },
        rct,
        propensity_col,
        covariates: args.covariates.clone().or(file.covariates),
        treatment_col: args
            .treatment_col
            .clone()
            .or(file.treatment_col)
            .unwrap_or_else(|| "a".into()),
        outcome_col: args
            .outcome_col
            .clone()
            .or(file.outcome_col)
            .unwrap_or_else(|| "y".into()),
    })
}

/// Column names of a CSV file's header row.
fn header_of(path: &Path) -> Result<Vec<String>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    Ok(rdr.headers()?.iter().map(|h| h.trim().to_string()).collect())
}

fn schema_for(path: &Path, s: &EstimateSettings, propensity: Option<&str>) -> Result<CsvSchema> {
    let covariates = match &s.covariates {
        Some(c) => c.clone(),
        None => {
            let reserved = [Some(s.treatment_col.as_str()), Some(s.outcome_col.as_str()), propensity];
            let found: Vec<String> = header_of(path)?
                .into_iter()
                .filter(|h| h.starts_with('x') && !reserved.contains(&Some(h.as_str())))
                .collect();
            if found.is_empty() {
                return Err(Error::Schema(format!(
                    "{} has no covariate columns starting with `x`; pass --covariates",
                    path.display()
                )));
            }
            found
        }
    };
    Ok(CsvSchema {
        covariates,
        treatment: s.treatment_col.clone(),
        outcome: s.outcome_col.clone(),
        propensity: propensity.map(str::to_string),
    })
}

/// Reads the first `width` numeric columns of a headered CSV.
fn read_columns(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    if headers.len() < width {
        return Err(Error::Schema(format!(
            "{} needs {width} column(s), found {}",
            path.display(),
            headers.len()
        )));
    }
    let mut rows = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = (0..width)
            .map(|j| {
                let raw = record.get(j).unwrap_or("").trim();
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        row: r + 1,
                        column: headers[j].to_string(),
                        message: format!("`{raw}` is not a finite number"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn read_weights(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let w: Vec<f64> = read_columns(path, 1)?.into_iter().map(|r| r[0]).collect();
    if w.len() != expected {
        return Err(Error::Dimension {
            expected,
            got: w.len(),
        });
    }
    Ok(w)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EstimateOutput {
    pub intervals: Vec<PPInterval>,
}

fn cmd_estimate(args: &EstimateArgs, stdout: &mut dyn Write) -> CmdResult {
    let s = resolve(args)?;
    let d1_schema = schema_for(&args.d1, &s, s.propensity_col.as_deref().filter(|_| s.rct))?;
    let d2_schema = schema_for(&args.d2, &s, None)?;
    let d1 = load_csv(&args.d1, &d1_schema, Role::SmallUnconfounded)?;
    let d2 = load_csv(&args.d2, &d2_schema, Role::LargeAuxiliary)?;
    let intervals = estimate_intervals(&d1, &d2, &s, args)?;
    let text = serde_json::to_string_pretty(&EstimateOutput { intervals }).map_err(Error::from)?;
    match &args.out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?,
        None => writeln!(stdout, "{text}").map_err(|e| Error::io("<stdout>", e))?,
    }
    Ok(())
}

fn estimate_intervals(
    d1: &Dataset,
    d2: &Dataset,
    s: &EstimateSettings,
    args: &EstimateArgs,
) -> Result<Vec<PPInterval>> {
    let cfg = &s.cfg;
    if d1.dim() != d2.dim() {
        return Err(Error::Dimension {
            expected: d1.dim(),
            got: d2.dim(),
        });
    }
    let predictor = fit_predictor(d2, cfg)?;
    let aipw = d1_scores(d1, cfg)?;
    let scores = if s.rct {
        score_dataset(d1, ScoreInput::Ipw)?
    } else {
        aipw.clone()
    };
    let tau_d1 = evaluate_dataset(&predictor.model, d1)?;
    let r = rectifier(&scores, &tau_d1)?;
    let mut intervals = vec![pp_interval(&r, &predictor.measure, cfg.alpha)?];

    if let (Some(p1), Some(p2)) = (&args.weights_d1, &args.weights_d2) {
        let w1 = read_weights(p1, d1.len())?;
        let w2_all = read_weights(p2, d2.len())?;
        let evaluation = &predictor.model.provenance().evaluation;
        let w2: Vec<f64> = evaluation.iter().map(|&i| w2_all[i]).collect();
        intervals.push(pp_interval_shifted(
            &scores,
            &tau_d1,
            &predictor.evaluation_predictions,
            &w1,
            &w2,
            cfg.alpha,
        )?);
    }
    if let Some(path) = &args.finite_pop_bounds {
        let bounds: Vec<(f64, f64)> = read_columns(path, 2)?.into_iter().map(|r| (r[0], r[1])).collect();
        intervals.push(pp_interval_finite_pop(&r, &predictor.measure, &bounds, cfg.alpha)?);
    }

    intervals.push(interval_from_scores(&aipw, d1.role(), cfg.alpha));
    intervals.push(aipw_ci(
        d2,
        cfg.folds,
        cfg.d2_baseline_seed(),
        cfg.lambda,
        cfg.clip_epsilon,
        cfg.alpha,
    )?);
    Ok(intervals)
}

fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let scenario = Scenario::try_from(args.scenario).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut cfg = DgpConfig::scenario(scenario, args.seed).with_sizes(args.n as usize, args.n2 as usize);
    if let Some(p) = args.rct_propensity {
        if !(p > 0.0 && p < 1.0) {
            return Err(Failure::Usage(format!("--rct-propensity must lie in (0, 1), got {p}")));
        }
        cfg = cfg.with_rct(p);
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let out = generate(&cfg)?;
    let dir = &args.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let schema = CsvSchema::numbered(cfg.dim);
    out.d1.save_csv(dir.join("d1.csv"), &schema.clone().with_propensity("pi"))?;
    out.d2.save_csv(dir.join("d2.csv"), &schema)?;
    let meta = serde_json::to_string_pretty(&SimulationMeta::new(&cfg, &out)).map_err(Error::from)?;
    let path = dir.join("meta.json");
    std::fs::write(&path, meta + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Where the JSON summary of a bench run goes.
pub fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

fn cmd_bench(args: &BenchArgs, stderr: &mut dyn Write) -> CmdResult {
    let text = std::fs::read_to_string(&args.config).map_err(|e| Error::io(&args.config, e))?;
    let grid = ExperimentGrid::from_json(&text)?;
    let summary = summary_path(&args.out);
    if summary == args.out {
        return Err(Failure::Usage("--out must not end in .json".into()));
    }
    let file = std::fs::File::create(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut sink = CsvSink::new(file)?;
    let total = grid.cells().len();
    let mut done = 0;
    let result = run_experiment_with(&grid, args.workers as usize, |cell, rows| {
        for row in rows {
            sink.push(row)?;
        }
        done += 1;
        let _ = writeln!(
            stderr,
            "{}",
            serde_json::json!({
                "progress": format!("{done}/{total}"),
                "scenario": cell.scenario.number(),
                "n": cell.n,
                "N_prime": cell.n_prime,
            })
        );
        Ok(())
    })?;
    sink.finish()?;
    let json = serde_json::to_string_pretty(&result).map_err(Error::from)?;
    std::fs::write(&summary, json + "\n").map_err(|e| Error::io(&summary, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> EstimateArgs {
        let mut full = vec!["ppate", "estimate", "--d1", "a.csv", "--d2", "b.csv"];
        full.extend_from_slice(args);
        match Cli::try_parse_from(full).unwrap().command {
            Command::Estimate(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn defaults_resolve() {
        let s = resolve(&parse(&[])).ok().unwrap();
        assert_eq!(s.cfg, EstimateConfig::default());
        assert!(!s.rct);
        assert_eq!((s.treatment_col.as_str(), s.outcome_col.as_str()), ("a", "y"));
    }

    #[test]
    fn flag_misuse_is_usage_error() {
        for args in [
            &["--alpha", "1.5"][..],
            &["--rct"],
            &["--folds", "1"],
            &["--clip", "0.7"],
            &["--weights-d1", "w.csv"],
        ] {
            assert!(matches!(resolve(&parse(args)), Err(Failure::Usage(_))), "{args:?}");
        }
    }

    #[test]
    fn explicit_flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"alpha": 0.1, "seed": 4, "folds": 3}"#).unwrap();
        let p = path.to_str().unwrap();
        let s = resolve(&parse(&["--config", p, "--seed", "9"])).ok().unwrap();
        assert_eq!(s.cfg.alpha, 0.1);
        assert_eq!(s.cfg.folds, 3);
        assert_eq!(s.cfg.seed, 9);
    }

    #[test]
    fn summary_sits_next_to_csv() {
        assert_eq!(summary_path(Path::new("out/r.csv")), PathBuf::from("out/r.json"));
    }
}
