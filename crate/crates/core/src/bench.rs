//! Monte Carlo coverage experiments over the synthetic scenarios.
//!
//! A grid lists scenarios, dataset sizes and methods. Every cell runs `M`
//! replications with seeds `master_seed + 0 .. M - 1`; each replication
//! generates fresh data, fits everything from scratch and records whether
//! each method's interval covers the oracle ATE. Replications are
//! independent and may run on several threads. Aggregation always walks
//! them in seed order, so results do not depend on scheduling.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{aipw_ci, interval_from_scores};
use crate::dataset::split;
use crate::error::{Error, Result};
use crate::pipeline::{d1_scores, fit_predictor, EstimateConfig};
use crate::ppi::{check_alpha, pp_interval, rectifier, MeasureOfFit, Method, PPInterval};
use crate::scores::{score_dataset, ScoreInput, ScoreVector};
use crate::synthgen::{generate, DgpConfig, Scenario, SyntheticOutput};

/// Methods a grid may request.
pub const BENCH_METHODS: [Method; 4] = [
    Method::PpAipw,
    Method::PpIpw,
    Method::BaselineD1,
    Method::BaselineD2,
];

/// Fraction of failed replications above which a cell is invalid.
pub const MAX_FAILURE_RATE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    pub scenarios: Vec<Scenario>,
    #[serde(rename = "n")]
    pub n_values: Vec<usize>,
    #[serde(rename = "N_prime")]
    pub n_prime_values: Vec<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(rename = "M")]
    pub replications: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub methods: Vec<Method>,
    /// Constant treatment probability of a randomized D¹. Required by PP_IPW.
    #[serde(default)]
    pub rct_propensity: Option<f64>,
}

fn default_alpha() -> f64 {
    0.05
}

impl ExperimentGrid {
    pub fn from_json(text: &str) -> Result<Self> {
        let grid: Self = serde_json::from_str(text)?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("M must be at least 1".into()));
        }
        if self.scenarios.is_empty() || self.n_values.is_empty() || self.n_prime_values.is_empty() {
            return Err(Error::Config("scenarios, n and N_prime must be non-empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        check_alpha(self.alpha)?;
        if let Some(m) = self.methods.iter().find(|m| !BENCH_METHODS.contains(m)) {
            return Err(Error::Config(format!(
                "method {m} is not supported by the benchmark runner"
            )));
        }
        if self.methods.contains(&Method::PpIpw) && self.rct_propensity.is_none() {
            return Err(Error::Config("PP_IPW needs rct_propensity".into()));
        }
        for cell in self.cells() {
            cell.dgp(self.master_seed, self.rct_propensity).validate()?;
        }
        Ok(())
    }

    /// Cells in scenario-major order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &scenario in &self.scenarios {
            for &n in &self.n_values {
                for &n_prime in &self.n_prime_values {
                    out.push(Cell { scenario, n, n_prime });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub scenario: Scenario,
    pub n: usize,
    #[serde(rename = "N_prime")]
    pub n_prime: usize,
}

impl Cell {
    pub fn dgp(&self, seed: u64, rct_propensity: Option<f64>) -> DgpConfig {
        let cfg = DgpConfig::scenario(self.scenario, seed).with_sizes(self.n, self.n_prime);
        match rct_propensity {
            Some(p) => cfg.with_rct(p),
            None => cfg,
        }
    }
}

/// Replacement for the fitted CATE predictor τ̂₂, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredictorOverride {
    /// The DR-learner fitted on D².
    #[default]
    Fitted,
    /// τ̂₂ ≡ 0: the PP estimate collapses to the D¹ score mean.
    Zero,
    /// The true per-unit CATE of the generator.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub method: Method,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
    pub covered: bool,
    pub oracle_ate: f64,
}

impl ReplicationRow {
    fn new(ci: &PPInterval, oracle_ate: f64) -> Self {
        Self {
            method: ci.method,
            estimate: ci.estimate,
            lower: ci.lower,
            upper: ci.upper,
            width: ci.width,
            covered: ci.contains(oracle_ate),
            oracle_ate,
        }
    }
}

/// One generate-and-estimate pass. Errors carry the seed.
pub fn run_replication(
    cell: &Cell,
    methods: &[Method],
    alpha: f64,
    rct_propensity: Option<f64>,
    seed: u64,
    predictor: PredictorOverride,
) -> Result<Vec<ReplicationRow>> {
    replication(cell, methods, alpha, rct_propensity, seed, predictor).map_err(|e| Error::Replication {
        seed,
        source: Box::new(e),
    })
}

fn replication(
    cell: &Cell,
    methods: &[Method],
    alpha: f64,
    rct_propensity: Option<f64>,
    seed: u64,
    predictor: PredictorOverride,
) -> Result<Vec<ReplicationRow>> {
    let data = generate(&cell.dgp(seed, rct_propensity))?;
    let cfg = EstimateConfig {
        seed,
        alpha,
        ..EstimateConfig::default()
    };
    let needs_tau = methods.iter().any(|m| matches!(m, Method::PpAipw | Method::PpIpw));
    let tau = if needs_tau {
        Some(tau2_values(&data, &cfg, predictor)?)
    } else {
        None
    };
    let mut aipw: Option<ScoreVector> = None;
    let mut rows = Vec::with_capacity(methods.len());
    for &method in methods {
        let ci = match method {
            Method::PpAipw | Method::PpIpw => {
                let (tau_d1, measure) = tau.as_ref().expect("computed above");
                let scores = if method == Method::PpAipw {
                    cached_aipw(&mut aipw, &data, &cfg)?.clone()
                } else {
                    score_dataset(&data.d1, ScoreInput::Ipw)?
                };
                pp_interval(&rectifier(&scores, tau_d1)?, measure, alpha)?
            }
            Method::BaselineD1 => {
                interval_from_scores(cached_aipw(&mut aipw, &data, &cfg)?, data.d1.role(), alpha)
            }
            Method::BaselineD2 => aipw_ci(
                &data.d2,
                cfg.folds,
                cfg.d2_baseline_seed(),
                cfg.lambda,
                cfg.clip_epsilon,
                alpha,
            )?,
            other => {
                return Err(Error::Config(format!(
                    "method {other} is not supported by the benchmark runner"
                )))
            }
        };
        rows.push(ReplicationRow::new(&ci, data.oracle_ate));
    }
    Ok(rows)
}

fn cached_aipw<'a>(
    slot: &'a mut Option<ScoreVector>,
    data: &SyntheticOutput,
    cfg: &EstimateConfig,
) -> Result<&'a ScoreVector> {
    if slot.is_none() {
        *slot = Some(d1_scores(&data.d1, cfg)?);
    }
    Ok(slot.as_ref().expect("just filled"))
}

/// τ̂₂ on D¹ and the measure of fit on the evaluation half of D².
fn tau2_values(
    data: &SyntheticOutput,
    cfg: &EstimateConfig,
    predictor: PredictorOverride,
) -> Result<(Vec<f64>, MeasureOfFit)> {
    match predictor {
        PredictorOverride::Fitted => {
            let fitted = fit_predictor(&data.d2, cfg)?;
            let tau_d1 = crate::cate::evaluate_dataset(&fitted.model, &data.d1)?;
            Ok((tau_d1, fitted.measure))
        }
        PredictorOverride::Zero | PredictorOverride::Oracle => {
            let evaluation = split(&data.d2, 2, cfg.d2_split_seed())?.members(1);
            let (tau_d1, tau_eval) = if predictor == PredictorOverride::Zero {
                (vec![0.0; data.d1.len()], vec![0.0; evaluation.len()])
            } else {
                let eval = evaluation.iter().map(|&i| data.oracle_cate_d2[i]).collect();
                (data.oracle_cate_d1.clone(), eval)
            };
            Ok((tau_d1, MeasureOfFit::from_predictions(&tau_eval)))
        }
    }
}

/// Aggregated metrics for one (cell, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub scenario: Scenario,
    pub n: usize,
    #[serde(rename = "N_prime")]
    pub n_prime: usize,
    pub method: Method,
    pub alpha: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub coverage: f64,
    pub mean_width: f64,
    pub rmse: f64,
    pub mean_estimate: f64,
    pub failures: usize,
    /// False when more than 10% of the replications failed.
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub grid: ExperimentGrid,
    pub cells: Vec<CellResult>,
}

impl BenchResult {
    pub fn get(&self, scenario: Scenario, method: Method) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.scenario == scenario && c.method == method)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = CsvSink::new(writer)?;
        for c in &self.cells {
            w.push(c)?;
        }
        w.finish()
    }
}

/// Streams result rows as CSV, one flush per cell.
pub struct CsvSink<W: Write> {
    inner: csv::Writer<W>,
}

pub const CSV_HEADER: [&str; 11] = [
    "scenario",
    "n",
    "N_prime",
    "method",
    "alpha",
    "M",
    "coverage",
    "mean_width",
    "rmse",
    "mean_estimate",
    "failures",
];

impl<W: Write> CsvSink<W> {
    pub fn new(writer: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        inner.write_record(CSV_HEADER)?;
        Ok(Self { inner })
    }

    pub fn push(&mut self, c: &CellResult) -> Result<()> {
        self.inner.write_record([
            c.scenario.number().to_string(),
            c.n.to_string(),
            c.n_prime.to_string(),
            c.method.to_string(),
            c.alpha.to_string(),
            c.m.to_string(),
            c.coverage.to_string(),
            c.mean_width.to_string(),
            c.rmse.to_string(),
            c.mean_estimate.to_string(),
            c.failures.to_string(),
        ])?;
        self.inner.flush().map_err(|e| Error::Csv(e.into()))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::Csv(e.into()))
    }
}

/// Collapses one cell's replications (in seed order) into per-method rows.
pub fn aggregate(
    cell: &Cell,
    methods: &[Method],
    alpha: f64,
    replications: &[Result<Vec<ReplicationRow>>],
) -> Vec<CellResult> {
    let m = replications.len();
    let failures = replications.iter().filter(|r| r.is_err()).count();
    methods
        .iter()
        .map(|&method| {
            let rows: Vec<&ReplicationRow> = replications
                .iter()
                .filter_map(|r| r.as_ref().ok())
                .filter_map(|rows| rows.iter().find(|row| row.method == method))
                .collect();
            let k = rows.len() as f64;
            let mean_of = |f: &dyn Fn(&ReplicationRow) -> f64| -> f64 {
                if rows.is_empty() {
                    f64::NAN
                } else {
                    rows.iter().map(|r| f(r)).sum::<f64>() / k
                }
            };
            CellResult {
                scenario: cell.scenario,
                n: cell.n,
                n_prime: cell.n_prime,
                method,
                alpha,
                m,
                coverage: mean_of(&|r| f64::from(u8::from(r.covered))),
                mean_width: mean_of(&|r| r.width),
                rmse: mean_of(&|r| (r.estimate - r.oracle_ate).powi(2)).sqrt(),
                mean_estimate: mean_of(&|r| r.estimate),
                failures,
                valid: failures as f64 <= MAX_FAILURE_RATE * m as f64,
            }
        })
        .collect()
}

/// Runs the grid on `workers` threads, calling `on_cell` after each cell
/// finishes (for streaming output and progress).
pub fn run_experiment_with<F>(grid: &ExperimentGrid, workers: usize, mut on_cell: F) -> Result<BenchResult>
where
    F: FnMut(&Cell, &[CellResult]) -> Result<()>,
{
    grid.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let mut cells = Vec::new();
    for cell in grid.cells() {
        let reps: Vec<Result<Vec<ReplicationRow>>> = pool.install(|| {
            (0..grid.replications as u64)
                .into_par_iter()
                .map(|r| {
                    let seed = grid.master_seed.wrapping_add(r);
                    let out = run_replication(
                        &cell,
                        &grid.methods,
                        grid.alpha,
                        grid.rct_propensity,
                        seed,
                        PredictorOverride::Fitted,
                    );
                    if let Err(e) = &out {
                        log::warn!("{e}");
                    }
                    out
                })
                .collect()
        });
        let results = aggregate(&cell, &grid.methods, grid.alpha, &reps);
        on_cell(&cell, &results)?;
        cells.extend(results);
    }
    Ok(BenchResult {
        grid: grid.clone(),
        cells,
    })
}

pub fn run_experiment(grid: &ExperimentGrid, workers: usize) -> Result<BenchResult> {
    run_experiment_with(grid, workers, |_, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> ExperimentGrid {
        ExperimentGrid {
            scenarios: vec![Scenario::Little],
            n_values: vec![60],
            n_prime_values: vec![200],
            alpha: 0.05,
            replications: 3,
            master_seed: 7,
            methods: vec![Method::PpAipw, Method::BaselineD1, Method::BaselineD2],
            rct_propensity: None,
        }
    }

    #[test]
    fn single_replication_aggregates_to_itself() {
        let mut grid = small_grid();
        grid.replications = 1;
        let result = run_experiment(&grid, 1).unwrap();
        let cell = grid.cells()[0];
        let rows = run_replication(&cell, &grid.methods, 0.05, None, 7, PredictorOverride::Fitted).unwrap();
        for row in rows {
            let c = result.get(Scenario::Little, row.method).unwrap();
            assert_eq!(c.mean_estimate, row.estimate);
            assert_eq!(c.mean_width, row.width);
            assert_eq!(c.coverage, f64::from(u8::from(row.covered)));
            assert_eq!(c.rmse, (row.estimate - row.oracle_ate).abs());
        }
    }

    #[test]
    fn failures_are_counted() {
        let cell = Cell {
            scenario: Scenario::Heavy,
            n: 10,
            n_prime: 10,
        };
        let ok = || {
            Ok(vec![ReplicationRow {
                method: Method::PpAipw,
                estimate: 1.0,
                lower: 0.0,
                upper: 2.0,
                width: 2.0,
                covered: true,
                oracle_ate: 1.5,
            }])
        };
        let bad = || Err(Error::Numerical("x".into()));
        let agg = aggregate(&cell, &[Method::PpAipw], 0.05, &[ok(), bad()]);
        assert_eq!(agg[0].failures, 1);
        assert!(!agg[0].valid);
        assert_eq!(agg[0].rmse, 0.5);
        let mut many: Vec<_> = (0..10).map(|_| ok()).collect();
        many.push(bad());
        assert!(aggregate(&cell, &[Method::PpAipw], 0.05, &many)[0].valid);
    }

    #[test]
    fn ipw_requires_rct() {
        let mut grid = small_grid();
        grid.methods.push(Method::PpIpw);
        assert!(grid.validate().is_err());
        grid.rct_propensity = Some(0.5);
        assert!(grid.validate().is_ok());
        grid.replications = 0;
        assert!(grid.validate().is_err());
    }

    #[test]
    fn grid_json_round_trip() {
        let grid = small_grid();
        let text = serde_json::to_string(&grid).unwrap();
        assert!(text.contains("\"N_prime\""));
        assert_eq!(ExperimentGrid::from_json(&text).unwrap(), grid);
        assert!(ExperimentGrid::from_json("{\"scenarios\": [4]}").is_err());
    }
}
