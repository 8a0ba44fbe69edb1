//! Command-line front end: CSV ingestion, normal-score preprocessing, command
//! dispatch and result files.
//!
//! Every run writes its tables as CSV into the output directory together with
//! a `manifest.json` describing the configuration, the variant switches and
//! the tuning parameters that were used.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::diagnostics::{exponential_residuals, ks_statistic, qq_data, Reference};
use crate::error::{Error, Result};
use crate::estimator::fit_grid;
use crate::hypothesis::{critical_values, Standardization, TestContext, TestOptions, TestOutcome};
use crate::kernels::{KernelSpec, XiVariant};
use crate::model::{
    rescale_t_to_unit_cube, AffineMap, CoefficientFit, Dataset, ExecMode, FitConfig, GridFit, PointFailure,
};
use crate::simulation::{run_monte_carlo, McConfig, McReport, SimSetting, TuningPolicy};
use crate::stats::{normal_quantile, sort_ascending};
use crate::tuning::{
    default_threshold_fractions, discrepancy, threshold_for_fraction, tune, DiscrepancyVariant, TuningPlan,
    TuningResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Fit,
    Tune,
    Test,
    Simulate,
    Qq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelArg {
    Epanechnikov,
    Spherical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyArg {
    #[default]
    Literal,
    Cvm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum XiArg {
    #[default]
    Rosenblatt,
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizationArg {
    #[default]
    InverseInformation,
    GramDiagonal,
}

/// Full configuration of one CLI run.
#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "vctail", version, about = "Varying-coefficient tail index regression")]
pub struct RunConfig {
    #[arg(long, value_enum)]
    pub command: Command,
    /// CSV file with a header row (not used by `simulate`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Directory receiving the result files; created if missing.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub response: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub x_cols: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub t_cols: Vec<String>,
    /// Drop the intercept from the design.
    #[arg(long)]
    pub no_intercept: bool,
    #[arg(long, value_enum, default_value_t = KernelArg::Epanechnikov)]
    pub kernel: KernelArg,
    /// Common bandwidth on every smoothing axis; skips cross-validation.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Candidate bandwidths for cross-validation.
    #[arg(long, value_delimiter = ',')]
    pub bandwidth_grid: Vec<f64>,
    /// Sample fraction above the threshold; skips threshold selection.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Candidate sample fractions for threshold selection.
    #[arg(long, value_delimiter = ',')]
    pub fraction_grid: Vec<f64>,
    /// Sample fraction fixing the threshold during cross-validation.
    #[arg(long, default_value_t = 0.2)]
    pub cv_fraction: f64,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Lattice points per axis (default 101 when q = 1, 21 otherwise).
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Covariate columns to replace by jittered normal scores.
    #[arg(long, value_delimiter = ',')]
    pub normal_score: Vec<String>,
    #[arg(long, value_enum, default_value_t)]
    pub discrepancy_variant: DiscrepancyArg,
    #[arg(long, value_enum, default_value_t)]
    pub xi_variant: XiArg,
    #[arg(long, value_enum, default_value_t)]
    pub standardization: StandardizationArg,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    #[arg(long, default_value_t = 1000)]
    pub envelope_reps: usize,
    /// Benchmark setting for `simulate` (1, 2 or 3).
    #[arg(long, default_value_t = 1)]
    pub setting: u8,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 100)]
    pub replications: usize,
    /// Run everything on the calling thread.
    #[arg(long)]
    pub serial: bool,
}

impl RunConfig {
    fn mode(&self) -> ExecMode {
        if self.serial {
            ExecMode::Serial
        } else {
            ExecMode::Parallel
        }
    }

    fn discrepancy(&self) -> DiscrepancyVariant {
        match self.discrepancy_variant {
            DiscrepancyArg::Literal => DiscrepancyVariant::Literal,
            DiscrepancyArg::Cvm => DiscrepancyVariant::Cvm,
        }
    }

    fn test_options(&self) -> TestOptions {
        TestOptions {
            xi_variant: match self.xi_variant {
                XiArg::Rosenblatt => XiVariant::Rosenblatt,
                XiArg::Printed => XiVariant::Printed,
            },
            standardization: match self.standardization {
                StandardizationArg::InverseInformation => Standardization::InverseInformation,
                StandardizationArg::GramDiagonal => Standardization::GramDiagonal,
            },
        }
    }

    fn kernel_spec(&self, q: usize) -> KernelSpec {
        match self.kernel {
            KernelArg::Epanechnikov => KernelSpec::epanechnikov(q),
            KernelArg::Spherical => KernelSpec::spherical(q),
        }
    }

    fn bandwidth_candidates(&self) -> Vec<f64> {
        match (self.bandwidth, self.bandwidth_grid.is_empty()) {
            (Some(h), _) => vec![h],
            (None, false) => self.bandwidth_grid.clone(),
            (None, true) => vec![0.1, 0.2, 0.3, 0.4, 0.5],
        }
    }

    fn fraction_candidates(&self) -> Vec<f64> {
        match (self.fraction, self.fraction_grid.is_empty()) {
            (Some(f), _) => vec![f],
            (None, false) => self.fraction_grid.clone(),
            (None, true) => default_threshold_fractions(),
        }
    }

    fn grid_size(&self, q: usize) -> usize {
        self.grid_size.unwrap_or(if q == 1 { 101 } else { 21 })
    }
}

/// Column names mapped onto the model roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnMapping {
    pub response: String,
    pub x: Vec<String>,
    pub t: Vec<String>,
}

impl ColumnMapping {
    fn validate(&self) -> Result<()> {
        if self.t.is_empty() {
            return Err(Error::InvalidConfig("at least one t column is required".into()));
        }
        let mut all: Vec<&String> = std::iter::once(&self.response).chain(&self.x).chain(&self.t).collect();
        all.sort();
        if let Some(w) = all.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig(format!("column {} is used twice", w[0])));
        }
        Ok(())
    }
}

/// Reads `path`, picks the mapped columns, validates the sample and rescales
/// every `t` column onto `[0, 1]`. Rows in errors are 1-based data rows.
pub fn ingest_csv(path: &Path, mapping: &ColumnMapping) -> Result<(Dataset, Vec<AffineMap>)> {
    mapping.validate()?;
    if !path.is_file() {
        return Err(Error::FileNotFound(path.display().to_string()));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let headers = reader.headers().map_err(|e| Error::Io(e.to_string()))?.clone();
    let index = |name: &String| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::InvalidConfig(format!("column {name} not found in {}", path.display())))
    };
    let y_idx = index(&mapping.response)?;
    let x_idx: Vec<usize> = mapping.x.iter().map(index).collect::<Result<_>>()?;
    let t_idx: Vec<usize> = mapping.t.iter().map(index).collect::<Result<_>>()?;

    let (mut y, mut x, mut t) = (Vec::new(), Vec::new(), Vec::new());
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cell = |idx: usize| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|e| Error::Parse {
                row,
                column: headers[idx].to_string(),
                message: format!("{raw:?}: {e}"),
            })
        };
        let yv = cell(y_idx)?;
        if yv.is_finite() && yv <= 0.0 {
            return Err(Error::NonPositiveResponse { row, value: yv });
        }
        y.push(yv);
        for &j in &x_idx {
            x.push(cell(j)?);
        }
        for &k in &t_idx {
            t.push(cell(k)?);
        }
    }
    let data = Dataset::from_columns(y, x, t, x_idx.len(), t_idx.len()).map_err(|e| match e {
        Error::NonFiniteValue { row } => Error::NonFiniteValue { row: row + 1 },
        other => other,
    })?;
    rescale_t_to_unit_cube(&data)
}

/// Jittered normal scores `Phi^{-1}((R - 3/8) / (n + 1/4))`. The jitter is
/// uniform on `(-e/2, e/2)` with `e` half the smallest nonzero gap between
/// values, so it only breaks ties.
pub fn normal_score_transform<R: Rng + ?Sized>(column: &[f64], rng: &mut R) -> Vec<f64> {
    let n = column.len();
    let mut sorted = column.to_vec();
    sort_ascending(&mut sorted);
    let gap = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|g| *g > 0.0)
        .fold(f64::INFINITY, f64::min);
    let eps = if gap.is_finite() { gap / 2.0 } else { 0.0 };
    let jittered: Vec<f64> = column
        .iter()
        .map(|v| v + if eps > 0.0 { rng.random_range(-eps / 2.0..eps / 2.0) } else { 0.0 })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| jittered[a].total_cmp(&jittered[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; n];
    for (rank0, &i) in order.iter().enumerate() {
        out[i] = normal_quantile((rank0 as f64 + 1.0 - 0.375) / (n as f64 + 0.25));
    }
    out
}

fn apply_normal_scores(data: &Dataset, mapping: &ColumnMapping, columns: &[String], seed: u64) -> Result<Dataset> {
    if columns.is_empty() {
        return Ok(data.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (n, p, q) = (data.n(), data.p(), data.q());
    let mut x: Vec<f64> = (0..n).flat_map(|i| data.x_row(i).to_vec()).collect();
    for name in columns {
        let j = mapping
            .x
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::InvalidConfig(format!("normal-score column {name} is not an x column")))?;
        let col: Vec<f64> = (0..n).map(|i| x[i * p + j]).collect();
        for (i, v) in normal_score_transform(&col, &mut rng).into_iter().enumerate() {
            x[i * p + j] = v;
        }
    }
    let t: Vec<f64> = (0..n).flat_map(|i| data.t_row(i).to_vec()).collect();
    Dataset::from_columns(data.responses().to_vec(), x, t, p, q)
}

/// Machine-readable error record written to stderr by the binary.
pub fn error_record(kind: &str, category: &str, message: &str) -> String {
    json!({ "error": { "kind": kind, "category": category, "message": message } }).to_string()
}

pub fn error_record_for(e: &Error) -> String {
    let category = match e.category() {
        crate::ErrorCategory::Usage => "usage",
        crate::ErrorCategory::Data => "data",
        crate::ErrorCategory::Numerical => "numerical",
    };
    error_record(e.kind(), category, &e.to_string())
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Io(e.to_string())
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(header).map_err(io_err)?;
    for r in rows {
        w.write_record(r).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Writes a grid fit; `t_names` label the lattice coordinates.
pub fn write_grid_fit(path: &Path, fit: &GridFit, t_names: &[String]) -> Result<()> {
    let d = fit
        .fits
        .iter()
        .find_map(|f| f.as_ref().ok().map(|c| c.theta.len()))
        .unwrap_or(0);
    let mut header = vec!["point".to_string()];
    header.extend(t_names.iter().cloned());
    header.push("status".into());
    header.extend((0..d).map(|k| fit.config.coefficient_name(k)));
    header.extend(["local_exceedance_weight", "converged", "iterations", "gradient_norm", "message"].map(String::from));
    let rows: Vec<Vec<String>> = fit
        .grid
        .iter()
        .zip(&fit.fits)
        .enumerate()
        .map(|(l, (t, f))| {
            let mut row = vec![l.to_string()];
            row.extend(t.iter().map(|v| fmt(*v)));
            match f {
                Ok(c) => {
                    row.push("ok".into());
                    row.extend(c.theta.iter().map(|v| fmt(*v)));
                    row.push(fmt(c.local_exceedance_weight));
                    row.push(c.converged.to_string());
                    row.push(c.iterations.to_string());
                    row.push(fmt(c.gradient_norm));
                    row.push(String::new());
                }
                Err(e) => {
                    row.push(e.kind.clone());
                    row.extend(vec![String::new(); d + 4]);
                    row.push(e.message.clone());
                }
            }
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}

/// Reads a file written by [`write_grid_fit`] back into a [`GridFit`].
pub fn read_grid_fit(path: &Path, config: FitConfig) -> Result<GridFit> {
    if !path.is_file() {
        return Err(Error::FileNotFound(path.display().to_string()));
    }
    let mut reader = csv::Reader::from_path(path).map_err(io_err)?;
    let headers = reader.headers().map_err(io_err)?.clone();
    let status = headers
        .iter()
        .position(|h| h == "status")
        .ok_or_else(|| Error::Parse {
            row: 0,
            column: "status".into(),
            message: "missing column".into(),
        })?;
    let q = status - 1;
    let d = headers.len() - status - 6;
    let mut grid = Vec::new();
    let mut fits = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(io_err)?;
        let num = |idx: usize| -> Result<f64> {
            record[idx].parse::<f64>().map_err(|e| Error::Parse {
                row,
                column: headers[idx].to_string(),
                message: e.to_string(),
            })
        };
        let t: Vec<f64> = (1..=q).map(num).collect::<Result<_>>()?;
        let kind = &record[status];
        if kind == "ok" {
            let theta: Vec<f64> = (status + 1..status + 1 + d).map(num).collect::<Result<_>>()?;
            let base = status + 1 + d;
            let converged = record[base + 1] == *"true";
            let iterations = record[base + 2].parse::<usize>().map_err(|e| Error::Parse {
                row,
                column: headers[base + 2].to_string(),
                message: e.to_string(),
            })?;
            fits.push(Ok(CoefficientFit {
                location: t.clone(),
                theta,
                local_exceedance_weight: num(base)?,
                converged,
                iterations,
                gradient_norm: num(base + 3)?,
            }));
        } else {
            fits.push(Err(PointFailure {
                kind: kind.to_string(),
                message: record[headers.len() - 1].to_string(),
            }));
        }
        grid.push(t);
    }
    GridFit::new(grid, fits, config)
}

#[derive(Debug, Serialize)]
struct DataSummary {
    n: usize,
    p: usize,
    q: usize,
    columns: ColumnMapping,
    t_maps: Vec<AffineMap>,
    normal_score: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectedTuning {
    pub bandwidths: Vec<f64>,
    pub threshold: f64,
    pub exceedances: usize,
    pub exceedance_fraction: f64,
}

/// Contents of `manifest.json`.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Command,
    pub seed: u64,
    pub variants: serde_json::Value,
    pub config: RunConfig,
    pub data: Option<serde_json::Value>,
    pub tuning: Option<SelectedTuning>,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
}

struct Loaded {
    data: Dataset,
    mapping: ColumnMapping,
    summary: DataSummary,
}

fn load(cfg: &RunConfig) -> Result<Loaded> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--input is required".into()))?;
    let mapping = ColumnMapping {
        response: cfg
            .response
            .clone()
            .ok_or_else(|| Error::InvalidConfig("--response is required".into()))?,
        x: cfg.x_cols.clone(),
        t: cfg.t_cols.clone(),
    };
    if cfg.no_intercept && mapping.x.is_empty() {
        return Err(Error::InvalidConfig("a model without intercept needs x columns".into()));
    }
    let (raw, maps) = ingest_csv(input, &mapping)?;
    let data = apply_normal_scores(&raw, &mapping, &cfg.normal_score, cfg.seed)?;
    let summary = DataSummary {
        n: data.n(),
        p: data.p(),
        q: data.q(),
        columns: mapping.clone(),
        t_maps: maps,
        normal_score: cfg.normal_score.clone(),
    };
    Ok(Loaded { data, mapping, summary })
}

fn tuning_plan(cfg: &RunConfig, q: usize) -> TuningPlan {
    TuningPlan {
        kernel: cfg.kernel_spec(q),
        include_intercept: !cfg.no_intercept,
        cv_fraction: cfg.cv_fraction,
        bandwidth_candidates: cfg.bandwidth_candidates().into_iter().map(|h| vec![h; q]).collect(),
        folds: cfg.folds.unwrap_or(20),
        threshold_fractions: cfg.fraction_candidates(),
        discrepancy: cfg.discrepancy(),
        seed: cfg.seed,
    }
}

/// Fixed tuning when both `--bandwidth` and `--fraction` are given, the
/// two-step selection otherwise.
fn resolve(cfg: &RunConfig, data: &Dataset) -> Result<(FitConfig, Option<TuningResult>)> {
    let q = data.q();
    let kernel = cfg.kernel_spec(q);
    let (bandwidths, threshold, result) = match (cfg.bandwidth, cfg.fraction) {
        (Some(h), Some(f)) => (vec![h; q], threshold_for_fraction(data.responses(), f)?, None),
        _ => {
            let r = tune(data, &tuning_plan(cfg, q), cfg.mode())?;
            (r.bandwidths.clone(), r.threshold, Some(r))
        }
    };
    Ok((FitConfig::new(kernel, bandwidths, threshold, !cfg.no_intercept)?, result))
}

fn selected(data: &Dataset, fc: &FitConfig) -> SelectedTuning {
    let exceedances = data.responses().iter().filter(|&&y| y > fc.threshold).count();
    SelectedTuning {
        bandwidths: fc.bandwidths.clone(),
        threshold: fc.threshold,
        exceedances,
        exceedance_fraction: exceedances as f64 / data.n() as f64,
    }
}

fn write_tuning_tables(dir: &Path, result: &TuningResult, n: usize, outputs: &mut Vec<String>) -> Result<()> {
    let q = result.bandwidths.len();
    let mut header: Vec<String> = (1..=q).map(|k| format!("h{k}")).collect();
    header.extend(["cv_score", "failed_fits"].map(String::from));
    let rows: Vec<Vec<String>> = result
        .cv_table
        .iter()
        .map(|r| {
            let mut row: Vec<String> = r.bandwidths.iter().map(|v| fmt(*v)).collect();
            row.push(fmt_opt(r.score));
            row.push(r.failed_fits.to_string());
            row
        })
        .collect();
    write_csv(&dir.join("cv_table.csv"), &header, &rows)?;
    let header = ["threshold", "exceedances", "exceedance_fraction", "discrepancy", "failure"].map(String::from);
    let rows: Vec<Vec<String>> = result
        .dm_table
        .iter()
        .map(|r| {
            vec![
                fmt(r.threshold),
                r.exceedances.to_string(),
                fmt(r.exceedances as f64 / n as f64),
                fmt_opt(r.discrepancy),
                r.failure.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(&dir.join("dm_table.csv"), &header, &rows)?;
    outputs.extend(["cv_table.csv".to_string(), "dm_table.csv".to_string()]);
    Ok(())
}

fn write_intervals(path: &Path, fit: &GridFit, ctx: &TestContext, t_names: &[String], level: f64) -> Result<()> {
    let d = fit.config.design_dim(0).max(
        fit.fits
            .iter()
            .find_map(|f| f.as_ref().ok().map(|c| c.theta.len()))
            .unwrap_or(0),
    );
    let mut header = vec!["point".to_string()];
    header.extend(t_names.iter().cloned());
    header.extend(["coefficient", "estimate", "low", "high"].map(String::from));
    let mut rows = Vec::new();
    for k in 0..d {
        let ci = ctx.pointwise_ci(k, level)?;
        for (l, (t, (est, band))) in fit.grid.iter().zip(fit.coefficient(k).into_iter().zip(ci)).enumerate() {
            let mut row = vec![l.to_string()];
            row.extend(t.iter().map(|v| fmt(*v)));
            row.push(fit.config.coefficient_name(k));
            row.push(fmt_opt(est));
            row.push(fmt_opt(band.map(|b| b.0)));
            row.push(fmt_opt(band.map(|b| b.1)));
            rows.push(row);
        }
    }
    write_csv(path, &header, &rows)
}

fn test_rows(fit: &GridFit, ctx: &TestContext, alpha: f64, d: usize) -> Vec<(String, &'static str, Result<TestOutcome>)> {
    let mut out = Vec::new();
    for k in 0..d {
        let name = fit.config.coefficient_name(k);
        out.push((name.clone(), "constant", ctx.test_constant(k, alpha)));
        out.push((name, "zero", ctx.test_zero(k, alpha)));
    }
    out
}

fn write_tests(path: &Path, rows: &[(String, &'static str, Result<TestOutcome>)]) -> Result<()> {
    let header = [
        "coefficient",
        "null",
        "constant",
        "statistic",
        "critical_low",
        "critical_high",
        "p_value",
        "rejected",
        "skipped_points",
        "status",
    ]
    .map(String::from);
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, null, r)| match r {
            Ok(o) => vec![
                name.clone(),
                null.to_string(),
                match o.null {
                    crate::hypothesis::NullHypothesis::Constant(c) => fmt(c),
                    crate::hypothesis::NullHypothesis::Zero => String::new(),
                },
                fmt(o.statistic),
                fmt(o.critical_low),
                fmt(o.critical_high),
                fmt(o.p_value),
                o.rejected.to_string(),
                o.skipped_points.to_string(),
                "ok".into(),
            ],
            Err(e) => {
                let mut row = vec![name.clone(), null.to_string()];
                row.extend(vec![String::new(); 7]);
                row.push(e.kind().to_string());
                row
            }
        })
        .collect();
    write_csv(path, &header, &rows)
}

fn write_mc(dir: &Path, report: &McReport) -> Result<()> {
    let header = ["coefficient", "mse", "rr_constant", "rr_zero", "constant_tests_failed", "zero_tests_failed"]
        .map(String::from);
    let rows: Vec<Vec<String>> = report
        .coefficients
        .iter()
        .map(|c| {
            vec![
                c.name.clone(),
                fmt_opt(c.mse),
                fmt_opt(c.rr_constant),
                fmt_opt(c.rr_zero),
                c.constant_tests_failed.to_string(),
                c.zero_tests_failed.to_string(),
            ]
        })
        .collect();
    write_csv(&dir.join("mc_summary.csv"), &header, &rows)?;
    let header = ["replication", "bandwidth", "threshold", "exceedance_fraction", "failed_grid_points", "failure"]
        .map(String::from);
    let rows: Vec<Vec<String>> = report
        .replications
        .iter()
        .map(|r| {
            vec![
                r.index.to_string(),
                fmt_opt(r.bandwidths.as_ref().map(|b| b[0])),
                fmt_opt(r.threshold),
                fmt_opt(r.exceedance_fraction),
                r.failed_grid_points.to_string(),
                r.failure.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(&dir.join("mc_replications.csv"), &header, &rows)
}

/// Executes one command and writes its artifacts plus `manifest.json`.
pub fn run(cfg: &RunConfig) -> Result<Manifest> {
    critical_values(cfg.alpha)?;
    fs::create_dir_all(&cfg.output).map_err(io_err)?;
    let dir = cfg.output.as_path();
    let mode = cfg.mode();
    let options = cfg.test_options();
    let mut outputs = Vec::new();
    let mut data_summary = None;
    let mut tuning = None;
    let summary;

    match cfg.command {
        Command::Simulate => {
            let setting = SimSetting::new(cfg.setting, cfg.n, cfg.delta)?;
            let mut mc = McConfig::new(setting, cfg.replications, cfg.seed);
            mc.alpha = cfg.alpha;
            mc.test_options = options;
            if let Some(g) = cfg.grid_size {
                mc.grid_points_per_axis = g;
            }
            mc.policy = match (cfg.bandwidth, cfg.fraction) {
                (Some(bandwidth), Some(fraction)) => TuningPolicy::Fixed { bandwidth, fraction },
                _ => TuningPolicy::Tuned {
                    cv_fraction: cfg.cv_fraction,
                    bandwidth_candidates: cfg.bandwidth_candidates(),
                    folds: cfg.folds.unwrap_or(setting.folds()),
                    threshold_fractions: cfg.fraction_candidates(),
                    discrepancy: cfg.discrepancy(),
                },
            };
            let report = run_monte_carlo(&mc, mode)?;
            write_mc(dir, &report)?;
            outputs.extend(["mc_summary.csv".to_string(), "mc_replications.csv".to_string()]);
            summary = json!({
                "setting": setting,
                "replications": report.config.replications,
                "completed": report.completed,
                "failed": report.failed,
                "policy": report.config.policy,
                "grid_points_per_axis": report.config.grid_points_per_axis,
            });
        }
        Command::Tune => {
            let loaded = load(cfg)?;
            let data = &loaded.data;
            let result = tune(data, &tuning_plan(cfg, data.q()), mode)?;
            write_tuning_tables(dir, &result, data.n(), &mut outputs)?;
            let fc = FitConfig::new(cfg.kernel_spec(data.q()), result.bandwidths.clone(), result.threshold, !cfg.no_intercept)?;
            tuning = Some(selected(data, &fc));
            summary = json!({ "cv_threshold": threshold_for_fraction(data.responses(), cfg.cv_fraction)? });
            data_summary = Some(loaded.summary);
        }
        Command::Fit | Command::Test | Command::Qq => {
            let loaded = load(cfg)?;
            let data = &loaded.data;
            let (fc, tuned) = resolve(cfg, data)?;
            if let Some(r) = &tuned {
                write_tuning_tables(dir, r, data.n(), &mut outputs)?;
            }
            tuning = Some(selected(data, &fc));
            let dm = discrepancy(data, &fc, cfg.discrepancy(), mode).ok();
            match cfg.command {
                Command::Qq => {
                    let residuals = exponential_residuals(data, &fc, mode)?;
                    let qq = qq_data(&residuals, cfg.envelope_reps, cfg.seed, mode)?;
                    let header = ["theoretical", "empirical", "envelope_low", "envelope_high"].map(String::from);
                    let rows: Vec<Vec<String>> = (0..qq.len())
                        .map(|l| {
                            vec![
                                fmt(qq.theoretical[l]),
                                fmt(qq.empirical[l]),
                                fmt_opt(qq.envelope_low.as_ref().map(|v| v[l])),
                                fmt_opt(qq.envelope_high.as_ref().map(|v| v[l])),
                            ]
                        })
                        .collect();
                    write_csv(&dir.join("qq.csv"), &header, &rows)?;
                    outputs.push("qq.csv".into());
                    let u: Vec<f64> = residuals.iter().map(|e| (-e).exp()).collect();
                    summary = json!({
                        "exceedances": residuals.len(),
                        "ks_exponential": ks_statistic(&residuals, Reference::Exp1)?,
                        "ks_uniform": ks_statistic(&u, Reference::Uniform01)?,
                        "fraction_outside_envelope": qq.fraction_outside(),
                        "envelope_reps": cfg.envelope_reps,
                        "discrepancy": dm,
                    });
                }
                _ => {
                    let grid_fit = fit_grid(data, cfg.grid_size(data.q()), &fc, mode)?;
                    write_grid_fit(&dir.join("grid_fit.csv"), &grid_fit, &loaded.mapping.t)?;
                    outputs.push("grid_fit.csv".into());
                    let d = fc.design_dim(data.p());
                    let ctx = TestContext::new(data, &grid_fit, &options);
                    if cfg.command == Command::Fit {
                        if let Ok(ctx) = &ctx {
                            write_intervals(&dir.join("intervals.csv"), &grid_fit, ctx, &loaded.mapping.t, cfg.ci_level)?;
                            outputs.push("intervals.csv".into());
                        }
                        summary = json!({
                            "grid_points": grid_fit.len(),
                            "failed_points": grid_fit.failed_count(),
                            "discrepancy": dm,
                            "ci_level": cfg.ci_level,
                        });
                    } else {
                        let ctx = ctx?;
                        let rows = test_rows(&grid_fit, &ctx, cfg.alpha, d);
                        write_tests(&dir.join("tests.csv"), &rows)?;
                        outputs.push("tests.csv".into());
                        summary = json!({
                            "grid_points": grid_fit.len(),
                            "failed_points": grid_fit.failed_count(),
                            "dn": ctx.dn(),
                            "critical_values": critical_values(cfg.alpha)?,
                            "discrepancy": dm,
                        });
                    }
                }
            }
            data_summary = Some(loaded.summary);
        }
    }

    let manifest = Manifest {
        tool: "vctail",
        version: env!("CARGO_PKG_VERSION"),
        command: cfg.command,
        seed: cfg.seed,
        variants: json!({
            "xi": cfg.xi_variant,
            "discrepancy": cfg.discrepancy_variant,
            "standardization": cfg.standardization,
        }),
        config: cfg.clone(),
        data: data_summary.map(|d| serde_json::to_value(d).unwrap_or_default()),
        tuning,
        outputs,
        summary,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(io_err)?;
    fs::write(dir.join("manifest.json"), text + "\n").map_err(io_err)?;
    Ok(manifest)
}
