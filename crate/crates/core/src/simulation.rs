//! Synthetic data for the three benchmark settings and a seeded Monte Carlo
//! driver that runs the full tuning and testing pipeline on each replication.
//!
//! Responses follow the second-order Pareto-type law
//!
//! ```text
//! 1 - F(y) = (1 + delta) y^{-1/gamma} / (1 + delta y^{-1/gamma}),   y >= 1
//! ```
//!
//! with `log(1/gamma) = z' theta(t)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::fit_grid;
use crate::hypothesis::{TestContext, TestOptions, TestOutcome};
use crate::kernels::KernelSpec;
use crate::model::{Dataset, ExecMode, FitConfig};
use crate::stats::normal_cdf;
use crate::tuning::{default_threshold_fractions, threshold_for_fraction, tune, DiscrepancyVariant, TuningPlan};

/// One of the three benchmark designs at a given sample size and `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSetting {
    pub id: u8,
    pub n: usize,
    pub delta: f64,
}

impl SimSetting {
    pub fn new(id: u8, n: usize, delta: f64) -> Result<Self> {
        if !(1..=3).contains(&id) {
            return Err(Error::InvalidConfig(format!("unknown setting {id}")));
        }
        if n < 2 {
            return Err(Error::InvalidConfig(format!("sample size {n} too small")));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidConfig(format!("delta must be nonnegative, got {delta}")));
        }
        Ok(Self { id, n, delta })
    }

    pub fn p(&self) -> usize {
        match self.id {
            1 => 3,
            2 => 10,
            _ => 2,
        }
    }

    pub fn q(&self) -> usize {
        if self.id == 3 { 2 } else { 1 }
    }

    pub fn with_intercept(&self) -> bool {
        self.id == 3
    }

    pub fn kernel(&self) -> KernelSpec {
        if self.id == 3 {
            KernelSpec::spherical(2)
        } else {
            KernelSpec::epanechnikov(1)
        }
    }

    /// Cross-validation folds used by the benchmark protocol.
    pub fn folds(&self) -> usize {
        if self.id == 3 { 50 } else { 20 }
    }

    /// Lattice resolution for MSE and tests.
    pub fn grid_points_per_axis(&self) -> usize {
        if self.q() == 1 { 101 } else { 11 }
    }

    pub fn design_dim(&self) -> usize {
        self.p() + usize::from(self.with_intercept())
    }

    /// Display name of design coefficient `k`.
    pub fn coefficient_name(&self, k: usize) -> String {
        format!("theta{}", if self.with_intercept() { k } else { k + 1 })
    }

    /// True value of design coefficient `k` at `t`.
    pub fn truth(&self, k: usize, t: &[f64]) -> f64 {
        match (self.id, k) {
            (1 | 2, 0) => 1.0,
            (1 | 2, 1) => (2.0 * t[0]).cos(),
            (3, 0) => 2.0,
            (3, 1) => {
                let r2: f64 = t.iter().map(|v| (v - 0.5).powi(2)).sum();
                -(-10.0 * r2).exp()
            }
            _ => 0.0,
        }
    }

    /// `gamma(x, t) = exp(-z' theta(t))`.
    pub fn gamma(&self, x: &[f64], t: &[f64]) -> f64 {
        let offset = usize::from(self.with_intercept());
        let mut s = if offset == 1 { self.truth(0, t) } else { 0.0 };
        for (j, v) in x.iter().enumerate() {
            s += v * self.truth(j + offset, t);
        }
        (-s).exp()
    }
}

/// Inverse of the tail function: the `y` with `1 - F(y) = u`.
pub fn sample_response(gamma: f64, delta: f64, u: f64) -> f64 {
    (u / (1.0 + delta - u * delta)).powf(-gamma)
}

/// The tail function `1 - F(y)`.
pub fn tail_probability(gamma: f64, delta: f64, y: f64) -> f64 {
    let v = y.powf(-1.0 / gamma);
    (1.0 + delta) * v / (1.0 + delta * v)
}

/// `n x p` row-major covariates, uniform on `[-sqrt 3, sqrt 3]` with a
/// Gaussian copula of correlation `0.5^{|j1 - j2|}`.
pub fn gen_x<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Vec<f64> {
    let cov = DMatrix::from_fn(p, p, |a, b| 0.5f64.powi((a as i32 - b as i32).abs()));
    let chol = cov.cholesky().expect("AR(1) correlation matrix is positive definite").unpack();
    let scale = 12f64.sqrt();
    let mut out = Vec::with_capacity(n * p);
    for _ in 0..n {
        let e = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = &chol * e;
        out.extend(z.iter().map(|&v| scale * (normal_cdf(v) - 0.5)));
    }
    out
}

/// `n x q` row-major smoothing coordinates, independent uniform on `[-0.2, 1.2]`.
pub fn gen_t<R: Rng + ?Sized>(n: usize, q: usize, rng: &mut R) -> Vec<f64> {
    (0..n * q).map(|_| rng.random_range(-0.2..1.2)).collect()
}

/// Draws a dataset for `setting`. Covariates come first, then coordinates,
/// then the uniforms driving the responses.
pub fn gen_dataset<R: Rng + ?Sized>(setting: &SimSetting, rng: &mut R) -> Dataset {
    let (n, p, q) = (setting.n, setting.p(), setting.q());
    let x = gen_x(n, p, rng);
    let t = gen_t(n, q, rng);
    let y = (0..n)
        .map(|i| {
            let u: f64 = loop {
                let u = rng.random::<f64>();
                if u > 0.0 {
                    break u;
                }
            };
            let gamma = setting.gamma(&x[i * p..(i + 1) * p], &t[i * q..(i + 1) * q]);
            sample_response(gamma, setting.delta, u)
        })
        .collect();
    Dataset::from_columns(y, x, t, p, q).expect("generated data is valid")
}

/// Mean squared error over an `M x L` table of estimates.
pub fn mse(estimates: &[Vec<f64>], truth: &[f64]) -> Result<f64> {
    let cells: Vec<Vec<Option<f64>>> = estimates
        .iter()
        .map(|row| row.iter().copied().map(Some).collect())
        .collect();
    mse_partial(&cells, truth).map(|(v, _)| v)
}

/// Like [`mse`] but skipping missing cells; also returns the cell count.
pub fn mse_partial(estimates: &[Vec<Option<f64>>], truth: &[f64]) -> Result<(f64, usize)> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (m, row) in estimates.iter().enumerate() {
        if row.len() != truth.len() {
            return Err(Error::ShapeMismatch(format!(
                "replication {m} has {} points, truth has {}",
                row.len(),
                truth.len()
            )));
        }
        for (est, tr) in row.iter().zip(truth) {
            if let Some(v) = est {
                sum += (v - tr).powi(2);
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput);
    }
    Ok((sum / count as f64, count))
}

pub fn rejection_rate(outcomes: &[TestOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(outcomes.iter().filter(|o| o.rejected).count() as f64 / outcomes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum TuningPolicy {
    /// Full two-step tuning in every replication. A common bandwidth is used
    /// on every axis.
    Tuned {
        cv_fraction: f64,
        bandwidth_candidates: Vec<f64>,
        folds: usize,
        threshold_fractions: Vec<f64>,
        discrepancy: DiscrepancyVariant,
    },
    Fixed { bandwidth: f64, fraction: f64 },
}

impl TuningPolicy {
    /// The benchmark protocol: fraction 0.2 for cross-validation, candidate
    /// bandwidths 0.1 to 0.5, and the default threshold fractions.
    pub fn benchmark(setting: &SimSetting) -> Self {
        TuningPolicy::Tuned {
            cv_fraction: 0.2,
            bandwidth_candidates: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            folds: setting.folds(),
            threshold_fractions: default_threshold_fractions(),
            discrepancy: DiscrepancyVariant::Literal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub setting: SimSetting,
    pub replications: usize,
    pub policy: TuningPolicy,
    pub seed: u64,
    pub alpha: f64,
    pub grid_points_per_axis: usize,
    pub test_options: TestOptions,
}

impl McConfig {
    pub fn new(setting: SimSetting, replications: usize, seed: u64) -> Self {
        Self {
            policy: TuningPolicy::benchmark(&setting),
            grid_points_per_axis: setting.grid_points_per_axis(),
            setting,
            replications,
            seed,
            alpha: 0.05,
            test_options: TestOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub name: String,
    pub mse: Option<f64>,
    pub rr_constant: Option<f64>,
    pub rr_zero: Option<f64>,
    /// Replications whose test could not be carried out.
    pub constant_tests_failed: usize,
    pub zero_tests_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    pub bandwidths: Option<Vec<f64>>,
    pub threshold: Option<f64>,
    pub exceedance_fraction: Option<f64>,
    pub failed_grid_points: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub config: McConfig,
    pub completed: usize,
    pub failed: usize,
    pub coefficients: Vec<CoefficientSummary>,
    pub replications: Vec<ReplicationRecord>,
}

struct Replication {
    record: ReplicationRecord,
    estimates: Vec<Vec<Option<f64>>>,
    constant: Vec<Option<TestOutcome>>,
    zero: Vec<Option<TestOutcome>>,
}

/// Generator for replication `m`: an independent ChaCha stream of the master seed.
pub fn replication_rng(seed: u64, m: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(m as u64);
    rng
}

fn run_replication(cfg: &McConfig, m: usize) -> Replication {
    let setting = &cfg.setting;
    let d = setting.design_dim();
    let mut rng = replication_rng(cfg.seed, m);
    let data = gen_dataset(setting, &mut rng);
    let cv_seed: u64 = rng.random();
    let mut record = ReplicationRecord {
        index: m,
        bandwidths: None,
        threshold: None,
        exceedance_fraction: None,
        failed_grid_points: 0,
        failure: None,
    };
    let empty = |record: ReplicationRecord| Replication {
        record,
        estimates: vec![Vec::new(); d],
        constant: vec![None; d],
        zero: vec![None; d],
    };

    let tuned = match &cfg.policy {
        TuningPolicy::Tuned {
            cv_fraction,
            bandwidth_candidates,
            folds,
            threshold_fractions,
            discrepancy,
        } => {
            let plan = TuningPlan {
                kernel: setting.kernel(),
                include_intercept: setting.with_intercept(),
                cv_fraction: *cv_fraction,
                bandwidth_candidates: bandwidth_candidates.iter().map(|&h| vec![h; setting.q()]).collect(),
                folds: *folds,
                threshold_fractions: threshold_fractions.clone(),
                discrepancy: *discrepancy,
                seed: cv_seed,
            };
            tune(&data, &plan, ExecMode::Serial).map(|r| (r.bandwidths, r.threshold))
        }
        TuningPolicy::Fixed { bandwidth, fraction } => threshold_for_fraction(data.responses(), *fraction)
            .map(|w| (vec![*bandwidth; setting.q()], w)),
    };
    let (bandwidths, threshold) = match tuned {
        Ok(v) => v,
        Err(e) => {
            record.failure = Some(e.kind().to_string());
            return empty(record);
        }
    };
    record.exceedance_fraction =
        Some(data.responses().iter().filter(|&&y| y > threshold).count() as f64 / data.n() as f64);
    record.bandwidths = Some(bandwidths.clone());
    record.threshold = Some(threshold);

    let grid_fit = FitConfig::new(setting.kernel(), bandwidths, threshold, setting.with_intercept())
        .and_then(|fc| fit_grid(&data, cfg.grid_points_per_axis, &fc, ExecMode::Serial));
    let grid_fit = match grid_fit {
        Ok(g) => g,
        Err(e) => {
            record.failure = Some(e.kind().to_string());
            return empty(record);
        }
    };
    record.failed_grid_points = grid_fit.failed_count();
    let estimates: Vec<Vec<Option<f64>>> = (0..d).map(|k| grid_fit.coefficient(k)).collect();
    let (constant, zero) = match TestContext::new(&data, &grid_fit, &cfg.test_options) {
        Ok(ctx) => (
            (0..d).map(|k| ctx.test_constant(k, cfg.alpha).ok()).collect(),
            (0..d).map(|k| ctx.test_zero(k, cfg.alpha).ok()).collect(),
        ),
        Err(_) => (vec![None; d], vec![None; d]),
    };
    Replication {
        record,
        estimates,
        constant,
        zero,
    }
}

fn summarize(outcomes: Vec<Option<&TestOutcome>>) -> (Option<f64>, usize) {
    let failed = outcomes.iter().filter(|o| o.is_none()).count();
    let ok: Vec<TestOutcome> = outcomes.into_iter().flatten().cloned().collect();
    (rejection_rate(&ok).ok(), failed)
}

/// Runs `cfg.replications` independent replications. Results do not depend
/// on `mode`.
pub fn run_monte_carlo(cfg: &McConfig, mode: ExecMode) -> Result<McReport> {
    if cfg.replications == 0 {
        return Err(Error::InvalidConfig("at least one replication is required".into()));
    }
    crate::hypothesis::critical_values(cfg.alpha)?;
    if cfg.grid_points_per_axis < 2 {
        return Err(Error::InvalidConfig("grid needs at least 2 points per axis".into()));
    }
    let reps: Vec<Replication> = match mode {
        ExecMode::Serial => (0..cfg.replications).map(|m| run_replication(cfg, m)).collect(),
        ExecMode::Parallel => (0..cfg.replications)
            .into_par_iter()
            .map(|m| run_replication(cfg, m))
            .collect(),
    };
    let setting = &cfg.setting;
    let grid = crate::estimator::grid_points(cfg.grid_points_per_axis, setting.q());
    let ok: Vec<&Replication> = reps.iter().filter(|r| r.record.failure.is_none()).collect();
    let coefficients = (0..setting.design_dim())
        .map(|k| {
            let truth: Vec<f64> = grid.iter().map(|t| setting.truth(k, t)).collect();
            let table: Vec<Vec<Option<f64>>> = ok.iter().map(|r| r.estimates[k].clone()).collect();
            let (rr_constant, constant_tests_failed) = summarize(ok.iter().map(|r| r.constant[k].as_ref()).collect());
            let (rr_zero, zero_tests_failed) = summarize(ok.iter().map(|r| r.zero[k].as_ref()).collect());
            CoefficientSummary {
                name: setting.coefficient_name(k),
                mse: mse_partial(&table, &truth).ok().map(|(v, _)| v),
                rr_constant,
                rr_zero,
                constant_tests_failed,
                zero_tests_failed,
            }
        })
        .collect();
    Ok(McReport {
        completed: ok.len(),
        failed: reps.len() - ok.len(),
        config: cfg.clone(),
        coefficients,
        replications: reps.into_iter().map(|r| r.record).collect(),
    })
}
