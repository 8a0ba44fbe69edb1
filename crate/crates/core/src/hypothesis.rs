//! Sup-deviation tests for a single coefficient function, and pointwise
//! confidence intervals.
//!
//! For coefficient `j` and a null curve `eta` the statistic is
//!
//! ```text
//! T = a { nu^{-1/2} max_t | sqrt(s_j(t)) (theta_j(t) - eta(t)) | - d_n },   a = sqrt(-2 q log h)
//! ```
//!
//! where `s_j(t)` is the local information for `theta_j` and the max runs over
//! the fitted lattice. Under the null `T` is approximately Gumbel with
//! distribution function `G(s) = exp(-2 exp(-s))`.
//!
//! Two forms of `s_j(t)` are available through [`Standardization`]: the
//! reciprocal of the `(j, j)` entry of the inverse local Gram matrix (the
//! default), and the `(j, j)` entry of the Gram matrix itself. They agree when
//! the covariates are locally uncorrelated.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::local_gram;
use crate::kernels::{KernelSpec, XiVariant};
use crate::model::{Dataset, FitConfig, GridFit};
use crate::stats::normal_quantile;

/// Largest share of failed lattice points a test tolerates.
pub const MAX_FAILED_SHARE: f64 = 0.10;

/// Centering constant `d_n` of the maximal deviation.
pub fn dn_constant(h: f64, kernel: &KernelSpec, variant: XiVariant) -> Result<f64> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::BandwidthOutOfRange(h));
    }
    let q = kernel.dim as f64;
    let det = kernel.xi_matrix(variant).determinant();
    if det.is_nan() || det <= 0.0 {
        return Err(Error::NonPositiveXiDeterminant(det));
    }
    let a = (-2.0 * q * h.ln()).sqrt();
    let loglog = if kernel.dim > 1 { (q - 1.0) / 2.0 * (1.0 / h).ln().ln() } else { 0.0 };
    let inner = (2.0 * q / std::f64::consts::PI).powf(q / 2.0)
        * (det / (4.0 * q * std::f64::consts::PI)).sqrt();
    Ok(a + (loglog + inner.ln()) / a)
}

/// Two-sided critical values `(low, high)` with `G(low) = alpha/2` and
/// `G(high) = 1 - alpha/2`.
pub fn critical_values(alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let low = -(-0.5 * (alpha / 2.0).ln()).ln();
    let high = -(-0.5 * (1.0 - alpha / 2.0).ln()).ln();
    Ok((low, high))
}

pub fn gumbel_cdf(s: f64) -> f64 {
    (-2.0 * (-s).exp()).exp()
}

/// `min(G(s), 1 - G(s))`.
pub fn gumbel_p_value(statistic: f64) -> f64 {
    let g = gumbel_cdf(statistic);
    let upper = -(-2.0 * (-statistic).exp()).exp_m1();
    g.min(upper)
}

/// How the local information `s_j(t)` is formed from the local Gram matrix `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardization {
    /// `1 / (G^{-1})_{jj}`, the precision of `theta_j` given the other coefficients.
    #[default]
    InverseInformation,
    /// `G_{jj}`.
    GramDiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TestOptions {
    pub xi_variant: XiVariant,
    pub standardization: Standardization,
}

/// The `(j, j)` entry of the local Gram matrix at `t`.
pub fn sigma_hat(data: &Dataset, t: &[f64], j: usize, cfg: &FitConfig) -> Result<f64> {
    let gram = local_gram(data, t, cfg)?;
    let d = gram.matrix.nrows();
    if j >= d {
        return Err(Error::DimensionMismatch { expected: d, found: j + 1 });
    }
    Ok(gram.matrix[(j, j)])
}

/// `max_l |sqrt(sigma_l) (theta_l - eta_l)|` over points with an estimate,
/// together with the number of skipped points.
pub fn max_standardized_deviation(
    theta: &[Option<f64>],
    eta: &[f64],
    sigma: &[f64],
) -> Result<(f64, usize)> {
    if theta.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if eta.len() != theta.len() || sigma.len() != theta.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} estimates, {} null values, {} information values",
            theta.len(),
            eta.len(),
            sigma.len()
        )));
    }
    let mut skipped = 0;
    let mut max = f64::NEG_INFINITY;
    for ((th, e), s) in theta.iter().zip(eta).zip(sigma) {
        match th {
            Some(v) => max = max.max((s.sqrt() * (v - e)).abs()),
            None => skipped += 1,
        }
    }
    if skipped == theta.len() {
        return Err(Error::AllPointsFailed);
    }
    Ok((max, skipped))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum NullHypothesis {
    /// `theta_j == 0`.
    Zero,
    /// `theta_j` equals the stored constant, the lattice mean of the estimate.
    Constant(f64),
}

impl NullHypothesis {
    pub fn label(&self) -> &'static str {
        match self {
            NullHypothesis::Zero => "zero",
            NullHypothesis::Constant(_) => "constant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub coefficient_index: usize,
    pub null: NullHypothesis,
    pub statistic: f64,
    pub critical_low: f64,
    pub critical_high: f64,
    pub p_value: f64,
    pub rejected: bool,
    /// Lattice points left out of the max because their fit failed.
    pub skipped_points: usize,
}

/// Precomputed per-lattice quantities shared by every test on one fit.
#[derive(Debug, Clone)]
pub struct TestContext<'a> {
    grid_fit: &'a GridFit,
    /// Diagonal of the local Gram matrix at each lattice point.
    information: Vec<Vec<f64>>,
    scale: f64,
    dn: f64,
    nu: f64,
}

impl<'a> TestContext<'a> {
    pub fn new(data: &Dataset, grid_fit: &'a GridFit, options: &TestOptions) -> Result<Self> {
        if grid_fit.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let cfg = &grid_fit.config;
        let h = cfg.common_bandwidth();
        let dn = dn_constant(h, &cfg.kernel, options.xi_variant)?;
        let information = grid_information(data, grid_fit, options.standardization)?;
        Ok(Self {
            grid_fit,
            information,
            scale: (-2.0 * cfg.kernel.dim as f64 * h.ln()).sqrt(),
            dn,
            nu: cfg.kernel.nu(),
        })
    }

    pub fn dn(&self) -> f64 {
        self.dn
    }

    fn coefficient_count(&self) -> usize {
        self.information.first().map_or(0, Vec::len)
    }

    fn check_index(&self, j: usize) -> Result<()> {
        let d = self.coefficient_count();
        if j >= d {
            return Err(Error::DimensionMismatch { expected: d, found: j + 1 });
        }
        Ok(())
    }

    pub fn sigma(&self, j: usize) -> Result<Vec<f64>> {
        self.check_index(j)?;
        Ok(self.information.iter().map(|d| d[j]).collect())
    }

    /// Returns the statistic and the number of skipped lattice points.
    pub fn statistic(&self, j: usize, eta: &[f64]) -> Result<(f64, usize)> {
        let theta = self.grid_fit.coefficient(j);
        let (max, skipped) = max_standardized_deviation(&theta, eta, &self.sigma(j)?)?;
        let total = theta.len();
        if skipped as f64 > MAX_FAILED_SHARE * total as f64 {
            return Err(Error::TooManyFailedPoints { failed: skipped, total });
        }
        Ok((self.scale * (max / self.nu.sqrt() - self.dn), skipped))
    }

    fn outcome(&self, j: usize, null: NullHypothesis, eta: &[f64], alpha: f64) -> Result<TestOutcome> {
        let (critical_low, critical_high) = critical_values(alpha)?;
        let (statistic, skipped_points) = self.statistic(j, eta)?;
        Ok(TestOutcome {
            coefficient_index: j,
            null,
            statistic,
            critical_low,
            critical_high,
            p_value: gumbel_p_value(statistic),
            rejected: statistic < critical_low || statistic > critical_high,
            skipped_points,
        })
    }

    pub fn test_zero(&self, j: usize, alpha: f64) -> Result<TestOutcome> {
        self.check_index(j)?;
        self.outcome(j, NullHypothesis::Zero, &vec![0.0; self.grid_fit.len()], alpha)
    }

    pub fn test_constant(&self, j: usize, alpha: f64) -> Result<TestOutcome> {
        self.check_index(j)?;
        let fitted: Vec<f64> = self.grid_fit.coefficient(j).into_iter().flatten().collect();
        if fitted.is_empty() {
            return Err(Error::AllPointsFailed);
        }
        let c0 = fitted.iter().sum::<f64>() / fitted.len() as f64;
        self.outcome(j, NullHypothesis::Constant(c0), &vec![c0; self.grid_fit.len()], alpha)
    }

    /// `(low, high)` per lattice point; `None` where the fit failed.
    pub fn pointwise_ci(&self, j: usize, level: f64) -> Result<Vec<Option<(f64, f64)>>> {
        intervals(self.grid_fit, &self.information, self.nu, j, level)
    }
}

fn grid_information(data: &Dataset, grid_fit: &GridFit, form: Standardization) -> Result<Vec<Vec<f64>>> {
    grid_fit
        .grid
        .iter()
        .map(|t| local_gram(data, t, &grid_fit.config).map(|g| information(&g.matrix, form)))
        .collect()
}

/// Local information for every coefficient; zero where `G` is singular.
pub fn information(gram: &DMatrix<f64>, form: Standardization) -> Vec<f64> {
    let d = gram.nrows();
    match form {
        Standardization::GramDiagonal => (0..d).map(|k| gram[(k, k)]).collect(),
        Standardization::InverseInformation => match gram.clone().cholesky() {
            Some(ch) => {
                let inv = ch.inverse();
                (0..d).map(|k| 1.0 / inv[(k, k)]).collect()
            }
            None => vec![0.0; d],
        },
    }
}

fn intervals(
    grid_fit: &GridFit,
    information: &[Vec<f64>],
    nu: f64,
    j: usize,
    level: f64,
) -> Result<Vec<Option<(f64, f64)>>> {
    if !(0.0..1.0).contains(&level) {
        return Err(Error::InvalidConfig(format!("confidence level {level} outside [0, 1)")));
    }
    let d = information.first().map_or(0, Vec::len);
    if j >= d {
        return Err(Error::DimensionMismatch { expected: d, found: j + 1 });
    }
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    grid_fit
        .coefficient(j)
        .into_iter()
        .zip(information)
        .enumerate()
        .map(|(point, (theta, info))| match theta {
            None => Ok(None),
            Some(_) if info[j] <= 0.0 => Err(Error::ZeroLocalInformation { point }),
            Some(v) => {
                let half = z * (nu / info[j]).sqrt();
                Ok(Some((v - half, v + half)))
            }
        })
        .collect()
}

/// Statistic for an arbitrary null curve on the lattice.
pub fn test_statistic(
    data: &Dataset,
    grid_fit: &GridFit,
    j: usize,
    eta: &[f64],
    options: &TestOptions,
) -> Result<f64> {
    TestContext::new(data, grid_fit, options)?.statistic(j, eta).map(|(s, _)| s)
}

pub fn test_zero(
    data: &Dataset,
    grid_fit: &GridFit,
    j: usize,
    alpha: f64,
    options: &TestOptions,
) -> Result<TestOutcome> {
    critical_values(alpha)?;
    TestContext::new(data, grid_fit, options)?.test_zero(j, alpha)
}

pub fn test_constant(
    data: &Dataset,
    grid_fit: &GridFit,
    j: usize,
    alpha: f64,
    options: &TestOptions,
) -> Result<TestOutcome> {
    critical_values(alpha)?;
    TestContext::new(data, grid_fit, options)?.test_constant(j, alpha)
}

/// Half-width `Phi^{-1}(1 - (1 - level)/2) sqrt(nu / s)` of a pointwise interval.
pub fn ci_half_width(nu: f64, sigma: f64, level: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::ZeroLocalInformation { point: 0 });
    }
    Ok(normal_quantile(1.0 - (1.0 - level) / 2.0) * (nu / sigma).sqrt())
}

pub fn pointwise_ci(
    data: &Dataset,
    grid_fit: &GridFit,
    j: usize,
    level: f64,
    form: Standardization,
) -> Result<Vec<Option<(f64, f64)>>> {
    let information = grid_information(data, grid_fit, form)?;
    intervals(grid_fit, &information, grid_fit.config.kernel.nu(), j, level)
}
