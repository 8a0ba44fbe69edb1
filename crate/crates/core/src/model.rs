//! Shared domain types: observations, datasets, fit configuration and fit results.
//!
//! The design row of observation `i` is `z_i = (1, x_i')'` when the intercept
//! is included and `z_i = x_i` otherwise, so `theta[0]` is the intercept in the
//! first case and the first slope in the second.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

/// One sample `(y, x, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: f64,
    pub x: Vec<f64>,
    pub t: Vec<f64>,
}

/// A validated regression sample, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    t: Vec<f64>,
    p: usize,
    q: usize,
}

/// Builds a dataset from raw observations, checking every invariant.
pub fn validate_dataset(observations: Vec<Observation>) -> Result<Dataset> {
    let first = observations.first().ok_or(Error::EmptyDataset)?;
    let (p, q) = (first.x.len(), first.t.len());
    let n = observations.len();
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n * p);
    let mut t = Vec::with_capacity(n * q);
    for obs in observations {
        y.push(obs.y);
        if obs.x.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: obs.x.len(),
            });
        }
        if obs.t.len() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                found: obs.t.len(),
            });
        }
        x.extend(obs.x);
        t.extend(obs.t);
    }
    Dataset::from_columns(y, x, t, p, q)
}

impl Dataset {
    /// Builds a dataset from row-major covariate buffers (`x` is `n x p`,
    /// `t` is `n x q`).
    pub fn from_columns(y: Vec<f64>, x: Vec<f64>, t: Vec<f64>, p: usize, q: usize) -> Result<Self> {
        let ds = Self { y, x, t, p, q };
        ds.validate()?;
        Ok(ds)
    }

    /// Re-checks every invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.y.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.x.len() != n * self.p {
            return Err(Error::DimensionMismatch {
                expected: n * self.p,
                found: self.x.len(),
            });
        }
        if self.t.len() != n * self.q {
            return Err(Error::DimensionMismatch {
                expected: n * self.q,
                found: self.t.len(),
            });
        }
        for i in 0..n {
            let y = self.y[i];
            if !y.is_finite() {
                return Err(Error::NonFiniteValue { row: i });
            }
            if y <= 0.0 {
                return Err(Error::NonPositiveResponse { row: i, value: y });
            }
            if self.x_row(i).iter().chain(self.t_row(i)).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue { row: i });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn t_row(&self, i: usize) -> &[f64] {
        &self.t[i * self.q..(i + 1) * self.q]
    }

    pub fn observation(&self, i: usize) -> Observation {
        Observation {
            y: self.y[i],
            x: self.x_row(i).to_vec(),
            t: self.t_row(i).to_vec(),
        }
    }

    pub fn observations(&self) -> impl Iterator<Item = Observation> + '_ {
        (0..self.n()).map(|i| self.observation(i))
    }

    /// Rows `indices` of this dataset, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut y = Vec::with_capacity(indices.len());
        let mut x = Vec::with_capacity(indices.len() * self.p);
        let mut t = Vec::with_capacity(indices.len() * self.q);
        for &i in indices {
            y.push(self.y[i]);
            x.extend_from_slice(self.x_row(i));
            t.extend_from_slice(self.t_row(i));
        }
        Dataset {
            y,
            x,
            t,
            p: self.p,
            q: self.q,
        }
    }

    /// Copy with the covariate columns `keep` only (in that order).
    pub fn select_x(&self, keep: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = keep.iter().find(|&&j| j >= self.p) {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                found: bad + 1,
            });
        }
        let mut x = Vec::with_capacity(self.n() * keep.len());
        for i in 0..self.n() {
            let row = self.x_row(i);
            x.extend(keep.iter().map(|&j| row[j]));
        }
        Ok(Dataset {
            y: self.y.clone(),
            x,
            t: self.t.clone(),
            p: keep.len(),
            q: self.q,
        })
    }
}

/// Per-coordinate map `t -> (t - min) / (max - min)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub min: f64,
    pub max: f64,
}

impl AffineMap {
    pub fn forward(&self, t: f64) -> f64 {
        (t - self.min) / (self.max - self.min)
    }

    pub fn inverse(&self, s: f64) -> f64 {
        self.min + s * (self.max - self.min)
    }
}

/// Maps every smoothing coordinate onto `[0, 1]` using its sample range.
pub fn rescale_t_to_unit_cube(data: &Dataset) -> Result<(Dataset, Vec<AffineMap>)> {
    let q = data.q();
    let mut maps = Vec::with_capacity(q);
    for k in 0..q {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..data.n() {
            let v = data.t_row(i)[k];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi <= lo {
            return Err(Error::DegenerateCoordinate { coordinate: k });
        }
        maps.push(AffineMap { min: lo, max: hi });
    }
    let mut out = data.clone();
    for (idx, v) in out.t.iter_mut().enumerate() {
        *v = maps[idx % q].forward(*v);
    }
    Ok((out, maps))
}

/// Everything the local likelihood needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub kernel: KernelSpec,
    /// Diagonal of the bandwidth matrix, one entry per smoothing coordinate.
    pub bandwidths: Vec<f64>,
    pub threshold: f64,
    pub include_intercept: bool,
}

impl FitConfig {
    pub fn new(
        kernel: KernelSpec,
        bandwidths: Vec<f64>,
        threshold: f64,
        include_intercept: bool,
    ) -> Result<Self> {
        let cfg = Self {
            kernel,
            bandwidths,
            threshold,
            include_intercept,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bandwidths.len() != self.kernel.dim {
            return Err(Error::DimensionMismatch {
                expected: self.kernel.dim,
                found: self.bandwidths.len(),
            });
        }
        if let Some(h) = self.bandwidths.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
            return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {h}")));
        }
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        Self::new(self.kernel, self.bandwidths.clone(), threshold, self.include_intercept)
    }

    pub fn with_bandwidths(&self, bandwidths: Vec<f64>) -> Result<Self> {
        Self::new(self.kernel, bandwidths, self.threshold, self.include_intercept)
    }

    /// Number of coefficients for `p` linear covariates.
    pub fn design_dim(&self, p: usize) -> usize {
        p + usize::from(self.include_intercept)
    }

    /// Geometric mean of the bandwidths; the common `h` used by the sup test.
    pub fn common_bandwidth(&self) -> f64 {
        if self.bandwidths.is_empty() {
            return 1.0;
        }
        let s: f64 = self.bandwidths.iter().map(|h| h.ln()).sum();
        (s / self.bandwidths.len() as f64).exp()
    }

    pub(crate) fn fill_design_row(&self, x: &[f64], out: &mut [f64]) {
        if self.include_intercept {
            out[0] = 1.0;
            out[1..].copy_from_slice(x);
        } else {
            out.copy_from_slice(x);
        }
    }

    /// Display name of coefficient index `k` (`theta0` is the intercept).
    pub fn coefficient_name(&self, k: usize) -> String {
        let j = if self.include_intercept { k } else { k + 1 };
        format!("theta{j}")
    }
}

/// The estimate at one location together with solver metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientFit {
    pub location: Vec<f64>,
    pub theta: Vec<f64>,
    /// `sum_i I(Y_i > w) K(H^{-1}(t - T_i))`.
    pub local_exceedance_weight: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

/// Why a grid point has no estimate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointFailure {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for PointFailure {
    fn from(e: &Error) -> Self {
        Self {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

/// Estimates over an equally spaced lattice in `[0, 1]^q`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFit {
    pub grid: Vec<Vec<f64>>,
    pub fits: Vec<Result<CoefficientFit, PointFailure>>,
    pub config: FitConfig,
}

impl GridFit {
    pub fn new(
        grid: Vec<Vec<f64>>,
        fits: Vec<Result<CoefficientFit, PointFailure>>,
        config: FitConfig,
    ) -> Result<Self> {
        if grid.len() != fits.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} grid points but {} fits",
                grid.len(),
                fits.len()
            )));
        }
        if grid.len() < 2 {
            return Err(Error::InvalidConfig("a grid needs at least two points".into()));
        }
        for (a, ta) in grid.iter().enumerate() {
            if grid[a + 1..].iter().any(|tb| tb == ta) {
                return Err(Error::InvalidConfig(format!("grid point {a} is duplicated")));
            }
        }
        Ok(Self { grid, fits, config })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn failed_count(&self) -> usize {
        self.fits.iter().filter(|f| f.is_err()).count()
    }

    /// `theta_j` at every grid point, `None` where the fit failed.
    pub fn coefficient(&self, j: usize) -> Vec<Option<f64>> {
        self.fits
            .iter()
            .map(|f| f.as_ref().ok().map(|c| c.theta[j]))
            .collect()
    }
}

/// Whether independent work items run on the rayon pool or in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Serial,
    #[default]
    Parallel,
}
