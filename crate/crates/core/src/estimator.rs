//! Local constant weighted maximum-likelihood estimation of the coefficient
//! functions.
//!
//! At a location `t` the estimate minimizes
//!
//! ```text
//! L(theta) = sum_i { exp(z_i' theta) log(Y_i / w) - z_i' theta } I(Y_i > w) K(H^{-1}(t - T_i))
//! ```
//!
//! which is convex in `theta`. Gradient and Hessian are
//!
//! ```text
//! grad = sum_i z_i { exp(z_i' theta) log(Y_i / w) - 1 } I(.) K(.)
//! hess = sum_i z_i z_i' exp(z_i' theta) log(Y_i / w) I(.) K(.)
//! ```
//!
//! The minimizer is found by damped Newton iterations. With no linear
//! covariates and an intercept the minimizer is closed form: `exp(-theta_0)`
//! is the kernel-weighted Hill estimator.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CoefficientFit, Dataset, ExecMode, FitConfig, GridFit, PointFailure};

/// Stopping rules for the Newton solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Convergence when `max |gradient| <= tolerance`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 100,
            max_halvings: 30,
        }
    }
}

/// The exceedances with positive kernel weight at one location.
#[derive(Debug, Clone)]
pub(crate) struct LocalSample {
    d: usize,
    /// Row-major design rows, `len() x d`.
    rows: Vec<f64>,
    log_excess: Vec<f64>,
    weights: Vec<f64>,
}

impl LocalSample {
    pub(crate) fn collect(data: &Dataset, t0: &[f64], cfg: &FitConfig) -> Result<Self> {
        if t0.len() != data.q() || cfg.kernel.dim != data.q() {
            return Err(Error::DimensionMismatch {
                expected: data.q(),
                found: if t0.len() != data.q() { t0.len() } else { cfg.kernel.dim },
            });
        }
        let d = cfg.design_dim(data.p());
        let log_w = cfg.threshold.ln();
        let mut sample = LocalSample {
            d,
            rows: Vec::new(),
            log_excess: Vec::new(),
            weights: Vec::new(),
        };
        let mut z = vec![0.0; d];
        for i in 0..data.n() {
            let y = data.y(i);
            if y <= cfg.threshold {
                continue;
            }
            let k = cfg.kernel.weight(t0, data.t_row(i), &cfg.bandwidths);
            if k <= 0.0 {
                continue;
            }
            cfg.fill_design_row(data.x_row(i), &mut z);
            sample.rows.extend_from_slice(&z);
            sample.log_excess.push(y.ln() - log_w);
            sample.weights.push(k);
        }
        Ok(sample)
    }

    pub(crate) fn len(&self) -> usize {
        self.weights.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    fn linear(&self, i: usize, theta: &[f64]) -> f64 {
        self.row(i).iter().zip(theta).map(|(a, b)| a * b).sum()
    }

    fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn hill(&self) -> f64 {
        let num: f64 = self.weights.iter().zip(&self.log_excess).map(|(w, a)| w * a).sum();
        num / self.total_weight()
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        (0..self.len())
            .map(|i| {
                let s = self.linear(i, theta);
                self.weights[i] * (s.exp() * self.log_excess[i] - s)
            })
            .sum()
    }

    fn gradient(&self, theta: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.d);
        for i in 0..self.len() {
            let s = self.linear(i, theta);
            let c = self.weights[i] * (s.exp() * self.log_excess[i] - 1.0);
            for (gk, zk) in g.iter_mut().zip(self.row(i)) {
                *gk += c * zk;
            }
        }
        g
    }

    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let d = self.d;
        let mut h = DMatrix::zeros(d, d);
        for i in 0..self.len() {
            let s = self.linear(i, theta);
            let c = self.weights[i] * s.exp() * self.log_excess[i];
            let z = self.row(i);
            for a in 0..d {
                let ca = c * z[a];
                for b in a..d {
                    h[(a, b)] += ca * z[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        h
    }

    fn default_init(&self, include_intercept: bool) -> Vec<f64> {
        let mut theta = vec![0.0; self.d];
        if include_intercept {
            theta[0] = -self.hill().ln();
        }
        theta
    }
}

fn nonempty(sample: LocalSample) -> Result<LocalSample> {
    if sample.len() == 0 {
        Err(Error::NoLocalExceedances)
    } else {
        Ok(sample)
    }
}

fn check_theta(theta: &[f64], d: usize) -> Result<()> {
    if theta.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: theta.len(),
        });
    }
    Ok(())
}

/// The local weighted negative log-likelihood at `t0`.
pub fn objective(data: &Dataset, theta: &[f64], t0: &[f64], cfg: &FitConfig) -> Result<f64> {
    let s = nonempty(LocalSample::collect(data, t0, cfg)?)?;
    check_theta(theta, s.d)?;
    Ok(s.objective(theta))
}

pub fn gradient(data: &Dataset, theta: &[f64], t0: &[f64], cfg: &FitConfig) -> Result<DVector<f64>> {
    let s = nonempty(LocalSample::collect(data, t0, cfg)?)?;
    check_theta(theta, s.d)?;
    Ok(s.gradient(theta))
}

pub fn hessian(data: &Dataset, theta: &[f64], t0: &[f64], cfg: &FitConfig) -> Result<DMatrix<f64>> {
    let s = nonempty(LocalSample::collect(data, t0, cfg)?)?;
    check_theta(theta, s.d)?;
    Ok(s.hessian(theta))
}

/// Solves `hess * step = -grad`, retrying once with a small ridge.
fn newton_direction(hess: DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    let d = hess.nrows();
    let ridge = 1e-8 * hess.trace() / d as f64;
    if let Some(ch) = hess.clone().cholesky() {
        return Ok(-ch.solve(grad));
    }
    let mut regularized = hess;
    for k in 0..d {
        regularized[(k, k)] += ridge;
    }
    regularized
        .cholesky()
        .map(|ch| -ch.solve(grad))
        .ok_or(Error::SingularHessian)
}

/// Fits the coefficients at `t0` with the default solver options.
pub fn fit_at(data: &Dataset, t0: &[f64], cfg: &FitConfig, init: Option<&[f64]>) -> Result<CoefficientFit> {
    fit_at_with(data, t0, cfg, init, &SolverOptions::default())
}

pub fn fit_at_with(
    data: &Dataset,
    t0: &[f64],
    cfg: &FitConfig,
    init: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<CoefficientFit> {
    let sample = LocalSample::collect(data, t0, cfg)?;
    let required = sample.d + 1;
    if sample.len() < required {
        return Err(Error::InsufficientLocalData {
            available: sample.len(),
            required,
        });
    }
    let mut theta = match init {
        Some(v) => {
            check_theta(v, sample.d)?;
            v.to_vec()
        }
        None => sample.default_init(cfg.include_intercept),
    };
    let mut value = sample.objective(&theta);
    let mut grad = sample.gradient(&theta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        if grad.amax() <= opts.tolerance {
            converged = true;
            break;
        }
        let step = newton_direction(sample.hessian(&theta), &grad)?;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let candidate: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + alpha * s).collect();
            let v = sample.objective(&candidate);
            if v.is_finite() && v <= value {
                accepted = Some((candidate, v));
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;
        let Some((next, v)) = accepted else { break };
        theta = next;
        value = v;
        grad = sample.gradient(&theta);
    }
    if !converged && grad.amax() <= opts.tolerance {
        converged = true;
    }
    Ok(CoefficientFit {
        location: t0.to_vec(),
        theta,
        local_exceedance_weight: sample.total_weight(),
        converged,
        iterations,
        gradient_norm: grad.amax(),
    })
}

/// Equally spaced lattice in `[0, 1]^q` with `points_per_axis` points per
/// axis, first coordinate varying slowest.
pub fn grid_points(points_per_axis: usize, q: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..points_per_axis)
        .map(|l| l as f64 / (points_per_axis - 1) as f64)
        .collect();
    let mut out = vec![Vec::with_capacity(q)];
    for _ in 0..q {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&a| {
                    let mut p = prefix.clone();
                    p.push(a);
                    p
                })
            })
            .collect();
    }
    out
}

/// Fits every lattice point from the default start, so serial and parallel
/// runs give identical results.
pub fn fit_grid(data: &Dataset, points_per_axis: usize, cfg: &FitConfig, mode: ExecMode) -> Result<GridFit> {
    if points_per_axis < 2 {
        return Err(Error::InvalidConfig("grid needs at least 2 points per axis".into()));
    }
    let grid = grid_points(points_per_axis, data.q());
    let fit = |t: &Vec<f64>| fit_at(data, t, cfg, None).map_err(|e| PointFailure::from(&e));
    let fits = match mode {
        ExecMode::Serial => grid.iter().map(fit).collect(),
        ExecMode::Parallel => grid.par_iter().map(fit).collect(),
    };
    GridFit::new(grid, fits, cfg.clone())
}

/// Hill estimator: mean log-excess over the threshold.
pub fn hill(y: &[f64], omega: f64) -> Result<f64> {
    let (sum, count) = y
        .iter()
        .filter(|&&v| v > omega)
        .fold((0.0, 0usize), |(s, c), &v| (s + (v.ln() - omega.ln()), c + 1));
    if count == 0 {
        return Err(Error::NoExceedances);
    }
    Ok(sum / count as f64)
}

/// Kernel-weighted Hill estimator at `t0`.
pub fn local_hill(data: &Dataset, t0: &[f64], cfg: &FitConfig) -> Result<f64> {
    let s = nonempty(LocalSample::collect(data, t0, cfg)?)?;
    Ok(s.hill())
}

/// Unnormalized local Gram matrix `sum_i z_i z_i' I(Y_i > w) K(.)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGram {
    pub matrix: DMatrix<f64>,
    /// `sum_i I(Y_i > w) K(.)`.
    pub weight: f64,
}

pub fn local_gram(data: &Dataset, t0: &[f64], cfg: &FitConfig) -> Result<LocalGram> {
    let s = LocalSample::collect(data, t0, cfg)?;
    let d = s.d;
    let mut matrix = DMatrix::zeros(d, d);
    for i in 0..s.len() {
        let z = s.row(i);
        let w = s.weights[i];
        for a in 0..d {
            for b in 0..d {
                matrix[(a, b)] += w * z[a] * z[b];
            }
        }
    }
    Ok(LocalGram {
        matrix,
        weight: s.total_weight(),
    })
}

/// `exp(z_i' theta(T_i)) log(Y_i / w)` for one exceedance, the quantity that
/// is approximately standard exponential under the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExceedanceScore {
    pub row: usize,
    pub score: f64,
}

/// Fits the model at every exceedance's own `T_i` and returns its score.
pub fn exceedance_scores(data: &Dataset, cfg: &FitConfig, mode: ExecMode) -> Result<Vec<ExceedanceScore>> {
    let rows: Vec<usize> = (0..data.n()).filter(|&i| data.y(i) > cfg.threshold).collect();
    if rows.is_empty() {
        return Err(Error::NoExceedances);
    }
    let score_at = |&i: &usize| -> Result<ExceedanceScore> {
        let fit = fit_at(data, data.t_row(i), cfg, None)?;
        let mut z = vec![0.0; fit.theta.len()];
        cfg.fill_design_row(data.x_row(i), &mut z);
        let s: f64 = z.iter().zip(&fit.theta).map(|(a, b)| a * b).sum();
        Ok(ExceedanceScore {
            row: i,
            score: s.exp() * (data.y(i).ln() - cfg.threshold.ln()),
        })
    };
    match mode {
        ExecMode::Serial => rows.iter().map(score_at).collect(),
        ExecMode::Parallel => rows.par_iter().map(score_at).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::model::{validate_dataset, Observation};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::E;

    fn single(y: f64) -> Dataset {
        validate_dataset(vec![Observation { y, x: vec![], t: vec![0.0] }]).unwrap()
    }

    fn intercept_cfg(omega: f64) -> FitConfig {
        FitConfig::new(KernelSpec::epanechnikov(1), vec![1e6], omega, true).unwrap()
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Dataset, FitConfig, Vec<f64>, Vec<f64>) {
        let p = rng.random_range(1..4);
        let n = rng.random_range(15..40);
        let rows = (0..n)
            .map(|_| Observation {
                y: rng.random_range(1.0..10.0f64),
                x: (0..p).map(|_| rng.random_range(-1.5..1.5)).collect(),
                t: vec![rng.random_range(0.0..1.0)],
            })
            .collect();
        let data = validate_dataset(rows).unwrap();
        let cfg = FitConfig::new(KernelSpec::epanechnikov(1), vec![0.6], 1.5, rng.random()).unwrap();
        let d = cfg.design_dim(p);
        let theta = (0..d).map(|_| rng.random_range(-0.7..0.7)).collect();
        (data, cfg, theta, vec![rng.random_range(0.2..0.8)])
    }

    #[test]
    fn hand_evaluated_single_term() {
        let omega = 2.0;
        let data = single(E * omega);
        // K weight is 0.75 at distance 0 with a huge bandwidth.
        let cfg = intercept_cfg(omega);
        let w = 0.75;
        assert_relative_eq!(objective(&data, &[0.0], &[0.0], &cfg).unwrap(), w * 1.0, epsilon = 1e-15);
        let v = objective(&data, &[0.5], &[0.0], &cfg).unwrap() / w;
        assert_relative_eq!(v, 0.5f64.exp() - 0.5, epsilon = 1e-14);
        assert!((v - 1.1487).abs() < 1e-4);
        assert_relative_eq!(gradient(&data, &[0.0], &[0.0], &cfg).unwrap()[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(hessian(&data, &[0.0], &[0.0], &cfg).unwrap()[(0, 0)], w, epsilon = 1e-15);
    }

    #[test]
    fn empty_local_sum_is_an_error() {
        let data = single(1.0);
        let cfg = intercept_cfg(2.0);
        assert_eq!(objective(&data, &[0.0], &[0.0], &cfg), Err(Error::NoLocalExceedances));
        assert_eq!(local_hill(&data, &[0.0], &cfg), Err(Error::NoLocalExceedances));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let step = 1e-5;
        for _ in 0..100 {
            let (data, cfg, theta, t0) = random_instance(&mut rng);
            let Ok(g) = gradient(&data, &theta, &t0, &cfg) else { continue };
            for k in 0..theta.len() {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += step;
                tm[k] -= step;
                let fd = (objective(&data, &tp, &t0, &cfg).unwrap() - objective(&data, &tm, &t0, &cfg).unwrap())
                    / (2.0 * step);
                let scale = g[k].abs().max(1.0);
                assert!((fd - g[k]).abs() / scale < 1e-6, "fd {fd} analytic {}", g[k]);
            }
        }
    }

    #[test]
    fn hessian_matches_differences_of_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let step = 1e-5;
        for _ in 0..100 {
            let (data, cfg, theta, t0) = random_instance(&mut rng);
            let Ok(h) = hessian(&data, &theta, &t0, &cfg) else { continue };
            for k in 0..theta.len() {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += step;
                tm[k] -= step;
                let fd = (gradient(&data, &tp, &t0, &cfg).unwrap() - gradient(&data, &tm, &t0, &cfg).unwrap())
                    / (2.0 * step);
                for a in 0..theta.len() {
                    let scale = h[(a, k)].abs().max(1.0);
                    assert!((fd[a] - h[(a, k)]).abs() / scale < 1e-5);
                }
            }
            let eig = h.symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-10));
        }
    }

    #[test]
    fn hill_hand_values() {
        let y = [E, E * E, E.powi(3), E.powi(4)];
        assert_relative_eq!(hill(&y, 1.0).unwrap(), 2.5, epsilon = 1e-15);
        assert_relative_eq!(hill(&[E * 3.0], 3.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(hill(&[1.0, 2.0], 2.0), Err(Error::NoExceedances));
    }

    #[test]
    fn intercept_only_fit_reproduces_hill() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<_> = (0..200)
            .map(|_| Observation {
                y: rng.random_range(0.0..1.0f64).powf(-0.7),
                x: vec![],
                t: vec![0.5],
            })
            .collect();
        let data = validate_dataset(rows).unwrap();
        let cfg = intercept_cfg(1.5);
        let fit = fit_at(&data, &[0.5], &cfg, None).unwrap();
        let gamma = hill(data.responses(), 1.5).unwrap();
        assert!(fit.converged);
        assert_relative_eq!((-fit.theta[0]).exp(), gamma, max_relative = 1e-10);
        // Cold start from zero lands on the same point.
        let cold = fit_at(&data, &[0.5], &cfg, Some(&[0.0])).unwrap();
        assert_relative_eq!(cold.theta[0], fit.theta[0], epsilon = 1e-9);
    }

    #[test]
    fn insufficient_local_data() {
        let rows: Vec<_> = (0..3)
            .map(|i| Observation {
                y: 3.0 + i as f64,
                x: vec![i as f64, 1.0, -(i as f64)],
                t: vec![0.5],
            })
            .collect();
        let data = validate_dataset(rows).unwrap();
        let cfg = FitConfig::new(KernelSpec::epanechnikov(1), vec![0.3], 1.0, true).unwrap();
        assert_eq!(
            fit_at(&data, &[0.5], &cfg, None),
            Err(Error::InsufficientLocalData { available: 3, required: 5 })
        );
    }

    #[test]
    fn local_gram_single_term() {
        let data = validate_dataset(vec![Observation { y: 5.0, x: vec![2.0], t: vec![0.0] }]).unwrap();
        // weight 0.5 = 0.75 (1 - u^2) at u^2 = 1/3.
        let h = 3f64.sqrt();
        let cfg = FitConfig::new(KernelSpec::epanechnikov(1), vec![h], 1.0, true).unwrap();
        let g = local_gram(&data, &[1.0], &cfg).unwrap();
        assert_relative_eq!(g.weight, 0.5, epsilon = 1e-15);
        let expect = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 1.0, 2.0]);
        assert!((g.matrix - expect).amax() < 1e-15);

        let none = local_gram(&data, &[1.0], &cfg.with_threshold(10.0).unwrap()).unwrap();
        assert_eq!(none.weight, 0.0);
        assert_eq!(none.matrix.amax(), 0.0);
    }

    #[test]
    fn local_gram_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (data, cfg, _, t0) = random_instance(&mut rng);
        let g = local_gram(&data, &t0, &cfg).unwrap();
        let d = cfg.design_dim(data.p());
        for a in 0..d {
            for b in 0..d {
                let mut s = 0.0;
                let mut w = 0.0;
                for i in 0..data.n() {
                    let mut z = vec![1.0];
                    z.extend_from_slice(data.x_row(i));
                    let z = if cfg.include_intercept { z } else { z[1..].to_vec() };
                    let ind = if data.y(i) > cfg.threshold { 1.0 } else { 0.0 };
                    let u = (t0[0] - data.t_row(i)[0]) / cfg.bandwidths[0];
                    let k = cfg.kernel.eval(&[u]).unwrap();
                    s += z[a] * z[b] * ind * k;
                    w += ind * k;
                }
                assert_eq!(g.matrix[(a, b)], s);
                assert_eq!(g.weight, w);
            }
        }
    }

    #[test]
    fn grid_lattice_shapes() {
        assert_eq!(grid_points(3, 1), vec![vec![0.0], vec![0.5], vec![1.0]]);
        let g = grid_points(5, 2);
        assert_eq!(g.len(), 25);
        assert_eq!(g[1], vec![0.0, 0.25]);
        assert_eq!(grid_points(4, 0), vec![Vec::<f64>::new()]);
    }

    #[test]
    fn local_hill_reduces_to_hill_under_constant_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<_> = (0..50)
            .map(|_| Observation {
                y: rng.random_range(0.0..1.0f64).powf(-0.5),
                x: vec![],
                t: vec![rng.random_range(0.0..1.0)],
            })
            .collect();
        let data = validate_dataset(rows).unwrap();
        let cfg = intercept_cfg(1.2);
        // With a huge bandwidth every weight equals 0.75 up to rounding.
        assert_relative_eq!(
            local_hill(&data, &[0.5], &cfg).unwrap(),
            hill(data.responses(), 1.2).unwrap(),
            max_relative = 1e-10
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn objective_is_convex(seed in any::<u64>(), lambda in 0.01f64..0.99) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (data, cfg, a, t0) = random_instance(&mut rng);
                let b: Vec<f64> = a.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
                let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
                if let (Ok(fa), Ok(fb), Ok(fm)) = (
                    objective(&data, &a, &t0, &cfg),
                    objective(&data, &b, &t0, &cfg),
                    objective(&data, &mid, &t0, &cfg),
                ) {
                    prop_assert!(fm <= lambda * fa + (1.0 - lambda) * fb + 1e-10);
                }
            }
        }
    }
}
