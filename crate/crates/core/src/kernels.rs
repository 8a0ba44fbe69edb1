//! Compactly supported smoothing kernels on `R^q` and their moment constants.
//!
//! Two Epanechnikov variants ship:
//!
//! ```text
//! product:   K(u) = prod_k 0.75 (1 - u_k^2) I(|u_k| <= 1)
//! spherical: K(u) = c_q (1 - |u|^2) I(|u| <= 1),   c_q = (q + 2) / (2 V_q)
//! ```
//!
//! where `V_q` is the volume of the unit ball. For `q = 2` the spherical form
//! is `(2/pi)(1 - |u|^2)`; for `q = 1` both families coincide.
//!
//! The constants `nu = int K^2`, `kappa = int u u' K` and the derivative matrix
//! `Xi` are available in closed form for both families.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    EpanechnikovProduct,
    EpanechnikovSpherical,
}

/// Which form of the kernel derivative matrix to compute.
///
/// `Rosenblatt` is `(1/(2 nu)) int (dK/du_a)(dK/du_b) du`, which is positive
/// definite and gives the classical maximal-deviation centering constant.
/// `Printed` is `(1/(2 nu)) int d^2K/(du_a du_b) du` taken almost everywhere;
/// it is negative definite for Epanechnikov kernels and is kept for auditing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiVariant {
    #[default]
    Rosenblatt,
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub dim: usize,
}

const EPAN_1D_NU: f64 = 0.6;
const EPAN_1D_KAPPA: f64 = 0.2;
/// `int K'(u)^2 du` for the 1-D Epanechnikov kernel.
const EPAN_1D_DERIV_SQ: f64 = 1.5;
/// `int K''(u) du` (almost-everywhere second derivative) for the 1-D kernel.
const EPAN_1D_SECOND_DERIV: f64 = -3.0;

/// Volume of the unit ball in `R^q`.
pub fn unit_ball_volume(q: usize) -> f64 {
    match q {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / q as f64 * unit_ball_volume(q - 2),
    }
}

impl KernelSpec {
    pub fn new(family: KernelFamily, dim: usize) -> Self {
        Self { family, dim }
    }

    pub fn epanechnikov(dim: usize) -> Self {
        Self::new(KernelFamily::EpanechnikovProduct, dim)
    }

    pub fn spherical(dim: usize) -> Self {
        Self::new(KernelFamily::EpanechnikovSpherical, dim)
    }

    fn spherical_constant(&self) -> f64 {
        (self.dim as f64 + 2.0) / (2.0 * unit_ball_volume(self.dim))
    }

    /// Evaluates `K(u)`.
    pub fn eval(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: u.len(),
            });
        }
        Ok(self.value(u))
    }

    pub(crate) fn value(&self, u: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), self.dim);
        match self.family {
            KernelFamily::EpanechnikovProduct => {
                let mut k = 1.0;
                for &v in u {
                    if v.abs() > 1.0 {
                        return 0.0;
                    }
                    k *= 0.75 * (1.0 - v * v);
                }
                k
            }
            KernelFamily::EpanechnikovSpherical => {
                let r2: f64 = u.iter().map(|v| v * v).sum();
                if r2 > 1.0 {
                    0.0
                } else {
                    self.spherical_constant() * (1.0 - r2)
                }
            }
        }
    }

    /// `K(H^{-1}(t0 - ti))` with `H = diag(bandwidths)`, without allocating.
    pub(crate) fn weight(&self, t0: &[f64], ti: &[f64], bandwidths: &[f64]) -> f64 {
        match self.family {
            KernelFamily::EpanechnikovProduct => {
                let mut k = 1.0;
                for ((a, b), h) in t0.iter().zip(ti).zip(bandwidths) {
                    let v = (a - b) / h;
                    if v.abs() > 1.0 {
                        return 0.0;
                    }
                    k *= 0.75 * (1.0 - v * v);
                }
                k
            }
            KernelFamily::EpanechnikovSpherical => {
                let mut r2 = 0.0;
                for ((a, b), h) in t0.iter().zip(ti).zip(bandwidths) {
                    let v = (a - b) / h;
                    r2 += v * v;
                }
                if r2 > 1.0 {
                    0.0
                } else {
                    self.spherical_constant() * (1.0 - r2)
                }
            }
        }
    }

    /// `nu = int K(u)^2 du`.
    pub fn nu(&self) -> f64 {
        match self.family {
            KernelFamily::EpanechnikovProduct => EPAN_1D_NU.powi(self.dim as i32),
            KernelFamily::EpanechnikovSpherical => {
                let q = self.dim as f64;
                2.0 * (q + 2.0) / (unit_ball_volume(self.dim) * (q + 4.0))
            }
        }
    }

    /// `kappa = int u u' K(u) du`; diagonal for both families by symmetry.
    pub fn kappa(&self) -> DMatrix<f64> {
        let diag = match self.family {
            KernelFamily::EpanechnikovProduct => EPAN_1D_KAPPA,
            KernelFamily::EpanechnikovSpherical => 1.0 / (self.dim as f64 + 4.0),
        };
        DMatrix::from_diagonal_element(self.dim, self.dim, diag)
    }

    /// The kernel derivative matrix `Xi` in the requested form.
    pub fn xi_matrix(&self, variant: XiVariant) -> DMatrix<f64> {
        let two_nu = 2.0 * self.nu();
        let q = self.dim as f64;
        let diag = match (self.family, variant) {
            (KernelFamily::EpanechnikovProduct, XiVariant::Rosenblatt) => {
                EPAN_1D_DERIV_SQ * EPAN_1D_NU.powi(self.dim as i32 - 1) / two_nu
            }
            (KernelFamily::EpanechnikovProduct, XiVariant::Printed) => {
                EPAN_1D_SECOND_DERIV / two_nu
            }
            (KernelFamily::EpanechnikovSpherical, XiVariant::Rosenblatt) => (q + 4.0) / 4.0,
            (KernelFamily::EpanechnikovSpherical, XiVariant::Printed) => {
                -(q + 2.0) / two_nu
            }
        };
        DMatrix::from_diagonal_element(self.dim, self.dim, diag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pointwise_values() {
        let k1 = KernelSpec::epanechnikov(1);
        assert_eq!(k1.eval(&[0.0]).unwrap(), 0.75);
        assert_eq!(k1.eval(&[2.0]).unwrap(), 0.0);
        assert_eq!(k1.eval(&[1.0]).unwrap(), 0.0);
        let s2 = KernelSpec::spherical(2);
        assert_relative_eq!(s2.eval(&[0.0, 0.0]).unwrap(), 2.0 / PI, epsilon = 1e-15);
        assert_eq!(s2.eval(&[0.8, 0.8]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_checked() {
        let k = KernelSpec::epanechnikov(2);
        assert!(matches!(
            k.eval(&[0.1]),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn one_dimensional_families_coincide() {
        let a = KernelSpec::epanechnikov(1);
        let b = KernelSpec::spherical(1);
        for i in 0..=40 {
            let u = -1.2 + 0.06 * i as f64;
            assert_relative_eq!(a.value(&[u]), b.value(&[u]), epsilon = 1e-15);
        }
        assert_relative_eq!(a.nu(), b.nu(), epsilon = 1e-15);
        assert_relative_eq!(
            a.xi_matrix(XiVariant::Rosenblatt)[(0, 0)],
            b.xi_matrix(XiVariant::Rosenblatt)[(0, 0)],
            epsilon = 1e-15
        );
    }

    #[test]
    fn closed_form_constants() {
        let k1 = KernelSpec::epanechnikov(1);
        assert_relative_eq!(k1.nu(), 0.6, epsilon = 1e-15);
        assert_relative_eq!(k1.kappa()[(0, 0)], 0.2, epsilon = 1e-15);
        assert_relative_eq!(k1.xi_matrix(XiVariant::Rosenblatt)[(0, 0)], 1.25, epsilon = 1e-15);
        assert_relative_eq!(k1.xi_matrix(XiVariant::Printed)[(0, 0)], -2.5, epsilon = 1e-15);

        let k2 = KernelSpec::epanechnikov(2);
        assert_relative_eq!(k2.nu(), 0.36, epsilon = 1e-15);
        let xi = k2.xi_matrix(XiVariant::Rosenblatt);
        assert_relative_eq!(xi[(0, 0)], 1.25, epsilon = 1e-15);
        assert_eq!(xi[(0, 1)], 0.0);

        let s2 = KernelSpec::spherical(2);
        assert_relative_eq!(s2.nu(), 4.0 / (3.0 * PI), epsilon = 1e-15);
        assert_relative_eq!(s2.kappa()[(1, 1)], 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(s2.xi_matrix(XiVariant::Rosenblatt)[(0, 0)], 1.5, epsilon = 1e-15);
        assert_relative_eq!(s2.xi_matrix(XiVariant::Printed)[(0, 0)], -1.5 * PI, epsilon = 1e-14);
    }

    #[test]
    fn xi_is_positive_definite() {
        for k in [
            KernelSpec::epanechnikov(1),
            KernelSpec::epanechnikov(2),
            KernelSpec::epanechnikov(3),
            KernelSpec::spherical(2),
            KernelSpec::spherical(3),
        ] {
            let xi = k.xi_matrix(XiVariant::Rosenblatt);
            let eig = xi.clone().symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&v| v > 0.0), "{k:?}");
            assert_eq!(xi, xi.transpose());
        }
    }

    #[test]
    fn continuous_at_support_boundary() {
        let k = KernelSpec::spherical(2);
        let inside = k.eval(&[0.0, 1.0 - 1e-9]).unwrap();
        assert!(inside < 1e-8);
        let p = KernelSpec::epanechnikov(2);
        assert!(p.eval(&[1.0 - 1e-9, 0.3]).unwrap() < 1e-8);
    }

    #[test]
    fn zero_dimensional_kernel_is_constant_one() {
        let k = KernelSpec::epanechnikov(0);
        assert_eq!(k.eval(&[]).unwrap(), 1.0);
        assert_eq!(k.nu(), 1.0);
    }

    #[test]
    fn weight_matches_eval_of_scaled_argument() {
        let k = KernelSpec::spherical(2);
        let t0 = [0.4, 0.5];
        let ti = [0.3, 0.62];
        let h = [0.2, 0.3];
        let u = [(t0[0] - ti[0]) / h[0], (t0[1] - ti[1]) / h[1]];
        assert_relative_eq!(k.weight(&t0, &ti, &h), k.eval(&u).unwrap(), epsilon = 1e-15);
    }
}
