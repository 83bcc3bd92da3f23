//! Shared linear-regression fit type.
//!
//! Every regression in the toolkit — the public DDM design, the private
//! valuation design, regime-weighted designs — produces a [`LinearFit`]:
//! coefficients solving the normal equations, the ML and unbiased error
//! variances, residuals, and the coefficient covariance `s^2 (X'X)^{-1}`.

use nalgebra::{DMatrix, DVector};
use serde::ser::{Serialize, SerializeStruct, Serializer};

use crate::error::Result;
use crate::linalg;

#[derive(Debug, Clone)]
pub struct LinearFit {
    /// Estimated coefficient vector (`k` for the public model, `(k', delta)'`
    /// for the dividend-paying private model).
    pub coeffs: DVector<f64>,
    /// ML variance estimate `e'e / T`.
    pub sigma2_ml: f64,
    /// Unbiased variance estimate `s^2 = e'e / (T - dim)`; `NaN` when the
    /// design is square (no residual degrees of freedom).
    pub sigma2_unbiased: f64,
    /// Residual vector `e = y - X beta`.
    pub residuals: DVector<f64>,
    /// Residual sum of squares `e'e`.
    pub rss: f64,
    /// Coefficient covariance `s^2 (X'X)^{-1}`.
    pub coeff_cov: DMatrix<f64>,
    /// Residual degrees of freedom `T - dim`.
    pub dof: usize,
    /// Unscaled `(X'X)^{-1}`, kept for restricted estimation.
    pub(crate) xtx_inv: DMatrix<f64>,
    /// Cross-product `X'X`, kept for restricted RSS updates.
    pub(crate) xtx: DMatrix<f64>,
    pub(crate) n_obs: usize,
}

impl LinearFit {
    /// Least-squares / ML fit of `y = X beta + u` via SVD of the design.
    pub fn from_design(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let sol = linalg::svd_lstsq(x, y)?;
        let residuals = y - x * &sol.coeffs;
        let rss = residuals.dot(&residuals);
        let t = x.nrows();
        let dim = x.ncols();
        let dof = t - dim;
        let sigma2_ml = rss / t as f64;
        let sigma2_unbiased = if dof > 0 { rss / dof as f64 } else { f64::NAN };
        let coeff_cov = if dof > 0 {
            linalg::symmetrize(&(sigma2_unbiased * &sol.xtx_inv))
        } else {
            DMatrix::zeros(dim, dim)
        };
        Ok(Self {
            coeffs: sol.coeffs,
            sigma2_ml,
            sigma2_unbiased,
            residuals,
            rss,
            coeff_cov,
            dof,
            xtx: linalg::symmetrize(&(x.transpose() * x)),
            xtx_inv: sol.xtx_inv,
            n_obs: t,
        })
    }

    /// Number of coefficients.
    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    /// Sample size the fit was computed from.
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Standard error of coefficient `i`: `sqrt(s^2 ((X'X)^{-1})_{ii})`.
    pub fn std_error(&self, i: usize) -> f64 {
        self.coeff_cov[(i, i)].max(0.0).sqrt()
    }

    pub fn std_errors(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), (0..self.dim()).map(|i| self.std_error(i)))
    }

    pub(crate) fn xtx_inv(&self) -> &DMatrix<f64> {
        &self.xtx_inv
    }

    pub(crate) fn xtx(&self) -> &DMatrix<f64> {
        &self.xtx
    }
}

impl Serialize for LinearFit {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("LinearFit", 7)?;
        s.serialize_field("coeffs", self.coeffs.as_slice())?;
        s.serialize_field("sigma2_ml", &self.sigma2_ml)?;
        s.serialize_field("sigma2_unbiased", &self.sigma2_unbiased)?;
        s.serialize_field("residuals", self.residuals.as_slice())?;
        s.serialize_field("rss", &self.rss)?;
        s.serialize_field("coeff_cov", &matrix_rows(&self.coeff_cov))?;
        s.serialize_field("dof", &self.dof)?;
        s.end()
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonality_and_rss() {
        let x = DMatrix::from_row_slice(5, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0, 1.0, 5.0]);
        let y = DVector::from_vec(vec![2.0, 2.5, 3.9, 4.1, 5.2]);
        let fit = LinearFit::from_design(&x, &y).unwrap();
        let xte = x.transpose() * &fit.residuals;
        assert!(xte.amax() < 1e-10);
        let rss_direct: f64 = fit.residuals.iter().map(|e| e * e).sum();
        assert_eq!(fit.rss, rss_direct);
        assert_eq!(fit.dof, 3);
        // coeff_cov symmetric PSD
        for i in 0..2 {
            assert!(fit.coeff_cov[(i, i)] >= 0.0);
            for j in 0..2 {
                assert_eq!(fit.coeff_cov[(i, j)], fit.coeff_cov[(j, i)]);
            }
        }
    }

    #[test]
    fn estimation_outputs_are_shareable_across_threads() {
        // fits and data sets are pure values; Monte Carlo replications and
        // independent EM restarts rely on sharing them read-only
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<LinearFit>();
        assert_send_sync::<crate::data::ObservationSet>();
        assert_send_sync::<crate::data::PrivateObservationSet>();
        assert_send_sync::<crate::regime::RegimeFit>();
        assert_send_sync::<crate::kalman::SsmFit>();
        assert_send_sync::<crate::bayes::GibbsDraws>();
    }

    #[test]
    fn serializes_with_spec_field_names() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let fit = LinearFit::from_design(&x, &y).unwrap();
        let json = serde_json::to_value(&fit).unwrap();
        for key in ["coeffs", "sigma2_ml", "sigma2_unbiased", "residuals", "rss", "coeff_cov", "dof"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }
}
