//! Stochastic dividend discount model regression for public companies.
//!
//! The price recursion `P_t = (1 + c_t'k) P_{t-1} - d_t + u_t` rearranges to
//! a linear model `y = X k + u` with `y_t = P_t + d_t - P_{t-1}` and design
//! rows `x_t' = c_t' P_{t-1}`. Maximum likelihood gives
//! `k_hat = (X'X)^{-1} X' y` and `sigma2_hat = e'e / T`; the estimator is
//! approximately `N(k, sigma^2 (X'X)^{-1})`, which is what the intervals
//! here use.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::ObservationSet;
use crate::dist;
use crate::error::{Error, Result};
use crate::fit::LinearFit;

/// Design of the DDM regression: `X` with rows `c_t' P_{t-1}`,
/// `y = p + d - p_{-1}`, and the lagged price vector.
#[derive(Debug, Clone)]
pub struct DdmDesign {
    x: DMatrix<f64>,
    y: DVector<f64>,
    p_lag: DVector<f64>,
}

impl DdmDesign {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn p_lag(&self) -> &DVector<f64> {
        &self.p_lag
    }
}

/// Build the regression design from an observation set.
pub fn build_design(obs: &ObservationSet) -> DdmDesign {
    let t = obs.len();
    let n = obs.n_covariates();
    let prices = obs.prices();
    let dividends = obs.dividends();
    let mut x = DMatrix::zeros(t, n);
    let mut y = DVector::zeros(t);
    let mut p_lag = DVector::zeros(t);
    for i in 0..t {
        let lag = prices[i];
        p_lag[i] = lag;
        for j in 0..n {
            x[(i, j)] = obs.covariates()[(i, j)] * lag;
        }
        y[i] = prices[i + 1] + dividends[i] - lag;
    }
    DdmDesign { x, y, p_lag }
}

/// Unrestricted maximum likelihood fit of the DDM regression.
pub fn fit_ml(design: &DdmDesign) -> Result<LinearFit> {
    LinearFit::from_design(&design.x, &design.y)
}

/// Per-coefficient standard errors and the full covariance `s^2 (X'X)^{-1}`.
#[derive(Debug, Clone, Serialize)]
pub struct CoeffDistribution {
    pub std_errors: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

pub fn coeff_distribution(fit: &LinearFit) -> CoeffDistribution {
    CoeffDistribution {
        std_errors: fit.std_errors().iter().copied().collect(),
        cov: crate::fit::matrix_rows(&fit.coeff_cov),
    }
}

/// Two-sided `(1 - alpha)` confidence interval for coefficient `i`, using
/// the Student-t quantile with `T - n` degrees of freedom.
pub fn confidence_interval(fit: &LinearFit, i: usize, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if i >= fit.dim() {
        return Err(Error::InvalidArgument(format!(
            "coefficient index {i} out of range for dim {}",
            fit.dim()
        )));
    }
    if fit.dof == 0 {
        return Err(Error::ExactFit("confidence interval"));
    }
    let q = dist::student_t_quantile(1.0 - alpha / 2.0, fit.dof as f64)?;
    let half = q * fit.std_error(i);
    let center = fit.coeffs[i];
    Ok((center - half, center + half))
}
