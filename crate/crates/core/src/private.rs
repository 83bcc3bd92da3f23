//! Private-company valuation regressions.
//!
//! With a constant price-to-book ratio `m`, the required rate decomposes as
//! `k_t = delta * Delta_t + b_t` with `delta = 1/m`, which adds noise as the
//! regression `b_t = c_t'k - delta Delta_t + u_t` for a dividend payer and
//! `b_t = c_t'k + u_t` for a non-payer. The stacked design is
//! `X = [C : -Delta]` (paying) or `X = C`, and the ML estimator is plain
//! least squares. Equity value is book value times `m_hat = 1/delta_hat`.

use nalgebra::{DMatrix, DVector};
use serde::ser::{Serialize, SerializeStruct, Serializer};

use crate::data::PrivateObservationSet;
use crate::error::{Error, Result};
use crate::fit::LinearFit;
use crate::linalg;

/// Design of the private valuation regression.
#[derive(Debug, Clone)]
pub struct PrivateDesign {
    x: DMatrix<f64>,
    y: DVector<f64>,
    paying: bool,
    n_covariates: usize,
}

impl PrivateDesign {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn paying(&self) -> bool {
        self.paying
    }

    /// Number of `k` coefficients (excludes the `delta` column).
    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    /// Directly assemble a design from raw parts. `div_to_book = None`
    /// builds the non-paying design `X = C`.
    pub fn from_parts(
        covariates: DMatrix<f64>,
        book_growth: DVector<f64>,
        div_to_book: Option<DVector<f64>>,
    ) -> Result<Self> {
        let t = covariates.nrows();
        if book_growth.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "{} growth rates for {} covariate rows",
                book_growth.len(),
                t
            )));
        }
        let n = covariates.ncols();
        match div_to_book {
            Some(delta) => {
                if delta.len() != t {
                    return Err(Error::DimensionMismatch(format!(
                        "{} dividend-to-book ratios for {} rows",
                        delta.len(),
                        t
                    )));
                }
                if delta.iter().all(|d| *d == 0.0) {
                    return Err(Error::DegenerateDelta);
                }
                let mut x = DMatrix::zeros(t, n + 1);
                x.view_mut((0, 0), (t, n)).copy_from(&covariates);
                for i in 0..t {
                    x[(i, n)] = -delta[i];
                }
                Ok(Self {
                    x,
                    y: book_growth,
                    paying: true,
                    n_covariates: n,
                })
            }
            None => Ok(Self {
                x: covariates,
                y: book_growth,
                paying: false,
                n_covariates: n,
            }),
        }
    }
}

/// Build the regression design from a private observation set.
pub fn build_private_design(obs: &PrivateObservationSet) -> Result<PrivateDesign> {
    let delta = obs
        .paying()
        .then(|| DVector::from_column_slice(obs.div_to_book()));
    PrivateDesign::from_parts(
        obs.covariates().clone(),
        DVector::from_column_slice(obs.book_growth()),
        delta,
    )
}

/// Fit of the private model: the joint least-squares solution plus the
/// derived `(delta_hat, m_hat)` pair for a dividend payer.
#[derive(Debug, Clone)]
pub struct PrivateFit {
    pub fit: LinearFit,
    /// `delta_hat`, the book-to-price slope (paying model only).
    pub delta_hat: Option<f64>,
    /// `m_hat = 1 / delta_hat`, reported only when `delta_hat > 0`.
    pub m_hat: Option<f64>,
    /// Set when the model is paying but `delta_hat <= 0`, i.e. the implied
    /// price-to-book ratio is undefined.
    pub delta_degenerate: bool,
}

impl PrivateFit {
    /// The `k` coefficient block.
    pub fn k_coeffs(&self) -> DVector<f64> {
        let n = if self.delta_hat.is_some() {
            self.fit.dim() - 1
        } else {
            self.fit.dim()
        };
        self.fit.coeffs.rows(0, n).into_owned()
    }
}

impl Serialize for PrivateFit {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("PrivateFit", 4)?;
        s.serialize_field("fit", &self.fit)?;
        s.serialize_field("delta_hat", &self.delta_hat)?;
        s.serialize_field("m_hat", &self.m_hat)?;
        s.serialize_field("delta_degenerate", &self.delta_degenerate)?;
        s.end()
    }
}

/// Maximum likelihood fit `beta_hat = (X'X)^{-1} X' b`.
pub fn fit_private(design: &PrivateDesign) -> Result<PrivateFit> {
    let fit = LinearFit::from_design(&design.x, &design.y)?;
    if design.paying() {
        let delta_hat = fit.coeffs[fit.dim() - 1];
        let degenerate = !(delta_hat > 0.0);
        Ok(PrivateFit {
            m_hat: (!degenerate).then(|| 1.0 / delta_hat),
            delta_hat: Some(delta_hat),
            delta_degenerate: degenerate,
            fit,
        })
    } else {
        Ok(PrivateFit {
            fit,
            delta_hat: None,
            m_hat: None,
            delta_degenerate: false,
        })
    }
}

/// Two-step decomposition of the paying-model estimator:
/// `delta_hat = -Delta' M_C b / (Delta' M_C Delta)` with
/// `M_C = I - C (C'C)^{-1} C'`, then `k_hat = (C'C)^{-1} C' (delta_hat Delta + b)`.
/// An independent route to the same numbers as [`fit_private`].
pub fn decompose_private(design: &PrivateDesign) -> Result<(DVector<f64>, f64)> {
    if !design.paying() {
        return Err(Error::InvalidArgument(
            "decomposition applies to the dividend-paying model".into(),
        ));
    }
    let t = design.x.nrows();
    let n = design.n_covariates;
    let c = design.x.view((0, 0), (t, n)).clone_owned();
    let delta_col = -design.x.column(n).clone_owned();
    let b = &design.y;

    let ctc = c.transpose() * &c;
    let solve = |rhs: &DVector<f64>| -> Result<DVector<f64>> {
        linalg::solve_spd(&ctc, &DMatrix::from_column_slice(n, 1, (c.transpose() * rhs).as_slice()))
            .map(|m| m.column(0).into_owned())
            .ok_or_else(|| Error::SingularDesign {
                columns: (0..n).collect(),
                cutoff: 1e-10,
            })
    };
    // M_C v = v - C (C'C)^{-1} C' v
    let m_delta = &delta_col - &c * solve(&delta_col)?;
    let m_b = b - &c * solve(b)?;
    let denom = delta_col.dot(&m_delta);
    if denom.abs() < 1e-300 {
        return Err(Error::DegenerateDelta);
    }
    let delta_hat = -delta_col.dot(&m_b) / denom;
    let adjusted = &delta_col * delta_hat + b;
    let k_hat = solve(&adjusted)?;
    Ok((k_hat, delta_hat))
}

/// Theoretical equity value: book value divided by the fitted
/// book-to-price ratio.
pub fn value_company(fit: &PrivateFit, book_value: f64) -> Result<f64> {
    match fit.delta_hat {
        Some(delta) if delta > 0.0 => Ok(book_value / delta),
        Some(delta) => Err(Error::ValuationUndefined { delta }),
        None => Err(Error::InvalidArgument(
            "valuation requires a dividend-paying fit".into(),
        )),
    }
}
