//! Internal least-squares kernel and small matrix helpers.
//!
//! Every regression in the crate funnels through [`svd_lstsq`] so that the
//! normal equations are solved by an orthogonal decomposition of the design
//! itself, never by forming and inverting `X'X`. Price-scaled design columns
//! are badly conditioned when prices are explosive, which makes that the
//! dominant numerical hazard here.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff below which a direction counts as null.
pub(crate) const RANK_CUTOFF: f64 = 1e-10;

#[derive(Debug)]
pub(crate) struct LstsqSolution {
    pub coeffs: DVector<f64>,
    /// Unscaled `(X'X)^{-1}` reconstructed from the SVD factors.
    pub xtx_inv: DMatrix<f64>,
}

/// Minimum-norm least squares via thin SVD with rank detection.
///
/// Rank deficiency is an error: the offending column combination is read off
/// the right singular vectors of the near-null space.
pub(crate) fn svd_lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LstsqSolution> {
    let (t, dim) = (x.nrows(), x.ncols());
    if t < dim {
        return Err(Error::DimensionMismatch(format!(
            "need at least {dim} observations for {dim} coefficients, got {t}"
        )));
    }
    if y.len() != t {
        return Err(Error::DimensionMismatch(format!(
            "design has {t} rows but response has {} entries",
            y.len()
        )));
    }
    let svd = x.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if !(sigma_max > 0.0) {
        return Err(Error::SingularDesign {
            columns: (0..dim).collect(),
            cutoff: RANK_CUTOFF,
        });
    }
    let v_t = svd.v_t.as_ref().expect("svd computed with V");
    let null_cols = offending_columns(v_t, &svd.singular_values, sigma_max);
    if !null_cols.is_empty() {
        return Err(Error::SingularDesign {
            columns: null_cols,
            cutoff: RANK_CUTOFF,
        });
    }

    let u = svd.u.as_ref().expect("svd computed with U");
    // coeffs = V diag(1/sigma) U' y
    let mut uty = u.transpose() * y;
    for i in 0..uty.len() {
        uty[i] /= svd.singular_values[i];
    }
    let coeffs = v_t.transpose() * uty;

    // (X'X)^{-1} = V diag(1/sigma^2) V'
    let mut scaled_vt = v_t.clone();
    for i in 0..svd.singular_values.len() {
        let s = svd.singular_values[i];
        scaled_vt.row_mut(i).scale_mut(1.0 / (s * s));
    }
    let xtx_inv = v_t.transpose() * scaled_vt;

    Ok(LstsqSolution { coeffs, xtx_inv })
}

fn offending_columns(v_t: &DMatrix<f64>, singular_values: &DVector<f64>, sigma_max: f64) -> Vec<usize> {
    let mut cols = Vec::new();
    for i in 0..singular_values.len() {
        if singular_values[i] < RANK_CUTOFF * sigma_max {
            let row = v_t.row(i);
            let peak = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (j, v) in row.iter().enumerate() {
                if v.abs() >= 0.3 * peak && !cols.contains(&j) {
                    cols.push(j);
                }
            }
        }
    }
    cols.sort_unstable();
    cols
}

/// `0.5 (M + M')`, applied after every covariance update so stored
/// covariances stay exactly symmetric.
pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Solve `A x = b` for symmetric positive-definite `A` via Cholesky,
/// falling back to SVD pseudo-inverse when the factorization fails.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    let svd = a.clone().svd(true, true);
    svd.pseudo_inverse(RANK_CUTOFF).ok().map(|pinv| pinv * b)
}
