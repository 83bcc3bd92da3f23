//! Restricted estimation under `R beta = r` and the classical test battery.
//!
//! The restricted ML estimator is
//! `beta_* = beta_hat - (X'X)^{-1} R' [R (X'X)^{-1} R']^{-1} (R beta_hat - r)`,
//! and with `D = e_*'e_* - e'e` the statistics are
//!
//! ```text
//! F  = (D / q) / (e'e / dof)        ~  F(q, dof)
//! LR = T ln(1 + D / e'e)            ~  chi2(q)
//! W  = T D / e'e                    ~  chi2(q)
//! LM = T D / e_*'e_*                ~  chi2(q)
//! ```
//!
//! `W >= LR >= LM` holds algebraically (x >= ln(1+x) >= x/(1+x)). The module
//! works off cross-products stored in [`LinearFit`], so the public DDM and
//! private valuation regressions share it unchanged.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dist;
use crate::error::{Error, Result};
use crate::fit::LinearFit;
use crate::linalg;

/// A general linear hypothesis `R beta = r` with `q` independent rows.
#[derive(Debug, Clone)]
pub struct LinearRestriction {
    r_matrix: DMatrix<f64>,
    r_vec: DVector<f64>,
}

impl LinearRestriction {
    pub fn new(r_matrix: DMatrix<f64>, r_vec: DVector<f64>) -> Result<Self> {
        let q = r_matrix.nrows();
        let dim = r_matrix.ncols();
        if q == 0 || q > dim {
            return Err(Error::InvalidArgument(format!(
                "restriction must have 1..=dim rows, got {q} rows for dim {dim}"
            )));
        }
        if r_vec.len() != q {
            return Err(Error::DimensionMismatch(format!(
                "R has {q} rows but r has {} entries",
                r_vec.len()
            )));
        }
        let svd = r_matrix.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|s| **s > 1e-12 * smax.max(1.0))
            .count();
        if rank < q {
            return Err(Error::InvalidArgument(format!(
                "restriction matrix has rank {rank} < q = {q}"
            )));
        }
        Ok(Self { r_matrix, r_vec })
    }

    /// Parse restriction expressions like `"k2+k3=0.1"`, `"2k2-0.5k3=0"`, or
    /// `"delta=0.5"` into stacked rows. `n_k` is the number of `k`
    /// coefficients; `has_delta` appends the book-to-price slot.
    pub fn parse(exprs: &[&str], n_k: usize, has_delta: bool) -> Result<Self> {
        let dim = n_k + usize::from(has_delta);
        let mut rows = DMatrix::zeros(exprs.len(), dim);
        let mut rhs = DVector::zeros(exprs.len());
        for (row, expr) in exprs.iter().enumerate() {
            let (lhs, val) = parse_equation(expr, n_k, has_delta)?;
            for (col, coef) in lhs {
                rows[(row, col)] += coef;
            }
            rhs[row] = val;
        }
        Self::new(rows, rhs)
    }

    pub fn q(&self) -> usize {
        self.r_matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r_matrix
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.r_vec
    }

    /// If the restriction is a single row touching a single coefficient
    /// (`alpha * beta_i = r`), returns `(i, hypothesized value)`.
    pub fn single_coefficient(&self) -> Option<(usize, f64)> {
        if self.q() != 1 {
            return None;
        }
        let row = self.r_matrix.row(0);
        let nonzero: Vec<usize> = (0..row.len()).filter(|&j| row[j] != 0.0).collect();
        match nonzero.as_slice() {
            [j] => Some((*j, self.r_vec[0] / row[*j])),
            _ => None,
        }
    }
}

fn parse_equation(expr: &str, n_k: usize, has_delta: bool) -> Result<(Vec<(usize, f64)>, f64)> {
    let bad = |msg: &str| Error::Parse(format!("restriction '{expr}': {msg}"));
    let mut sides = expr.splitn(2, '=');
    let lhs = sides.next().unwrap_or("").trim();
    let rhs = sides.next().ok_or_else(|| bad("missing '='"))?.trim();
    let value: f64 = rhs.parse().map_err(|_| bad("right-hand side is not a number"))?;

    let mut terms = Vec::new();
    let cleaned: String = lhs.chars().filter(|c| !c.is_whitespace()).collect();
    if cleaned.is_empty() {
        return Err(bad("empty left-hand side"));
    }
    let mut rest = cleaned.as_str();
    let mut sign = 1.0;
    loop {
        if let Some(stripped) = rest.strip_prefix('+') {
            rest = stripped;
        } else if let Some(stripped) = rest.strip_prefix('-') {
            sign = -sign;
            rest = stripped;
        }
        // optional numeric coefficient, optionally followed by '*'
        let coef_len = rest
            .char_indices()
            .take_while(|(_, c)| c.is_ascii_digit() || *c == '.')
            .map(|(i, c)| i + c.len_utf8())
            .last()
            .unwrap_or(0);
        let coef = if coef_len > 0 {
            rest[..coef_len]
                .parse::<f64>()
                .map_err(|_| bad("malformed coefficient"))?
        } else {
            1.0
        };
        rest = rest[coef_len..].strip_prefix('*').unwrap_or(&rest[coef_len..]);

        let (index, after) = if let Some(tail) = rest.strip_prefix("delta") {
            if !has_delta {
                return Err(bad("model has no delta coefficient"));
            }
            (n_k, tail)
        } else if let Some(tail) = rest.strip_prefix('k') {
            let digits_len = tail
                .char_indices()
                .take_while(|(_, c)| c.is_ascii_digit())
                .map(|(i, c)| i + c.len_utf8())
                .last()
                .ok_or_else(|| bad("expected coefficient index after 'k'"))?;
            let idx: usize = tail[..digits_len].parse().map_err(|_| bad("bad index"))?;
            if idx == 0 || idx > n_k {
                return Err(bad(&format!("k{idx} out of range 1..={n_k}")));
            }
            (idx - 1, &tail[digits_len..])
        } else {
            return Err(bad("expected a term like 'k2' or 'delta'"));
        };
        terms.push((index, sign * coef));
        sign = 1.0;
        rest = after;
        if rest.is_empty() {
            break;
        }
        if !rest.starts_with('+') && !rest.starts_with('-') {
            return Err(bad("expected '+' or '-' between terms"));
        }
    }
    Ok((terms, value))
}

/// Restricted ML fit. The coefficient algebra uses only the cross-products
/// cached in `fit`; the design is needed to materialize the restricted
/// residual vector. `dof` of the result is `T - (dim - q)`, the residual
/// degrees of freedom of the constrained model.
pub fn fit_restricted(
    fit: &LinearFit,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    restr: &LinearRestriction,
) -> Result<LinearFit> {
    let dim = fit.dim();
    if restr.matrix().ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "restriction has {} columns, fit has dim {dim}",
            restr.matrix().ncols()
        )));
    }
    let a = fit.xtx_inv();
    let r = restr.matrix();
    let ar_t = a * r.transpose(); // dim x q
    let rar = linalg::symmetrize(&(r * &ar_t)); // q x q
    let gap = r * &fit.coeffs - restr.rhs();
    let solved = rar
        .clone()
        .cholesky()
        .map(|c| c.solve(&gap))
        .ok_or(Error::RestrictionDegenerate)?;
    let coeffs = &fit.coeffs - &ar_t * &solved;

    let residuals = y - x * &coeffs;
    let rss = residuals.dot(&residuals);
    let t = fit.n_obs();
    let q = restr.q();
    let free = dim - q;
    let dof = t - free;
    let sigma2_unbiased = if dof > 0 { rss / dof as f64 } else { f64::NAN };
    // Var(beta_*) = s^2 [A - A R'(R A R')^{-1} R A]
    let rar_inv_ra = rar
        .cholesky()
        .map(|c| c.solve(&ar_t.transpose()))
        .ok_or(Error::RestrictionDegenerate)?;
    let shrink = &ar_t * rar_inv_ra;
    let coeff_cov = if dof > 0 {
        linalg::symmetrize(&(sigma2_unbiased * (a - &shrink)))
    } else {
        DMatrix::zeros(dim, dim)
    };
    Ok(LinearFit {
        coeffs,
        sigma2_ml: rss / t as f64,
        sigma2_unbiased,
        residuals,
        rss,
        coeff_cov,
        dof,
        xtx: fit.xtx().clone(),
        xtx_inv: fit.xtx_inv().clone(),
        n_obs: t,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PValues {
    pub f: f64,
    pub lr: f64,
    pub w: f64,
    pub lm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

/// The five statistics with their reference-distribution p-values.
#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub restricted_fit: LinearFit,
    pub q: usize,
    pub f_stat: f64,
    pub lr_stat: f64,
    pub w_stat: f64,
    pub lm_stat: f64,
    /// Present only for a single-coefficient hypothesis.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_stat: Option<f64>,
    pub p_values: PValues,
}

/// Compute F / LR / W / LM (and t where applicable) from an unrestricted and
/// a restricted fit of the same data.
pub fn run_tests(
    unrestricted: &LinearFit,
    restricted: LinearFit,
    restr: &LinearRestriction,
    t_len: usize,
) -> Result<TestReport> {
    if restricted.n_obs() != unrestricted.n_obs() || t_len != unrestricted.n_obs() {
        return Err(Error::DimensionMismatch(
            "restricted and unrestricted fits must share the same sample".into(),
        ));
    }
    let rss = unrestricted.rss;
    if rss <= 0.0 {
        return Err(Error::ExactFit("test statistics"));
    }
    if unrestricted.dof == 0 {
        return Err(Error::ExactFit("F statistic (no residual degrees of freedom)"));
    }
    let delta = (restricted.rss - rss).max(0.0);
    let q = restr.q() as f64;
    let t = t_len as f64;
    let dof = unrestricted.dof as f64;

    let f_stat = (delta / q) / (rss / dof);
    let lr_stat = t * (1.0 + delta / rss).ln();
    let w_stat = t * delta / rss;
    let lm_stat = t * delta / restricted.rss;

    let t_stat = restr.single_coefficient().map(|(i, hyp)| {
        let se = unrestricted.std_error(i);
        (unrestricted.coeffs[i] - hyp) / se
    });

    let p_values = PValues {
        f: dist::f_p_value(f_stat, q, dof),
        lr: dist::chi2_p_value(lr_stat, q),
        w: dist::chi2_p_value(w_stat, q),
        lm: dist::chi2_p_value(lm_stat, q),
        t: t_stat.map(|ts| dist::t_p_value(ts, dof)),
    };

    Ok(TestReport {
        restricted_fit: restricted,
        q: restr.q(),
        f_stat,
        lr_stat,
        w_stat,
        lm_stat,
        t_stat,
        p_values,
    })
}

/// t statistic and two-sided p-value for `H0: beta_i = hypothesized`.
pub fn t_test(fit: &LinearFit, i: usize, hypothesized: f64) -> Result<(f64, f64)> {
    if i >= fit.dim() {
        return Err(Error::InvalidArgument(format!(
            "coefficient index {i} out of range for dim {}",
            fit.dim()
        )));
    }
    let se = fit.std_error(i);
    if !(se > 0.0) {
        return Err(Error::ExactFit("t statistic"));
    }
    let t = (fit.coeffs[i] - hypothesized) / se;
    Ok((t, dist::t_p_value(t, fit.dof as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    fn random_fit(t: usize, dim: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>, LinearFit) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut x = DMatrix::zeros(t, dim);
        for i in 0..t {
            x[(i, 0)] = 1.0;
            for j in 1..dim {
                x[(i, j)] = rng.gen_range(-2.0..2.0);
            }
        }
        let y = DVector::from_iterator(t, (0..t).map(|_| rng.gen_range(-1.0..1.0)));
        let fit = LinearFit::from_design(&x, &y).unwrap();
        (x, y, fit)
    }

    #[test]
    fn binding_at_optimum_is_noop() {
        let (x, y, fit) = random_fit(30, 3, 1);
        let r = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        let restr = LinearRestriction::new(r, DVector::from_vec(vec![fit.coeffs[1]])).unwrap();
        let rfit = fit_restricted(&fit, &x, &y, &restr).unwrap();
        assert!((rfit.coeffs.clone() - &fit.coeffs).amax() < 1e-12);
        assert!((rfit.rss - fit.rss).abs() < 1e-10);
    }

    #[test]
    fn null_model_rss_is_yty() {
        // Constant-k model restricted to k = 0.
        let x = DMatrix::from_column_slice(4, 1, &[100.0, 102.0, 104.0, 106.0]);
        let y = DVector::from_vec(vec![2.0, 1.0, 3.0, 2.0]);
        let fit = LinearFit::from_design(&x, &y).unwrap();
        let restr = LinearRestriction::new(DMatrix::identity(1, 1), DVector::zeros(1)).unwrap();
        let rfit = fit_restricted(&fit, &x, &y, &restr).unwrap();
        assert!((rfit.rss - y.dot(&y)).abs() < 1e-10);
        assert!(rfit.coeffs[0].abs() < 1e-14);
    }

    #[test]
    fn matches_elimination_oracle() {
        // k2 + k3 = 0.1 solved independently by substituting k3 = 0.1 - k2.
        let (x, y, fit) = random_fit(40, 3, 7);
        let restr =
            LinearRestriction::new(DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 1.0]), DVector::from_vec(vec![0.1]))
                .unwrap();
        let rfit = fit_restricted(&fit, &x, &y, &restr).unwrap();

        let mut x_elim = DMatrix::zeros(40, 2);
        let mut y_elim = DVector::zeros(40);
        for i in 0..40 {
            x_elim[(i, 0)] = x[(i, 0)];
            x_elim[(i, 1)] = x[(i, 1)] - x[(i, 2)];
            y_elim[i] = y[i] - 0.1 * x[(i, 2)];
        }
        let efit = LinearFit::from_design(&x_elim, &y_elim).unwrap();
        assert!((rfit.coeffs[0] - efit.coeffs[0]).abs() < 1e-10);
        assert!((rfit.coeffs[1] - efit.coeffs[1]).abs() < 1e-10);
        assert!((rfit.coeffs[2] - (0.1 - efit.coeffs[1])).abs() < 1e-10);
        assert!((rfit.rss - efit.rss).abs() < 1e-9);
    }

    #[test]
    fn restriction_satisfied_and_rss_identity() {
        for seed in 0..20 {
            let (x, y, fit) = random_fit(25, 4, seed);
            let restr = LinearRestriction::new(
                DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 0.0, 0.0, 0.0, 0.5, 2.0, -1.0]),
                DVector::from_vec(vec![0.3, -0.2]),
            )
            .unwrap();
            let rfit = fit_restricted(&fit, &x, &y, &restr).unwrap();
            let gap = restr.matrix() * &rfit.coeffs - restr.rhs();
            assert!(gap.amax() < 1e-10, "R beta_* = r violated: {}", gap.amax());
            // Eq-style RSS identity: e_*'e_* = e'e + (b - b_*)' X'X (b - b_*)
            let diff = &fit.coeffs - &rfit.coeffs;
            let via_identity = fit.rss + (fit.xtx() * &diff).dot(&diff);
            assert!((rfit.rss - via_identity).abs() < 1e-8 * rfit.rss.max(1.0));
            assert!(rfit.rss >= fit.rss - 1e-12);
        }
    }

    #[test]
    fn forced_statistics_values() {
        // D / e'e = 0.1, T = 100: W = 10, LR = 100 ln(1.1), LM = 10/1.1.
        let (_, _, mut fit) = random_fit(100, 2, 3);
        fit.rss = 1.0;
        let mut restricted = fit.clone();
        restricted.rss = 1.1;
        let restr = LinearRestriction::new(
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DVector::from_vec(vec![0.0]),
        )
        .unwrap();
        let report = run_tests(&fit, restricted, &restr, 100).unwrap();
        assert!((report.w_stat - 10.0).abs() < 1e-10);
        assert!((report.lr_stat - 100.0 * 1.1f64.ln()).abs() < 1e-10);
        assert!((report.lr_stat - 9.531017980432486).abs() < 1e-9);
        assert!((report.lm_stat - 100.0 * 0.1 / 1.1).abs() < 1e-10);
        assert!((report.lm_stat - 9.090909090909092).abs() < 1e-9);
        assert!(report.w_stat >= report.lr_stat && report.lr_stat >= report.lm_stat);
    }

    #[test]
    fn identical_fits_give_zero_statistics() {
        let (x, y, fit) = random_fit(30, 2, 11);
        let restr = LinearRestriction::new(
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DVector::from_vec(vec![fit.coeffs[1]]),
        )
        .unwrap();
        let rfit = fit_restricted(&fit, &x, &y, &restr).unwrap();
        let report = run_tests(&fit, rfit, &restr, 30).unwrap();
        for stat in [report.f_stat, report.lr_stat, report.w_stat, report.lm_stat] {
            assert!(stat.abs() < 1e-8);
        }
        for p in [report.p_values.f, report.p_values.lr, report.p_values.w, report.p_values.lm] {
            assert!(p > 0.9999);
        }
    }

    #[test]
    fn t_equals_zero_at_point_estimate_and_f_is_t_squared() {
        let (x, y, fit) = random_fit(35, 3, 5);
        let (t0, p0) = t_test(&fit, 1, fit.coeffs[1]).unwrap();
        assert!(t0.abs() < 1e-12 && (p0 - 1.0).abs() < 1e-12);

        let hyp = 0.25;
        let restr = LinearRestriction::new(
            DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]),
            DVector::from_vec(vec![hyp]),
        )
        .unwrap();
        let rfit = fit_restricted(&fit, &x, &y, &restr).unwrap();
        let report = run_tests(&fit, rfit, &restr, 35).unwrap();
        let (t_stat, _) = t_test(&fit, 1, hyp).unwrap();
        assert!((report.f_stat - t_stat * t_stat).abs() < 1e-10 * report.f_stat.max(1.0));
        assert!((report.t_stat.unwrap() - t_stat).abs() < 1e-12);
    }

    #[test]
    fn quadratic_form_f_matches_rss_difference_f() {
        for seed in 20..30 {
            let (x, y, fit) = random_fit(28, 3, seed);
            let restr = LinearRestriction::new(
                DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 2.0]),
                DVector::from_vec(vec![0.05]),
            )
            .unwrap();
            let rfit = fit_restricted(&fit, &x, &y, &restr).unwrap();
            let report = run_tests(&fit, rfit, &restr, 28).unwrap();

            // Quadratic-form route: (R b - r)' [s^2 R (X'X)^{-1} R']^{-1} (R b - r) / q,
            // which for q = 1 reduces to gap^2 / (s^2 R (X'X)^{-1} R').
            let r = restr.matrix();
            let gap = (r * &fit.coeffs - restr.rhs())[0];
            let mid = (r * fit.xtx_inv() * r.transpose())[(0, 0)] * fit.sigma2_unbiased;
            let f_quad = gap * gap / mid;
            assert!((report.f_stat - f_quad).abs() < 1e-8 * f_quad.max(1.0));
        }
    }

    #[test]
    fn exact_fit_is_an_error() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![2.0, 4.0, 6.0]);
        let fit = LinearFit::from_design(&x, &y).unwrap();
        let restr = LinearRestriction::new(DMatrix::identity(1, 1), DVector::zeros(1)).unwrap();
        let rfit = fit_restricted(&fit, &x, &y, &restr).unwrap();
        assert!(matches!(run_tests(&fit, rfit, &restr, 3), Err(Error::ExactFit(_))));
        assert!(matches!(t_test(&fit, 0, 0.0), Err(Error::ExactFit(_))));
    }

    #[test]
    fn parser_handles_spec_syntax() {
        let restr = LinearRestriction::parse(&["k2+k3=0.1"], 3, false).unwrap();
        assert_eq!(restr.q(), 1);
        assert_eq!(restr.matrix().row(0).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 1.0]);
        assert_eq!(restr.rhs()[0], 0.1);

        let restr = LinearRestriction::parse(&["2k1-0.5*k2=-1.5"], 2, false).unwrap();
        assert_eq!(restr.matrix().row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, -0.5]);
        assert_eq!(restr.rhs()[0], -1.5);

        let restr = LinearRestriction::parse(&["delta=0.5", "k1=0.02"], 1, true).unwrap();
        assert_eq!(restr.q(), 2);
        assert_eq!(restr.matrix()[(0, 1)], 1.0);
        assert_eq!(restr.matrix()[(1, 0)], 1.0);
        assert_eq!(restr.single_coefficient(), None);

        assert!(LinearRestriction::parse(&["k9=0"], 3, false).is_err());
        assert!(LinearRestriction::parse(&["delta=0"], 3, false).is_err());
        assert!(LinearRestriction::parse(&["k1"], 3, false).is_err());
    }

    #[test]
    fn w_lr_lm_ordering_is_strict_algebra() {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for _ in 0..500 {
            let x: f64 = rng.gen_range(1e-9..5.0);
            let t = rng.gen_range(5..500) as f64;
            let w = t * x;
            let lr = t * (1.0 + x).ln();
            let lm = t * x / (1.0 + x);
            assert!(w >= lr && lr >= lm);
        }
    }
}
