//! N-regime Markov-switching estimation.
//!
//! A hidden first-order chain `s_t` with transition matrix `P` selects the
//! coefficient vector of an otherwise linear model. All three model kinds
//! reduce to per-regime linear designs:
//!
//! * public DDM: rows `c_t' P_{t-1}`, response `P_t + d_t - P_{t-1}`;
//! * private paying: rows `[c_t' : -Delta_t]`, response `b_t`;
//! * private non-paying: rows `c_t'`, response `b_t`.
//!
//! Estimation alternates the Hamilton filter / Kim smoother with closed-form
//! regime-weighted regressions and the transition MLE (zig-zag EM). Filter
//! recursions run on scaled densities with the normalization constants
//! accumulated in log space, so large standardized residuals cannot
//! underflow the recursion.

use nalgebra::{DMatrix, DVector};
use serde::ser::{SerializeStruct, Serializer};
use serde::Serialize;

use crate::data::{ObservationSet, PrivateObservationSet};
use crate::ddm;
use crate::error::{Error, Result};
use crate::fit::matrix_rows;
use crate::linalg;
use crate::private::build_private_design;

const LN_2PI: f64 = 1.8378770664093453;

/// Row-stochastic transition matrix plus the initial probability vector
/// `rho = z_{1|0}`.
#[derive(Debug, Clone)]
pub struct MarkovChainSpec {
    p: DMatrix<f64>,
    rho: DVector<f64>,
}

impl MarkovChainSpec {
    pub fn new(p: DMatrix<f64>, rho: DVector<f64>) -> Result<Self> {
        let n = p.nrows();
        if n == 0 || p.ncols() != n {
            return Err(Error::Validation("transition matrix must be square and non-empty".into()));
        }
        if rho.len() != n {
            return Err(Error::Validation(format!(
                "initial vector has {} entries for {n} regimes",
                rho.len()
            )));
        }
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let v = p[(i, j)];
                if !((-1e-12..=1.0 + 1e-12).contains(&v)) {
                    return Err(Error::Validation(format!(
                        "transition probability p[{i}][{j}] = {v} outside [0, 1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::Validation(format!(
                    "row {i} of transition matrix sums to {sum}, expected 1"
                )));
            }
        }
        let rho_sum: f64 = rho.iter().sum();
        if (rho_sum - 1.0).abs() > 1e-12 || rho.iter().any(|v| *v < -1e-12 || *v > 1.0 + 1e-12) {
            return Err(Error::Validation("initial probabilities must be a distribution".into()));
        }
        Ok(Self { p, rho })
    }

    /// Diagonal persistence `d`, remaining mass spread uniformly, uniform
    /// initial probabilities.
    pub fn persistent(n: usize, diag: f64) -> Result<Self> {
        let off = if n > 1 { (1.0 - diag) / (n - 1) as f64 } else { 0.0 };
        let p = DMatrix::from_fn(n, n, |i, j| if i == j { if n > 1 { diag } else { 1.0 } } else { off });
        Self::new(p, DVector::from_element(n, 1.0 / n as f64))
    }

    pub fn n_regimes(&self) -> usize {
        self.p.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.rho
    }
}

/// Which regression kernel the regimes switch over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeModel {
    Public,
    PrivatePaying,
    PrivateNonPaying,
}

impl RegimeModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegimeModel::Public => "public",
            RegimeModel::PrivatePaying => "private-paying",
            RegimeModel::PrivateNonPaying => "private-nonpaying",
        }
    }
}

/// A regime-switching estimation problem in unified design form.
#[derive(Debug, Clone)]
pub struct RegimeProblem {
    x: DMatrix<f64>,
    y: DVector<f64>,
    covariates: DMatrix<f64>,
    model: RegimeModel,
    n_covariates: usize,
}

impl RegimeProblem {
    pub fn public(obs: &ObservationSet) -> Self {
        let design = ddm::build_design(obs);
        Self {
            x: design.matrix().clone(),
            y: design.response().clone(),
            covariates: obs.covariates().clone(),
            model: RegimeModel::Public,
            n_covariates: obs.n_covariates(),
        }
    }

    pub fn private(obs: &PrivateObservationSet) -> Result<Self> {
        let design = build_private_design(obs)?;
        Ok(Self {
            x: design.matrix().clone(),
            y: design.response().clone(),
            covariates: obs.covariates().clone(),
            model: if obs.paying() {
                RegimeModel::PrivatePaying
            } else {
                RegimeModel::PrivateNonPaying
            },
            n_covariates: obs.n_covariates(),
        })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coefficients per regime (`n` covariates plus the delta slot when paying).
    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn model(&self) -> RegimeModel {
        self.model
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn design(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.x, &self.y)
    }
}

/// Per-regime coefficients and the shared error variance.
#[derive(Debug, Clone)]
pub struct RegimeParams {
    pub coeffs: Vec<DVector<f64>>,
    pub sigma2: f64,
}

/// Conditional density vector `eta_t` under each regime: the normal density
/// of the model residual at time `t` (0-based).
pub fn regime_densities(problem: &RegimeProblem, params: &RegimeParams, t: usize) -> DVector<f64> {
    let n = params.coeffs.len();
    DVector::from_iterator(
        n,
        (0..n).map(|j| {
            let resid = problem.y[t] - problem.x.row(t).transpose().dot(&params.coeffs[j]);
            (-0.5 * resid * resid / params.sigma2).exp() / (2.0 * std::f64::consts::PI * params.sigma2).sqrt()
        }),
    )
}

/// `T x N` matrix of log conditional densities.
pub fn log_density_matrix(problem: &RegimeProblem, params: &RegimeParams) -> DMatrix<f64> {
    let t_len = problem.len();
    let n = params.coeffs.len();
    let ln_norm = -0.5 * (LN_2PI + params.sigma2.ln());
    DMatrix::from_fn(t_len, n, |t, j| {
        let resid = problem.y[t] - problem.x.row(t).transpose().dot(&params.coeffs[j]);
        ln_norm - 0.5 * resid * resid / params.sigma2
    })
}

/// Output of the Hamilton filter. Row `t` (0-based) of `filtered` is
/// `z_{t+1|t+1}`; row `t` of `predicted` is `z_{t+1|t}`, so row 0 is `rho`.
#[derive(Debug, Clone)]
pub struct FilterPass {
    pub filtered: DMatrix<f64>,
    pub predicted: DMatrix<f64>,
    pub loglik: f64,
}

/// Hamilton filter on raw densities. Errors when a density row is all zero.
pub fn hamilton_filter(densities: &DMatrix<f64>, chain: &MarkovChainSpec) -> Result<FilterPass> {
    if densities.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
        return Err(Error::Validation(
            "densities must be finite and non-negative".into(),
        ));
    }
    let logs = densities.map(|d| d.ln());
    hamilton_filter_log(&logs, chain)
}

/// Hamilton filter on log densities, scaled per step so only the running
/// log-normalizer touches magnitudes.
pub fn hamilton_filter_log(log_densities: &DMatrix<f64>, chain: &MarkovChainSpec) -> Result<FilterPass> {
    let t_len = log_densities.nrows();
    let n = chain.n_regimes();
    if log_densities.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "density matrix has {} columns for {n} regimes",
            log_densities.ncols()
        )));
    }
    let mut filtered = DMatrix::zeros(t_len, n);
    let mut predicted = DMatrix::zeros(t_len, n);
    let mut loglik = 0.0;
    let mut pred = chain.rho.clone();
    for t in 0..t_len {
        predicted.row_mut(t).copy_from(&pred.transpose());
        let row = log_densities.row(t);
        let peak = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        if !peak.is_finite() {
            return Err(Error::FilterDegeneracy { t: t + 1 });
        }
        let mut weighted = DVector::zeros(n);
        for j in 0..n {
            weighted[j] = pred[j] * (row[j] - peak).exp();
        }
        let norm: f64 = weighted.iter().sum();
        if !(norm > 0.0) {
            return Err(Error::FilterDegeneracy { t: t + 1 });
        }
        weighted /= norm;
        filtered.row_mut(t).copy_from(&weighted.transpose());
        loglik += norm.ln() + peak;
        pred = chain.p.transpose() * &weighted;
    }
    Ok(FilterPass { filtered, predicted, loglik })
}

/// Kim smoother: `z_{t|T} = z_{t|t} .* { P'(z_{t+1|T} ./ z_{t+1|t}) }`,
/// run backward from the final filtered row. A `0/0` in the element-wise
/// division is 0: an unreachable predicted state carries no smoothed mass.
pub fn kim_smoother(filter: &FilterPass, chain: &MarkovChainSpec) -> Result<DMatrix<f64>> {
    let t_len = filter.filtered.nrows();
    let n = chain.n_regimes();
    let mut smoothed = DMatrix::zeros(t_len, n);
    smoothed.row_mut(t_len - 1).copy_from(&filter.filtered.row(t_len - 1));
    for t in (0..t_len - 1).rev() {
        let mut ratio = DVector::zeros(n);
        for j in 0..n {
            let num = smoothed[(t + 1, j)];
            let den = filter.predicted[(t + 1, j)];
            if den > 0.0 {
                ratio[j] = num / den;
            } else if num.abs() > 1e-300 {
                return Err(Error::SmoothInconsistency { t: t + 2, mass: num });
            }
        }
        let propagated = &chain.p * ratio;
        for j in 0..n {
            smoothed[(t, j)] = filter.filtered[(t, j)] * propagated[j];
        }
    }
    Ok(smoothed)
}

/// Joint smoothed probability matrix for the regime pair `(s_{t}, s_{t+1})`
/// at 0-based `t` in `0..T-1`: entry `(i, j)` is
/// `p_ij (z_{t+1|T})_j (z_{t|t})_i / (z_{t+1|t})_j`.
pub fn pairwise_smoothed(
    chain: &MarkovChainSpec,
    filter: &FilterPass,
    smoothed: &DMatrix<f64>,
    t: usize,
) -> Result<DMatrix<f64>> {
    let n = chain.n_regimes();
    let mut joint = DMatrix::zeros(n, n);
    for j in 0..n {
        let den = filter.predicted[(t + 1, j)];
        let num = smoothed[(t + 1, j)];
        if den <= 0.0 {
            if num.abs() > 1e-300 {
                return Err(Error::SmoothInconsistency { t: t + 2, mass: num });
            }
            continue;
        }
        let ratio = num / den;
        for i in 0..n {
            joint[(i, j)] = chain.p[(i, j)] * ratio * filter.filtered[(t, i)];
        }
    }
    Ok(joint)
}

/// Scalar accessor mirroring the pairwise formula: probability of regime `i`
/// at `t` and regime `j` at `t+1` given all data.
pub fn joint_smoothed(
    chain: &MarkovChainSpec,
    filter: &FilterPass,
    smoothed: &DMatrix<f64>,
    t: usize,
    i: usize,
    j: usize,
) -> Result<f64> {
    Ok(pairwise_smoothed(chain, filter, smoothed, t)?[(i, j)])
}

/// Transition MLE `p_ij = sum_t joint(t)_{ij} / sum_t (z_{t|T})_i` over the
/// `T-1` adjacent pairs. Signals an empty regime when a denominator has no
/// smoothed mass.
pub fn transition_mle(
    chain: &MarkovChainSpec,
    filter: &FilterPass,
    smoothed: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let t_len = smoothed.nrows();
    let n = chain.n_regimes();
    if t_len < 2 {
        return Err(Error::InvalidArgument("transition MLE needs T >= 2".into()));
    }
    let mut numer = DMatrix::zeros(n, n);
    for t in 0..t_len - 1 {
        numer += pairwise_smoothed(chain, filter, smoothed, t)?;
    }
    let mut p_hat = DMatrix::zeros(n, n);
    for i in 0..n {
        let denom: f64 = (0..t_len - 1).map(|t| smoothed[(t, i)]).sum();
        if denom < 1e-12 {
            return Err(Error::EmptyRegime { regime: i, mass: denom });
        }
        for j in 0..n {
            p_hat[(i, j)] = numer[(i, j)] / denom;
        }
        let row_sum: f64 = (0..n).map(|j| p_hat[(i, j)]).sum();
        for j in 0..n {
            p_hat[(i, j)] /= row_sum;
        }
    }
    Ok(p_hat)
}

/// Regime-weighted regression: rows of the design and response scaled by
/// `sqrt(weight_t)`, then solved by the shared least-squares kernel.
pub fn weighted_regression(problem: &RegimeProblem, weights: &DVector<f64>) -> Result<DVector<f64>> {
    let t_len = problem.len();
    if weights.len() != t_len {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} observations",
            weights.len(),
            t_len
        )));
    }
    let mut xw = problem.x.clone();
    let mut yw = problem.y.clone();
    for t in 0..t_len {
        let w = weights[t].max(0.0).sqrt();
        xw.row_mut(t).scale_mut(w);
        yw[t] *= w;
    }
    Ok(linalg::svd_lstsq(&xw, &yw)?.coeffs)
}

/// Fitted regime-switching model.
#[derive(Debug, Clone)]
pub struct RegimeFit {
    pub model: RegimeModel,
    /// `k(j)` per regime (delta excluded for the paying model).
    pub coeffs_per_regime: Vec<DVector<f64>>,
    /// `delta(j)` per regime, paying model only.
    pub delta_per_regime: Option<Vec<f64>>,
    pub sigma2: f64,
    pub chain: MarkovChainSpec,
    pub filtered: DMatrix<f64>,
    pub predicted: DMatrix<f64>,
    pub smoothed: DMatrix<f64>,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub restarts: usize,
}

impl RegimeFit {
    pub fn n_regimes(&self) -> usize {
        self.coeffs_per_regime.len()
    }

    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("non-empty trace")
    }

    /// Full per-regime coefficient vectors in design order (delta appended
    /// for the paying model).
    pub fn design_coeffs(&self) -> Vec<DVector<f64>> {
        match &self.delta_per_regime {
            None => self.coeffs_per_regime.clone(),
            Some(deltas) => self
                .coeffs_per_regime
                .iter()
                .zip(deltas)
                .map(|(k, d)| k.clone_owned().insert_row(k.len(), *d))
                .collect(),
        }
    }

    /// Mean fitted required rate per regime at the sample-average covariates.
    pub fn regime_mean_returns(&self, reference_covariates: &DVector<f64>) -> Vec<f64> {
        self.coeffs_per_regime
            .iter()
            .map(|k| reference_covariates.dot(k))
            .collect()
    }

    /// Smoothed probabilities as CSV: one row per period, one column per regime.
    pub fn write_smoothed_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path.as_ref())?;
        let n = self.n_regimes();
        let header: Vec<String> = (1..=n).map(|j| format!("regime{j}")).collect();
        writer.write_record(&header)?;
        for t in 0..self.smoothed.nrows() {
            let row: Vec<String> = (0..n).map(|j| format!("{}", self.smoothed[(t, j)])).collect();
            writer.write_record(&row)?;
        }
        writer.flush()?;
        Ok(())
    }
}

impl Serialize for RegimeFit {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("RegimeFit", 10)?;
        s.serialize_field("model", self.model.as_str())?;
        s.serialize_field(
            "coeffs_per_regime",
            &self
                .coeffs_per_regime
                .iter()
                .map(|v| v.as_slice().to_vec())
                .collect::<Vec<_>>(),
        )?;
        s.serialize_field("delta_per_regime", &self.delta_per_regime)?;
        s.serialize_field("sigma2", &self.sigma2)?;
        s.serialize_field("transition", &matrix_rows(&self.chain.p))?;
        s.serialize_field("initial", self.chain.rho.as_slice())?;
        s.serialize_field("smoothed", &matrix_rows(&self.smoothed))?;
        s.serialize_field("loglik_trace", &self.loglik_trace)?;
        s.serialize_field("converged", &self.converged)?;
        s.serialize_field("restarts", &self.restarts)?;
        s.end()
    }
}

/// EM controls. `seed` drives only restart perturbations, so a run is
/// deterministic given (data, options).
#[derive(Debug, Clone)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 1000,
            max_restarts: 5,
            seed: 0,
        }
    }
}

/// Smoothed mass below `1e-6 T` marks a regime as empty and triggers a restart.
const EMPTY_REGIME_FRACTION: f64 = 1e-6;

/// Zig-zag EM for the N-regime model.
pub fn em_fit(problem: &RegimeProblem, n_regimes: usize, opts: &EmOptions) -> Result<RegimeFit> {
    use rand::prelude::*;
    if n_regimes == 0 {
        return Err(Error::InvalidArgument("need at least one regime".into()));
    }
    let t_len = problem.len();
    if t_len < 2 || t_len < n_regimes * problem.dim() {
        return Err(Error::InvalidArgument(format!(
            "T = {t_len} too small for {n_regimes} regimes of dim {}",
            problem.dim()
        )));
    }

    let pooled = linalg::svd_lstsq(&problem.x, &problem.y)?;
    let resid = &problem.y - &problem.x * &pooled.coeffs;
    let rss = resid.dot(&resid);
    let dof = (t_len - problem.dim()).max(1);
    let s = (rss / dof as f64).sqrt();
    // Perturbation scale in coefficient units: return scale for the public
    // model (residuals are price-denominated), raw residual scale otherwise.
    let scale = match problem.model {
        RegimeModel::Public => {
            let mean_lag = problem.x.column(0).sum() / t_len as f64;
            s / mean_lag
        }
        _ => s,
    }
    .max(1e-8);

    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(opts.seed);
    let mut last_err = None;
    for restart in 0..=opts.max_restarts {
        let mut params = RegimeParams {
            coeffs: (0..n_regimes)
                .map(|j| {
                    let mut beta = pooled.coeffs.clone();
                    let base = alternating_offset(j) * scale;
                    let jitter = if restart == 0 { 0.0 } else { rng.gen_range(-1.0..1.0) * scale * restart as f64 };
                    beta[0] += base + jitter;
                    beta
                })
                .collect(),
            sigma2: (rss / t_len as f64).max(1e-12),
        };
        let mut chain = MarkovChainSpec::persistent(n_regimes, 0.8)?;

        match em_loop(problem, &mut params, &mut chain, opts) {
            Ok((fit_pass, smoothed, trace, converged)) => {
                let (coeffs, deltas) = split_coeffs(problem, &params.coeffs);
                let mut fit = RegimeFit {
                    model: problem.model,
                    coeffs_per_regime: coeffs,
                    delta_per_regime: deltas,
                    sigma2: params.sigma2,
                    chain,
                    filtered: fit_pass.filtered,
                    predicted: fit_pass.predicted,
                    smoothed,
                    loglik_trace: trace,
                    converged,
                    restarts: restart,
                };
                sort_regimes_by_mean_return(problem, &mut fit);
                return Ok(fit);
            }
            Err(err @ (Error::EmptyRegime { .. } | Error::SingularDesign { .. } | Error::FilterDegeneracy { .. })) => {
                last_err = Some(err);
                continue;
            }
            Err(other) => return Err(other),
        }
    }
    Err(Error::EmFailed {
        restarts: opts.max_restarts,
        reason: last_err.map(|e| e.to_string()).unwrap_or_else(|| "unknown".into()),
    })
}

/// Offsets +1, -1, +2, -2, ... in units of the perturbation scale.
fn alternating_offset(j: usize) -> f64 {
    let magnitude = (j / 2 + 1) as f64;
    if j.is_multiple_of(2) {
        magnitude
    } else {
        -magnitude
    }
}

fn split_coeffs(problem: &RegimeProblem, coeffs: &[DVector<f64>]) -> (Vec<DVector<f64>>, Option<Vec<f64>>) {
    match problem.model {
        RegimeModel::PrivatePaying => {
            let n = problem.n_covariates();
            let ks = coeffs.iter().map(|b| b.rows(0, n).into_owned()).collect();
            let deltas = coeffs.iter().map(|b| b[n]).collect();
            (ks, Some(deltas))
        }
        _ => (coeffs.to_vec(), None),
    }
}

fn em_loop(
    problem: &RegimeProblem,
    params: &mut RegimeParams,
    chain: &mut MarkovChainSpec,
    opts: &EmOptions,
) -> Result<(FilterPass, DMatrix<f64>, Vec<f64>, bool)> {
    let t_len = problem.len();
    let n = params.coeffs.len();
    let mut trace: Vec<f64> = Vec::new();

    loop {
        let logs = log_density_matrix(problem, params);
        let pass = hamilton_filter_log(&logs, chain)?;
        let smoothed = kim_smoother(&pass, chain)?;
        trace.push(pass.loglik);

        if let [.., prev, last] = trace.as_slice() {
            if (last - prev).abs() < opts.tol {
                return Ok((pass, smoothed, trace, true));
            }
        }
        if trace.len() > opts.max_iter {
            return Ok((pass, smoothed, trace, false));
        }

        for j in 0..n {
            let mass: f64 = (0..t_len).map(|t| smoothed[(t, j)]).sum();
            if mass < EMPTY_REGIME_FRACTION * t_len as f64 {
                return Err(Error::EmptyRegime { regime: j, mass });
            }
        }

        // M-step: chain first, then per-regime regressions, then sigma2 at
        // the updated coefficients.
        let p_hat = transition_mle(chain, &pass, &smoothed)?;
        let rho_hat = smoothed.row(0).transpose();
        *chain = MarkovChainSpec::new(p_hat, rho_hat)?;

        let mut rss_total = 0.0;
        for j in 0..n {
            let weights = DVector::from_iterator(t_len, (0..t_len).map(|t| smoothed[(t, j)]));
            params.coeffs[j] = weighted_regression(problem, &weights)?;
            for t in 0..t_len {
                let e = problem.y[t] - problem.x.row(t).transpose().dot(&params.coeffs[j]);
                rss_total += weights[t] * e * e;
            }
        }
        params.sigma2 = (rss_total / t_len as f64).max(1e-12);
    }
}

fn sort_regimes_by_mean_return(problem: &RegimeProblem, fit: &mut RegimeFit) {
    let t_len = problem.len();
    let n_cov = problem.n_covariates();
    let c_bar = DVector::from_iterator(
        n_cov,
        (0..n_cov).map(|j| problem.covariates.column(j).sum() / t_len as f64),
    );
    let means = fit.regime_mean_returns(&c_bar);
    let mut order: Vec<usize> = (0..fit.n_regimes()).collect();
    order.sort_by(|a, b| means[*b].total_cmp(&means[*a]));
    if order.iter().enumerate().all(|(i, j)| i == *j) {
        return;
    }

    fit.coeffs_per_regime = order.iter().map(|&j| fit.coeffs_per_regime[j].clone()).collect();
    if let Some(deltas) = &fit.delta_per_regime {
        fit.delta_per_regime = Some(order.iter().map(|&j| deltas[j]).collect());
    }
    let n = fit.n_regimes();
    let p_old = fit.chain.p.clone();
    let rho_old = fit.chain.rho.clone();
    fit.chain.p = DMatrix::from_fn(n, n, |i, j| p_old[(order[i], order[j])]);
    fit.chain.rho = DVector::from_fn(n, |i, _| rho_old[order[i]]);
    for m in [&mut fit.filtered, &mut fit.predicted, &mut fit.smoothed] {
        let old = m.clone();
        for (new_j, &old_j) in order.iter().enumerate() {
            m.column_mut(new_j).copy_from(&old.column(old_j));
        }
    }
}

/// Chain summaries: persistence times `tau_j = 1/(1 - p_jj)`, the ergodic
/// vector solving `P' pi = pi`, and the long-run expected return
/// `k_inf = sum_j pi_j k_bar(j)`.
#[derive(Debug, Clone, Serialize)]
pub struct ChainDiagnostics {
    pub tau: Vec<f64>,
    pub pi: Vec<f64>,
    pub k_inf: f64,
    pub eigenvalue_moduli: Vec<f64>,
}

pub fn chain_diagnostics(chain: &MarkovChainSpec, regime_means: &[f64]) -> Result<ChainDiagnostics> {
    let n = chain.n_regimes();
    if regime_means.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} regime means for {n} regimes",
            regime_means.len()
        )));
    }
    let eigen = chain.p.complex_eigenvalues();
    let mut moduli: Vec<f64> = eigen.iter().map(|c| c.norm()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    let near_unit = moduli.iter().filter(|m| **m > 1.0 - 1e-8).count();
    if near_unit != 1 {
        return Err(Error::NonErgodic { moduli });
    }

    // Stationarity system: (P' - I) pi = 0 with the last equation replaced
    // by the normalization sum(pi) = 1.
    let mut a = chain.p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NonErgodic { moduli: moduli.clone() })?;
    let mut pi: Vec<f64> = pi.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = pi.iter().sum();
    for v in &mut pi {
        *v /= total;
    }

    let tau = (0..n)
        .map(|j| {
            let p_jj = chain.p[(j, j)];
            if p_jj >= 1.0 {
                f64::INFINITY
            } else {
                1.0 / (1.0 - p_jj)
            }
        })
        .collect();
    let k_inf = pi.iter().zip(regime_means).map(|(p, k)| p * k).sum();
    Ok(ChainDiagnostics {
        tau,
        pi,
        k_inf,
        eigenvalue_moduli: moduli,
    })
}
