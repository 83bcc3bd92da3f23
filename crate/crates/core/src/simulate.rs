//! Synthetic-data generators and brute-force oracles.
//!
//! Generators run each model equation forward under known parameters and
//! return the hidden truth (regime path, state path) alongside the
//! observables, so estimator tests can score recovery. All randomness comes
//! from a `ChaCha20` stream seeded per call; an inadmissible draw (price
//! <= 0, negative dividend-to-book, growth <= -1) fails loudly instead of
//! resampling, because conditioning on admissibility would bias recovery
//! studies.
//!
//! The two oracles here are deliberately non-recursive:
//!
//! * [`enumerate_hmm_posterior`] computes filtered and smoothed regime
//!   probabilities by summing over every one of the `N^T` paths;
//! * [`joint_gaussian_oracle`] builds the full joint Gaussian of all states
//!   and measurements and conditions once.
//!
//! Agreement of the Hamilton/Kim recursions and the Kalman filter/smoother
//! with these oracles is the core correctness evidence for this crate.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::data::{ObservationSet, PrivateObservationSet};
use crate::error::{Error, Result};
use crate::kalman::{SsmSpec, SsmSystem};
use crate::regime::MarkovChainSpec;

const ENUMERATION_LIMIT: f64 = 1e7;

/// Dividend-to-book policy for private-model simulation.
#[derive(Debug, Clone)]
pub enum DivToBookPolicy {
    Fixed(Vec<f64>),
    Uniform { lo: f64, hi: f64 },
}

impl Default for DivToBookPolicy {
    fn default() -> Self {
        DivToBookPolicy::Uniform { lo: 0.01, hi: 0.08 }
    }
}

/// Book-growth policy for the paying state-space simulation.
#[derive(Debug, Clone)]
pub enum GrowthPolicy {
    Fixed(Vec<f64>),
    Normal { mean: f64, sd: f64 },
}

/// Public-company DDM simulation, with or without regime switching.
#[derive(Debug, Clone)]
pub struct PublicDdmConfig {
    /// Per-regime coefficient vectors; a single entry means no switching.
    pub coeffs: Vec<DVector<f64>>,
    /// Markov chain over the regimes; `None` freezes regime 0.
    pub chain: Option<MarkovChainSpec>,
    /// `T x n` covariates; defaults to the constant column.
    pub covariates: Option<DMatrix<f64>>,
    pub sigma: f64,
    pub t_len: usize,
    pub p0: f64,
    /// Dividends follow `d_t = payout_frac * P_{t-1}`.
    pub payout_frac: f64,
    pub seed: u64,
}

impl PublicDdmConfig {
    pub fn constant(k: f64, sigma: f64, t_len: usize, p0: f64, seed: u64) -> Self {
        Self {
            coeffs: vec![DVector::from_vec(vec![k])],
            chain: None,
            covariates: None,
            sigma,
            t_len,
            p0,
            payout_frac: 0.01,
            seed,
        }
    }
}

/// Private valuation simulation (paying or non-paying, optional switching).
#[derive(Debug, Clone)]
pub struct PrivateSimConfig {
    pub coeffs: Vec<DVector<f64>>,
    /// Book-to-price slope per regime; `Some` makes the company a payer.
    pub deltas: Option<Vec<f64>>,
    pub chain: Option<MarkovChainSpec>,
    pub covariates: Option<DMatrix<f64>>,
    pub div_to_book: DivToBookPolicy,
    pub sigma: f64,
    pub t_len: usize,
    pub seed: u64,
}

/// State-space simulation for either company kind.
#[derive(Debug, Clone)]
pub struct SsmSimConfig {
    pub spec: SsmSpec,
    pub covariates: Option<DMatrix<f64>>,
    /// Exogenous book growth for the paying model (ignored for non-paying,
    /// where growth is generated by the model itself).
    pub book_growth: GrowthPolicy,
    pub t_len: usize,
    pub seed: u64,
}

/// Family-tagged configuration for batch drivers.
#[derive(Debug, Clone)]
pub enum SimConfig {
    PublicDdm(PublicDdmConfig),
    Private(PrivateSimConfig),
    Ssm(SsmSimConfig),
}

#[derive(Debug, Clone)]
pub enum SimData {
    Public(ObservationSet),
    Private(PrivateObservationSet),
}

/// Hidden truth accompanying a simulated sample.
#[derive(Debug, Clone)]
pub enum SimTruth {
    None,
    /// Regime index per period, `t = 1..=T`.
    Regimes(Vec<usize>),
    /// State path `m_0..m_T` (log scale for the non-paying model).
    States(Vec<f64>),
}

pub fn simulate(config: &SimConfig) -> Result<(SimData, SimTruth)> {
    match config {
        SimConfig::PublicDdm(cfg) => {
            let (obs, path) = simulate_public_ddm(cfg)?;
            Ok((
                SimData::Public(obs),
                path.map_or(SimTruth::None, SimTruth::Regimes),
            ))
        }
        SimConfig::Private(cfg) => {
            let (obs, path) = simulate_private(cfg)?;
            Ok((
                SimData::Private(obs),
                path.map_or(SimTruth::None, SimTruth::Regimes),
            ))
        }
        SimConfig::Ssm(cfg) => {
            let (obs, states) = simulate_ssm(cfg)?;
            Ok((SimData::Private(obs), SimTruth::States(states)))
        }
    }
}

fn covariate_matrix(covariates: &Option<DMatrix<f64>>, t_len: usize, dim: usize) -> Result<DMatrix<f64>> {
    match covariates {
        None => {
            if dim != 1 {
                return Err(Error::InvalidArgument(format!(
                    "coefficients have dim {dim}; supply a covariate matrix"
                )));
            }
            Ok(DMatrix::from_element(t_len, 1, 1.0))
        }
        Some(c) => {
            if c.nrows() != t_len || c.ncols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "covariates are {}x{}, expected {t_len}x{dim}",
                    c.nrows(),
                    c.ncols()
                )));
            }
            Ok(c.clone())
        }
    }
}

fn sample_regime(rng: &mut ChaCha20Rng, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, p) in probs.enumerate() {
        acc += p;
        last = j;
        if u < acc {
            return j;
        }
    }
    last
}

fn regime_path(
    rng: &mut ChaCha20Rng,
    chain: &Option<MarkovChainSpec>,
    n_regimes: usize,
    t_len: usize,
) -> Result<Option<Vec<usize>>> {
    match chain {
        None => Ok(None),
        Some(spec) => {
            if spec.n_regimes() != n_regimes {
                return Err(Error::DimensionMismatch(format!(
                    "chain has {} regimes for {n_regimes} coefficient sets",
                    spec.n_regimes()
                )));
            }
            let mut path = Vec::with_capacity(t_len);
            let mut state = sample_regime(rng, spec.initial().iter().copied());
            path.push(state);
            for _ in 1..t_len {
                state = sample_regime(rng, spec.transition().row(state).iter().copied());
                path.push(state);
            }
            Ok(Some(path))
        }
    }
}

/// Forward recursion `P_t = (1 + c_t'k(s_t)) P_{t-1} - d_t + u_t` with the
/// dividend policy `d_t = payout_frac * P_{t-1}`. Per period the draw order
/// is: regime transition (when switching), then the price shock.
pub fn simulate_public_ddm(cfg: &PublicDdmConfig) -> Result<(ObservationSet, Option<Vec<usize>>)> {
    if cfg.t_len == 0 || !(cfg.p0 > 0.0) || cfg.sigma < 0.0 {
        return Err(Error::InvalidArgument("need t_len >= 1, p0 > 0, sigma >= 0".into()));
    }
    let dim = cfg.coeffs[0].len();
    let covariates = covariate_matrix(&cfg.covariates, cfg.t_len, dim)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let path = regime_path(&mut rng, &cfg.chain, cfg.coeffs.len(), cfg.t_len)?;

    let mut prices = Vec::with_capacity(cfg.t_len + 1);
    let mut dividends = Vec::with_capacity(cfg.t_len);
    prices.push(cfg.p0);
    for t in 0..cfg.t_len {
        let regime = path.as_ref().map_or(0, |p| p[t]);
        let k_t = covariates.row(t).transpose().dot(&cfg.coeffs[regime]);
        let d_t = cfg.payout_frac * prices[t];
        let shock: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.sigma;
        let p_next = (1.0 + k_t) * prices[t] - d_t + shock;
        if !(p_next > 0.0) {
            return Err(Error::SimulationFailed {
                t: t + 1,
                reason: format!("price {p_next} not positive"),
            });
        }
        prices.push(p_next);
        dividends.push(d_t);
    }
    let obs = ObservationSet::new(prices, dividends, covariates, None)?;
    Ok((obs, path))
}

/// Forward simulation of `b_t = c_t'k(s_t) - delta(s_t) Delta_t + u_t`
/// (the `delta` term only for a payer). Draw order per period: regime
/// transition, dividend-to-book draw (when the policy is random), then the
/// growth shock.
pub fn simulate_private(
    cfg: &PrivateSimConfig,
) -> Result<(PrivateObservationSet, Option<Vec<usize>>)> {
    if cfg.t_len == 0 || cfg.sigma < 0.0 {
        return Err(Error::InvalidArgument("need t_len >= 1 and sigma >= 0".into()));
    }
    if let Some(deltas) = &cfg.deltas {
        if deltas.len() != cfg.coeffs.len() {
            return Err(Error::DimensionMismatch(
                "one delta per coefficient set required".into(),
            ));
        }
    }
    let dim = cfg.coeffs[0].len();
    let covariates = covariate_matrix(&cfg.covariates, cfg.t_len, dim)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let path = regime_path(&mut rng, &cfg.chain, cfg.coeffs.len(), cfg.t_len)?;

    let mut growth = Vec::with_capacity(cfg.t_len);
    let mut div_to_book = Vec::with_capacity(cfg.t_len);
    for t in 0..cfg.t_len {
        let regime = path.as_ref().map_or(0, |p| p[t]);
        let delta_t = match (&cfg.deltas, &cfg.div_to_book) {
            (None, _) => 0.0,
            (Some(_), DivToBookPolicy::Fixed(values)) => {
                *values.get(t).ok_or_else(|| {
                    Error::InvalidArgument("fixed div-to-book sequence shorter than T".into())
                })?
            }
            (Some(_), DivToBookPolicy::Uniform { lo, hi }) => rng.gen_range(*lo..*hi),
        };
        if delta_t < 0.0 {
            return Err(Error::SimulationFailed {
                t: t + 1,
                reason: format!("dividend-to-book {delta_t} negative"),
            });
        }
        let k_t = covariates.row(t).transpose().dot(&cfg.coeffs[regime]);
        let slope = cfg.deltas.as_ref().map_or(0.0, |d| d[regime]);
        let shock: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.sigma;
        let b_t = k_t - slope * delta_t + shock;
        if !(b_t > -1.0) {
            return Err(Error::SimulationFailed {
                t: t + 1,
                reason: format!("book growth {b_t} at or below -1"),
            });
        }
        growth.push(b_t);
        if cfg.deltas.is_some() {
            div_to_book.push(delta_t);
        }
    }
    let obs = PrivateObservationSet::new(growth, div_to_book, covariates, None)?;
    Ok((obs, path))
}

/// Forward simulation of the state-space systems. Returns the observation
/// set and the hidden state path `m_0..m_T`. Draw order: initial state,
/// then per period growth draw (paying), state shock, measurement shock.
pub fn simulate_ssm(cfg: &SsmSimConfig) -> Result<(PrivateObservationSet, Vec<f64>)> {
    cfg.spec.validate()?;
    if cfg.t_len == 0 {
        return Err(Error::InvalidArgument("need t_len >= 1".into()));
    }
    let covariates = covariate_matrix(&cfg.covariates, cfg.t_len, cfg.spec.k.len())?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    let mut states = Vec::with_capacity(cfg.t_len + 1);
    states.push(cfg.spec.mu0 + rng.sample::<f64, _>(StandardNormal) * cfg.spec.sigma0_sq.sqrt());

    let mut growth = Vec::with_capacity(cfg.t_len);
    let mut div_to_book = Vec::with_capacity(cfg.t_len);
    for t in 0..cfg.t_len {
        let b_t = match (&cfg.spec.kind, &cfg.book_growth) {
            (crate::kalman::CompanyKind::Paying, GrowthPolicy::Fixed(values)) => {
                *values.get(t).ok_or_else(|| {
                    Error::InvalidArgument("fixed growth sequence shorter than T".into())
                })?
            }
            (crate::kalman::CompanyKind::Paying, GrowthPolicy::Normal { mean, sd }) => {
                mean + rng.sample::<f64, _>(StandardNormal) * sd
            }
            (crate::kalman::CompanyKind::NonPaying, _) => 0.0, // generated below
        };
        let v_t: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.spec.sigma_v_sq.sqrt();
        let m_next = cfg.spec.phi0 + cfg.spec.phi1 * states[t] + v_t;
        states.push(m_next);
        let u_t: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.spec.sigma_u_sq.sqrt();

        match cfg.spec.kind {
            crate::kalman::CompanyKind::Paying => {
                if !(b_t > -1.0) {
                    return Err(Error::SimulationFailed {
                        t: t + 1,
                        reason: format!("book growth {b_t} at or below -1"),
                    });
                }
                let k_t = covariates.row(t).transpose().dot(&cfg.spec.k);
                let delta_t = -(1.0 + b_t) * m_next + (1.0 + k_t) * states[t] + u_t;
                if delta_t < 0.0 {
                    return Err(Error::SimulationFailed {
                        t: t + 1,
                        reason: format!("dividend-to-book {delta_t} negative"),
                    });
                }
                growth.push(b_t);
                div_to_book.push(delta_t);
            }
            crate::kalman::CompanyKind::NonPaying => {
                let k_log = covariates.row(t).transpose().dot(&cfg.spec.k);
                let b_log = k_log - m_next + states[t] + u_t;
                growth.push(b_log.exp_m1());
            }
        }
    }
    let obs = PrivateObservationSet::new(growth, div_to_book, covariates, None)?;
    Ok((obs, states))
}

/// Exact HMM posterior by total path enumeration.
#[derive(Debug, Clone)]
pub struct HmmEnumeration {
    /// `Pr(s_t = j | data up to t)`, rows `t = 1..=T`.
    pub filtered: DMatrix<f64>,
    /// `Pr(s_t = j | all data)`.
    pub smoothed: DMatrix<f64>,
    /// `Pr(s_t = i, s_{t+1} = j | all data)` for `t = 1..T-1` (0-based index).
    pub pairwise: Vec<DMatrix<f64>>,
    pub loglik: f64,
}

/// Sum over all `N^T` regime paths: path weight is
/// `rho_{s_1} eta_{1,s_1} prod_t p_{s_{t-1} s_t} eta_{t,s_t}`. Filtered
/// marginals re-enumerate each prefix, so no recursion from the filter
/// under test leaks into the oracle.
pub fn enumerate_hmm_posterior(
    densities: &DMatrix<f64>,
    chain: &MarkovChainSpec,
) -> Result<HmmEnumeration> {
    let t_len = densities.nrows();
    let n = chain.n_regimes();
    if densities.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} density columns for {n} regimes",
            densities.ncols()
        )));
    }
    let paths = (n as f64).powi(t_len as i32);
    if paths > ENUMERATION_LIMIT {
        return Err(Error::InstanceTooLarge {
            paths,
            limit: ENUMERATION_LIMIT,
        });
    }

    let mut smoothed = DMatrix::zeros(t_len, n);
    let mut pairwise = vec![DMatrix::zeros(n, n); t_len.saturating_sub(1)];
    let mut total = 0.0f64;
    let mut path = vec![0usize; t_len];
    loop {
        let mut weight = chain.initial()[path[0]] * densities[(0, path[0])];
        for t in 1..t_len {
            weight *= chain.transition()[(path[t - 1], path[t])] * densities[(t, path[t])];
        }
        total += weight;
        for t in 0..t_len {
            smoothed[(t, path[t])] += weight;
        }
        for t in 0..t_len - 1 {
            pairwise[t][(path[t], path[t + 1])] += weight;
        }
        // advance the base-N counter
        let mut pos = 0;
        loop {
            if pos == t_len {
                break;
            }
            path[pos] += 1;
            if path[pos] < n {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
        if pos == t_len {
            break;
        }
    }
    if !(total > 0.0) {
        return Err(Error::FilterDegeneracy { t: 1 });
    }
    smoothed /= total;
    for joint in &mut pairwise {
        *joint /= total;
    }

    // filtered marginals by re-enumeration over each prefix
    let mut filtered = DMatrix::zeros(t_len, n);
    for tau in 1..=t_len {
        let mut marginal = DVector::zeros(n);
        let mut prefix = vec![0usize; tau];
        loop {
            let mut weight = chain.initial()[prefix[0]] * densities[(0, prefix[0])];
            for t in 1..tau {
                weight *= chain.transition()[(prefix[t - 1], prefix[t])] * densities[(t, prefix[t])];
            }
            marginal[prefix[tau - 1]] += weight;
            let mut pos = 0;
            loop {
                if pos == tau {
                    break;
                }
                prefix[pos] += 1;
                if prefix[pos] < n {
                    break;
                }
                prefix[pos] = 0;
                pos += 1;
            }
            if pos == tau {
                break;
            }
        }
        let norm: f64 = marginal.iter().sum();
        if !(norm > 0.0) {
            return Err(Error::FilterDegeneracy { t: tau });
        }
        filtered.row_mut(tau - 1).copy_from(&(marginal / norm).transpose());
    }

    Ok(HmmEnumeration {
        filtered,
        smoothed,
        pairwise,
        loglik: total.ln(),
    })
}

/// Exact conditional moments of the state path given measurements, from one
/// conditioning of the full joint Gaussian.
#[derive(Debug, Clone)]
pub struct SsmOracleMoments {
    /// `E(z_t | y_{1..t})` and covariance, `t = 0..=T` (t = 0 is the prior).
    pub filtered_mean: Vec<Vector2<f64>>,
    pub filtered_cov: Vec<Matrix2<f64>>,
    /// `E(z_t | y_{1..T})` and covariance, `t = 0..=T`.
    pub smoothed_mean: Vec<Vector2<f64>>,
    pub smoothed_cov: Vec<Matrix2<f64>>,
    /// `Cov(z_t, z_{t+1} | y_{1..T})`, `t = 0..T-1`.
    pub cross: Vec<Matrix2<f64>>,
    pub loglik: f64,
    pub pseudo_inverse_used: bool,
}

const ORACLE_T_LIMIT: usize = 8;

/// Build the `(2(T+1) + T)`-dimensional joint Gaussian of all states and
/// measurements from the model equations, then condition directly.
pub fn joint_gaussian_oracle(spec: &SsmSpec, system: &SsmSystem) -> Result<SsmOracleMoments> {
    spec.validate()?;
    let t_len = system.len();
    if t_len == 0 || t_len > ORACLE_T_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "oracle supports 1..={ORACLE_T_LIMIT} periods, got {t_len}"
        )));
    }

    // Basis of independent normals: [z0_a, z0_b, v_1..v_T, u_1..u_T].
    let basis = 2 + 2 * t_len;
    let mut basis_var = DVector::zeros(basis);
    basis_var[0] = spec.sigma0_sq;
    basis_var[1] = spec.sigma0_sq;
    for t in 0..t_len {
        basis_var[2 + t] = spec.sigma_v_sq;
        basis_var[2 + t_len + t] = spec.sigma_u_sq;
    }

    // Linear representation rows: states then measurements.
    let n_state_rows = 2 * (t_len + 1);
    let total_rows = n_state_rows + t_len;
    let mut coef = DMatrix::zeros(total_rows, basis);
    let mut mean = DVector::zeros(total_rows);

    // z_0 components
    coef[(0, 0)] = 1.0;
    coef[(1, 1)] = 1.0;
    mean[0] = spec.mu0;
    mean[1] = spec.mu0;
    let a = spec.transition_matrix();
    let a_off = spec.transition_offset();
    for t in 1..=t_len {
        let (prev_a, prev_b) = (2 * (t - 1), 2 * (t - 1) + 1);
        let (cur_a, cur_b) = (2 * t, 2 * t + 1);
        // first component: phi1 * m_{t-1} + phi0 + v_t
        for col in 0..basis {
            coef[(cur_a, col)] = a[(0, 0)] * coef[(prev_a, col)] + a[(0, 1)] * coef[(prev_b, col)];
            coef[(cur_b, col)] = coef[(prev_a, col)];
        }
        coef[(cur_a, 2 + (t - 1))] += 1.0;
        mean[cur_a] = a[(0, 0)] * mean[prev_a] + a[(0, 1)] * mean[prev_b] + a_off[0];
        mean[cur_b] = mean[prev_a];
    }
    for t in 1..=t_len {
        let row = n_state_rows + (t - 1);
        let psi = system.rows[t - 1].psi;
        let (cur_a, cur_b) = (2 * t, 2 * t + 1);
        for col in 0..basis {
            coef[(row, col)] = psi[0] * coef[(cur_a, col)] + psi[1] * coef[(cur_b, col)];
        }
        coef[(row, 2 + t_len + (t - 1))] += 1.0;
        mean[row] = psi[0] * mean[cur_a] + psi[1] * mean[cur_b] + system.rows[t - 1].pi;
    }

    // full covariance = coef * diag(basis_var) * coef'
    let mut scaled = coef.clone();
    for col in 0..basis {
        scaled.column_mut(col).scale_mut(basis_var[col]);
    }
    let cov = &scaled * coef.transpose();

    let y_obs = DVector::from_iterator(t_len, system.rows.iter().map(|r| r.y));

    // conditioning helper on the first `m` measurements
    let mut pseudo_used = false;
    let mut condition = |m: usize| -> Result<(DVector<f64>, DMatrix<f64>)> {
        let zz = cov.view((0, 0), (n_state_rows, n_state_rows)).clone_owned();
        if m == 0 {
            return Ok((mean.rows(0, n_state_rows).into_owned(), zz));
        }
        let zy = cov.view((0, n_state_rows), (n_state_rows, m)).clone_owned();
        let yy = cov.view((n_state_rows, n_state_rows), (m, m)).clone_owned();
        let innov = y_obs.rows(0, m) - mean.rows(n_state_rows, m);
        let (solve_innov, solve_yz) = match yy.clone().cholesky() {
            Some(chol) => (
                chol.solve(&DMatrix::from_column_slice(m, 1, innov.as_slice())),
                chol.solve(&zy.transpose()),
            ),
            None => {
                pseudo_used = true;
                let pinv = yy
                    .svd(true, true)
                    .pseudo_inverse(1e-12)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                (
                    &pinv * DMatrix::from_column_slice(m, 1, innov.as_slice()),
                    &pinv * zy.transpose(),
                )
            }
        };
        let cond_mean = mean.rows(0, n_state_rows) + &zy * solve_innov.column(0);
        let cond_cov = &zz - &zy * solve_yz;
        Ok((cond_mean.clone_owned(), cond_cov))
    };

    let mut filtered_mean = Vec::with_capacity(t_len + 1);
    let mut filtered_cov = Vec::with_capacity(t_len + 1);
    for t in 0..=t_len {
        let (cm, cc) = condition(t)?;
        let idx = 2 * t;
        filtered_mean.push(Vector2::new(cm[idx], cm[idx + 1]));
        filtered_cov.push(Matrix2::new(
            cc[(idx, idx)],
            cc[(idx, idx + 1)],
            cc[(idx + 1, idx)],
            cc[(idx + 1, idx + 1)],
        ));
    }

    let (sm, sc) = condition(t_len)?;
    let mut smoothed_mean = Vec::with_capacity(t_len + 1);
    let mut smoothed_cov = Vec::with_capacity(t_len + 1);
    let mut cross = Vec::with_capacity(t_len);
    for t in 0..=t_len {
        let idx = 2 * t;
        smoothed_mean.push(Vector2::new(sm[idx], sm[idx + 1]));
        smoothed_cov.push(Matrix2::new(
            sc[(idx, idx)],
            sc[(idx, idx + 1)],
            sc[(idx + 1, idx)],
            sc[(idx + 1, idx + 1)],
        ));
        if t < t_len {
            cross.push(Matrix2::new(
                sc[(idx, idx + 2)],
                sc[(idx, idx + 3)],
                sc[(idx + 1, idx + 2)],
                sc[(idx + 1, idx + 3)],
            ));
        }
    }

    // marginal likelihood of the measurement block
    let yy = cov
        .view((n_state_rows, n_state_rows), (t_len, t_len))
        .clone_owned();
    let innov = &y_obs - mean.rows(n_state_rows, t_len);
    let chol = yy
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("singular measurement covariance".into()))?;
    let solved = chol.solve(&DMatrix::from_column_slice(t_len, 1, innov.as_slice()));
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let loglik = -0.5
        * (t_len as f64 * (2.0 * std::f64::consts::PI).ln()
            + log_det
            + innov.dot(&solved.column(0).clone_owned()));

    Ok(SsmOracleMoments {
        filtered_mean,
        filtered_cov,
        smoothed_mean,
        smoothed_cov,
        cross,
        loglik,
        pseudo_inverse_used: pseudo_used,
    })
}
