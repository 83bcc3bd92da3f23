//! Error type shared by every estimator in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// CSV ingestion failure; the message names the offending column or row.
    #[error("parse error: {0}")]
    Parse(String),

    /// A domain-type invariant was violated at construction time.
    #[error("invalid data: {0}")]
    Validation(String),

    /// Design matrix is rank deficient; `columns` are the 0-based indices
    /// participating in the near-null direction.
    #[error("singular design: columns {columns:?} are linearly dependent (relative cutoff {cutoff:e})")]
    SingularDesign { columns: Vec<usize>, cutoff: f64 },

    /// `R (X'X)^{-1} R'` is singular, so the restricted estimator is undefined.
    #[error("degenerate restriction: R(X'X)^-1 R' is singular")]
    RestrictionDegenerate,

    /// Residual sum of squares is zero; test statistics are undefined.
    #[error("exact fit: residual sum of squares is zero, {0} undefined")]
    ExactFit(&'static str),

    #[error("significance level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    /// Every regime density vanished at step `t` (1-based).
    #[error("filter degeneracy: all regime densities are zero at t = {t}")]
    FilterDegeneracy { t: usize },

    /// A smoothed probability is positive where the predicted probability is zero.
    #[error("inconsistent smoothing inputs at t = {t}: predicted probability 0 with smoothed mass {mass:e}")]
    SmoothInconsistency { t: usize, mass: f64 },

    /// A regime lost all smoothed mass during EM.
    #[error("regime {regime} is empty (smoothed mass {mass:e} below threshold)")]
    EmptyRegime { regime: usize, mass: f64 },

    #[error("EM failed to produce a non-degenerate fit after {restarts} restarts: {reason}")]
    EmFailed { restarts: usize, reason: String },

    /// Transition matrix is not ergodic under the unit-eigenvalue test.
    #[error("transition matrix not ergodic; eigenvalue moduli {moduli:?}")]
    NonErgodic { moduli: Vec<f64> },

    /// All dividend-to-book ratios are zero, so the book-to-price slope is unidentified.
    #[error("dividend-to-book ratios are identically zero: delta is unidentified")]
    DegenerateDelta,

    /// `delta <= 0` makes the implied price-to-book ratio meaningless.
    #[error("valuation undefined: estimated book-to-price ratio {delta} is not positive")]
    ValuationUndefined { delta: f64 },

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Predicted measurement variance collapsed to a non-positive value.
    #[error("numerical degeneracy in Kalman filter at t = {t}: predicted measurement variance {value:e}")]
    NumericalDegeneracy { t: usize, value: f64 },

    #[error("EM initialization failure: {0}")]
    InitializationFailure(String),

    #[error("enumeration instance too large: N^T = {paths} exceeds {limit}")]
    InstanceTooLarge { paths: f64, limit: f64 },

    /// Forward simulation produced an inadmissible value (negative price,
    /// negative dividend-to-book ratio, growth below -1). Failing is
    /// deliberate: silently conditioning on admissibility would bias
    /// recovery tests.
    #[error("simulation failed at t = {t}: {reason}")]
    SimulationFailed { t: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
