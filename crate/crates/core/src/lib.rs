//! Estimation toolkit for the required rate of return on stock.
//!
//! The market price of a non-defaulting firm obeys the one-step dividend
//! discount recursion `P_t = (1 + k_t)P_{t-1} - d_t + u_t`, where the
//! required rate `k_t = c_t'k` is a linear function of observable
//! covariates. This crate estimates `k` (and the related price-to-book
//! machinery for private companies) four ways:
//!
//! * [`ddm`] — closed-form maximum likelihood for the public-company
//!   regression, with sampling distributions and confidence intervals;
//! * [`inference`] — restricted estimation under `R k = r` and the
//!   F / t / LR / Wald / LM test statistics;
//! * [`regime`] — N-regime Markov-switching estimation: Hamilton filter,
//!   Kim smoother, transition MLE, and zig-zag EM;
//! * [`bayes`] — conjugate Normal–Inverse-Gamma posterior and a seeded
//!   Gibbs sampler for the private-company regression;
//! * [`kalman`] — state-space estimation of a time-varying price-to-book
//!   ratio: exact filter, smoother, forecasts, and EM.
//!
//! [`simulate`] generates synthetic data for every model family and holds
//! the brute-force oracles (path enumeration, joint-Gaussian conditioning)
//! that the recursive algorithms are tested against.

// Guards written as `!(x > 0.0)` are deliberate: they must also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayes;
pub mod data;
pub mod ddm;
pub mod dist;
pub mod error;
pub mod fit;
pub mod inference;
pub mod kalman;
mod linalg;
pub mod private;
pub mod regime;
pub mod simulate;

pub use data::{ObservationSet, PrivateObservationSet};
pub use error::{Error, Result};
pub use fit::LinearFit;
