//! Shared fixtures for the criterion benches.

use nalgebra::DVector;
use rror_core::regime::MarkovChainSpec;
use rror_core::simulate::{simulate_public_ddm, PublicDdmConfig};
use rror_core::ObservationSet;

/// A two-regime switching price series of the given length.
pub fn switching_series(t_len: usize, seed: u64) -> ObservationSet {
    let cfg = PublicDdmConfig {
        coeffs: vec![DVector::from_vec(vec![0.10]), DVector::from_vec(vec![-0.04])],
        chain: Some(MarkovChainSpec::persistent(2, 0.9).expect("valid chain")),
        covariates: None,
        sigma: 2.0,
        t_len,
        p0: 1000.0,
        payout_frac: 0.005,
        seed,
    };
    simulate_public_ddm(&cfg).expect("admissible path").0
}
