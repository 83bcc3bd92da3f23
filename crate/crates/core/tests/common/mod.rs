//! Shared generators and independent reference implementations for the
//! oracle suites.
#![allow(dead_code)] // each test target uses a different subset

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rror_core::regime::MarkovChainSpec;

/// Random row-stochastic chain with a random initial distribution.
pub fn random_chain(rng: &mut ChaCha20Rng, n: usize) -> MarkovChainSpec {
    let mut p = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut row: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let sum: f64 = row.iter().sum();
        for v in &mut row {
            *v /= sum;
        }
        for (j, v) in row.iter().enumerate() {
            p[(i, j)] = *v;
        }
    }
    let mut rho: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let sum: f64 = rho.iter().sum();
    for v in &mut rho {
        *v /= sum;
    }
    MarkovChainSpec::new(p, DVector::from_vec(rho)).unwrap()
}

/// Strictly positive density matrix with entries spanning a few orders of
/// magnitude, so normalization paths actually matter.
pub fn random_densities(rng: &mut ChaCha20Rng, t_len: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(t_len, n, |_, _| (rng.gen_range(-4.0..1.5f64)).exp())
}

/// Textbook scaled forward-backward pass, written against the recursions
/// directly rather than through the crate's filter/smoother, for
/// cross-checking the enumeration oracle.
pub struct ForwardBackward {
    pub smoothed: DMatrix<f64>,
    pub pairwise: Vec<DMatrix<f64>>,
    pub loglik: f64,
}

pub fn forward_backward(densities: &DMatrix<f64>, chain: &MarkovChainSpec) -> ForwardBackward {
    let t_len = densities.nrows();
    let n = chain.n_regimes();
    let p = chain.transition();

    // scaled alphas
    let mut alpha = DMatrix::zeros(t_len, n);
    let mut scales = vec![0.0f64; t_len];
    for j in 0..n {
        alpha[(0, j)] = chain.initial()[j] * densities[(0, j)];
    }
    scales[0] = (0..n).map(|j| alpha[(0, j)]).sum();
    for j in 0..n {
        alpha[(0, j)] /= scales[0];
    }
    for t in 1..t_len {
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += alpha[(t - 1, i)] * p[(i, j)];
            }
            alpha[(t, j)] = acc * densities[(t, j)];
        }
        scales[t] = (0..n).map(|j| alpha[(t, j)]).sum();
        for j in 0..n {
            alpha[(t, j)] /= scales[t];
        }
    }

    // scaled betas
    let mut beta = DMatrix::zeros(t_len, n);
    for j in 0..n {
        beta[(t_len - 1, j)] = 1.0;
    }
    for t in (0..t_len - 1).rev() {
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += p[(i, j)] * densities[(t + 1, j)] * beta[(t + 1, j)];
            }
            beta[(t, i)] = acc / scales[t + 1];
        }
    }

    let mut smoothed = DMatrix::zeros(t_len, n);
    for t in 0..t_len {
        let mut norm = 0.0;
        for j in 0..n {
            smoothed[(t, j)] = alpha[(t, j)] * beta[(t, j)];
            norm += smoothed[(t, j)];
        }
        for j in 0..n {
            smoothed[(t, j)] /= norm;
        }
    }

    let mut pairwise = Vec::with_capacity(t_len.saturating_sub(1));
    for t in 0..t_len - 1 {
        let mut joint = DMatrix::zeros(n, n);
        let mut norm = 0.0;
        for i in 0..n {
            for j in 0..n {
                let w = alpha[(t, i)] * p[(i, j)] * densities[(t + 1, j)] * beta[(t + 1, j)];
                joint[(i, j)] = w;
                norm += w;
            }
        }
        joint /= norm;
        pairwise.push(joint);
    }

    ForwardBackward {
        smoothed,
        pairwise,
        loglik: scales.iter().map(|s| s.ln()).sum(),
    }
}
