use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use rror_bench::switching_series;
use rror_core::bayes::{gibbs_sample, posterior, NigPrior};
use rror_core::data::PrivateObservationSet;
use rror_core::ddm::{build_design, fit_ml};
use rror_core::kalman::{em_estimate, filter, smooth, CompanyKind, SsmEmOptions, SsmSpec, SsmSystem};
use rror_core::private::PrivateDesign;
use rror_core::regime::{
    em_fit, hamilton_filter_log, kim_smoother, log_density_matrix, EmOptions, MarkovChainSpec,
    RegimeParams, RegimeProblem,
};

fn bench_ols(c: &mut Criterion) {
    let obs = switching_series(500, 1);
    let design = build_design(&obs);
    c.bench_function("ddm_fit_ml_t500", |b| b.iter(|| fit_ml(&design).unwrap()));
}

fn bench_filter_smoother(c: &mut Criterion) {
    let obs = switching_series(500, 2);
    let problem = RegimeProblem::public(&obs);
    let params = RegimeParams {
        coeffs: vec![DVector::from_vec(vec![0.10]), DVector::from_vec(vec![-0.04])],
        sigma2: 4.0,
    };
    let chain = MarkovChainSpec::persistent(2, 0.9).unwrap();
    let logs = log_density_matrix(&problem, &params);
    c.bench_function("hamilton_filter_t500_n2", |b| {
        b.iter(|| hamilton_filter_log(&logs, &chain).unwrap())
    });
    let pass = hamilton_filter_log(&logs, &chain).unwrap();
    c.bench_function("kim_smoother_t500_n2", |b| {
        b.iter(|| kim_smoother(&pass, &chain).unwrap())
    });
}

fn bench_regime_em(c: &mut Criterion) {
    let mut group = c.benchmark_group("regime_em");
    group.sample_size(10);
    for t_len in [250usize, 500] {
        let obs = switching_series(t_len, 3);
        let problem = RegimeProblem::public(&obs);
        group.bench_with_input(BenchmarkId::from_parameter(t_len), &problem, |b, p| {
            b.iter(|| em_fit(p, 2, &EmOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn nonpaying_obs(t_len: usize, seed: u64) -> PrivateObservationSet {
    let spec = SsmSpec {
        kind: CompanyKind::NonPaying,
        k: DVector::from_vec(vec![0.02]),
        phi0: 0.07,
        phi1: 0.9,
        mu0: 0.7,
        sigma0_sq: 0.01,
        sigma_u_sq: 1e-3,
        sigma_v_sq: 8e-3,
    };
    let cfg = rror_core::simulate::SsmSimConfig {
        spec,
        covariates: None,
        book_growth: rror_core::simulate::GrowthPolicy::Normal { mean: 0.0, sd: 0.0 },
        t_len,
        seed,
    };
    rror_core::simulate::simulate_ssm(&cfg).unwrap().0
}

fn bench_kalman(c: &mut Criterion) {
    let obs = nonpaying_obs(500, 4);
    let spec = SsmSpec::init_from_data(&obs, CompanyKind::NonPaying).unwrap();
    let system = SsmSystem::build(&spec, &obs).unwrap();
    c.bench_function("kalman_filter_t500", |b| b.iter(|| filter(&spec, &system).unwrap()));
    let out = filter(&spec, &system).unwrap();
    c.bench_function("kalman_smoother_t500", |b| b.iter(|| smooth(&spec, &out)));

    let mut group = c.benchmark_group("kalman_em");
    group.sample_size(10);
    let short = nonpaying_obs(150, 5);
    group.bench_function("t150", |b| {
        b.iter(|| {
            let init = SsmSpec::init_from_data(&short, CompanyKind::NonPaying).unwrap();
            em_estimate(&short, &init, &SsmEmOptions { tol: 1e-4, max_iter: 100 }).unwrap()
        })
    });
    group.finish();
}

fn bench_gibbs(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let t_len = 200;
    let delta = DVector::from_fn(t_len, |_, _| rng.gen_range(0.01..0.09));
    let growth = DVector::from_fn(t_len, |i, _| 0.09 - 0.45 * delta[i] + 0.004 * rng.gen_range(-1.0..1.0f64));
    let design = PrivateDesign::from_parts(DMatrix::from_element(t_len, 1, 1.0), growth, Some(delta)).unwrap();
    let post = posterior(&NigPrior::weakly_informative(2), &design).unwrap();
    c.bench_function("gibbs_10k_draws", |b| {
        b.iter(|| gibbs_sample(&post, 10_000, 100, 9).unwrap())
    });
}

criterion_group!(
    benches,
    bench_ols,
    bench_filter_smoother,
    bench_regime_em,
    bench_kalman,
    bench_gibbs
);
criterion_main!(benches);
