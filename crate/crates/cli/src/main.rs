//! `rror` — batch estimation of required rates of return.
//!
//! Subcommands mirror the estimator families: `estimate` (closed-form ML),
//! `test` (linear-hypothesis statistics), `regimes` (Markov-switching EM),
//! `bayes` (conjugate posterior + Gibbs), `kalman` (state-space EM), and
//! `simulate` (synthetic data with hidden truth). Every command prints a
//! JSON report wrapping its result in a reproducibility manifest.
//!
//! Exit codes: 0 success, 1 estimation failure, 2 input error. The
//! `RROR_LOG` environment variable (any non-empty value) enables progress
//! notes on stderr; it changes verbosity only.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use rror_core::bayes::{bayes_estimators, gibbs_sample, posterior, NigPrior};
use rror_core::data::{
    load_private_csv, load_public_csv, write_private_csv, write_public_csv, PrivateSchema,
    PublicSchema,
};
use rror_core::ddm::{build_design, coeff_distribution, confidence_interval, fit_ml};
use rror_core::error::Error;
use rror_core::inference::{fit_restricted, run_tests, LinearRestriction};
use rror_core::kalman::{em_estimate, forecast, CompanyKind, SsmEmOptions, SsmSpec, SsmSystem};
use rror_core::private::{build_private_design, fit_private, value_company};
use rror_core::regime::{chain_diagnostics, em_fit, EmOptions, MarkovChainSpec, RegimeProblem};
use rror_core::simulate::{
    simulate_private, simulate_public_ddm, simulate_ssm, DivToBookPolicy, GrowthPolicy,
    PrivateSimConfig, PublicDdmConfig, SsmSimConfig,
};
use rror_core::{ObservationSet, PrivateObservationSet};

use report::{envelope, file_digest, ManifestInputs};

#[derive(Parser)]
#[command(name = "rror", version, about = "Required rate of return estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Maximum likelihood fit of the DDM or private valuation regression
    Estimate(EstimateArgs),
    /// Restricted estimation and the F / t / LR / W / LM statistics
    Test(TestArgs),
    /// N-regime Markov-switching EM with chain diagnostics
    Regimes(RegimesArgs),
    /// Conjugate Bayesian posterior and Gibbs sampling (private model)
    Bayes(BayesArgs),
    /// State-space EM for the time-varying price-to-book ratio
    Kalman(KalmanArgs),
    /// Generate synthetic data with the hidden truth in a sibling file
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Model {
    Ddm,
    Private,
}

#[derive(Args)]
struct InputArgs {
    /// Input CSV path
    #[arg(long)]
    input: PathBuf,
    /// Price column (public model)
    #[arg(long, default_value = "price")]
    price: String,
    /// Dividend column; when omitted, a column named "dividend" is used if
    /// present, otherwise dividends are zero
    #[arg(long)]
    dividend: Option<String>,
    /// Book-growth column (private model)
    #[arg(long, default_value = "growth")]
    growth: String,
    /// Dividend-to-book column (private paying model); defaults to
    /// "div_to_book" when present
    #[arg(long)]
    div_to_book: Option<String>,
    /// Covariate columns (repeatable); the constant is always prepended
    #[arg(long = "covariate")]
    covariates: Vec<String>,
    /// Period-label column
    #[arg(long)]
    label: Option<String>,
}

impl InputArgs {
    fn headers(&self) -> Result<Vec<String>, Error> {
        let mut reader = csv::ReaderBuilder::new().from_path(&self.input)?;
        Ok(reader.headers()?.iter().map(|h| h.trim().to_string()).collect())
    }

    fn load_public(&self) -> Result<ObservationSet, Error> {
        let headers = self.headers()?;
        let dividend = self
            .dividend
            .clone()
            .or_else(|| headers.contains(&"dividend".to_string()).then(|| "dividend".to_string()));
        let schema = PublicSchema {
            price: self.price.clone(),
            dividend,
            covariates: self.covariates.clone(),
            label: self.label.clone(),
        };
        load_public_csv(&self.input, &schema)
    }

    fn load_private(&self, paying: bool) -> Result<PrivateObservationSet, Error> {
        let headers = self.headers()?;
        let div_to_book = if paying {
            let col = self.div_to_book.clone().or_else(|| {
                headers
                    .contains(&"div_to_book".to_string())
                    .then(|| "div_to_book".to_string())
            });
            Some(col.ok_or_else(|| {
                Error::Parse("paying model needs a dividend-to-book column".into())
            })?)
        } else {
            None
        };
        let schema = PrivateSchema {
            growth: self.growth.clone(),
            div_to_book,
            covariates: self.covariates.clone(),
            label: self.label.clone(),
        };
        load_private_csv(&self.input, &schema)
    }

    fn manifest_options(&self) -> Value {
        json!({
            "price": self.price,
            "dividend": self.dividend,
            "growth": self.growth,
            "div_to_book": self.div_to_book,
            "covariates": self.covariates,
            "label": self.label,
        })
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long, value_enum)]
    model: Model,
    /// Private model: company pays dividends
    #[arg(long)]
    paying: bool,
    /// Significance level for confidence intervals
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Private model: book value to convert the fit into an equity value
    #[arg(long)]
    book_value: Option<f64>,
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long, value_enum)]
    model: Model,
    #[arg(long)]
    paying: bool,
    /// Restriction rows like "k2+k3=0.1" or "delta=0.5" (repeatable)
    #[arg(long = "restrict", required = true)]
    restrictions: Vec<String>,
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Args)]
struct RegimesArgs {
    #[arg(long, value_enum, default_value = "ddm")]
    model: Model,
    #[arg(long)]
    paying: bool,
    #[arg(long, default_value_t = 2)]
    n_regimes: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// Seed for restart perturbations (required: EM restarts are stochastic)
    #[arg(long)]
    seed: u64,
    /// Write smoothed regime probabilities to this CSV
    #[arg(long)]
    probs_out: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Args)]
struct BayesArgs {
    #[arg(long)]
    paying: bool,
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
    #[arg(long, default_value_t = 1_000)]
    burn_in: usize,
    /// Seed for the Gibbs sampler (required: no silent nondeterminism)
    #[arg(long)]
    seed: u64,
    /// Prior scale: B0 = scale * I (beta0 = 0, nu0 = 2, lambda0 = 1)
    #[arg(long, default_value_t = 100.0)]
    prior_scale: f64,
    /// Write one row per retained draw to this CSV
    #[arg(long)]
    draws_out: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KalmanModel {
    Paying,
    Nonpaying,
}

#[derive(Args)]
struct KalmanArgs {
    #[arg(long, value_enum)]
    model: KalmanModel,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    /// Forecast horizon; future loadings reuse the final observation row
    #[arg(long)]
    horizon: Option<usize>,
    /// Write the smoothed state path (mean and variance) to this CSV
    #[arg(long)]
    state_out: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Family {
    PublicDdm,
    RegimeDdm,
    Private,
    PrivateRegime,
    SsmPaying,
    SsmNonpaying,
}

impl Family {
    fn as_str(&self) -> &'static str {
        match self {
            Family::PublicDdm => "public-ddm",
            Family::RegimeDdm => "regime-ddm",
            Family::Private => "private",
            Family::PrivateRegime => "private-regime",
            Family::SsmPaying => "ssm-paying",
            Family::SsmNonpaying => "ssm-nonpaying",
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    family: Family,
    /// Generator seed (required: no silent nondeterminism)
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 126)]
    t_len: usize,
    /// Output CSV; hidden truth goes to "`<out>.truth.csv`"
    #[arg(long)]
    out: PathBuf,
    /// Required-rate coefficient per regime (repeatable for switching families)
    #[arg(long = "k", default_values_t = vec![0.025], allow_negative_numbers = true)]
    k: Vec<f64>,
    /// Book-to-price slope per regime (private paying families)
    #[arg(long = "delta", allow_negative_numbers = true)]
    deltas: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 100.0)]
    p0: f64,
    #[arg(long, default_value_t = 0.01)]
    payout: f64,
    /// Diagonal persistence of the regime chain
    #[arg(long, default_value_t = 0.9)]
    persistence: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    phi0: f64,
    #[arg(long, default_value_t = 0.9, allow_negative_numbers = true)]
    phi1: f64,
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    mu0: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma0_sq: f64,
    #[arg(long, default_value_t = 1e-4)]
    sigma_u_sq: f64,
    #[arg(long, default_value_t = 1e-4)]
    sigma_v_sq: f64,
    #[arg(long, default_value_t = 0.05, allow_negative_numbers = true)]
    growth_mean: f64,
    #[arg(long, default_value_t = 0.01)]
    growth_sd: f64,
    #[arg(long, default_value_t = 0.01)]
    dtb_lo: f64,
    #[arg(long, default_value_t = 0.08)]
    dtb_hi: f64,
}

fn log_enabled() -> bool {
    std::env::var("RROR_LOG").is_ok_and(|v| !v.is_empty())
}

macro_rules! progress {
    ($($arg:tt)*) => {
        if log_enabled() {
            eprintln!("rror: {}", format!($($arg)*));
        }
    };
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Parse(_)
        | Error::Validation(_)
        | Error::Io(_)
        | Error::Csv(_)
        | Error::InvalidAlpha(_)
        | Error::InvalidArgument(_)
        | Error::DimensionMismatch(_)
        | Error::InvalidPrior(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Test(args) => cmd_test(args),
        Command::Regimes(args) => cmd_regimes(args),
        Command::Bayes(args) => cmd_bayes(args),
        Command::Kalman(args) => cmd_kalman(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match outcome {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable report"));
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("rror: error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn linear_fit_json(fit: &rror_core::LinearFit) -> Value {
    serde_json::to_value(fit).expect("serializable fit")
}

fn cmd_estimate(args: EstimateArgs) -> Result<Value, Error> {
    let meta = ManifestInputs {
        command: "estimate",
        inputs: vec![args.input.input.display().to_string()],
        options: json!({
            "model": match args.model { Model::Ddm => "ddm", Model::Private => "private" },
            "paying": args.paying,
            "alpha": args.alpha,
            "book_value": args.book_value,
            "schema": args.input.manifest_options(),
        }),
        seeds: vec![],
    };
    let result = match args.model {
        Model::Ddm => {
            let obs = args.input.load_public()?;
            progress!("loaded {} periods, {} covariates", obs.len(), obs.n_covariates());
            let design = build_design(&obs);
            let fit = fit_ml(&design)?;
            let dist = coeff_distribution(&fit);
            let intervals: Vec<Value> = (0..fit.dim())
                .map(|i| {
                    let ci = confidence_interval(&fit, i, args.alpha);
                    match ci {
                        Ok((lo, hi)) => json!({"index": i, "lower": lo, "upper": hi, "alpha": args.alpha}),
                        Err(_) => json!({"index": i, "lower": fit.coeffs[i], "upper": fit.coeffs[i], "alpha": args.alpha}),
                    }
                })
                .collect();
            // the estimator does not constrain fitted required rates to be
            // positive; report where they are not
            let nonpositive: Vec<usize> = (0..obs.len())
                .filter(|&t| {
                    let k_t = obs.covariates().row(t).transpose().dot(&fit.coeffs);
                    k_t <= 0.0
                })
                .map(|t| t + 1)
                .collect();
            json!({
                "model": "ddm",
                "fit": linear_fit_json(&fit),
                "std_errors": dist.std_errors,
                "confidence_intervals": intervals,
                "nonpositive_fitted_rates": nonpositive,
            })
        }
        Model::Private => {
            let obs = args.input.load_private(args.paying)?;
            let design = build_private_design(&obs)?;
            let fit = fit_private(&design)?;
            let value = args
                .book_value
                .map(|b| value_company(&fit, b))
                .transpose()?;
            json!({
                "model": "private",
                "paying": args.paying,
                "fit": linear_fit_json(&fit.fit),
                "delta_hat": fit.delta_hat,
                "m_hat": fit.m_hat,
                "delta_degenerate": fit.delta_degenerate,
                "value": value,
            })
        }
    };
    Ok(envelope(meta, result))
}

fn cmd_test(args: TestArgs) -> Result<Value, Error> {
    let meta = ManifestInputs {
        command: "test",
        inputs: vec![args.input.input.display().to_string()],
        options: json!({
            "model": match args.model { Model::Ddm => "ddm", Model::Private => "private" },
            "paying": args.paying,
            "restrictions": args.restrictions,
            "schema": args.input.manifest_options(),
        }),
        seeds: vec![],
    };
    let exprs: Vec<&str> = args.restrictions.iter().map(String::as_str).collect();
    let result = match args.model {
        Model::Ddm => {
            let obs = args.input.load_public()?;
            let design = build_design(&obs);
            let fit = fit_ml(&design)?;
            let restr = LinearRestriction::parse(&exprs, fit.dim(), false)?;
            let rfit = fit_restricted(&fit, design.matrix(), design.response(), &restr)?;
            let rep = run_tests(&fit, rfit, &restr, obs.len())?;
            json!({
                "model": "ddm",
                "unrestricted": linear_fit_json(&fit),
                "report": serde_json::to_value(&rep).expect("serializable report"),
            })
        }
        Model::Private => {
            let obs = args.input.load_private(args.paying)?;
            let design = build_private_design(&obs)?;
            let pfit = fit_private(&design)?;
            let restr = LinearRestriction::parse(&exprs, obs.n_covariates(), args.paying)?;
            let rfit = fit_restricted(&pfit.fit, design.matrix(), design.response(), &restr)?;
            let rep = run_tests(&pfit.fit, rfit, &restr, obs.len())?;
            json!({
                "model": "private",
                "paying": args.paying,
                "unrestricted": linear_fit_json(&pfit.fit),
                "report": serde_json::to_value(&rep).expect("serializable report"),
            })
        }
    };
    Ok(envelope(meta, result))
}

fn cmd_regimes(args: RegimesArgs) -> Result<Value, Error> {
    let meta = ManifestInputs {
        command: "regimes",
        inputs: vec![args.input.input.display().to_string()],
        options: json!({
            "model": match args.model { Model::Ddm => "ddm", Model::Private => "private" },
            "paying": args.paying,
            "n_regimes": args.n_regimes,
            "tol": args.tol,
            "max_iter": args.max_iter,
            "probs_out": args.probs_out.as_ref().map(|p| p.display().to_string()),
            "schema": args.input.manifest_options(),
        }),
        seeds: vec![args.seed],
    };

    // the observed per-period series paired with the probabilities in the
    // CSV export: realized returns for the public model, book growth for
    // the private ones
    let (problem, c_bar, observed) = match args.model {
        Model::Ddm => {
            let obs = args.input.load_public()?;
            let problem = RegimeProblem::public(&obs);
            let c_bar = column_means(obs.covariates());
            let returns = obs.realized_returns();
            (problem, c_bar, returns)
        }
        Model::Private => {
            let obs = args.input.load_private(args.paying)?;
            let problem = RegimeProblem::private(&obs)?;
            let c_bar = column_means(obs.covariates());
            let growth = obs.book_growth().to_vec();
            (problem, c_bar, growth)
        }
    };
    progress!("running {}-regime EM on {} periods", args.n_regimes, problem.len());
    let opts = EmOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        seed: args.seed,
        ..EmOptions::default()
    };
    let fit = em_fit(&problem, args.n_regimes, &opts)?;

    let means = fit.regime_mean_returns(&c_bar);
    let diagnostics = match chain_diagnostics(&fit.chain, &means) {
        Ok(diag) => json!({
            "ergodic": true,
            "tau": diag.tau,
            "pi": diag.pi,
            "k_inf": diag.k_inf,
            "eigenvalue_moduli": diag.eigenvalue_moduli,
        }),
        Err(Error::NonErgodic { moduli }) => json!({
            "ergodic": false,
            "tau": fit.chain.transition().diagonal().iter()
                .map(|p| if *p >= 1.0 { Value::Null } else { json!(1.0 / (1.0 - p)) })
                .collect::<Vec<_>>(),
            "pi": Value::Null,
            "k_inf": Value::Null,
            "eigenvalue_moduli": moduli,
        }),
        Err(other) => return Err(other),
    };

    if let Some(path) = &args.probs_out {
        let mut writer = csv::Writer::from_path(path)?;
        let n = fit.n_regimes();
        let mut header = vec!["observed".to_string()];
        header.extend((1..=n).map(|j| format!("regime{j}")));
        writer.write_record(&header)?;
        for (t, obs_t) in observed.iter().enumerate() {
            let mut row = vec![obs_t.to_string()];
            row.extend((0..n).map(|j| fit.smoothed[(t, j)].to_string()));
            writer.write_record(&row)?;
        }
        writer.flush()?;
        progress!("wrote smoothed probabilities to {}", path.display());
    }

    // implied price-to-book per regime; a non-positive slope has no
    // meaningful inverse and reports null
    let m_per_regime: Value = match &fit.delta_per_regime {
        Some(deltas) => deltas
            .iter()
            .map(|d| if *d > 0.0 { json!(1.0 / d) } else { Value::Null })
            .collect::<Vec<_>>()
            .into(),
        None => Value::Null,
    };

    let result = json!({
        "fit": serde_json::to_value(&fit).expect("serializable fit"),
        "regime_mean_returns": means,
        "sigma": fit.sigma2.sqrt(),
        "m_per_regime": m_per_regime,
        "diagnostics": diagnostics,
        "probs_csv": args.probs_out.as_ref().map(|p| p.display().to_string()),
    });
    Ok(envelope(meta, result))
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), (0..m.ncols()).map(|j| m.column(j).mean()))
}

fn cmd_bayes(args: BayesArgs) -> Result<Value, Error> {
    let meta = ManifestInputs {
        command: "bayes",
        inputs: vec![args.input.input.display().to_string()],
        options: json!({
            "paying": args.paying,
            "draws": args.draws,
            "burn_in": args.burn_in,
            "prior_scale": args.prior_scale,
            "draws_out": args.draws_out.as_ref().map(|p| p.display().to_string()),
            "schema": args.input.manifest_options(),
        }),
        seeds: vec![args.seed],
    };
    let obs = args.input.load_private(args.paying)?;
    let design = build_private_design(&obs)?;
    let dim = design.matrix().ncols();
    let prior = NigPrior::new(
        DVector::zeros(dim),
        DMatrix::identity(dim, dim) * args.prior_scale,
        2.0,
        1.0,
    )?;
    let post = posterior(&prior, &design)?;
    let (beta_bar, precision_mean) = bayes_estimators(&post);
    progress!("sampling {} draws after {} burn-in", args.draws, args.burn_in);
    let draws = gibbs_sample(&post, args.draws, args.burn_in, args.seed)?;
    let quantiles: Vec<Value> = (0..dim)
        .map(|i| {
            json!({
                "index": i,
                "p2_5": draws.coefficient_quantile(i, 0.025),
                "p50": draws.coefficient_quantile(i, 0.5),
                "p97_5": draws.coefficient_quantile(i, 0.975),
            })
        })
        .collect();
    if let Some(path) = &args.draws_out {
        draws.write_csv(path)?;
    }
    let result = json!({
        "paying": args.paying,
        "posterior": serde_json::to_value(&post).expect("serializable posterior"),
        "estimators": {
            "beta": beta_bar.as_slice(),
            "precision_mean": precision_mean,
        },
        "quantiles": quantiles,
        "n_draws": args.draws,
        "burn_in": args.burn_in,
        "draws_csv": args.draws_out.as_ref().map(|p| p.display().to_string()),
    });
    Ok(envelope(meta, result))
}

fn cmd_kalman(args: KalmanArgs) -> Result<Value, Error> {
    let meta = ManifestInputs {
        command: "kalman",
        inputs: vec![args.input.input.display().to_string()],
        options: json!({
            "model": match args.model { KalmanModel::Paying => "paying", KalmanModel::Nonpaying => "nonpaying" },
            "tol": args.tol,
            "max_iter": args.max_iter,
            "horizon": args.horizon,
            "state_out": args.state_out.as_ref().map(|p| p.display().to_string()),
            "schema": args.input.manifest_options(),
        }),
        seeds: vec![],
    };
    let kind = match args.model {
        KalmanModel::Paying => CompanyKind::Paying,
        KalmanModel::Nonpaying => CompanyKind::NonPaying,
    };
    let obs = args.input.load_private(kind == CompanyKind::Paying)?;
    let init = SsmSpec::init_from_data(&obs, kind)?;
    progress!("running state-space EM on {} periods", obs.len());
    let fit = em_estimate(&obs, &init, &SsmEmOptions { tol: args.tol, max_iter: args.max_iter })?;

    let forecast_block = match args.horizon {
        None => Value::Null,
        Some(h) => {
            if h == 0 {
                return Err(Error::InvalidArgument("horizon must be at least 1".into()));
            }
            // future loadings reuse the final observation row
            let system = SsmSystem::build(&fit.spec, &obs)?;
            let last = *system.rows.last().expect("non-empty system");
            let future: Vec<_> = (0..h).map(|_| last).collect();
            let fc = forecast(&fit.spec, &fit.filter, &future)?;
            json!({
                "horizon": h,
                "y_mean": fc.y_mean,
                "y_var": fc.y_var,
                "state_mean": fc.z_mean.iter().map(|z| z[0]).collect::<Vec<_>>(),
                "state_var": fc.z_cov.iter().map(|p| p[(0, 0)]).collect::<Vec<_>>(),
            })
        }
    };

    if let Some(path) = &args.state_out {
        fit.write_state_csv(path)?;
        progress!("wrote smoothed state path to {}", path.display());
    }

    let result = json!({
        "fit": serde_json::to_value(&fit).expect("serializable fit"),
        "converged": fit.converged,
        "iterations": fit.loglik_trace.len(),
        "loglik": fit.loglik(),
        "forecast": forecast_block,
        "state_csv": args.state_out.as_ref().map(|p| p.display().to_string()),
    });
    Ok(envelope(meta, result))
}

fn truth_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".truth.csv");
    out.with_file_name(name)
}

fn cmd_simulate(args: SimulateArgs) -> Result<Value, Error> {
    let meta = ManifestInputs {
        command: "simulate",
        inputs: vec![],
        options: json!({
            "family": args.family.as_str(),
            "t_len": args.t_len,
            "k": args.k,
            "deltas": args.deltas,
            "sigma": args.sigma,
            "p0": args.p0,
            "payout": args.payout,
            "persistence": args.persistence,
            "phi0": args.phi0,
            "phi1": args.phi1,
            "mu0": args.mu0,
            "sigma0_sq": args.sigma0_sq,
            "sigma_u_sq": args.sigma_u_sq,
            "sigma_v_sq": args.sigma_v_sq,
            "growth_mean": args.growth_mean,
            "growth_sd": args.growth_sd,
            "dtb": [args.dtb_lo, args.dtb_hi],
            "out": args.out.display().to_string(),
        }),
        seeds: vec![args.seed],
    };

    let coeffs: Vec<DVector<f64>> = args.k.iter().map(|k| DVector::from_vec(vec![*k])).collect();
    let chain = (coeffs.len() > 1)
        .then(|| MarkovChainSpec::persistent(coeffs.len(), args.persistence))
        .transpose()?;
    let truth_file = truth_path(&args.out);

    let truth_summary: Value = match args.family {
        Family::PublicDdm | Family::RegimeDdm => {
            if args.family == Family::RegimeDdm && chain.is_none() {
                return Err(Error::InvalidArgument(
                    "regime-ddm needs two or more --k values".into(),
                ));
            }
            let cfg = PublicDdmConfig {
                coeffs,
                chain,
                covariates: None,
                sigma: args.sigma,
                t_len: args.t_len,
                p0: args.p0,
                payout_frac: args.payout,
                seed: args.seed,
            };
            let (obs, path) = simulate_public_ddm(&cfg)?;
            write_public_csv(&args.out, &obs)?;
            write_truth_regimes(&truth_file, path.as_deref())?;
            json!({"kind": "regimes", "present": path.is_some()})
        }
        Family::Private | Family::PrivateRegime => {
            let deltas = (!args.deltas.is_empty()).then(|| args.deltas.clone());
            if let Some(d) = &deltas {
                if d.len() != args.k.len() {
                    return Err(Error::InvalidArgument(
                        "need one --delta per --k for the paying family".into(),
                    ));
                }
            }
            let cfg = PrivateSimConfig {
                coeffs,
                deltas,
                chain,
                covariates: None,
                div_to_book: DivToBookPolicy::Uniform { lo: args.dtb_lo, hi: args.dtb_hi },
                sigma: args.sigma,
                t_len: args.t_len,
                seed: args.seed,
            };
            let (obs, path) = simulate_private(&cfg)?;
            write_private_csv(&args.out, &obs)?;
            write_truth_regimes(&truth_file, path.as_deref())?;
            json!({"kind": "regimes", "present": path.is_some()})
        }
        Family::SsmPaying | Family::SsmNonpaying => {
            let kind = if args.family == Family::SsmPaying {
                CompanyKind::Paying
            } else {
                CompanyKind::NonPaying
            };
            let spec = SsmSpec {
                kind,
                k: DVector::from_vec(vec![args.k[0]]),
                phi0: args.phi0,
                phi1: args.phi1,
                mu0: args.mu0,
                sigma0_sq: args.sigma0_sq,
                sigma_u_sq: args.sigma_u_sq,
                sigma_v_sq: args.sigma_v_sq,
            };
            let cfg = SsmSimConfig {
                spec,
                covariates: None,
                book_growth: GrowthPolicy::Normal { mean: args.growth_mean, sd: args.growth_sd },
                t_len: args.t_len,
                seed: args.seed,
            };
            let (obs, states) = simulate_ssm(&cfg)?;
            write_private_csv(&args.out, &obs)?;
            write_truth_states(&truth_file, &states)?;
            json!({"kind": "states", "present": true})
        }
    };

    let result = json!({
        "family": args.family.as_str(),
        "t_len": args.t_len,
        "data_csv": args.out.display().to_string(),
        "truth_csv": truth_file.display().to_string(),
        "data_sha256": file_digest(&args.out)?,
        "truth": truth_summary,
    });
    Ok(envelope(meta, result))
}

fn write_truth_regimes(path: &Path, regimes: Option<&[usize]>) -> Result<(), Error> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["t", "regime"])?;
    if let Some(path_values) = regimes {
        for (t, r) in path_values.iter().enumerate() {
            writer.write_record(&[(t + 1).to_string(), (r + 1).to_string()])?;
        }
    }
    writer.flush()?;
    Ok(())
}

fn write_truth_states(path: &Path, states: &[f64]) -> Result<(), Error> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["t", "state"])?;
    for (t, s) in states.iter().enumerate() {
        writer.write_record(&[t.to_string(), s.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}
