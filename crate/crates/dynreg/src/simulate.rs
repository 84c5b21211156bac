//! Synthetic data generation, error metrics, and the Monte Carlo harness.
//!
//! The generator follows a two-model design: warped-time covariates are
//! Gaussian bumps with random amplitude, responses come from a fixed causal
//! slope surface plus a low-frequency error term, and observed curves are
//! the warped-time curves pushed through per-subject exponential warps.
//! Model 1 draws test warps from the training range; Model 2 extrapolates
//! them. Each replicate fits both the dynamic estimator (a single-knot warp
//! family) and the classical one (warping disabled) across the penalty grid
//! and records estimation and prediction errors at the AICC choice and at
//! the per-replicate oracle choices.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{inner_product, Curve, CurveSample, QuadGrid, TimeGrid};
use crate::error::{Error, Result};
use crate::fit::{fit_path, BasisSpec, FitConfig, FitResult};
use crate::warp::KnotVector;

/// The slope surface the data are generated from:
/// `5 exp(-50[(s-.4)^2 + (t-.6)^2])` on the causal triangle.
pub fn true_beta(s: f64, t: f64) -> f64 {
    if s > t {
        return 0.0;
    }
    5.0 * (-50.0 * ((s - 0.4) * (s - 0.4) + (t - 0.6) * (t - 0.6))).exp()
}

/// Exponential warp `(e^{at} - 1) / (e^a - 1)`, with the identity as the
/// `a -> 0` limit.
pub fn exp_warp(a: f64, t: f64) -> f64 {
    if a.abs() < 1e-8 {
        return t;
    }
    ((a * t).exp() - 1.0) / (a.exp() - 1.0)
}

/// Closed-form inverse of [`exp_warp`]: `log(1 + u(e^a - 1)) / a`.
pub fn exp_warp_inv(a: f64, u: f64) -> f64 {
    if a.abs() < 1e-8 {
        return u;
    }
    (1.0 + u * (a.exp() - 1.0)).ln() / a
}

/// One simulation scenario.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimSpec {
    /// 1 = test warps inside the training range, 2 = extrapolated.
    pub model: u8,
    /// Training subjects.
    pub n: usize,
    /// Interior knots of the cubic regression basis (5 or 10).
    pub basis_knots: usize,
    /// Working grid size on `[0, 1]`.
    pub grid_len: usize,
    /// Held-out curves per replicate.
    pub n_test: usize,
    /// Monte Carlo replications.
    pub replications: usize,
    pub seed: u64,
    pub lambda_grid: Vec<f64>,
    /// Fit quadrature refinement (the study default of 2 resolves the
    /// smooth integrands; the fitting library's own default is finer).
    pub quad_refine: usize,
    pub max_outer: usize,
    pub rel_tol: f64,
}

impl SimSpec {
    pub fn new(model: u8, n: usize, basis_knots: usize, replications: usize, seed: u64) -> Self {
        Self {
            model,
            n,
            basis_knots,
            grid_len: 101,
            n_test: 200,
            replications,
            seed,
            lambda_grid: crate::fit::default_lambda_grid(),
            quad_refine: 2,
            max_outer: 200,
            rel_tol: 1e-6,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.model == 1 || self.model == 2) {
            return Err(Error::Contract(format!("model must be 1 or 2, got {}", self.model)));
        }
        if self.n < 2 {
            return Err(Error::Contract("need at least 2 training subjects".into()));
        }
        Ok(())
    }
}

/// A generated replicate: training pair, noiseless test pair, and the
/// underlying warp parameters.
pub struct Dataset {
    pub x_train: CurveSample,
    pub y_train: CurveSample,
    pub x_test: CurveSample,
    /// Noiseless test responses.
    pub y_test: CurveSample,
    pub train_warp_rates: Vec<f64>,
    pub test_warp_rates: Vec<f64>,
    pub train_amplitudes: Vec<f64>,
}

/// RNG stream ids within a replicate.
const STREAM_TRAIN_AMPLITUDE: u64 = 0;
const STREAM_TRAIN_NOISE: u64 = 1;
const STREAM_TEST_AMPLITUDE: u64 = 2;

fn replicate_rng(seed: u64, replicate: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((replicate as u64) << 3 | stream);
    rng
}

/// Covariate shape in warped time.
fn covariate_shape(s: f64) -> f64 {
    (-30.0 * (s - 0.4) * (s - 0.4)).exp()
}

/// Cumulative response shape `integral_0^t beta0(s, t) shape(s) ds` on the
/// working grid (composite trapezoid up to each node).
fn response_shape(grid: &TimeGrid) -> Vec<f64> {
    let pts = grid.points();
    let m = pts.len();
    // beta0(s,t) * shape(s) = 5 e^{-50(t-.6)^2} e^{-80(s-.4)^2} on s <= t
    let integrand: Vec<f64> = pts.iter().map(|&s| (-80.0 * (s - 0.4) * (s - 0.4)).exp()).collect();
    let mut cum = vec![0.0; m];
    for g in 1..m {
        cum[g] = cum[g - 1] + 0.5 * (pts[g] - pts[g - 1]) * (integrand[g - 1] + integrand[g]);
    }
    (0..m)
        .map(|g| 5.0 * (-50.0 * (pts[g] - 0.6) * (pts[g] - 0.6)).exp() * cum[g])
        .collect()
}

/// Generates one replicate of the scenario, deterministically in
/// `(seed, replicate)`.
pub fn gen_dataset(spec: &SimSpec, replicate: usize) -> Result<Dataset> {
    spec.validate()?;
    let grid = Arc::new(TimeGrid::uniform(0.0, 1.0, spec.grid_len)?);
    let shape_y = response_shape(&grid);
    let amp_dist = Normal::new(1.0, 0.1).expect("valid normal");
    let noise_dist = Normal::new(0.0, 0.05).expect("valid normal");

    let equispaced = |lo: f64, hi: f64, count: usize, i: usize| -> f64 {
        if count == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (count - 1) as f64
        }
    };

    let mut rng_amp = replicate_rng(spec.seed, replicate, STREAM_TRAIN_AMPLITUDE);
    let mut rng_noise = replicate_rng(spec.seed, replicate, STREAM_TRAIN_NOISE);
    let mut x_train = Vec::with_capacity(spec.n);
    let mut y_train = Vec::with_capacity(spec.n);
    let mut train_rates = Vec::with_capacity(spec.n);
    let mut train_amps = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let z: f64 = amp_dist.sample(&mut rng_amp);
        let u: f64 = noise_dist.sample(&mut rng_noise);
        let a = equispaced(-1.0, 1.0, spec.n, i);
        train_rates.push(a);
        train_amps.push(z);

        // warped-time response on the grid, then observed time via the
        // analytic inverse warp
        let y_tilde = Curve::new(
            grid.clone(),
            grid.points()
                .iter()
                .enumerate()
                .map(|(g, &t)| z * shape_y[g] + u * (4.0 * std::f64::consts::PI * t).sin())
                .collect(),
        )?;
        let x_obs = Curve::from_fn(grid.clone(), |t| {
            z * covariate_shape(exp_warp_inv(a, t))
        })?;
        let y_obs = y_tilde.compose_fn(|t| exp_warp_inv(a, t))?;
        x_train.push(x_obs);
        y_train.push(y_obs);
    }

    let (test_lo, test_hi) = if spec.model == 1 { (-1.0, 1.0) } else { (1.5, 2.5) };
    let mut rng_test = replicate_rng(spec.seed, replicate, STREAM_TEST_AMPLITUDE);
    let mut x_test = Vec::with_capacity(spec.n_test);
    let mut y_test = Vec::with_capacity(spec.n_test);
    let mut test_rates = Vec::with_capacity(spec.n_test);
    for i in 0..spec.n_test {
        let z: f64 = amp_dist.sample(&mut rng_test);
        let a = equispaced(test_lo, test_hi, spec.n_test, i);
        test_rates.push(a);
        let y_tilde = Curve::new(
            grid.clone(),
            (0..spec.grid_len).map(|g| z * shape_y[g]).collect(),
        )?;
        x_test.push(Curve::from_fn(grid.clone(), |t| {
            z * covariate_shape(exp_warp_inv(a, t))
        })?);
        y_test.push(y_tilde.compose_fn(|t| exp_warp_inv(a, t))?);
    }

    Ok(Dataset {
        x_train: CurveSample::new(x_train)?,
        y_train: CurveSample::new(y_train)?,
        x_test: CurveSample::new(x_test)?,
        y_test: CurveSample::new(y_test)?,
        train_warp_rates: train_rates,
        test_warp_rates: test_rates,
        train_amplitudes: train_amps,
    })
}

/// Integrated squared error between two surfaces over the unit square, by
/// an iterated trapezoid rule that integrates each `s`-strip up to the
/// diagonal node exactly.
pub fn ise(
    beta_hat: impl Fn(f64, f64) -> Result<f64>,
    beta0: impl Fn(f64, f64) -> Result<f64>,
) -> Result<f64> {
    ise_on_grid(beta_hat, beta0, 201)
}

/// [`ise`] at an explicit per-axis resolution.
pub fn ise_on_grid(
    beta_hat: impl Fn(f64, f64) -> Result<f64>,
    beta0: impl Fn(f64, f64) -> Result<f64>,
    resolution: usize,
) -> Result<f64> {
    let h = 1.0 / (resolution - 1) as f64;
    let mut total = 0.0;
    for ti in 0..resolution {
        let t = ti as f64 * h;
        let wt = if ti == 0 || ti == resolution - 1 { 0.5 * h } else { h };
        // inner cumulative trapezoid over s in [0, t]; the integrand is zero
        // beyond the diagonal for causal surfaces
        let mut inner = 0.0;
        let mut prev = {
            let d = beta_hat(0.0, t)? - beta0(0.0, t)?;
            d * d
        };
        for si in 1..=ti {
            let s = si as f64 * h;
            let d = beta_hat(s, t)? - beta0(s, t)?;
            let cur = d * d;
            inner += 0.5 * h * (prev + cur);
            prev = cur;
        }
        total += wt * inner;
    }
    Ok(total)
}

/// Mean squared prediction error over a held-out set: predictions are made
/// by registration plus the dynamic predictor, and compared in L2.
pub fn mspe(fit: &FitResult, x_test: &CurveSample, y_test: &CurveSample) -> Result<f64> {
    if x_test.is_empty() || x_test.len() != y_test.len() {
        return Err(Error::Contract("test covariates and responses must pair up".into()));
    }
    let predictor = crate::predict::Predictor::new(fit)?;
    let mut total = 0.0;
    for i in 0..x_test.len() {
        let pred = predictor.predict(x_test.curve(i))?;
        let grid = y_test.curve(i).grid().clone();
        let diff = Curve::new(
            grid,
            y_test
                .curve(i)
                .values()
                .iter()
                .zip(pred.y_hat.values())
                .map(|(a, b)| a - b)
                .collect(),
        )?;
        total += inner_product(&diff, &diff)?;
    }
    Ok(total / x_test.len() as f64)
}

/// Per-estimator Monte Carlo summary. Means are on the natural scale; the
/// CSV/JSON reports label prediction errors with the x1000 convention.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub mean_ise_aicc: f64,
    pub se_ise_aicc: f64,
    pub mean_ise_optimal: f64,
    pub se_ise_optimal: f64,
    pub mean_mspe_aicc: f64,
    pub se_mspe_aicc: f64,
    pub mean_mspe_optimal: f64,
    pub se_mspe_optimal: f64,
    /// Fraction of replicates whose AICC minimum was strictly inside the
    /// grid.
    pub aicc_interior_fraction: f64,
    /// Fraction whose oracle-MSPE penalty was the smallest grid value.
    pub oracle_mspe_at_grid_min_fraction: f64,
    /// Fraction whose oracle-ISE penalty was the largest grid value.
    pub oracle_ise_at_grid_max_fraction: f64,
}

/// Monte Carlo report for one scenario.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MCReport {
    pub model: u8,
    pub n: usize,
    pub basis_knots: usize,
    pub replications: usize,
    pub completed_replications: usize,
    pub failed_replications: usize,
    pub seed: u64,
    pub lambda_grid: Vec<f64>,
    pub dynamic: EstimatorSummary,
    pub classical: EstimatorSummary,
}

struct ReplicateErrors {
    ise_aicc: f64,
    ise_optimal: f64,
    mspe_aicc: f64,
    mspe_optimal: f64,
    aicc_interior: bool,
    oracle_mspe_at_min: bool,
    oracle_ise_at_max: bool,
}

fn run_estimator(
    data: &Dataset,
    config: &FitConfig,
) -> Result<ReplicateErrors> {
    let fits = fit_path(&data.x_train, &data.y_train, config)?;
    let nl = fits.len();
    let mut ises = Vec::with_capacity(nl);
    let mut mspes = Vec::with_capacity(nl);
    for fit in &fits {
        ises.push(ise(|s, t| fit.beta_at(s, t), |s, t| Ok(true_beta(s, t)))?);
        mspes.push(mspe(fit, &data.x_test, &data.y_test)?);
    }
    let mut aicc_idx: Option<usize> = None;
    for (idx, fit) in fits.iter().enumerate() {
        if let Some(a) = fit.aicc {
            if aicc_idx.map_or(true, |cur| a < fits[cur].aicc.unwrap()) {
                aicc_idx = Some(idx);
            }
        }
    }
    let aicc_idx = aicc_idx.ok_or_else(|| {
        Error::Selection("AICC undefined across the penalty grid".into())
    })?;
    let argmin = |vals: &[f64]| -> usize {
        let mut best = 0;
        for (i, v) in vals.iter().enumerate() {
            if *v < vals[best] {
                best = i;
            }
        }
        best
    };
    let ise_opt_idx = argmin(&ises);
    let mspe_opt_idx = argmin(&mspes);
    Ok(ReplicateErrors {
        ise_aicc: ises[aicc_idx],
        ise_optimal: ises[ise_opt_idx],
        mspe_aicc: mspes[aicc_idx],
        mspe_optimal: mspes[mspe_opt_idx],
        aicc_interior: aicc_idx > 0 && aicc_idx + 1 < nl,
        oracle_mspe_at_min: mspe_opt_idx == 0,
        oracle_ise_at_max: ise_opt_idx + 1 == nl,
    })
}

fn summarize(rows: &[ReplicateErrors]) -> EstimatorSummary {
    let r = rows.len() as f64;
    let mean_se = |pick: &dyn Fn(&ReplicateErrors) -> f64| -> (f64, f64) {
        let mean = rows.iter().map(|x| pick(x)).sum::<f64>() / r;
        if rows.len() < 2 {
            return (mean, 0.0);
        }
        let var = rows.iter().map(|x| (pick(x) - mean).powi(2)).sum::<f64>() / (r - 1.0);
        (mean, (var / r).sqrt())
    };
    let frac = |pick: &dyn Fn(&ReplicateErrors) -> bool| -> f64 {
        rows.iter().filter(|x| pick(x)).count() as f64 / r
    };
    let (mean_ise_aicc, se_ise_aicc) = mean_se(&|x| x.ise_aicc);
    let (mean_ise_optimal, se_ise_optimal) = mean_se(&|x| x.ise_optimal);
    let (mean_mspe_aicc, se_mspe_aicc) = mean_se(&|x| x.mspe_aicc);
    let (mean_mspe_optimal, se_mspe_optimal) = mean_se(&|x| x.mspe_optimal);
    EstimatorSummary {
        mean_ise_aicc,
        se_ise_aicc,
        mean_ise_optimal,
        se_ise_optimal,
        mean_mspe_aicc,
        se_mspe_aicc,
        mean_mspe_optimal,
        se_mspe_optimal,
        aicc_interior_fraction: frac(&|x| x.aicc_interior),
        oracle_mspe_at_grid_min_fraction: frac(&|x| x.oracle_mspe_at_min),
        oracle_ise_at_grid_max_fraction: frac(&|x| x.oracle_ise_at_max),
    }
}

/// Fit configurations used by the study: the dynamic estimator warps with a
/// single interior knot at 0.5; the classical one disables warping.
pub fn study_configs(spec: &SimSpec) -> Result<(FitConfig, FitConfig)> {
    let warp_knots = KnotVector::new(vec![0.0, 0.5, 1.0])?;
    let mut dynamic = FitConfig::new(BasisSpec::cubic_equispaced(spec.basis_knots), warp_knots);
    dynamic.lambda_grid = spec.lambda_grid.clone();
    dynamic.quad_refine = spec.quad_refine;
    dynamic.max_outer = spec.max_outer;
    dynamic.rel_tol = spec.rel_tol;
    dynamic.seed = spec.seed;
    let classical = dynamic.clone().without_warping();
    Ok((dynamic, classical))
}

/// Runs the scenario: per replicate, fit the dynamic and classical
/// estimators over the penalty grid and record errors at the AICC and
/// oracle choices; aggregate means with Monte Carlo standard errors.
/// Deterministic for a given seed, independent of thread scheduling.
pub fn monte_carlo(spec: &SimSpec) -> Result<MCReport> {
    spec.validate()?;
    if spec.replications < 2 {
        return Err(Error::Contract("need at least 2 replications".into()));
    }
    let (dyn_config, cls_config) = study_configs(spec)?;

    let results: Vec<Result<(ReplicateErrors, ReplicateErrors)>> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            let data = gen_dataset(spec, rep)?;
            let dynamic = run_estimator(&data, &dyn_config)?;
            let classical = run_estimator(&data, &cls_config)?;
            Ok((dynamic, classical))
        })
        .collect();

    let mut dyn_rows = Vec::new();
    let mut cls_rows = Vec::new();
    let mut failed = 0usize;
    for r in results {
        match r {
            Ok((d, c)) => {
                dyn_rows.push(d);
                cls_rows.push(c);
            }
            Err(_) => failed += 1,
        }
    }
    if failed * 10 > spec.replications {
        return Err(Error::Selection(format!(
            "{failed} of {} replicates failed",
            spec.replications
        )));
    }

    Ok(MCReport {
        model: spec.model,
        n: spec.n,
        basis_knots: spec.basis_knots,
        replications: spec.replications,
        completed_replications: dyn_rows.len(),
        failed_replications: failed,
        seed: spec.seed,
        lambda_grid: spec.lambda_grid.clone(),
        dynamic: summarize(&dyn_rows),
        classical: summarize(&cls_rows),
    })
}
