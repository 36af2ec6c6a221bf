//! Monte Carlo study of the estimators and Wald tests in a plain
//! regression setting: bias and RMSE per estimator, covariance-matrix
//! distances, type I error and power per test strategy.
//!
//! Per replicate, a fresh standard normal design is drawn, data are
//! simulated at the generating coefficients under calibrated type I
//! censoring, all three estimators are fitted on the identical dataset,
//! and the five Wald strategies test the composite null on the first `q`
//! coefficients. Power cells regenerate data at `beta = (psi 1_q, 0)` and
//! share replicate RNG streams across the `psi` grid (common random
//! numbers), so rejection curves are monotone up to genuine signal.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use wss_core::{
    bce_from_mle, calibrate_censoring, fit_firth, fit_mle, matrix_distances,
    second_order_covariance, simulate_sample, wald_test, Censoring, ContrastSpec,
    CovarianceChoice, CovariateDesign, Error, FitOptions, FitResult, ModelSpec,
    Strategy, Tau,
};

use crate::summary::{binomial_se, mean, mean_se, rmse_against, Rate};
use crate::{stream_id, streams, REPORT_SCHEMA_VERSION, VERSION};

/// First seven components of the standard generating coefficient vector.
pub const STANDARD_BETA: [f64; 7] = [-2.0, 1.5, -1.0, 2.5, -1.3, 1.8, -0.5];

/// Scenario of the regression-level study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionScenario {
    /// Number of coefficients (1..=7 unless `beta` overrides).
    pub p: usize,
    /// Sample sizes to sweep.
    pub n_grid: Vec<usize>,
    /// Known shape parameter.
    pub sigma: f64,
    /// Target type I censoring fraction in [0, 1).
    pub censor_rate: f64,
    /// Monte Carlo replicates per cell.
    pub replicates: usize,
    /// Dimension of the tested coefficient subset.
    #[serde(default = "default_q")]
    pub q: usize,
    /// Power alternatives `beta = (psi 1_q, 0_(p-q))`; empty skips power.
    #[serde(default)]
    pub psi_grid: Vec<f64>,
    /// Test level.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Generating coefficients; defaults to the leading `p` entries of
    /// [`STANDARD_BETA`].
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
}

fn default_q() -> usize {
    1
}

fn default_alpha() -> f64 {
    0.05
}

impl RegressionScenario {
    /// Generating coefficient vector.
    pub fn beta_true(&self) -> Result<DVector<f64>, Error> {
        match &self.beta {
            Some(b) => {
                if b.len() != self.p {
                    return Err(Error::DimensionMismatch(format!(
                        "beta override has length {}, scenario has p = {}",
                        b.len(),
                        self.p
                    )));
                }
                Ok(DVector::from_column_slice(b))
            }
            None => {
                if self.p == 0 || self.p > STANDARD_BETA.len() {
                    return Err(Error::InvalidArgument(format!(
                        "p must lie in 1..={} without a beta override, got {}",
                        STANDARD_BETA.len(),
                        self.p
                    )));
                }
                Ok(DVector::from_column_slice(&STANDARD_BETA[..self.p]))
            }
        }
    }

    fn validate(&self) -> Result<(), Error> {
        if self.replicates == 0 {
            return Err(Error::EmptyInput("zero replicates requested"));
        }
        if self.n_grid.is_empty() {
            return Err(Error::EmptyInput("empty sample-size grid"));
        }
        if self.n_grid.iter().any(|&n| n <= self.p) {
            return Err(Error::InvalidArgument(
                "every n must exceed p".into(),
            ));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument("sigma must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.censor_rate) {
            return Err(Error::InvalidArgument(
                "censor_rate must lie in [0, 1)".into(),
            ));
        }
        if self.q == 0 || self.q > self.p {
            return Err(Error::InvalidArgument(
                "q must satisfy 1 <= q <= p".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument("alpha must lie in (0, 1)".into()));
        }
        self.beta_true().map(|_| ())
    }
}

// ---------------------------------------------------------------------------
// Report types
// ---------------------------------------------------------------------------

/// Bias/RMSE summary of one estimator in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    /// Estimator label (`MLE`, `BCE`, `Firth`).
    pub estimator: String,
    /// Replicates where the estimator converged.
    pub converged: usize,
    /// Per-coefficient empirical bias.
    pub bias: Vec<f64>,
    /// Per-coefficient root mean squared error.
    pub rmse: Vec<f64>,
    /// Per-coefficient Monte Carlo standard error of the bias.
    pub mc_se: Vec<f64>,
}

/// Convergence and type I error of one Wald strategy in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    /// Strategy label (`MLE`, `MLE2`, `BCE`, `BCE2`, `Firth`).
    pub strategy: String,
    /// Fraction of replicates with a usable fit and test.
    pub convergence_rate: f64,
    /// Replicates entering the rejection rate.
    pub tested: usize,
    /// Empirical type I error at the scenario null.
    pub type1_rate: Option<f64>,
    /// Binomial standard error of the rate.
    pub type1_se: Option<f64>,
}

/// Rejection rate of one strategy under one power alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    /// Alternative magnitude `psi`.
    pub psi: f64,
    /// Strategy label.
    pub strategy: String,
    /// Replicates entering the rate.
    pub tested: usize,
    /// Empirical rejection rate.
    pub rejection_rate: Option<f64>,
    /// Binomial standard error.
    pub mc_se: Option<f64>,
    /// Fraction of replicates with a usable test.
    pub convergence_rate: f64,
}

/// Distances of the empirical covariance to the two model covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovDistanceRow {
    /// Estimator whose sampling covariance is compared (`MLE`, `BCE`).
    pub estimator: String,
    /// Replicates entering the empirical covariance.
    pub replicates_used: usize,
    /// Distances to the mean inverse information.
    pub vs_first: DistTriple,
    /// Distances to the mean second-order covariance.
    pub vs_second: DistTriple,
}

/// The three matrix distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistTriple {
    /// Max absolute diagonal difference.
    pub d1: f64,
    /// Frobenius distance.
    pub d2: f64,
    /// Entrywise L1 distance.
    pub d3: f64,
}

/// One sample-size cell of the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionCell {
    /// Sample size.
    pub n: usize,
    /// Replicates simulated.
    pub replicates: usize,
    /// Calibrated common censoring time (`None`: no censoring).
    pub censor_time: Option<f64>,
    /// Bias/RMSE per estimator.
    pub estimators: Vec<EstimatorSummary>,
    /// Convergence and type I error per strategy.
    pub strategies: Vec<StrategySummary>,
    /// Power rows (one per `psi` x strategy).
    pub power: Vec<PowerRow>,
    /// Covariance-distance comparisons.
    pub covariance_distances: Vec<CovDistanceRow>,
}

/// Full study report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    /// Report schema tag.
    pub schema_version: String,
    /// Software version that produced the report.
    pub version: String,
    /// The scenario as run.
    pub scenario: RegressionScenario,
    /// Master seed.
    pub seed: u64,
    /// One entry per sample size in the grid.
    pub cells: Vec<RegressionCell>,
}

// ---------------------------------------------------------------------------
// Per-replicate work
// ---------------------------------------------------------------------------

/// One raw per-replicate record, for optional CSV emission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRawRecord {
    /// Sample size of the cell.
    pub n: usize,
    /// `null` for the type I / bias part, `power` for alternatives.
    pub part: String,
    /// Alternative magnitude (zero for the null part).
    pub psi: f64,
    /// Replicate index.
    pub replicate: usize,
    /// Estimates per estimator, in (MLE, BCE, Firth) order; `None` when
    /// the estimator did not converge.
    pub estimates: Vec<Option<Vec<f64>>>,
    /// Wald rejections per strategy in reporting order; `None` when the
    /// strategy had no usable test.
    pub rejections: Vec<Option<bool>>,
}

struct ReplicateOutcome {
    mle_beta: Option<Vec<f64>>,
    bce_beta: Option<Vec<f64>>,
    firth_beta: Option<Vec<f64>>,
    /// Rejection per strategy; `None` when the strategy had no usable test.
    rejections: [Option<bool>; 5],
    /// (K^{-1}, Cov2) at the MLE, when both exist.
    mle_covs: Option<(DMatrix<f64>, DMatrix<f64>)>,
    /// (K^{-1}, Cov2) at the BCE, when both exist.
    bce_covs: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

fn draw_design<R: Rng>(rng: &mut R, n: usize, p: usize) -> CovariateDesign {
    let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng));
    CovariateDesign::new(x).expect("standard normal design is valid")
}

/// Simulate one replicate and evaluate estimators and tests against the
/// null `beta_1 = null_value`.
#[allow(clippy::too_many_arguments)]
fn run_replicate(
    seed: u64,
    stream: u64,
    n: usize,
    p: usize,
    sigma: f64,
    censor_time: f64,
    beta_gen: &DVector<f64>,
    contrast: &ContrastSpec,
    alpha: f64,
    options: &FitOptions,
) -> ReplicateOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);

    let design = draw_design(&mut rng, n, p);
    let censoring = if censor_time.is_finite() {
        Censoring::type_i_common(censor_time, n)
    } else {
        Censoring::type_i_common(f64::INFINITY, n)
    };
    let spec = ModelSpec::new(design, sigma, censoring).expect("scenario spec is valid");
    let sample = simulate_sample(&spec, beta_gen, &mut rng).expect("simulation from valid spec");

    let mut out = ReplicateOutcome {
        mle_beta: None,
        bce_beta: None,
        firth_beta: None,
        rejections: [None; 5],
        mle_covs: None,
        bce_covs: None,
    };

    let reject = |fit: &FitResult, choice: CovarianceChoice| -> Option<bool> {
        match wald_test(fit, choice, contrast) {
            Ok(res) => Some(res.p_value < alpha),
            Err(_) => None,
        }
    };

    let mle = fit_mle(&spec, &sample, options).expect("dimensions are consistent");
    if mle.converged {
        out.mle_beta = Some(mle.beta.iter().copied().collect());
        out.rejections[strategy_slot(Strategy::Mle)] = reject(&mle, CovarianceChoice::First);
        if let Ok(cov2) = second_order_covariance(&spec, &mle.beta, Tau::Mle) {
            let mut with2 = mle.clone();
            with2.cov_second = Some(cov2.clone());
            out.rejections[strategy_slot(Strategy::Mle2)] =
                reject(&with2, CovarianceChoice::Second);
            out.mle_covs = Some((mle.cov_first.clone(), cov2));
        }
    }

    let bce = bce_from_mle(&spec, mle, options).expect("dimensions are consistent");
    if bce.converged {
        out.bce_beta = Some(bce.beta.iter().copied().collect());
        out.rejections[strategy_slot(Strategy::Bce)] = reject(&bce, CovarianceChoice::First);
        if let Ok(cov2) = second_order_covariance(&spec, &bce.beta, Tau::Bce) {
            let mut with2 = bce.clone();
            with2.cov_second = Some(cov2.clone());
            out.rejections[strategy_slot(Strategy::Bce2)] =
                reject(&with2, CovarianceChoice::Second);
            out.bce_covs = Some((bce.cov_first.clone(), cov2));
        }
    }

    let firth = fit_firth(&spec, &sample, options).expect("dimensions are consistent");
    if firth.converged {
        out.firth_beta = Some(firth.beta.iter().copied().collect());
        out.rejections[strategy_slot(Strategy::Firth)] = reject(&firth, CovarianceChoice::First);
    }

    out
}

pub(crate) fn strategy_slot(s: Strategy) -> usize {
    match s {
        Strategy::Mle => 0,
        Strategy::Mle2 => 1,
        Strategy::Bce => 2,
        Strategy::Bce2 => 3,
        Strategy::Firth => 4,
    }
}

/// Calibrate the common censoring time against a large synthetic design,
/// shared across every replicate of the scenario cell.
fn calibrate_for(
    seed: u64,
    cell: u32,
    p: usize,
    sigma: f64,
    beta: &DVector<f64>,
    rate: f64,
) -> Result<f64, Error> {
    if rate == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(streams::CALIBRATION, cell, 0));
    let design = draw_design(&mut rng, 4096, p);
    calibrate_censoring(&design, sigma, beta, rate)
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

fn summarize_estimator(
    label: &str,
    betas: &[Vec<f64>],
    truth: &DVector<f64>,
) -> EstimatorSummary {
    let p = truth.len();
    let mut bias = Vec::with_capacity(p);
    let mut rmse = Vec::with_capacity(p);
    let mut mc_se = Vec::with_capacity(p);
    for j in 0..p {
        let xs: Vec<f64> = betas.iter().map(|b| b[j]).collect();
        bias.push(mean(&xs).map_or(f64::NAN, |m| m - truth[j]));
        rmse.push(rmse_against(&xs, truth[j]).unwrap_or(f64::NAN));
        mc_se.push(mean_se(&xs).unwrap_or(f64::NAN));
    }
    EstimatorSummary {
        estimator: label.to_string(),
        converged: betas.len(),
        bias,
        rmse,
        mc_se,
    }
}

fn empirical_covariance(betas: &[Vec<f64>], p: usize) -> Option<DMatrix<f64>> {
    if betas.len() < 2 {
        return None;
    }
    let n = betas.len() as f64;
    let mut mean_v = DVector::zeros(p);
    for b in betas {
        for j in 0..p {
            mean_v[j] += b[j];
        }
    }
    mean_v /= n;
    let mut cov = DMatrix::zeros(p, p);
    for b in betas {
        for a in 0..p {
            for c in 0..p {
                cov[(a, c)] += (b[a] - mean_v[a]) * (b[c] - mean_v[c]);
            }
        }
    }
    Some(cov / (n - 1.0))
}

fn distance_row(
    label: &str,
    betas: &[Vec<f64>],
    covs: &[(DMatrix<f64>, DMatrix<f64>)],
    p: usize,
) -> Option<CovDistanceRow> {
    let emp = empirical_covariance(betas, p)?;
    if covs.is_empty() {
        return None;
    }
    let m = covs.len() as f64;
    let mut mean_first = DMatrix::zeros(p, p);
    let mut mean_second = DMatrix::zeros(p, p);
    for (kinv, cov2) in covs {
        mean_first += kinv;
        mean_second += cov2;
    }
    mean_first /= m;
    mean_second /= m;
    let to_triple = |d: wss_core::MatrixDistances| DistTriple {
        d1: d.d1,
        d2: d.d2,
        d3: d.d3,
    };
    Some(CovDistanceRow {
        estimator: label.to_string(),
        replicates_used: covs.len(),
        vs_first: to_triple(matrix_distances(&emp, &mean_first).expect("same shape")),
        vs_second: to_triple(matrix_distances(&emp, &mean_second).expect("same shape")),
    })
}

fn strategy_rows(outcomes: &[ReplicateOutcome], replicates: usize) -> Vec<StrategySummary> {
    Strategy::ALL
        .iter()
        .map(|&s| {
            let slot = strategy_slot(s);
            let tested: Vec<bool> = outcomes
                .iter()
                .filter_map(|o| o.rejections[slot])
                .collect();
            let rate = Rate::new(tested.iter().filter(|&&r| r).count(), tested.len());
            StrategySummary {
                strategy: s.to_string(),
                convergence_rate: tested.len() as f64 / replicates as f64,
                tested: tested.len(),
                type1_rate: rate.value(),
                type1_se: rate.se(),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

/// Run the regression study. Deterministic for a given seed regardless of
/// the rayon worker count.
pub fn run_regression_study(
    scenario: &RegressionScenario,
    seed: u64,
) -> Result<RegressionReport, Error> {
    run_regression_study_detailed(scenario, seed).map(|(report, _)| report)
}

/// As [`run_regression_study`], additionally returning the raw
/// per-replicate records.
pub fn run_regression_study_detailed(
    scenario: &RegressionScenario,
    seed: u64,
) -> Result<(RegressionReport, Vec<RegressionRawRecord>), Error> {
    scenario.validate()?;
    let beta_true = scenario.beta_true()?;
    let p = scenario.p;
    let q = scenario.q;
    let options = FitOptions::default();

    let mut cells = Vec::with_capacity(scenario.n_grid.len());
    let mut raw = Vec::new();
    for (cell_idx, &n) in scenario.n_grid.iter().enumerate() {
        let cell = cell_idx as u32;
        let censor_time = calibrate_for(seed, cell, p, scenario.sigma, &beta_true, scenario.censor_rate)?;
        log::info!(
            "regression cell n = {n}: censoring time {censor_time:.6} for target {}",
            scenario.censor_rate
        );

        // Type I / bias part: data at beta_true, null at the truth.
        let null_contrast =
            ContrastSpec::first_coordinates(q, p, beta_true.clone())?;
        let outcomes: Vec<ReplicateOutcome> = (0..scenario.replicates as u32)
            .into_par_iter()
            .map(|rep| {
                run_replicate(
                    seed,
                    stream_id(streams::REPLICATE, cell, rep),
                    n,
                    p,
                    scenario.sigma,
                    censor_time,
                    &beta_true,
                    &null_contrast,
                    scenario.alpha,
                    &options,
                )
            })
            .collect();

        for (rep, o) in outcomes.iter().enumerate() {
            raw.push(RegressionRawRecord {
                n,
                part: "null".to_string(),
                psi: 0.0,
                replicate: rep,
                estimates: vec![o.mle_beta.clone(), o.bce_beta.clone(), o.firth_beta.clone()],
                rejections: o.rejections.to_vec(),
            });
        }

        let collect_betas = |f: fn(&ReplicateOutcome) -> &Option<Vec<f64>>| -> Vec<Vec<f64>> {
            outcomes.iter().filter_map(|o| f(o).clone()).collect()
        };
        let mle_betas = collect_betas(|o| &o.mle_beta);
        let bce_betas = collect_betas(|o| &o.bce_beta);
        let firth_betas = collect_betas(|o| &o.firth_beta);

        let estimators = vec![
            summarize_estimator("MLE", &mle_betas, &beta_true),
            summarize_estimator("BCE", &bce_betas, &beta_true),
            summarize_estimator("Firth", &firth_betas, &beta_true),
        ];

        // Covariance distances restricted to replicates where both model
        // covariances exist, so the comparison uses one common sample.
        let mle_pairs: Vec<(Vec<f64>, (DMatrix<f64>, DMatrix<f64>))> = outcomes
            .iter()
            .filter_map(|o| match (&o.mle_beta, &o.mle_covs) {
                (Some(b), Some(c)) => Some((b.clone(), c.clone())),
                _ => None,
            })
            .collect();
        let bce_pairs: Vec<(Vec<f64>, (DMatrix<f64>, DMatrix<f64>))> = outcomes
            .iter()
            .filter_map(|o| match (&o.bce_beta, &o.bce_covs) {
                (Some(b), Some(c)) => Some((b.clone(), c.clone())),
                _ => None,
            })
            .collect();
        let mut covariance_distances = Vec::new();
        let (mb, mc): (Vec<_>, Vec<_>) = mle_pairs.into_iter().unzip();
        if let Some(row) = distance_row("MLE", &mb, &mc, p) {
            covariance_distances.push(row);
        }
        let (bb, bc): (Vec<_>, Vec<_>) = bce_pairs.into_iter().unzip();
        if let Some(row) = distance_row("BCE", &bb, &bc, p) {
            covariance_distances.push(row);
        }

        let strategies = strategy_rows(&outcomes, scenario.replicates);

        // Power part: regenerate at (psi 1_q, 0), test against zero.
        // Replicate streams are shared across psi values (common random
        // numbers).
        let mut power = Vec::new();
        for &psi in &scenario.psi_grid {
            let mut beta_psi = DVector::zeros(p);
            for j in 0..q {
                beta_psi[j] = psi;
            }
            let l_psi = calibrate_for(seed, cell, p, scenario.sigma, &beta_psi, scenario.censor_rate)?;
            let zero_null = ContrastSpec::first_coordinates(q, p, DVector::zeros(p))?;
            let psi_outcomes: Vec<ReplicateOutcome> = (0..scenario.replicates as u32)
                .into_par_iter()
                .map(|rep| {
                    run_replicate(
                        seed,
                        stream_id(streams::POWER, cell, rep),
                        n,
                        p,
                        scenario.sigma,
                        l_psi,
                        &beta_psi,
                        &zero_null,
                        scenario.alpha,
                        &options,
                    )
                })
                .collect();
            for (rep, o) in psi_outcomes.iter().enumerate() {
                raw.push(RegressionRawRecord {
                    n,
                    part: "power".to_string(),
                    psi,
                    replicate: rep,
                    estimates: vec![o.mle_beta.clone(), o.bce_beta.clone(), o.firth_beta.clone()],
                    rejections: o.rejections.to_vec(),
                });
            }
            for &s in Strategy::ALL.iter() {
                let slot = strategy_slot(s);
                let tested: Vec<bool> = psi_outcomes
                    .iter()
                    .filter_map(|o| o.rejections[slot])
                    .collect();
                let rate = Rate::new(tested.iter().filter(|&&r| r).count(), tested.len());
                power.push(PowerRow {
                    psi,
                    strategy: s.to_string(),
                    tested: tested.len(),
                    rejection_rate: rate.value(),
                    mc_se: rate.value().map(|v| binomial_se(v, tested.len())),
                    convergence_rate: tested.len() as f64 / scenario.replicates as f64,
                });
            }
        }

        cells.push(RegressionCell {
            n,
            replicates: scenario.replicates,
            censor_time: censor_time.is_finite().then_some(censor_time),
            estimators,
            strategies,
            power,
            covariance_distances,
        });
    }

    Ok((
        RegressionReport {
            schema_version: REPORT_SCHEMA_VERSION.to_string(),
            version: VERSION.to_string(),
            scenario: scenario.clone(),
            seed,
            cells,
        },
        raw,
    ))
}
