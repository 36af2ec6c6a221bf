//! Monte Carlo study of the dose-finding pipeline: simulate censored
//! Weibull survival per dose cell, estimate the dose-level means by each
//! strategy, run the multiplicity-adjusted trend test, fit the significant
//! candidates by generalized least squares, select by generalized AIC, and
//! estimate the minimum effective dose.
//!
//! All strategies inside a replicate consume the identical simulated
//! dataset, so strategy comparisons are paired. The critical-value draw
//! pool is generated once per study from its own stream and shared across
//! replicates.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use wss_core::mcpmod::{
    estimate_med, gls_fit, mcp_step, optimal_contrasts, select_model, standardized_response,
    DoseDesign, DoseResponseModel, MaxZSampler, ModFit, DEFAULT_CRITICAL_DRAWS,
};
use wss_core::{
    bce_from_mle, calibrate_censoring, fit_firth, fit_mle, second_order_covariance,
    simulate_sample, Censoring, CovariateDesign, Error, FitOptions, FitResult, ModelSpec,
    Strategy, Tau,
};

use crate::scenarios::{
    build_candidates, default_candidate_specs, true_curve, CandidateSpec, FamilyName,
};
pub use crate::scenarios::TrueModel;
use crate::summary::Rate;
use crate::{stream_id, streams, REPORT_SCHEMA_VERSION, VERSION};

/// Serde-friendly strategy name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyName {
    /// MLE with inverse information.
    Mle,
    /// MLE with second-order covariance.
    Mle2,
    /// Bias-corrected estimator with inverse information.
    Bce,
    /// Bias-corrected estimator with second-order covariance.
    Bce2,
    /// Firth estimator with inverse information.
    Firth,
}

impl From<StrategyName> for Strategy {
    fn from(s: StrategyName) -> Self {
        match s {
            StrategyName::Mle => Strategy::Mle,
            StrategyName::Mle2 => Strategy::Mle2,
            StrategyName::Bce => Strategy::Bce,
            StrategyName::Bce2 => Strategy::Bce2,
            StrategyName::Firth => Strategy::Firth,
        }
    }
}

/// All five strategies in reporting order.
pub fn all_strategies() -> Vec<StrategyName> {
    vec![
        StrategyName::Mle,
        StrategyName::Mle2,
        StrategyName::Bce,
        StrategyName::Bce2,
        StrategyName::Firth,
    ]
}

/// Scenario of the dose-finding study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McpModScenario {
    /// True curve family (constant means no signal).
    pub true_model: TrueModel,
    /// Dose grid, placebo first.
    #[serde(default = "default_doses")]
    pub doses: Vec<f64>,
    /// Per-dose group sizes to sweep.
    pub n_per_dose_grid: Vec<usize>,
    /// Known shape parameter.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Target type I censoring fraction in [0, 1).
    pub censor_rate: f64,
    /// Minimum-effective-dose margin.
    #[serde(default = "default_margin")]
    pub delta: f64,
    /// Trend-test level.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Monte Carlo replicates per cell.
    pub replicates: usize,
    /// Estimation strategies to evaluate (default: all five).
    #[serde(default = "all_strategies")]
    pub strategies: Vec<StrategyName>,
    /// Placebo-level response.
    #[serde(default = "default_placebo")]
    pub placebo_response: f64,
    /// Maximum effect over placebo.
    #[serde(default = "default_max_effect")]
    pub max_effect: f64,
    /// Candidate set; defaults to the standard five.
    #[serde(default)]
    pub candidates: Option<Vec<CandidateSpec>>,
}

fn default_doses() -> Vec<f64> {
    crate::scenarios::DEFAULT_DOSES.to_vec()
}
fn default_sigma() -> f64 {
    0.5
}
fn default_margin() -> f64 {
    crate::scenarios::DEFAULT_MED_MARGIN
}
fn default_alpha() -> f64 {
    0.05
}
fn default_placebo() -> f64 {
    crate::scenarios::DEFAULT_PLACEBO_RESPONSE
}
fn default_max_effect() -> f64 {
    crate::scenarios::DEFAULT_MAX_EFFECT
}

impl McpModScenario {
    fn validate(&self) -> Result<(), Error> {
        if self.replicates == 0 {
            return Err(Error::EmptyInput("zero replicates requested"));
        }
        if self.n_per_dose_grid.is_empty() {
            return Err(Error::EmptyInput("empty per-dose sample-size grid"));
        }
        if self.strategies.is_empty() {
            return Err(Error::EmptyInput("no strategies requested"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument("sigma must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.censor_rate) {
            return Err(Error::InvalidArgument(
                "censor_rate must lie in [0, 1)".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument("alpha must lie in (0, 1)".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidArgument("delta must be positive".into()));
        }
        Ok(())
    }

    fn candidate_specs(&self) -> Vec<CandidateSpec> {
        self.candidates
            .clone()
            .unwrap_or_else(default_candidate_specs)
    }
}

// ---------------------------------------------------------------------------
// Report types
// ---------------------------------------------------------------------------

/// Selection frequency of one candidate family, conditional on a signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    /// Candidate family.
    pub family: FamilyName,
    /// Share of signal replicates that selected it.
    pub rate: f64,
}

/// One (sample size, strategy) cell of the study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McpModCell {
    /// Subjects per dose.
    pub n_per_dose: usize,
    /// Strategy label.
    pub strategy: String,
    /// Replicates simulated.
    pub replicates: usize,
    /// Fraction with a usable estimate, covariance and trend test.
    pub convergence_rate: f64,
    /// Replicates entering the signal rate.
    pub tested: usize,
    /// Trend-test signal probability among converged replicates.
    pub signal_rate: Option<f64>,
    /// Binomial standard error of the signal probability.
    pub signal_se: Option<f64>,
    /// Fraction of signal replicates with at least one usable curve fit.
    pub gls_convergence_rate: Option<f64>,
    /// Probability of selecting the true family, conditional on a signal
    /// (absent for the constant scenario).
    pub select_true_rate: Option<f64>,
    /// Selection frequencies per candidate family, conditional on signal.
    pub selection: Vec<SelectionRow>,
    /// Mean error of the estimated minimum effective dose.
    pub med_bias: Option<f64>,
    /// Root mean squared error of the estimate.
    pub med_rmse: Option<f64>,
    /// Share of selected fits whose effect never reached the margin.
    pub med_not_reached_rate: Option<f64>,
    /// Share of estimates clamped to the dose-range boundary.
    pub med_clamped_rate: Option<f64>,
}

/// Full study report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McpModReport {
    /// Report schema tag.
    pub schema_version: String,
    /// Software version that produced the report.
    pub version: String,
    /// The scenario as run.
    pub scenario: McpModScenario,
    /// Master seed.
    pub seed: u64,
    /// True minimum effective dose (absent for the constant scenario).
    pub true_med: Option<f64>,
    /// One entry per (sample size, strategy).
    pub cells: Vec<McpModCell>,
}

// ---------------------------------------------------------------------------
// Per-replicate work
// ---------------------------------------------------------------------------

/// One raw per-replicate, per-strategy record, for optional CSV emission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McpModRawRecord {
    /// Subjects per dose of the cell.
    pub n_per_dose: usize,
    /// Replicate index.
    pub replicate: usize,
    /// Strategy label.
    pub strategy: String,
    /// Whether the strategy produced a usable test.
    pub converged: bool,
    /// Trend-test decision (`None` when not converged).
    pub signal: Option<bool>,
    /// Family of the selected candidate, when any.
    pub selected: Option<FamilyName>,
    /// Estimated minimum effective dose, when reached.
    pub med: Option<f64>,
    /// Whether the estimate was clamped to the dose-range boundary.
    pub clamped: bool,
}

#[derive(Debug, Clone)]
struct StrategyOutcome {
    converged: bool,
    signal: bool,
    gls_converged: bool,
    selected: Option<usize>,
    med_dose: Option<f64>,
    med_clamped: bool,
    med_not_reached: bool,
}

impl StrategyOutcome {
    fn failed() -> Self {
        Self {
            converged: false,
            signal: false,
            gls_converged: false,
            selected: None,
            med_dose: None,
            med_clamped: false,
            med_not_reached: false,
        }
    }
}

fn anova_design(design: &DoseDesign) -> CovariateDesign {
    let n = design.n_total();
    let d = design.n_doses();
    let mut x = DMatrix::zeros(n, d);
    let mut row = 0;
    for (dose_idx, &count) in design.n_per_dose.iter().enumerate() {
        for _ in 0..count {
            x[(row, dose_idx)] = 1.0;
            row += 1;
        }
    }
    CovariateDesign::new(x).expect("indicator design is valid")
}

/// Strategy inputs: the estimate and its covariance, or `None` when the
/// strategy has no usable pair for this replicate.
fn strategy_inputs(
    spec: &ModelSpec,
    strategy: Strategy,
    mle: &FitResult,
    bce: &FitResult,
    firth: &FitResult,
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let (fit, tau) = match strategy {
        Strategy::Mle => return mle.converged.then(|| (mle.beta.clone(), mle.cov_first.clone())),
        Strategy::Bce => return bce.converged.then(|| (bce.beta.clone(), bce.cov_first.clone())),
        Strategy::Firth => {
            return firth
                .converged
                .then(|| (firth.beta.clone(), firth.cov_first.clone()))
        }
        Strategy::Mle2 => (mle, Tau::Mle),
        Strategy::Bce2 => (bce, Tau::Bce),
    };
    if !fit.converged {
        return None;
    }
    second_order_covariance(spec, &fit.beta, tau)
        .ok()
        .map(|cov2| (fit.beta.clone(), cov2))
}

#[allow(clippy::too_many_arguments)]
fn run_replicate(
    seed: u64,
    stream: u64,
    design: &DoseDesign,
    spec_template: &(CovariateDesign, f64, f64), // design matrix, sigma, censor time
    mu_true: &DVector<f64>,
    strategies: &[Strategy],
    candidates: &[DoseResponseModel],
    mu0: &[DVector<f64>],
    sampler: &MaxZSampler,
    alpha: f64,
    margin: f64,
) -> Vec<StrategyOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let (x, sigma, censor_time) = spec_template;
    let n = x.n();
    let spec = ModelSpec::new(
        x.clone(),
        *sigma,
        Censoring::type_i_common(*censor_time, n),
    )
    .expect("scenario spec is valid");
    // Cell-means parametrization: the coefficient vector is the per-dose
    // log-scale mean.
    let sample = simulate_sample(&spec, mu_true, &mut rng).expect("simulation from valid spec");

    let options = FitOptions::default();
    let mle = fit_mle(&spec, &sample, &options).expect("dimensions are consistent");
    let bce = bce_from_mle(&spec, mle.clone(), &options).expect("dimensions are consistent");
    let firth = fit_firth(&spec, &sample, &options).expect("dimensions are consistent");

    strategies
        .iter()
        .map(|&strategy| {
            let Some((mu_hat, s_hat)) = strategy_inputs(&spec, strategy, &mle, &bce, &firth)
            else {
                return StrategyOutcome::failed();
            };
            let Ok(contrasts) = optimal_contrasts(mu0, &s_hat) else {
                return StrategyOutcome::failed();
            };
            let Ok(mcp) = mcp_step(&mu_hat, &s_hat, &contrasts, alpha, sampler) else {
                return StrategyOutcome::failed();
            };
            let mut outcome = StrategyOutcome {
                converged: true,
                signal: mcp.signal,
                gls_converged: false,
                selected: None,
                med_dose: None,
                med_clamped: false,
                med_not_reached: false,
            };
            if !mcp.signal {
                return outcome;
            }
            let fits: Vec<(usize, ModFit)> = mcp
                .significant
                .iter()
                .filter_map(|&idx| {
                    gls_fit(
                        candidates[idx].family(),
                        &mu_hat,
                        &s_hat,
                        design,
                        &candidates[idx],
                    )
                    .ok()
                    .filter(|f| f.converged)
                    .map(|f| (idx, f))
                })
                .collect();
            if fits.is_empty() {
                return outcome;
            }
            outcome.gls_converged = true;
            let fit_refs: Vec<ModFit> = fits.iter().map(|(_, f)| f.clone()).collect();
            let best = select_model(&fit_refs).expect("nonempty fits");
            // First fit with the winning criterion value, matching the
            // selector's first-wins tie break.
            outcome.selected = fits
                .iter()
                .find(|(_, f)| f.gaic == best.gaic)
                .map(|(idx, _)| *idx);
            if let Ok(med) = estimate_med(&best.model, margin, design) {
                outcome.med_clamped = med.clamped;
                match med.dose {
                    Some(d) => outcome.med_dose = Some(d),
                    None => outcome.med_not_reached = true,
                }
            }
            outcome
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

/// Run the dose-finding study. Deterministic for a given seed regardless
/// of the rayon worker count.
pub fn run_mcpmod_study(scenario: &McpModScenario, seed: u64) -> Result<McpModReport, Error> {
    run_mcpmod_study_detailed(scenario, seed).map(|(report, _)| report)
}

/// As [`run_mcpmod_study`], additionally returning the raw per-replicate
/// records.
pub fn run_mcpmod_study_detailed(
    scenario: &McpModScenario,
    seed: u64,
) -> Result<(McpModReport, Vec<McpModRawRecord>), Error> {
    scenario.validate()?;
    let specs = scenario.candidate_specs();
    let strategies: Vec<Strategy> = scenario.strategies.iter().map(|&s| s.into()).collect();

    // Candidate curves and the true curve share the guess machinery.
    let candidates = build_candidates(
        &specs,
        &scenario.doses,
        scenario.placebo_response,
        scenario.max_effect,
    )?;
    let truth = true_curve(
        scenario.true_model,
        &scenario.doses,
        scenario.placebo_response,
        scenario.max_effect,
    )?;

    // Reference design for MED bookkeeping (group sizes do not matter).
    let ref_design = DoseDesign::balanced(scenario.doses.clone(), 1)?;
    let true_med = match &truth {
        Some(curve) => estimate_med(curve, scenario.delta, &ref_design)?.dose,
        None => None,
    };
    let true_family: Option<FamilyName> = match scenario.true_model {
        TrueModel::Constant => None,
        TrueModel::Emax => Some(FamilyName::Emax),
        TrueModel::Exponential => Some(FamilyName::Exponential),
        TrueModel::Logistic => Some(FamilyName::Logistic),
        TrueModel::Beta => Some(FamilyName::Beta),
    };

    // Standardized candidate means at the doses drive the contrasts.
    let mu0: Vec<DVector<f64>> = candidates
        .iter()
        .map(|c| {
            let mut v = DVector::zeros(scenario.doses.len());
            for (i, &d) in scenario.doses.iter().enumerate() {
                v[i] = standardized_response(&c.shape, d)?;
            }
            Ok(v)
        })
        .collect::<Result<_, Error>>()?;

    // Fixed-seed draw pool for critical values, shared by all replicates.
    let sampler = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id(streams::CRITICAL_POOL, 0, 0));
        MaxZSampler::new(candidates.len(), DEFAULT_CRITICAL_DRAWS, &mut rng)?
    };

    let mut cells = Vec::new();
    let mut raw = Vec::new();
    for (cell_idx, &n_per_dose) in scenario.n_per_dose_grid.iter().enumerate() {
        let design = DoseDesign::balanced(scenario.doses.clone(), n_per_dose)?;
        let x = anova_design(&design);

        // Per-dose true means; constant truth sits at the placebo level.
        let mu_true = match &truth {
            Some(curve) => curve.mean_vector(&design)?,
            None => DVector::from_element(design.n_doses(), scenario.placebo_response),
        };

        // Calibrate the common censoring time against the exact expected
        // censoring fraction of this design.
        let censor_time = if scenario.censor_rate == 0.0 {
            f64::INFINITY
        } else {
            calibrate_censoring(&x, scenario.sigma, &mu_true, scenario.censor_rate)?
        };
        log::info!(
            "dose-finding cell n/dose = {n_per_dose}: censoring time {censor_time:.6} for target {}",
            scenario.censor_rate
        );

        let template = (x, scenario.sigma, censor_time);
        let outcomes: Vec<Vec<StrategyOutcome>> = (0..scenario.replicates as u32)
            .into_par_iter()
            .map(|rep| {
                run_replicate(
                    seed,
                    stream_id(streams::REPLICATE, cell_idx as u32, rep),
                    &design,
                    &template,
                    &mu_true,
                    &strategies,
                    &candidates,
                    &mu0,
                    &sampler,
                    scenario.alpha,
                    scenario.delta,
                )
            })
            .collect();

        for (rep, per_strategy) in outcomes.iter().enumerate() {
            for (s_idx, o) in per_strategy.iter().enumerate() {
                raw.push(McpModRawRecord {
                    n_per_dose,
                    replicate: rep,
                    strategy: strategies[s_idx].to_string(),
                    converged: o.converged,
                    signal: o.converged.then_some(o.signal),
                    selected: o.selected.map(|idx| specs[idx].family),
                    med: o.med_dose,
                    clamped: o.med_clamped,
                });
            }
        }

        for (s_idx, &strategy) in strategies.iter().enumerate() {
            let per: Vec<&StrategyOutcome> = outcomes.iter().map(|o| &o[s_idx]).collect();
            let converged: Vec<&&StrategyOutcome> =
                per.iter().filter(|o| o.converged).collect();
            let signals: Vec<&&StrategyOutcome> =
                converged.iter().filter(|o| o.signal).copied().collect();
            let with_selection: Vec<&&StrategyOutcome> = signals
                .iter()
                .filter(|o| o.selected.is_some())
                .copied()
                .collect();

            let signal_rate = Rate::new(signals.len(), converged.len());
            let gls_rate = Rate::new(
                signals.iter().filter(|o| o.gls_converged).count(),
                signals.len(),
            );

            let selection: Vec<SelectionRow> = specs
                .iter()
                .enumerate()
                .map(|(idx, c)| SelectionRow {
                    family: c.family,
                    rate: if signals.is_empty() {
                        0.0
                    } else {
                        with_selection
                            .iter()
                            .filter(|o| o.selected == Some(idx))
                            .count() as f64
                            / signals.len() as f64
                    },
                })
                .collect();
            let select_true_rate = true_family.and_then(|fam| {
                if signals.is_empty() {
                    None
                } else {
                    let idx = specs.iter().position(|c| c.family == fam)?;
                    Some(
                        with_selection
                            .iter()
                            .filter(|o| o.selected == Some(idx))
                            .count() as f64
                            / signals.len() as f64,
                    )
                }
            });

            let med_values: Vec<f64> = with_selection
                .iter()
                .filter_map(|o| o.med_dose)
                .collect();
            let (med_bias, med_rmse) = match true_med {
                Some(tm) if !med_values.is_empty() => (
                    crate::summary::mean(&med_values).map(|m| m - tm),
                    crate::summary::rmse_against(&med_values, tm),
                ),
                _ => (None, None),
            };
            let med_not_reached_rate = if with_selection.is_empty() {
                None
            } else {
                Some(
                    with_selection.iter().filter(|o| o.med_not_reached).count() as f64
                        / with_selection.len() as f64,
                )
            };
            let med_clamped_rate = if with_selection.is_empty() {
                None
            } else {
                Some(
                    with_selection.iter().filter(|o| o.med_clamped).count() as f64
                        / with_selection.len() as f64,
                )
            };

            cells.push(McpModCell {
                n_per_dose,
                strategy: strategy.to_string(),
                replicates: scenario.replicates,
                convergence_rate: converged.len() as f64 / scenario.replicates as f64,
                tested: converged.len(),
                signal_rate: signal_rate.value(),
                signal_se: signal_rate.se(),
                gls_convergence_rate: gls_rate.value(),
                select_true_rate,
                selection,
                med_bias,
                med_rmse,
                med_not_reached_rate,
                med_clamped_rate,
            });
        }
    }

    Ok((
        McpModReport {
            schema_version: REPORT_SCHEMA_VERSION.to_string(),
            version: VERSION.to_string(),
            scenario: scenario.clone(),
            seed,
            true_med,
            cells,
        },
        raw,
    ))
}
