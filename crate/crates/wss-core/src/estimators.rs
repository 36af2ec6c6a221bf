//! Fisher-scoring maximum likelihood, the bias-corrected estimator, the
//! Firth preventive estimator, and second-order covariance matrices.
//!
//! Three estimators share one contract:
//!
//! - **MLE** `beta_hat`: Fisher scoring on the score `U`.
//! - **BCE** `beta_tilde = beta_hat - B(beta_hat)`: the first-order bias
//!   `B` is removed after fitting (corrective approach).
//! - **Firth** `beta_check`: root of the modified score
//!   `U* = U - K B(beta)`, which prevents the first-order bias instead of
//!   correcting it afterwards.
//!
//! Statistical non-convergence (iteration exhaustion, divergent
//! coefficients, singular information, flat likelihood directions) is data,
//! not an error: it comes back as [`FitResult::converged`] with a
//! [`FitFailure`] reason, because convergence rates are a reported study
//! outcome.
//!
//! [`second_order_covariance`] refines the inverse information `K^{-1}`
//! with the order `n^{-2}` term `K^{-1} (Delta + Delta') K^{-1}`, where
//! `Delta` combines the three matrices of [`DeltaSet`] and the pair `tau`
//! selects whether the target estimator is the MLE or the BCE.

use alloc::{format, vec, vec::Vec};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::weibull::{
    fisher_information_from_weights, log_likelihood, observed_information, score, weight_set,
    CensoredSample, ModelSpec, WeightSet,
};

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// Which estimator produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    /// Maximum likelihood.
    Mle,
    /// Cox-Snell bias-corrected estimator.
    Bce,
    /// Firth modified-score estimator.
    Firth,
}

impl core::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            EstimatorKind::Mle => write!(f, "MLE"),
            EstimatorKind::Bce => write!(f, "BCE"),
            EstimatorKind::Firth => write!(f, "Firth"),
        }
    }
}

/// Tuning knobs for the scoring iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Convergence tolerance on the max-norm of the (modified) score.
    pub tol: f64,
    /// Iteration cap.
    pub max_iter: usize,
    /// Optional starting value; least squares on the uncensored rows is
    /// used when absent.
    pub init: Option<DVector<f64>>,
    /// Cap on step halvings within one iteration.
    pub max_step_halvings: usize,
    /// Hard bound on the coefficient max-norm; beyond it the fit is
    /// declared divergent.
    pub divergence_bound: f64,
    /// Bound on the diagonal of the reported covariance; a scored solution
    /// whose variance exceeds it sits in a flat likelihood direction and is
    /// declared divergent as well.
    pub variance_bound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
            init: None,
            max_step_halvings: 20,
            divergence_bound: 1e6,
            variance_bound: 1e6,
        }
    }
}

/// Why a fit did not converge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitFailure {
    /// Iteration cap reached before the score norm fell under tolerance.
    IterationLimit,
    /// A coefficient escaped, or the information went flat around the
    /// scored solution.
    DivergentCoefficient,
    /// The Fisher information could not be factored during scoring.
    SingularInformation,
    /// Step halving could not find an acceptable step.
    LineSearchFailed,
    /// The likelihood was non-finite at every candidate starting point.
    NonFiniteLikelihood,
}

impl core::fmt::Display for FitFailure {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            FitFailure::IterationLimit => write!(f, "iteration limit"),
            FitFailure::DivergentCoefficient => write!(f, "divergent coefficient"),
            FitFailure::SingularInformation => write!(f, "singular information"),
            FitFailure::LineSearchFailed => write!(f, "line search failed"),
            FitFailure::NonFiniteLikelihood => write!(f, "non-finite likelihood"),
        }
    }
}

/// Counters accumulated while fitting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitDiagnostics {
    /// Total step halvings across iterations.
    pub step_halvings: usize,
    /// Weight evaluations that hit the exponent clamp.
    pub weight_clamps: usize,
}

/// Outcome of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Which estimator this is.
    pub kind: EstimatorKind,
    /// Coefficient estimate.
    pub beta: DVector<f64>,
    /// First-order covariance: inverse Fisher information at `beta`.
    /// All zeros when the fit did not converge.
    pub cov_first: DMatrix<f64>,
    /// Second-order covariance, filled by [`FitResult::with_second_order`].
    pub cov_second: Option<DMatrix<f64>>,
    /// Whether the scoring converged.
    pub converged: bool,
    /// Reason when it did not.
    pub failure: Option<FitFailure>,
    /// Scoring iterations consumed.
    pub iterations: usize,
    /// Max-norm of the (modified) score at the final point.
    pub final_score_norm: f64,
    /// Clamp and step-halving counters.
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    fn failed(
        kind: EstimatorKind,
        beta: DVector<f64>,
        failure: FitFailure,
        iterations: usize,
        score_norm: f64,
        diagnostics: FitDiagnostics,
    ) -> Self {
        let p = beta.len();
        Self {
            kind,
            beta,
            cov_first: DMatrix::zeros(p, p),
            cov_second: None,
            converged: false,
            failure: Some(failure),
            iterations,
            final_score_norm: score_norm,
            diagnostics,
        }
    }

    /// Attach the second-order covariance evaluated at this fit's estimate,
    /// with `tau` chosen by the estimator kind (BCE gets the BCE target,
    /// everything else the MLE target).
    pub fn with_second_order(mut self, spec: &ModelSpec) -> Result<Self> {
        let tau = match self.kind {
            EstimatorKind::Bce => Tau::Bce,
            _ => Tau::Mle,
        };
        self.cov_second = Some(second_order_covariance(spec, &self.beta, tau)?);
        Ok(self)
    }
}

// ---------------------------------------------------------------------------
// Initialisation and shared helpers
// ---------------------------------------------------------------------------

/// Least-squares start: regress log times on the design, preferring the
/// uncensored rows, falling back to all rows, then to zero.
fn least_squares_init(spec: &ModelSpec, sample: &CensoredSample) -> DVector<f64> {
    let x = spec.design.matrix();
    let p = spec.p();
    let solve_for = |rows: &[usize]| -> Option<DVector<f64>> {
        if rows.len() < p {
            return None;
        }
        let mut gram = DMatrix::zeros(p, p);
        let mut xty = DVector::zeros(p);
        for &i in rows {
            for a in 0..p {
                let xa = x[(i, a)];
                xty[a] += xa * sample.log_times[i];
                for b in a..p {
                    gram[(a, b)] += xa * x[(i, b)];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        Cholesky::new(gram).map(|ch| ch.solve(&xty))
    };

    let uncensored: Vec<usize> = (0..spec.n()).filter(|&i| sample.events[i]).collect();
    if let Some(beta) = solve_for(&uncensored) {
        return beta;
    }
    let all: Vec<usize> = (0..spec.n()).collect();
    if let Some(beta) = solve_for(&all) {
        return beta;
    }
    DVector::zeros(p)
}

fn chol_inverse(k: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::new(k.clone()).map(|ch| ch.inverse())
}

/// Flat-direction detector: a converged score with an exploding variance
/// means some coefficient ran off along a likelihood asymptote (the classic
/// all-censored-cell situation).
fn covariance_is_degenerate(cov: &DMatrix<f64>, bound: f64) -> bool {
    (0..cov.nrows()).any(|j| !cov[(j, j)].is_finite() || cov[(j, j)] > bound)
}

// ---------------------------------------------------------------------------
// Maximum likelihood and Firth scoring
// ---------------------------------------------------------------------------

/// Fit the MLE by Fisher scoring with step halving.
///
/// Scoring iterates `beta <- beta + t K^{-1} U`, halving `t` until the
/// log-likelihood increases. Convergence is `||U||_inf <= tol`; iteration
/// exhaustion, coefficient escape past `divergence_bound`, singular
/// information, and flat likelihood directions all come back as
/// `converged = false` with a reason.
pub fn fit_mle(
    spec: &ModelSpec,
    sample: &CensoredSample,
    options: &FitOptions,
) -> Result<FitResult> {
    fit_by_scoring(spec, sample, options, EstimatorKind::Mle)
}

/// Fit the Firth estimator: Fisher scoring on the modified score
/// `U* = U - K B(beta)`.
pub fn fit_firth(
    spec: &ModelSpec,
    sample: &CensoredSample,
    options: &FitOptions,
) -> Result<FitResult> {
    fit_by_scoring(spec, sample, options, EstimatorKind::Firth)
}

/// One scoring engine for MLE and Firth. The two differ in the score
/// vector (plain vs modified) and in the line-search merit: the MLE halves
/// until the likelihood increases, Firth until the modified-score norm
/// decreases, because the Firth solution is not a likelihood maximiser.
///
/// Steps solve against the observed information (Newton) rather than the
/// expected one: the likelihood is strictly concave in this model, so
/// Newton with halving converges globally and quadratically, where
/// expected-information steps crawl linearly on heavily censored samples.
/// The reported covariance stays the inverse expected information.
fn fit_by_scoring(
    spec: &ModelSpec,
    sample: &CensoredSample,
    options: &FitOptions,
    kind: EstimatorKind,
) -> Result<FitResult> {
    sample_matches(spec, sample)?;
    let firth = matches!(kind, EstimatorKind::Firth);
    let mut diagnostics = FitDiagnostics::default();

    let mut beta = options
        .init
        .clone()
        .unwrap_or_else(|| least_squares_init(spec, sample));
    if beta.len() != spec.p() {
        return Err(Error::DimensionMismatch(format!(
            "init has length {}, design has p = {}",
            beta.len(),
            spec.p()
        )));
    }

    let mut ll = log_likelihood(spec, &beta, sample)?;
    if !ll.is_finite() {
        beta = DVector::zeros(spec.p());
        ll = log_likelihood(spec, &beta, sample)?;
        if !ll.is_finite() {
            return Ok(FitResult::failed(
                kind,
                beta,
                FitFailure::NonFiniteLikelihood,
                0,
                f64::INFINITY,
                diagnostics,
            ));
        }
    }

    let mut merit = f64::INFINITY; // Firth line-search merit: ||U*||_inf
    for iter in 0..=options.max_iter {
        let weights = weight_set(spec, &beta)?;
        diagnostics.weight_clamps += weights.clamped;

        let (chol, u_eff) = match scoring_system(spec, sample, &beta, &weights, firth)? {
            Some(pair) => pair,
            None => {
                return Ok(FitResult::failed(
                    kind,
                    beta,
                    FitFailure::SingularInformation,
                    iter,
                    f64::INFINITY,
                    diagnostics,
                ));
            }
        };
        let score_norm = u_eff.amax();

        if score_norm <= options.tol {
            // Reported covariance: inverse *expected* information at the
            // solution.
            let cov = match fisher_information_from_weights(spec, &weights)
                .ok()
                .and_then(|k| chol_inverse(&k))
            {
                Some(c) => c,
                None => {
                    return Ok(FitResult::failed(
                        kind,
                        beta,
                        FitFailure::SingularInformation,
                        iter,
                        score_norm,
                        diagnostics,
                    ));
                }
            };
            if covariance_is_degenerate(&cov, options.variance_bound) {
                return Ok(FitResult::failed(
                    kind,
                    beta,
                    FitFailure::DivergentCoefficient,
                    iter,
                    score_norm,
                    diagnostics,
                ));
            }
            return Ok(FitResult {
                kind,
                beta,
                cov_first: cov,
                cov_second: None,
                converged: true,
                failure: None,
                iterations: iter,
                final_score_norm: score_norm,
                diagnostics,
            });
        }
        if iter == options.max_iter {
            return Ok(FitResult::failed(
                kind,
                beta,
                FitFailure::IterationLimit,
                iter,
                score_norm,
                diagnostics,
            ));
        }

        let step = chol.solve(&u_eff);
        let mut t = 1.0;
        let mut halvings = 0;
        let accepted = loop {
            let cand = &beta + &step * t;
            if cand.amax() > options.divergence_bound {
                return Ok(FitResult::failed(
                    kind,
                    beta,
                    FitFailure::DivergentCoefficient,
                    iter,
                    score_norm,
                    diagnostics,
                ));
            }
            let ok = if firth {
                match candidate_merit(spec, sample, &cand)? {
                    Some(m) if m < merit.min(score_norm) || m <= options.tol => {
                        merit = m;
                        true
                    }
                    _ => false,
                }
            } else {
                // Near the optimum the likelihood moves by less than f64
                // resolution while the score still shrinks, so allow a
                // relative slack rather than demanding a strict increase.
                let cand_ll = log_likelihood(spec, &cand, sample)?;
                if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * (1.0 + ll.abs()) {
                    ll = cand_ll.max(ll);
                    true
                } else {
                    false
                }
            };
            if ok {
                break Some(cand);
            }
            halvings += 1;
            if halvings > options.max_step_halvings {
                break None;
            }
            t *= 0.5;
        };
        diagnostics.step_halvings += halvings;
        match accepted {
            Some(cand) => beta = cand,
            None => {
                return Ok(FitResult::failed(
                    kind,
                    beta,
                    FitFailure::LineSearchFailed,
                    iter,
                    score_norm,
                    diagnostics,
                ));
            }
        }
    }
    unreachable!("scoring loop exits through convergence or failure");
}

/// Factor the observed information and build the (possibly modified) score
/// at `beta`. `None` means the step matrix could not be factored; the bias
/// adjustment inside the modified score additionally needs the expected
/// information to factor.
#[allow(clippy::type_complexity)]
fn scoring_system(
    spec: &ModelSpec,
    sample: &CensoredSample,
    beta: &DVector<f64>,
    weights: &WeightSet,
    firth: bool,
) -> Result<Option<(Cholesky<f64, Dyn>, DVector<f64>)>> {
    let obs = observed_information(spec, beta, sample)?;
    let chol = match Cholesky::new(obs) {
        Some(c) => c,
        None => return Ok(None),
    };
    let mut u = score(spec, beta, sample)?;
    if firth {
        let k = match fisher_information_from_weights(spec, weights) {
            Ok(k) => k,
            Err(Error::SingularInformation(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let chol_k = match Cholesky::new(k) {
            Some(c) => c,
            None => return Ok(None),
        };
        u += firth_adjustment(spec, weights, &chol_k);
    }
    Ok(Some((chol, u)))
}

/// `||U*(beta)||_inf`, or `None` when the information fails to factor.
fn candidate_merit(
    spec: &ModelSpec,
    sample: &CensoredSample,
    beta: &DVector<f64>,
) -> Result<Option<f64>> {
    let weights = weight_set(spec, beta)?;
    Ok(scoring_system(spec, sample, beta, &weights, true)?.map(|(_, u)| u.amax()))
}

/// The score modification `-K B(beta)`, written without the inverse:
/// `(2 sigma^3)^{-1} sum_i z_ii (w_i + 2 sigma w_i') x_i`.
fn firth_adjustment(
    spec: &ModelSpec,
    weights: &WeightSet,
    chol: &Cholesky<f64, Dyn>,
) -> DVector<f64> {
    let x = spec.design.matrix();
    let sigma = spec.sigma;
    let n = spec.n();
    let p = spec.p();
    let vt = chol.solve(&x.transpose()); // K^{-1} X', p x n
    let mut adj = DVector::zeros(p);
    for i in 0..n {
        let mut zii = 0.0;
        for a in 0..p {
            zii += x[(i, a)] * vt[(a, i)];
        }
        let g = zii * (weights.w[i] + 2.0 * sigma * weights.w_prime[i]);
        for a in 0..p {
            adj[a] += g * x[(i, a)];
        }
    }
    adj / (2.0 * sigma * sigma * sigma)
}

fn sample_matches(spec: &ModelSpec, sample: &CensoredSample) -> Result<()> {
    if sample.log_times.len() != spec.n() || sample.events.len() != spec.n() {
        return Err(Error::DimensionMismatch(format!(
            "sample has {} rows, design has n = {}",
            sample.log_times.len(),
            spec.n()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Cox-Snell bias and the corrected estimator
// ---------------------------------------------------------------------------

/// First-order bias vector
/// `B(beta) = -(2 sigma^3)^{-1} P Z_d (W + 2 sigma W') 1` with
/// `P = K^{-1} X'` and `z_ii` the diagonal of `Z = X K^{-1} X'`.
pub fn cox_snell_bias(spec: &ModelSpec, beta: &DVector<f64>) -> Result<DVector<f64>> {
    let weights = weight_set(spec, beta)?;
    let k = fisher_information_from_weights(spec, &weights)?;
    let chol = Cholesky::new(k).ok_or(Error::SingularInformation(
        "information not positive definite in bias evaluation",
    ))?;
    let x = spec.design.matrix();
    let sigma = spec.sigma;
    let vt = chol.solve(&x.transpose()); // P = K^{-1} X', p x n
    let n = spec.n();
    let p = spec.p();
    let mut g = DVector::zeros(n);
    for i in 0..n {
        let mut zii = 0.0;
        for a in 0..p {
            zii += x[(i, a)] * vt[(a, i)];
        }
        g[i] = zii * (weights.w[i] + 2.0 * sigma * weights.w_prime[i]);
    }
    Ok(&vt * g * (-1.0 / (2.0 * sigma * sigma * sigma)))
}

/// Fit the bias-corrected estimator: run the MLE, subtract the bias at
/// `beta_hat`, and re-evaluate the inverse information at the corrected
/// point (that matrix is the one the BCE Wald statistic uses).
pub fn fit_bce(
    spec: &ModelSpec,
    sample: &CensoredSample,
    options: &FitOptions,
) -> Result<FitResult> {
    let mle = fit_mle(spec, sample, options)?;
    bce_from_mle(spec, mle, options)
}

/// Derive the bias-corrected estimator from an already-computed MLE fit.
pub fn bce_from_mle(spec: &ModelSpec, mle: FitResult, options: &FitOptions) -> Result<FitResult> {
    if mle.kind != EstimatorKind::Mle {
        return Err(Error::InvalidArgument(
            "bias correction starts from an MLE fit".into(),
        ));
    }
    if !mle.converged {
        return Ok(FitResult {
            kind: EstimatorKind::Bce,
            ..mle
        });
    }
    let bias = match cox_snell_bias(spec, &mle.beta) {
        Ok(b) => b,
        Err(Error::SingularInformation(_)) | Err(Error::NotPositiveDefinite(_)) => {
            return Ok(FitResult::failed(
                EstimatorKind::Bce,
                mle.beta,
                FitFailure::SingularInformation,
                mle.iterations,
                mle.final_score_norm,
                mle.diagnostics,
            ));
        }
        Err(e) => return Err(e),
    };
    let beta_bce = &mle.beta - &bias;

    let cov = match weight_set(spec, &beta_bce)
        .ok()
        .and_then(|w| fisher_information_from_weights(spec, &w).ok())
        .and_then(|k| chol_inverse(&k))
    {
        Some(c) => c,
        None => {
            return Ok(FitResult::failed(
                EstimatorKind::Bce,
                beta_bce,
                FitFailure::SingularInformation,
                mle.iterations,
                mle.final_score_norm,
                mle.diagnostics,
            ));
        }
    };
    if covariance_is_degenerate(&cov, options.variance_bound) {
        return Ok(FitResult::failed(
            EstimatorKind::Bce,
            beta_bce,
            FitFailure::DivergentCoefficient,
            mle.iterations,
            mle.final_score_norm,
            mle.diagnostics,
        ));
    }
    Ok(FitResult {
        kind: EstimatorKind::Bce,
        beta: beta_bce,
        cov_first: cov,
        cov_second: None,
        converged: true,
        failure: None,
        iterations: mle.iterations,
        final_score_norm: mle.final_score_norm,
        diagnostics: mle.diagnostics,
    })
}

// ---------------------------------------------------------------------------
// Second-order covariance
// ---------------------------------------------------------------------------

/// Target of the second-order covariance: the pair `(tau_1, tau_2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tau {
    /// `(1, 1)`: covariance of the MLE.
    Mle,
    /// `(0, -1)`: covariance of the BCE.
    Bce,
}

impl Tau {
    /// First component.
    pub fn tau1(self) -> f64 {
        match self {
            Tau::Mle => 1.0,
            Tau::Bce => 0.0,
        }
    }

    /// Second component.
    pub fn tau2(self) -> f64 {
        match self {
            Tau::Mle => 1.0,
            Tau::Bce => -1.0,
        }
    }
}

/// The three matrices entering the order `n^{-2}` covariance term.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSet {
    /// `sigma^{-4} X' W* Z_d X` with
    /// `w*_i = w_i(w_i - 2) - 2 sigma w_i' + sigma tau_1 (w_i' + 2 sigma w_i'')`.
    pub delta1: DMatrix<f64>,
    /// `-sigma^{-6} X' [W Z2 W - 2 sigma W Z2 W' - 6 sigma^2 W' Z2 W'] X`
    /// with `Z2` the Hadamard square of `Z`.
    pub delta2: DMatrix<f64>,
    /// `sigma^{-5} X' W' W** X` where `W**` has diagonal
    /// `Z (W + 2 sigma W') Z_d 1`; identically zero under type II censoring.
    pub delta3: DMatrix<f64>,
    /// Which estimator the set targets.
    pub tau: Tau,
}

impl DeltaSet {
    /// Combine into `Delta = -1/2 D1 + 1/4 D2 + tau_2/2 D3`.
    pub fn combined(&self) -> DMatrix<f64> {
        &self.delta1 * (-0.5) + &self.delta2 * 0.25 + &self.delta3 * (0.5 * self.tau.tau2())
    }
}

/// Evaluate the three correction matrices at `beta`.
pub fn delta_set(spec: &ModelSpec, beta: &DVector<f64>, tau: Tau) -> Result<DeltaSet> {
    let weights = weight_set(spec, beta)?;
    let k = fisher_information_from_weights(spec, &weights)?;
    let chol = Cholesky::new(k).ok_or(Error::SingularInformation(
        "information not positive definite in covariance correction",
    ))?;
    let x = spec.design.matrix();
    let n = spec.n();
    let p = spec.p();
    let sigma = spec.sigma;

    // Column-contiguous copies of x_i and K^{-1} x_i.
    let xt = x.transpose(); // p x n
    let vt = chol.solve(&xt); // p x n
    let xs = xt.as_slice();
    let vs = vt.as_slice();
    fn col(s: &[f64], i: usize, p: usize) -> &[f64] {
        &s[i * p..(i + 1) * p]
    }
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(u, v)| u * v).sum() };

    let zdiag: DVector<f64> = DVector::from_fn(n, |i, _| dot(col(xs, i, p), col(vs, i, p)));

    let w = &weights.w;
    let wp = &weights.w_prime;
    let wpp = &weights.w_dprime;

    // Delta 1: weighted Gram with diagonal w*_i z_ii.
    let s2 = sigma * sigma;
    let inv_s4 = 1.0 / (s2 * s2);
    let mut delta1 = DMatrix::zeros(p, p);
    for i in 0..n {
        let wstar = w[i] * (w[i] - 2.0) - 2.0 * sigma * wp[i]
            + sigma * tau.tau1() * (wp[i] + 2.0 * sigma * wpp[i]);
        let c = inv_s4 * wstar * zdiag[i];
        let xi = col(xs, i, p);
        for a in 0..p {
            for b in a..p {
                delta1[(a, b)] += c * xi[a] * xi[b];
            }
        }
    }
    mirror_upper(&mut delta1);

    // Delta 3: diagonal w'_i w**_i with w**_i = sum_j z_ij (w_j + 2 sigma w_j') z_jj,
    // vectorised as x_i' K^{-1} X' g.
    let inv_s5 = inv_s4 / sigma;
    let g = DVector::from_fn(n, |j, _| (w[j] + 2.0 * sigma * wp[j]) * zdiag[j]);
    let h = chol.solve(&(&xt * &g));
    let mut delta3 = DMatrix::zeros(p, p);
    for i in 0..n {
        let xi = col(xs, i, p);
        let wss = dot(xi, h.as_slice());
        let c = inv_s5 * wp[i] * wss;
        for a in 0..p {
            for b in a..p {
                delta3[(a, b)] += c * xi[a] * xi[b];
            }
        }
    }
    mirror_upper(&mut delta3);

    // Delta 2: the double sum over observation pairs
    //   -sigma^{-6} sum_{ij} [w_i a_j - 6 sigma^2 w_i' w_j'] z_ij^2 x_i x_j'
    // with a_j = w_j - 2 sigma w_j'. Expanding z_ij = x_i' K^{-1} x_j turns
    // it into contractions of weighted third-moment tensors
    // M^u_e = sum_i u_i x_ei x_i x_i' through K^{-1}, costing O(n p^3)
    // instead of O(n^2 p). Not symmetric on its own; symmetry only enters
    // through Delta + Delta'.
    let inv_s6 = inv_s4 / s2;
    let kinv = chol.inverse();
    let third_moments = |u: &dyn Fn(usize) -> f64| -> Vec<DMatrix<f64>> {
        let mut m = vec![DMatrix::zeros(p, p); p];
        for i in 0..n {
            let xi = col(xs, i, p);
            let ui = u(i);
            for e in 0..p {
                let ue = ui * xi[e];
                if ue == 0.0 {
                    continue;
                }
                let me = &mut m[e];
                for a in 0..p {
                    for b in a..p {
                        me[(a, b)] += ue * xi[a] * xi[b];
                    }
                }
            }
        }
        for me in m.iter_mut() {
            mirror_upper(me);
        }
        m
    };
    let m_w = third_moments(&|i| w[i]);
    let m_a = third_moments(&|i| w[i] - 2.0 * sigma * wp[i]);
    let m_wp = third_moments(&|i| wp[i]);
    let frob = |a: &DMatrix<f64>, b: &DMatrix<f64>| -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
    };
    let mut delta2 = DMatrix::zeros(p, p);
    for e in 0..p {
        let rw = &kinv * &m_w[e] * &kinv;
        let rwp = &kinv * &m_wp[e] * &kinv;
        for f in 0..p {
            let term = frob(&rw, &m_a[f]) - 6.0 * s2 * frob(&rwp, &m_wp[f]);
            delta2[(e, f)] = -inv_s6 * term;
        }
    }

    Ok(DeltaSet {
        delta1,
        delta2,
        delta3,
        tau,
    })
}

fn mirror_upper(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for a in 0..p {
        for b in 0..a {
            m[(a, b)] = m[(b, a)];
        }
    }
}

/// Assemble `K^{-1} + K^{-1} (Delta + Delta') K^{-1}` and symmetrize the
/// result to absorb last-ulp asymmetry before any downstream factorization.
pub fn compose_second_order(k_inv: &DMatrix<f64>, delta: &DMatrix<f64>) -> DMatrix<f64> {
    let correction = k_inv * (delta + delta.transpose()) * k_inv;
    let raw = k_inv + correction;
    (&raw + raw.transpose()) * 0.5
}

/// Second-order covariance matrix of the chosen target estimator at `beta`.
pub fn second_order_covariance(
    spec: &ModelSpec,
    beta: &DVector<f64>,
    tau: Tau,
) -> Result<DMatrix<f64>> {
    let deltas = delta_set(spec, beta, tau)?;
    let k = fisher_information_from_weights(spec, &weight_set(spec, beta)?)?;
    let k_inv = chol_inverse(&k).ok_or(Error::SingularInformation(
        "information not positive definite in covariance correction",
    ))?;
    Ok(compose_second_order(&k_inv, &deltas.combined()))
}
