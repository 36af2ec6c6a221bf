//! Censored Weibull / extreme-value regression primitives.
//!
//! Event times follow a Weibull law with known shape `sigma` and a
//! log-linear scale, `log(lambda_i) = x_i' beta`. On the log scale,
//! `y_i = log t_i` has an extreme-value density with location
//! `mu_i = x_i' beta` and scale `sigma`, which is the form everything here
//! works in. Right censoring is type I (fixed per-observation cutoff times),
//! type II (observation stops at the `r`-th failure) or the hybrid of both,
//! mixed through the probability `q` (`q = 1` for type I, `q = 0` for
//! type II, user-supplied in between).
//!
//! The expected weights `w_i` — the censoring-adjusted means of
//! `exp((y_i - mu_i)/sigma)` — and their first two derivatives in `mu_i`
//! drive every downstream quantity: Fisher information, bias vectors and
//! second-order covariance matrices.

use alloc::{format, vec, vec::Vec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Exponent clamp applied inside weight evaluations to avoid overflow;
/// clamped evaluations are counted in [`WeightSet::clamped`].
pub const EXPONENT_CLAMP: f64 = 700.0;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// The covariate matrix of the regression, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateDesign {
    x: DMatrix<f64>,
}

impl CovariateDesign {
    /// Wrap an `n x p` covariate matrix. Requires `n >= p >= 1` and finite
    /// entries; rank deficiency surfaces later as singular information.
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if p == 0 || n < p {
            return Err(Error::DimensionMismatch(format!(
                "design must have n >= p >= 1, got n = {n}, p = {p}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "design matrix entries must be finite".into(),
            ));
        }
        Ok(Self { x })
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of regression coefficients.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// The underlying matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Linear predictors `mu = X beta`.
    pub fn linear_predictor(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        if beta.len() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "beta has length {}, design has p = {}",
                beta.len(),
                self.p()
            )));
        }
        Ok(&self.x * beta)
    }
}

/// Right-censoring scheme.
#[derive(Debug, Clone, PartialEq)]
pub enum Censoring {
    /// Fixed censoring times `L_i > 0` (infinity means "never censored").
    TypeI {
        /// Per-observation censoring times, natural scale.
        times: Vec<f64>,
    },
    /// Observation stops once `failures` events have occurred.
    TypeII {
        /// Number of failures after which the remaining units are censored.
        failures: usize,
    },
    /// Whichever of the type I cutoff and the `failures`-th event comes
    /// first; `q` is the user-supplied probability that the `failures`-th
    /// event precedes the cutoff.
    Hybrid {
        /// Per-observation censoring times, natural scale.
        times: Vec<f64>,
        /// Failure-count cutoff.
        failures: usize,
        /// Mixing probability in `[0, 1]`.
        q: f64,
    },
}

impl Censoring {
    /// Type I censoring at a common cutoff time.
    pub fn type_i_common(time: f64, n: usize) -> Self {
        Censoring::TypeI {
            times: vec![time; n],
        }
    }

    /// The mixing probability `q`: 1 for type I, 0 for type II.
    pub fn mixing_probability(&self) -> f64 {
        match self {
            Censoring::TypeI { .. } => 1.0,
            Censoring::TypeII { .. } => 0.0,
            Censoring::Hybrid { q, .. } => *q,
        }
    }

    /// Censoring times if the scheme has them.
    pub fn times(&self) -> Option<&[f64]> {
        match self {
            Censoring::TypeI { times } | Censoring::Hybrid { times, .. } => Some(times),
            Censoring::TypeII { .. } => None,
        }
    }

    /// Failure-count cutoff if the scheme has one.
    pub fn failures(&self) -> Option<usize> {
        match self {
            Censoring::TypeII { failures } | Censoring::Hybrid { failures, .. } => Some(*failures),
            Censoring::TypeI { .. } => None,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if let Some(times) = self.times() {
            if times.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "censoring times have length {}, design has n = {n}",
                    times.len()
                )));
            }
            if times.iter().any(|&l| !(l > 0.0)) {
                return Err(Error::InvalidArgument(
                    "censoring times must be positive".into(),
                ));
            }
        }
        if let Some(r) = self.failures() {
            if r == 0 || r > n {
                return Err(Error::InvalidArgument(format!(
                    "failure cutoff must satisfy 1 <= r <= n, got r = {r}, n = {n}"
                )));
            }
        }
        if let Censoring::Hybrid { q, .. } = self {
            if !(0.0..=1.0).contains(q) {
                return Err(Error::InvalidArgument(format!(
                    "mixing probability must lie in [0, 1], got {q}"
                )));
            }
        }
        Ok(())
    }
}

/// Design, known shape and censoring scheme: everything that defines the
/// likelihood apart from the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Covariate matrix.
    pub design: CovariateDesign,
    /// Known Weibull shape parameter, `sigma > 0`.
    pub sigma: f64,
    /// Right-censoring scheme.
    pub censoring: Censoring,
}

impl ModelSpec {
    /// Assemble a model specification, validating shape and censoring.
    pub fn new(design: CovariateDesign, sigma: f64, censoring: Censoring) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "shape parameter must be positive and finite, got {sigma}"
            )));
        }
        censoring.validate(design.n())?;
        Ok(Self {
            design,
            sigma,
            censoring,
        })
    }

    /// Number of observations.
    pub fn n(&self) -> usize {
        self.design.n()
    }

    /// Number of regression coefficients.
    pub fn p(&self) -> usize {
        self.design.p()
    }
}

/// Observed data: log times `y_i = log(min(T_i, L_i))` and event flags.
#[derive(Debug, Clone, PartialEq)]
pub struct CensoredSample {
    /// Log observation times.
    pub log_times: DVector<f64>,
    /// `true` where the event was observed, `false` where censored.
    pub events: Vec<bool>,
}

impl CensoredSample {
    /// Number of observations.
    pub fn len(&self) -> usize {
        self.log_times.len()
    }

    /// Whether the sample is empty.
    pub fn is_empty(&self) -> bool {
        self.log_times.len() == 0
    }

    /// Number of observed events.
    pub fn n_events(&self) -> usize {
        self.events.iter().filter(|&&d| d).count()
    }

    fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        if self.log_times.len() != spec.n() || self.events.len() != spec.n() {
            return Err(Error::DimensionMismatch(format!(
                "sample has {} times / {} flags, design has n = {}",
                self.log_times.len(),
                self.events.len(),
                spec.n()
            )));
        }
        Ok(())
    }
}

/// Expected censoring weights `w_i` and their first two derivatives with
/// respect to the linear predictor `mu_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    /// Weights, `0 <= w_i <= 1`.
    pub w: DVector<f64>,
    /// First derivatives, `w_i' <= 0`.
    pub w_prime: DVector<f64>,
    /// Second derivatives. Identically zero (with `w_prime`) for type II.
    pub w_dprime: DVector<f64>,
    /// Number of exponent evaluations clamped at +-[`EXPONENT_CLAMP`].
    pub clamped: usize,
}

// ---------------------------------------------------------------------------
// Likelihood, score, weights, information
// ---------------------------------------------------------------------------

/// Log-likelihood of `beta` given the censored sample.
///
/// `sum_i { delta_i [ -log sigma + z_i ] - exp(z_i) }` with
/// `z_i = (y_i - mu_i)/sigma`. Overflow of `exp(z_i)` or a non-finite
/// linear predictor is signalled by returning `-inf`.
pub fn log_likelihood(spec: &ModelSpec, beta: &DVector<f64>, sample: &CensoredSample) -> Result<f64> {
    sample.check_against(spec)?;
    let mu = spec.design.linear_predictor(beta)?;
    let sigma = spec.sigma;
    let log_sigma = libm::log(sigma);
    let mut ll = 0.0;
    for i in 0..spec.n() {
        if !mu[i].is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
        let z = (sample.log_times[i] - mu[i]) / sigma;
        let mut term = -libm::exp(z);
        if sample.events[i] {
            term += z - log_sigma;
        }
        ll += term;
    }
    if ll.is_nan() {
        ll = f64::NEG_INFINITY;
    }
    Ok(ll)
}

/// Score vector `U(beta) = sigma^{-1} sum_i { -delta_i + exp(z_i) } x_i`.
pub fn score(spec: &ModelSpec, beta: &DVector<f64>, sample: &CensoredSample) -> Result<DVector<f64>> {
    sample.check_against(spec)?;
    let mu = spec.design.linear_predictor(beta)?;
    let sigma = spec.sigma;
    let x = spec.design.matrix();
    let mut u = DVector::zeros(spec.p());
    for i in 0..spec.n() {
        if !mu[i].is_finite() {
            return Err(Error::InvalidArgument(
                "non-finite linear predictor in score".into(),
            ));
        }
        let z = (sample.log_times[i] - mu[i]) / sigma;
        let g = (if sample.events[i] { -1.0 } else { 0.0 } + libm::exp(z)) / sigma;
        for j in 0..spec.p() {
            u[j] += g * x[(i, j)];
        }
    }
    Ok(u)
}

/// Weight of a single observation, given `c = (log L - mu)/sigma` already
/// clamped. Returns `(w_branch, w', w'')` of the type I branch; the caller
/// mixes in `q` and the type II constant.
#[inline]
fn type_i_weight_parts(c: f64, sigma: f64) -> (f64, f64, f64) {
    let a = libm::exp(c);
    // 1 - exp(-a), accurate for small a.
    let w = -libm::expm1(-a);
    // a * exp(-a) evaluated as exp(c - a): underflows cleanly for large c.
    let ae = libm::exp(c - a);
    let wp = -ae / sigma;
    let wpp = -ae * (a - 1.0) / (sigma * sigma);
    (w, wp, wpp)
}

/// Expected weights `w_i`, `w_i'`, `w_i''` at the linear predictor implied
/// by `beta`.
///
/// `w_i = q (1 - exp[-L_i^{1/sigma} exp(-mu_i/sigma)]) + (1-q) r/n`; only
/// the `q` branch depends on `mu_i`, so the derivatives carry the factor
/// `q`. For type II they vanish identically.
pub fn weight_set(spec: &ModelSpec, beta: &DVector<f64>) -> Result<WeightSet> {
    let n = spec.n();
    let sigma = spec.sigma;
    let q = spec.censoring.mixing_probability();
    let type_ii_part = match spec.censoring.failures() {
        Some(r) => (1.0 - q) * (r as f64 / n as f64),
        None => 0.0,
    };

    let mu = spec.design.linear_predictor(beta)?;
    if mu.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidArgument(
            "non-finite linear predictor in weights".into(),
        ));
    }

    let mut w = DVector::zeros(n);
    let mut wp = DVector::zeros(n);
    let mut wpp = DVector::zeros(n);
    let mut clamped = 0usize;

    match spec.censoring.times() {
        None => {
            // Pure type II: constant weights, zero derivatives.
            for i in 0..n {
                w[i] = type_ii_part;
            }
        }
        Some(times) => {
            for i in 0..n {
                if times[i] == f64::INFINITY {
                    // Never censored: the type I branch saturates at 1.
                    w[i] = q + type_ii_part;
                    continue;
                }
                let raw = (libm::log(times[i]) - mu[i]) / sigma;
                let c = raw.clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
                if c != raw {
                    clamped += 1;
                }
                let (wi, wpi, wppi) = type_i_weight_parts(c, sigma);
                w[i] = q * wi + type_ii_part;
                wp[i] = q * wpi;
                wpp[i] = q * wppi;
            }
        }
    }

    Ok(WeightSet {
        w,
        w_prime: wp,
        w_dprime: wpp,
        clamped,
    })
}

/// Fisher information `K = sigma^{-2} X' W X`, filled symmetrically.
///
/// Errors when the weights leave fewer than `p` observations with positive
/// weight, which forces `X' W X` to be rank deficient.
pub fn fisher_information(spec: &ModelSpec, beta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let weights = weight_set(spec, beta)?;
    fisher_information_from_weights(spec, &weights)
}

/// Observed information `-d^2 l / d beta^2 = sigma^{-2} sum_i exp(z_i)
/// x_i x_i'`.
///
/// The observed weights `exp(z_i)` are strictly positive, so the
/// log-likelihood is strictly concave wherever the design has full rank;
/// Newton steps with this matrix converge globally under step halving.
pub fn observed_information(
    spec: &ModelSpec,
    beta: &DVector<f64>,
    sample: &CensoredSample,
) -> Result<DMatrix<f64>> {
    sample.check_against(spec)?;
    let mu = spec.design.linear_predictor(beta)?;
    let sigma = spec.sigma;
    let x = spec.design.matrix();
    let p = spec.p();
    let inv_s2 = 1.0 / (sigma * sigma);
    let mut h = DMatrix::zeros(p, p);
    for i in 0..spec.n() {
        if !mu[i].is_finite() {
            return Err(Error::InvalidArgument(
                "non-finite linear predictor in observed information".into(),
            ));
        }
        let wi = libm::exp((sample.log_times[i] - mu[i]) / sigma) * inv_s2;
        for a in 0..p {
            let xa = x[(i, a)];
            for b in a..p {
                h[(a, b)] += wi * xa * x[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
    }
    Ok(h)
}

/// Fisher information from precomputed weights (avoids recomputing them in
/// fitting loops).
pub fn fisher_information_from_weights(
    spec: &ModelSpec,
    weights: &WeightSet,
) -> Result<DMatrix<f64>> {
    let n = spec.n();
    let p = spec.p();
    let positive = weights.w.iter().filter(|&&wi| wi > 0.0).count();
    if positive < p {
        return Err(Error::SingularInformation(
            "fewer positive weights than coefficients",
        ));
    }
    let x = spec.design.matrix();
    let inv_s2 = 1.0 / (spec.sigma * spec.sigma);
    let mut k = DMatrix::zeros(p, p);
    for i in 0..n {
        let wi = weights.w[i] * inv_s2;
        if wi == 0.0 {
            continue;
        }
        for a in 0..p {
            let xa = x[(i, a)];
            for b in a..p {
                k[(a, b)] += wi * xa * x[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            k[(a, b)] = k[(b, a)];
        }
    }
    Ok(k)
}

// ---------------------------------------------------------------------------
// Simulation and censoring calibration
// ---------------------------------------------------------------------------

/// Draw a censored sample from the model at `beta`.
///
/// Times come from the inversion `T_i = lambda_i (-log U_i)^sigma` with
/// `U_i` uniform on (0, 1); the censoring scheme is then applied on the log
/// scale. Identical RNG streams produce bit-identical samples.
pub fn simulate_sample<R: Rng + ?Sized>(
    spec: &ModelSpec,
    beta: &DVector<f64>,
    rng: &mut R,
) -> Result<CensoredSample> {
    let n = spec.n();
    let sigma = spec.sigma;
    let mu = spec.design.linear_predictor(beta)?;
    if mu.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidArgument(
            "non-finite linear predictor in simulation".into(),
        ));
    }

    // Raw (uncensored) log event times.
    let mut raw = DVector::zeros(n);
    for i in 0..n {
        let mut u: f64 = rng.random();
        while u <= 0.0 {
            u = rng.random();
        }
        let e = -libm::log(u); // standard exponential
        raw[i] = mu[i] + sigma * libm::log(e);
    }

    // Failure-count cutoff on the log scale, if the scheme has one.
    let order_cutoff = spec.censoring.failures().map(|r| {
        let mut sorted: Vec<f64> = raw.iter().copied().collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite log times"));
        sorted[r - 1]
    });

    let mut log_times = DVector::zeros(n);
    let mut events = vec![true; n];
    for i in 0..n {
        let mut cutoff = f64::INFINITY;
        if let Some(times) = spec.censoring.times() {
            cutoff = libm::log(times[i]);
        }
        if let Some(oc) = order_cutoff {
            cutoff = cutoff.min(oc);
        }
        if raw[i] <= cutoff {
            log_times[i] = raw[i];
        } else {
            log_times[i] = cutoff;
            events[i] = false;
        }
    }
    Ok(CensoredSample { log_times, events })
}

/// Find the common type I censoring time achieving an expected censoring
/// fraction.
///
/// Solves `(1/n) sum_i P(T_i > L) = target_rate` by bisection on `log L`
/// after geometric bracket expansion; the rate is matched to 1e-10. A
/// target of zero returns the `+inf` sentinel (no censoring).
pub fn calibrate_censoring(
    design: &CovariateDesign,
    sigma: f64,
    beta: &DVector<f64>,
    target_rate: f64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&target_rate) {
        return Err(Error::InvalidArgument(format!(
            "target censoring rate must lie in [0, 1), got {target_rate}"
        )));
    }
    if target_rate == 0.0 {
        return Ok(f64::INFINITY);
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "shape parameter must be positive and finite, got {sigma}"
        )));
    }
    let mu = design.linear_predictor(beta)?;
    let n = design.n() as f64;
    // Expected censoring fraction at cutoff log L; decreasing in log L.
    let rate = |log_l: f64| -> f64 {
        let mut s = 0.0;
        for m in mu.iter() {
            let c = ((log_l - m) / sigma).clamp(-EXPONENT_CLAMP, EXPONENT_CLAMP);
            s += libm::exp(-libm::exp(c));
        }
        s / n
    };

    let center = mu.iter().sum::<f64>() / n;
    let mut lo = center;
    let mut step = sigma.max(1.0);
    let mut tries = 0;
    while rate(lo) < target_rate {
        lo -= step;
        step *= 2.0;
        tries += 1;
        if tries > 200 {
            return Err(Error::RootFinding(format!(
                "could not bracket censoring rate {target_rate} from below"
            )));
        }
    }
    let mut hi = center;
    step = sigma.max(1.0);
    tries = 0;
    while rate(hi) > target_rate {
        hi += step;
        step *= 2.0;
        tries += 1;
        if tries > 200 {
            return Err(Error::RootFinding(format!(
                "could not bracket censoring rate {target_rate} from above"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = rate(mid);
        if (r - target_rate).abs() <= 1e-10 {
            return Ok(libm::exp(mid));
        }
        if r > target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(libm::exp(0.5 * (lo + hi)))
}
