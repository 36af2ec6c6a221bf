//! Standardized dose-response models, guess-estimate conversion, and
//! minimum-effective-dose estimation.
//!
//! Every candidate curve is `f(x) = theta0 + theta1 * f0(x, theta_nl)` with
//! a family-specific standardized shape `f0`. Nonlinear parameters are
//! usually elicited from "percent of maximum effect at dose d" statements;
//! [`params_from_guesses`] turns those into parameter values the same way
//! the usual dose-finding practice does: bounded shapes are matched on
//! their own (0, 1) scale, the exponential shape relative to its value at
//! the highest dose, and the beta shape through its mode.

use alloc::{format, vec::Vec};
use nalgebra::DVector;

use crate::error::{Error, Result};

/// Candidate model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeFamily {
    /// `f0(x) = x`.
    Linear,
    /// `f0(x) = x / (x + ed50)`.
    Emax,
    /// `f0(x) = exp(x / delta) - 1`.
    Exponential,
    /// `f0(x) = 1 / (1 + exp((ed50 - x) / delta))`.
    Logistic,
    /// `f0(x) = B(d1, d2) (x/scal)^{d1} (1 - x/scal)^{d2}`, normalized so
    /// the maximum over `(0, scal)` is one.
    Beta,
}

impl ShapeFamily {
    /// Number of nonlinear parameters of the standardized shape.
    pub fn n_nonlinear(self) -> usize {
        match self {
            ShapeFamily::Linear => 0,
            ShapeFamily::Emax | ShapeFamily::Exponential => 1,
            ShapeFamily::Logistic | ShapeFamily::Beta => 2,
        }
    }

    /// Total parameter count of the full model (`theta0`, `theta1`, plus
    /// nonlinear), used by the generalized AIC penalty.
    pub fn n_params(self) -> usize {
        2 + self.n_nonlinear()
    }
}

impl core::fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ShapeFamily::Linear => write!(f, "linear"),
            ShapeFamily::Emax => write!(f, "emax"),
            ShapeFamily::Exponential => write!(f, "exponential"),
            ShapeFamily::Logistic => write!(f, "logistic"),
            ShapeFamily::Beta => write!(f, "beta"),
        }
    }
}

/// Standardized shape with its nonlinear parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Identity shape.
    Linear,
    /// Hyperbolic saturation with half-maximal dose `ed50 > 0`.
    Emax {
        /// Dose producing half the asymptotic response.
        ed50: f64,
    },
    /// Convex growth with rate parameter `delta > 0`.
    Exponential {
        /// Exponential rate.
        delta: f64,
    },
    /// Sigmoid with location `ed50 > 0` and scale `delta > 0`.
    Logistic {
        /// Dose of the inflection point.
        ed50: f64,
        /// Slope scale.
        delta: f64,
    },
    /// Unimodal beta shape on `[0, scal]` with exponents `delta1, delta2 > 0`.
    Beta {
        /// Left exponent.
        delta1: f64,
        /// Right exponent.
        delta2: f64,
        /// Support scale; must exceed the largest dose in use.
        scal: f64,
    },
}

impl Shape {
    /// Family tag of this shape.
    pub fn family(&self) -> ShapeFamily {
        match self {
            Shape::Linear => ShapeFamily::Linear,
            Shape::Emax { .. } => ShapeFamily::Emax,
            Shape::Exponential { .. } => ShapeFamily::Exponential,
            Shape::Logistic { .. } => ShapeFamily::Logistic,
            Shape::Beta { .. } => ShapeFamily::Beta,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Linear => true,
            Shape::Emax { ed50 } => *ed50 > 0.0,
            Shape::Exponential { delta } => *delta > 0.0,
            Shape::Logistic { ed50, delta } => *ed50 > 0.0 && *delta > 0.0,
            Shape::Beta {
                delta1,
                delta2,
                scal,
            } => *delta1 > 0.0 && *delta2 > 0.0 && *scal > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid shape parameters: {self:?}"
            )))
        }
    }

    /// Dose of the beta shape's maximum, when the shape has one.
    pub fn mode(&self) -> Option<f64> {
        match self {
            Shape::Beta {
                delta1,
                delta2,
                scal,
            } => Some(scal * delta1 / (delta1 + delta2)),
            _ => None,
        }
    }
}

/// Log of the normalizer making the beta shape peak at exactly one. Kept
/// on the log scale so extreme exponents cannot overflow before the final
/// exponential.
fn beta_log_normalizer(d1: f64, d2: f64) -> f64 {
    let s = d1 + d2;
    s * libm::log(s) - d1 * libm::log(d1) - d2 * libm::log(d2)
}

/// Evaluate the standardized shape `f0` at dose `x >= 0`.
pub fn standardized_response(shape: &Shape, x: f64) -> Result<f64> {
    shape.validate()?;
    if !(x >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dose must be nonnegative, got {x}"
        )));
    }
    Ok(match shape {
        Shape::Linear => x,
        Shape::Emax { ed50 } => x / (x + ed50),
        Shape::Exponential { delta } => libm::expm1(x / delta),
        Shape::Logistic { ed50, delta } => 1.0 / (1.0 + libm::exp((ed50 - x) / delta)),
        Shape::Beta {
            delta1,
            delta2,
            scal,
        } => {
            if x > *scal {
                return Err(Error::InvalidArgument(format!(
                    "dose {x} exceeds the beta shape scale {scal}"
                )));
            }
            if x == 0.0 || x == *scal {
                0.0
            } else {
                let u = x / scal;
                libm::exp(
                    beta_log_normalizer(*delta1, *delta2)
                        + delta1 * libm::log(u)
                        + delta2 * libm::log(1.0 - u),
                )
            }
        }
    })
}

/// A full dose-response curve `f(x) = theta0 + theta1 f0(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseResponseModel {
    /// Placebo-level parameter.
    pub theta0: f64,
    /// Scale parameter multiplying the standardized shape.
    pub theta1: f64,
    /// Standardized shape with its nonlinear parameters.
    pub shape: Shape,
}

impl DoseResponseModel {
    /// Family tag.
    pub fn family(&self) -> ShapeFamily {
        self.shape.family()
    }

    /// Model response at dose `x`.
    pub fn response(&self, x: f64) -> Result<f64> {
        Ok(self.theta0 + self.theta1 * standardized_response(&self.shape, x)?)
    }

    /// Effect over placebo, `f(x) - f(0)`; `theta0` cancels.
    pub fn effect(&self, x: f64) -> Result<f64> {
        let f0 = standardized_response(&self.shape, 0.0)?;
        Ok(self.theta1 * (standardized_response(&self.shape, x)? - f0))
    }

    /// Responses at each dose of a design.
    pub fn mean_vector(&self, design: &DoseDesign) -> Result<DVector<f64>> {
        let mut mu = DVector::zeros(design.n_doses());
        for (i, &d) in design.doses.iter().enumerate() {
            mu[i] = self.response(d)?;
        }
        Ok(mu)
    }
}

/// Dose grid with per-dose group sizes; placebo (dose zero) comes first.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseDesign {
    /// Strictly increasing doses starting at zero.
    pub doses: Vec<f64>,
    /// Subjects allocated to each dose.
    pub n_per_dose: Vec<usize>,
}

impl DoseDesign {
    /// Validate and build a design.
    pub fn new(doses: Vec<f64>, n_per_dose: Vec<usize>) -> Result<Self> {
        if doses.len() < 2 {
            return Err(Error::InvalidArgument(
                "a dose design needs at least two doses".into(),
            ));
        }
        if doses.len() != n_per_dose.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} doses but {} group sizes",
                doses.len(),
                n_per_dose.len()
            )));
        }
        if doses[0] != 0.0 {
            return Err(Error::InvalidArgument(
                "the first dose must be placebo (zero)".into(),
            ));
        }
        if doses.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "doses must be strictly increasing".into(),
            ));
        }
        if n_per_dose.iter().any(|&n| n == 0) {
            return Err(Error::InvalidArgument(
                "every dose group needs at least one subject".into(),
            ));
        }
        Ok(Self { doses, n_per_dose })
    }

    /// Same group size at every dose.
    pub fn balanced(doses: Vec<f64>, n: usize) -> Result<Self> {
        let len = doses.len();
        Self::new(doses, alloc::vec![n; len])
    }

    /// Number of dose groups.
    pub fn n_doses(&self) -> usize {
        self.doses.len()
    }

    /// Total number of subjects.
    pub fn n_total(&self) -> usize {
        self.n_per_dose.iter().sum()
    }

    /// Largest dose.
    pub fn max_dose(&self) -> f64 {
        *self.doses.last().expect("validated nonempty")
    }

    /// Smallest positive dose.
    pub fn min_positive_dose(&self) -> f64 {
        self.doses[1]
    }
}

/// One elicited statement: the standardized shape reaches `fraction` of its
/// maximum at `dose`. A fraction of exactly one marks the dose of the
/// maximum itself (used by the beta shape).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuessConstraint {
    /// Fraction of the maximum effect, in `(0, 1]`.
    pub fraction: f64,
    /// Dose at which that fraction is attained.
    pub dose: f64,
}

/// Convert guess statements into a full dose-response model.
///
/// The number of constraints must match the family's nonlinear parameter
/// count. After the shape is pinned down, `theta1` scales the maximum
/// effect over `[0, max dose]` to `max_effect` and `theta0` anchors the
/// placebo response at `e0`.
pub fn params_from_guesses(
    family: ShapeFamily,
    constraints: &[GuessConstraint],
    e0: f64,
    max_effect: f64,
    doses: &[f64],
) -> Result<DoseResponseModel> {
    if doses.is_empty() {
        return Err(Error::EmptyInput("dose grid"));
    }
    let max_dose = doses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max_dose > 0.0) {
        return Err(Error::InvalidArgument(
            "the dose grid needs a positive maximum dose".into(),
        ));
    }
    if constraints.len() != family.n_nonlinear() {
        return Err(Error::InvalidArgument(format!(
            "{family} needs {} constraints, got {}",
            family.n_nonlinear(),
            constraints.len()
        )));
    }
    for c in constraints {
        if !(c.fraction > 0.0 && c.fraction <= 1.0) || !(c.dose > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "constraint fraction must be in (0, 1] and dose positive, got {c:?}"
            )));
        }
    }

    let shape = match family {
        ShapeFamily::Linear => Shape::Linear,
        ShapeFamily::Emax => {
            let c = constraints[0];
            // f0(d) = p on the (0, 1) scale: ed50 = d (1 - p) / p.
            Shape::Emax {
                ed50: c.dose * (1.0 - c.fraction) / c.fraction,
            }
        }
        ShapeFamily::Exponential => {
            let c = constraints[0];
            Shape::Exponential {
                delta: solve_exponential_rate(c.fraction, c.dose, max_dose)?,
            }
        }
        ShapeFamily::Logistic => {
            // Two absolute-level statements give a linear system in
            // (ed50, delta) on the logit scale.
            let (a, b) = (constraints[0], constraints[1]);
            if a.fraction == b.fraction || a.dose == b.dose {
                return Err(Error::InvalidArgument(
                    "logistic guesses need two distinct constraints".into(),
                ));
            }
            let logit = |p: f64| libm::log(p / (1.0 - p));
            if a.fraction == 1.0 || b.fraction == 1.0 {
                return Err(Error::InvalidArgument(
                    "logistic constraints must have fractions strictly below one".into(),
                ));
            }
            let delta = (b.dose - a.dose) / (logit(b.fraction) - logit(a.fraction));
            if !(delta > 0.0 && delta.is_finite()) {
                return Err(Error::RootFinding(format!(
                    "logistic guesses are inconsistent (delta = {delta})"
                )));
            }
            let ed50 = a.dose - delta * logit(a.fraction);
            if !(ed50 > 0.0) {
                return Err(Error::RootFinding(format!(
                    "logistic guesses are inconsistent (ed50 = {ed50})"
                )));
            }
            Shape::Logistic { ed50, delta }
        }
        ShapeFamily::Beta => {
            // One constraint pins the mode (fraction exactly one), the
            // other an intermediate level.
            let scal = 1.2 * max_dose;
            let mode = constraints
                .iter()
                .find(|c| c.fraction == 1.0)
                .ok_or_else(|| {
                    Error::InvalidArgument(
                        "beta guesses need one constraint with fraction 1 marking the mode".into(),
                    )
                })?;
            let value = constraints
                .iter()
                .find(|c| c.fraction < 1.0)
                .ok_or_else(|| {
                    Error::InvalidArgument(
                        "beta guesses need one constraint with fraction below 1".into(),
                    )
                })?;
            if !(mode.dose < scal) {
                return Err(Error::InvalidArgument(
                    "the beta mode must lie below the shape scale".into(),
                ));
            }
            solve_beta_shape(mode.dose, value.fraction, value.dose, scal)?
        }
    };

    let f0_at = |x: f64| standardized_response(&shape, x);
    let f0_zero = f0_at(0.0)?;
    // Span of the standardized shape over [0, max dose].
    let f0_peak = match shape.mode() {
        Some(m) if m <= max_dose => 1.0,
        _ => f0_at(max_dose)?,
    };
    let span = f0_peak - f0_zero;
    if !(span > 0.0) {
        return Err(Error::RootFinding(
            "standardized shape has no positive span over the dose range".into(),
        ));
    }
    let theta1 = max_effect / span;
    let theta0 = e0 - theta1 * f0_zero;
    Ok(DoseResponseModel {
        theta0,
        theta1,
        shape,
    })
}

/// Solve `(exp(d/delta) - 1) = p (exp(dmax/delta) - 1)` for the exponential
/// rate by bisection. The ratio increases from 0 towards `d / dmax` as
/// `delta` grows, so a root exists iff `p < d / dmax`.
fn solve_exponential_rate(p: f64, d: f64, dmax: f64) -> Result<f64> {
    if !(d < dmax) {
        return Err(Error::InvalidArgument(
            "exponential guess dose must lie below the maximum dose".into(),
        ));
    }
    if p >= d / dmax {
        return Err(Error::RootFinding(format!(
            "no exponential rate reaches fraction {p} at dose {d} (limit {})",
            d / dmax
        )));
    }
    let ratio = |delta: f64| -> f64 {
        let a = d / delta;
        let b = dmax / delta;
        if b > 700.0 {
            // Both exponentials overflow; the ratio collapses to
            // exp((d - dmax)/delta).
            libm::exp(a - b)
        } else {
            libm::expm1(a) / libm::expm1(b)
        }
    };
    let mut lo = dmax * 1e-6;
    let mut hi = dmax;
    let mut tries = 0;
    while ratio(hi) < p {
        hi *= 2.0;
        tries += 1;
        if tries > 200 {
            return Err(Error::RootFinding(
                "exponential rate bracket did not close".into(),
            ));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Pin the beta exponents from a mode dose plus one level statement:
/// `delta2 / delta1` follows from the mode, then bisection matches the
/// level. The shape value at a fixed non-mode dose decreases from 1
/// towards 0 as `delta1` grows, so the root is unique.
fn solve_beta_shape(mode_dose: f64, p: f64, d: f64, scal: f64) -> Result<Shape> {
    let ratio = (scal - mode_dose) / mode_dose;
    let value = |d1: f64| -> Result<f64> {
        standardized_response(
            &Shape::Beta {
                delta1: d1,
                delta2: d1 * ratio,
                scal,
            },
            d,
        )
    };
    let (mut lo, mut hi) = (1e-4, 1e3);
    if !(value(lo)? > p && value(hi)? < p) {
        return Err(Error::RootFinding(format!(
            "no beta exponent matches fraction {p} at dose {d}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if value(mid)? > p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    let d1 = 0.5 * (lo + hi);
    Ok(Shape::Beta {
        delta1: d1,
        delta2: d1 * ratio,
        scal,
    })
}

/// Result of a minimum-effective-dose search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedEstimate {
    /// The estimated dose, or `None` when the effect never attains the
    /// margin anywhere.
    pub dose: Option<f64>,
    /// Set when the crossing lies beyond the dose range and the estimate
    /// was clamped to its boundary.
    pub clamped: bool,
}

impl MedEstimate {
    /// Whether a dose (possibly clamped) was found.
    pub fn reached(&self) -> bool {
        self.dose.is_some()
    }
}

/// Smallest dose in `(0, max dose]` whose effect over placebo reaches
/// `delta`.
///
/// A 1000-point grid over the dose range brackets the first crossing of
/// `f(x) - f(0) = delta`, which bisection then refines to 1e-6 in dose.
/// When the curve never reaches the margin inside the range, the estimate
/// is clamped to the maximum dose if the model's asymptotic effect would
/// eventually exceed `delta`, and reported as not reached otherwise.
pub fn estimate_med(
    model: &DoseResponseModel,
    delta: f64,
    design: &DoseDesign,
) -> Result<MedEstimate> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "the clinical margin must be positive, got {delta}"
        )));
    }
    let max_dose = design.max_dose();
    let h = |x: f64| -> Result<f64> { Ok(model.effect(x)? - delta) };

    const GRID: usize = 1000;
    let mut prev_x = 0.0;
    for k in 1..=GRID {
        let x = max_dose * k as f64 / GRID as f64;
        if h(x)? >= 0.0 {
            // Bisection on [prev_x, x]; h(prev_x) < 0.
            let (mut lo, mut hi) = (prev_x, x);
            while hi - lo > 1e-6 {
                let mid = 0.5 * (lo + hi);
                if h(mid)? >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(MedEstimate {
                dose: Some(0.5 * (lo + hi)),
                clamped: false,
            });
        }
        prev_x = x;
    }

    // Not attained inside the range: does the model ever get there?
    let sup_effect = if model.theta1 > 0.0 {
        match model.shape {
            Shape::Linear | Shape::Exponential { .. } => f64::INFINITY,
            Shape::Emax { .. } | Shape::Beta { .. } => model.theta1,
            Shape::Logistic { .. } => {
                model.theta1 * (1.0 - standardized_response(&model.shape, 0.0)?)
            }
        }
    } else {
        0.0
    };
    if sup_effect > delta {
        Ok(MedEstimate {
            dose: Some(max_dose),
            clamped: true,
        })
    } else {
        Ok(MedEstimate {
            dose: None,
            clamped: false,
        })
    }
}
