//! Default dose-finding scenario ingredients: the standard candidate set
//! with its guess constraints and the true curves of the simulation
//! scenarios.
//!
//! Placebo response 1.569 with a maximum effect of `2 ln 2` over placebo
//! (a four-fold hazard ratio at shape 0.5) reproduces the usual working
//! parameters: Emax ED50 = 50, exponential rate 22.756, logistic
//! (40.329, 6.976), beta exponents (0.749, 1.049) with scale 120. The
//! clinically meaningful margin defaults to `ln 2` (a halved hazard).

use serde::{Deserialize, Serialize};
use wss_core::mcpmod::{params_from_guesses, DoseResponseModel, GuessConstraint, ShapeFamily};
use wss_core::Result;

/// Default placebo-level response on the log-time scale.
pub const DEFAULT_PLACEBO_RESPONSE: f64 = 1.569;

/// Default maximum effect over placebo: `2 ln 2`.
pub const DEFAULT_MAX_EFFECT: f64 = 2.0 * std::f64::consts::LN_2;

/// Default minimum-effective-dose margin: `ln 2`.
pub const DEFAULT_MED_MARGIN: f64 = std::f64::consts::LN_2;

/// Default dose grid (mg/kg), placebo first.
pub const DEFAULT_DOSES: [f64; 5] = [0.0, 5.0, 25.0, 50.0, 100.0];

/// The dose-response shape generating a simulation scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrueModel {
    /// Flat curve: no dose-response signal.
    Constant,
    /// Emax truth.
    Emax,
    /// Exponential truth.
    Exponential,
    /// Logistic truth.
    Logistic,
    /// Beta truth.
    Beta,
}

impl std::fmt::Display for TrueModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrueModel::Constant => write!(f, "constant"),
            TrueModel::Emax => write!(f, "emax"),
            TrueModel::Exponential => write!(f, "exponential"),
            TrueModel::Logistic => write!(f, "logistic"),
            TrueModel::Beta => write!(f, "beta"),
        }
    }
}

/// Serde-friendly guess constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuessSpec {
    /// Fraction of the maximum effect in `(0, 1]`; exactly 1 marks the
    /// beta mode.
    pub fraction: f64,
    /// Dose at which the fraction is attained.
    pub dose: f64,
}

/// Serde-friendly candidate description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpec {
    /// Model family.
    pub family: FamilyName,
    /// Guess constraints (count must match the family's nonlinear
    /// parameters).
    #[serde(default)]
    pub constraints: Vec<GuessSpec>,
}

/// Serde mirror of the core shape families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    /// Straight line in dose.
    Linear,
    /// Hyperbolic saturation.
    Emax,
    /// Convex growth.
    Exponential,
    /// Sigmoid.
    Logistic,
    /// Unimodal beta shape.
    Beta,
}

impl From<FamilyName> for ShapeFamily {
    fn from(f: FamilyName) -> Self {
        match f {
            FamilyName::Linear => ShapeFamily::Linear,
            FamilyName::Emax => ShapeFamily::Emax,
            FamilyName::Exponential => ShapeFamily::Exponential,
            FamilyName::Logistic => ShapeFamily::Logistic,
            FamilyName::Beta => ShapeFamily::Beta,
        }
    }
}

impl From<ShapeFamily> for FamilyName {
    fn from(f: ShapeFamily) -> Self {
        match f {
            ShapeFamily::Linear => FamilyName::Linear,
            ShapeFamily::Emax => FamilyName::Emax,
            ShapeFamily::Exponential => FamilyName::Exponential,
            ShapeFamily::Logistic => FamilyName::Logistic,
            ShapeFamily::Beta => FamilyName::Beta,
        }
    }
}

/// The standard five-candidate set with its guess constraints.
pub fn default_candidate_specs() -> Vec<CandidateSpec> {
    vec![
        CandidateSpec {
            family: FamilyName::Linear,
            constraints: vec![],
        },
        CandidateSpec {
            family: FamilyName::Emax,
            constraints: vec![GuessSpec {
                fraction: 0.5,
                dose: 50.0,
            }],
        },
        CandidateSpec {
            family: FamilyName::Exponential,
            constraints: vec![GuessSpec {
                fraction: 0.1,
                dose: 50.0,
            }],
        },
        CandidateSpec {
            family: FamilyName::Logistic,
            constraints: vec![
                GuessSpec {
                    fraction: 0.1,
                    dose: 25.0,
                },
                GuessSpec {
                    fraction: 0.8,
                    dose: 50.0,
                },
            ],
        },
        CandidateSpec {
            family: FamilyName::Beta,
            constraints: vec![
                GuessSpec {
                    fraction: 1.0,
                    dose: 50.0,
                },
                GuessSpec {
                    fraction: 0.3,
                    dose: 5.0,
                },
            ],
        },
    ]
}

/// Materialize candidate specs into full curves via guess conversion.
pub fn build_candidates(
    specs: &[CandidateSpec],
    doses: &[f64],
    e0: f64,
    max_effect: f64,
) -> Result<Vec<DoseResponseModel>> {
    specs
        .iter()
        .map(|c| {
            let constraints: Vec<GuessConstraint> = c
                .constraints
                .iter()
                .map(|g| GuessConstraint {
                    fraction: g.fraction,
                    dose: g.dose,
                })
                .collect();
            params_from_guesses(c.family.into(), &constraints, e0, max_effect, doses)
        })
        .collect()
}

/// The true curve of a scenario; `None` for the constant scenario.
pub fn true_curve(
    model: TrueModel,
    doses: &[f64],
    e0: f64,
    max_effect: f64,
) -> Result<Option<DoseResponseModel>> {
    let family = match model {
        TrueModel::Constant => return Ok(None),
        TrueModel::Emax => FamilyName::Emax,
        TrueModel::Exponential => FamilyName::Exponential,
        TrueModel::Logistic => FamilyName::Logistic,
        TrueModel::Beta => FamilyName::Beta,
    };
    let spec = default_candidate_specs()
        .into_iter()
        .find(|c| c.family == family)
        .expect("family present in default candidates");
    Ok(Some(
        build_candidates(&[spec], doses, e0, max_effect)?.remove(0),
    ))
}
