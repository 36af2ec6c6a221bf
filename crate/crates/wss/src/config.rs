//! JSON study configuration.
//!
//! One document drives every subcommand; the blocks relevant to the chosen
//! mode must be present, everything else may be omitted. The parsed
//! configuration round-trips exactly through serialization, and its
//! canonical JSON is hashed into the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::mcpmod_study::McpModScenario;
use crate::regression::RegressionScenario;
use crate::scenarios::{CandidateSpec, GuessSpec};

/// What a run does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Fit a dataset from CSV.
    Fit,
    /// Regression-level Monte Carlo study.
    SimRegression,
    /// Dose-finding Monte Carlo study.
    SimMcpmod,
    /// Print optimal contrasts for a candidate set.
    Contrasts,
    /// Evaluate the minimum effective dose of a configured curve.
    Med,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Mode::Fit => "fit",
            Mode::SimRegression => "sim-regression",
            Mode::SimMcpmod => "sim-mcpmod",
            Mode::Contrasts => "contrasts",
            Mode::Med => "med",
        };
        write!(f, "{name}")
    }
}

/// Tabular output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    /// CSV tables plus the JSON report.
    #[default]
    Csv,
    /// JSON report only.
    Json,
}

/// Censoring description for dataset fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CensoringConfig {
    /// No censoring (all weights one).
    None,
    /// Common fixed censoring time.
    Type1 {
        /// The study cutoff time (natural scale).
        time: f64,
    },
    /// Stop after a fixed number of failures.
    Type2 {
        /// Failure count.
        failures: usize,
    },
    /// Hybrid scheme: cutoff time, failure count, and mixing probability.
    Hybrid {
        /// The study cutoff time.
        time: f64,
        /// Failure count.
        failures: usize,
        /// Mixing probability in [0, 1].
        q: f64,
    },
}

/// A user-supplied contrast for dataset fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastConfig {
    /// `m x p` contrast matrix, row major.
    pub matrix: Vec<Vec<f64>>,
    /// Null coefficient vector of length `p`.
    pub null: Vec<f64>,
}

/// Configuration of the `fit` mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Known shape parameter.
    pub sigma: f64,
    /// Dataset CSV with columns `y, delta, x1..xp`.
    pub data: PathBuf,
    /// Censoring scheme of the dataset.
    pub censoring: CensoringConfig,
    /// Contrast to test; defaults to the full coefficient vector against
    /// zero.
    #[serde(default)]
    pub contrast: Option<ContrastConfig>,
}

/// Configuration of the `contrasts` mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastsConfig {
    /// Dose grid, placebo first.
    #[serde(default = "default_doses")]
    pub doses: Vec<f64>,
    /// Explicit covariance of the dose-level estimates (row major);
    /// defaults to `I / n`.
    #[serde(default)]
    pub s_matrix: Option<Vec<Vec<f64>>>,
    /// Scaling `n` for the default covariance `I / n`.
    #[serde(default = "default_one")]
    pub n: usize,
    /// Candidate set; defaults to the standard five.
    #[serde(default)]
    pub candidates: Option<Vec<CandidateSpec>>,
    /// Placebo-level response for guess conversion.
    #[serde(default = "default_placebo")]
    pub placebo_response: f64,
    /// Maximum effect over placebo for guess conversion.
    #[serde(default = "default_max_effect")]
    pub max_effect: f64,
}

/// Configuration of the `med` mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedConfig {
    /// Curve description via guess constraints.
    pub candidate: CandidateSpec,
    /// Placebo-level response.
    #[serde(default = "default_placebo")]
    pub e0: f64,
    /// Maximum effect over placebo.
    #[serde(default = "default_max_effect")]
    pub max_effect: f64,
    /// Clinically meaningful margin.
    #[serde(default = "default_margin")]
    pub delta: f64,
    /// Dose grid, placebo first.
    #[serde(default = "default_doses")]
    pub doses: Vec<f64>,
}

fn default_doses() -> Vec<f64> {
    crate::scenarios::DEFAULT_DOSES.to_vec()
}
fn default_one() -> usize {
    1
}
fn default_placebo() -> f64 {
    crate::scenarios::DEFAULT_PLACEBO_RESPONSE
}
fn default_max_effect() -> f64 {
    crate::scenarios::DEFAULT_MAX_EFFECT
}
fn default_margin() -> f64 {
    crate::scenarios::DEFAULT_MED_MARGIN
}
fn default_seed() -> u64 {
    20_260_809
}

/// The full study configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    /// Expected mode; checked against the subcommand when present.
    #[serde(default)]
    pub mode: Option<Mode>,
    /// Master seed for every random stream of the run.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker threads; defaults to available parallelism.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Output format.
    #[serde(default)]
    pub format: OutputFormat,
    /// Output directory.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Also emit raw per-replicate records (CSV) where supported.
    #[serde(default)]
    pub emit_raw: bool,
    /// Block for `fit`.
    #[serde(default)]
    pub fit: Option<FitConfig>,
    /// Block for `sim-regression`.
    #[serde(default)]
    pub regression: Option<RegressionScenario>,
    /// Block for `sim-mcpmod`.
    #[serde(default)]
    pub mcpmod: Option<McpModScenario>,
    /// Block for `contrasts`.
    #[serde(default)]
    pub contrasts: Option<ContrastsConfig>,
    /// Block for `med`.
    #[serde(default)]
    pub med: Option<MedConfig>,
}

impl StudyConfig {
    /// Parse a configuration file.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: StudyConfig = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("cannot parse config {}: {e}", path.display()))?;
        Ok(cfg)
    }

    /// Canonical JSON of the configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            mode: None,
            seed: default_seed(),
            workers: None,
            format: OutputFormat::default(),
            out: None,
            emit_raw: false,
            fit: None,
            regression: None,
            mcpmod: None,
            contrasts: None,
            med: None,
        }
    }
}

/// A single guess constraint helper for building configs in code.
pub fn guess(fraction: f64, dose: f64) -> GuessSpec {
    GuessSpec { fraction, dose }
}
