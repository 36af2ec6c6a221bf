//! Small-sample inference for censored Weibull regression, with an MCP-Mod
//! dose-finding layer on top.
//!
//! The crate provides, for log-linear Weibull (extreme-value) regression with
//! known shape and type I / type II / hybrid right censoring:
//!
//! - likelihood, score, expected weights and Fisher information
//!   ([`weibull`]);
//! - the maximum-likelihood, bias-corrected and Firth estimators together
//!   with second-order covariance matrices ([`estimators`]);
//! - five Wald-type statistics, partitioned-information identities and
//!   matrix distances ([`wald`], [`chisq`]);
//! - the MCP-Mod pipeline: standardized dose-response models, optimal
//!   contrasts, the multiplicity-adjusted trend test, generalized
//!   least-squares curve fitting and minimum-effective-dose estimation
//!   ([`mcpmod`]).
//!
//! Everything here is a pure function of its inputs; random draws are taken
//! from caller-owned RNG streams. The crate is `no_std` (it requires `alloc`)
//! so the numeric core can be embedded anywhere; IO, parallel study drivers
//! and the CLI live in the companion `wss` crate.

#![no_std]
#![warn(missing_docs)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod chisq;
pub mod error;
pub mod estimators;
pub mod mcpmod;
#[cfg(feature = "test-oracles")]
pub mod oracles;
pub mod wald;
pub mod weibull;

pub use error::{Error, Result};
pub use estimators::{
    bce_from_mle, cox_snell_bias, delta_set, fit_bce, fit_firth, fit_mle, second_order_covariance,
    DeltaSet, EstimatorKind, FitDiagnostics, FitFailure, FitOptions, FitResult, Tau,
};
pub use wald::{
    matrix_distances, partitioned_information, wald_test, ContrastSpec, CovarianceChoice,
    MatrixDistances, PartitionedInformation, Strategy, WaldResult,
};
pub use weibull::{
    calibrate_censoring, fisher_information, log_likelihood, observed_information, score,
    simulate_sample, weight_set, CensoredSample, Censoring, CovariateDesign, ModelSpec, WeightSet,
};
