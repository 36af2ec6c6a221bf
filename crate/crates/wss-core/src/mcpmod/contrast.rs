//! Optimal contrasts and the multiplicity-adjusted trend test.
//!
//! For candidate mean vector `mu0` and covariance `S` of the dose-level
//! estimates, the contrast maximizing the trend-test noncentrality is
//! `c ∝ S^{-1} (mu0 - kappa 1)` with `kappa = mu0' S^{-1} 1 / 1' S^{-1} 1`;
//! it automatically sums to zero and is normalized to unit length here. The
//! trend test compares the largest signed statistic
//! `z_m = c_m' mu_hat / sqrt(c_m' S_hat c_m)` against the upper `alpha`
//! quantile of the maximum of a multivariate normal vector with the
//! contrasts' correlation matrix, estimated once from a fixed-seed Monte
//! Carlo draw pool shared across replicates.

use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Default number of Monte Carlo draws behind critical values.
pub const DEFAULT_CRITICAL_DRAWS: usize = 100_000;

/// Optimal contrast rows (one per candidate model) and their correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalContrasts {
    /// `M x D` matrix of unit-norm, zero-sum contrast rows.
    pub weights: DMatrix<f64>,
    /// `M x M` correlation matrix of the contrast statistics.
    pub correlation: DMatrix<f64>,
}

impl OptimalContrasts {
    /// Number of candidate models.
    pub fn n_models(&self) -> usize {
        self.weights.nrows()
    }

    /// One contrast row.
    pub fn row(&self, m: usize) -> DVector<f64> {
        self.weights.row(m).transpose()
    }
}

/// Compute the optimal contrast for each candidate mean vector.
///
/// Rows are scaled to unit Euclidean norm and oriented so that
/// `c' mu0 >= 0`. Fails if `S` is not positive definite or a candidate
/// mean is constant across doses (its contrast would vanish).
pub fn optimal_contrasts(mu0: &[DVector<f64>], s: &DMatrix<f64>) -> Result<OptimalContrasts> {
    if mu0.is_empty() {
        return Err(Error::EmptyInput("candidate mean vectors"));
    }
    let d = s.nrows();
    if s.ncols() != d || mu0.iter().any(|m| m.len() != d) {
        return Err(Error::DimensionMismatch(
            "candidate means and covariance must share the dose dimension".into(),
        ));
    }
    let chol = Cholesky::new(s.clone()).ok_or(Error::NotPositiveDefinite(
        "covariance of the dose-level estimates",
    ))?;
    let ones = DVector::from_element(d, 1.0);
    let s_inv_one = chol.solve(&ones);
    let denom = ones.dot(&s_inv_one);

    let m_count = mu0.len();
    let mut weights = DMatrix::zeros(m_count, d);
    for (m, mean) in mu0.iter().enumerate() {
        let kappa = mean.dot(&s_inv_one) / denom;
        let mut c = chol.solve(&(mean - &ones * kappa));
        let norm = c.norm();
        if !(norm > 1e-12) {
            return Err(Error::InvalidArgument(
                "a candidate mean is constant across doses; its contrast vanishes".into(),
            ));
        }
        c /= norm;
        if c.dot(mean) < 0.0 {
            c = -c;
        }
        weights.row_mut(m).copy_from(&c.transpose());
    }

    // Correlation of the contrast statistics under covariance S.
    let sc = &weights * s; // M x D, row m = (S c_m)'
    let mut correlation = DMatrix::zeros(m_count, m_count);
    for a in 0..m_count {
        for b in 0..m_count {
            correlation[(a, b)] = sc.row(a).dot(&weights.row(b));
        }
    }
    for a in 0..m_count {
        let va = correlation[(a, a)];
        if !(va > 0.0) {
            return Err(Error::NotPositiveDefinite("contrast variance"));
        }
    }
    let scale: Vec<f64> = (0..m_count)
        .map(|a| 1.0 / libm::sqrt(correlation[(a, a)]))
        .collect();
    for a in 0..m_count {
        for b in 0..m_count {
            correlation[(a, b)] *= scale[a] * scale[b];
        }
    }
    for a in 0..m_count {
        correlation[(a, a)] = 1.0;
    }
    Ok(OptimalContrasts {
        weights,
        correlation,
    })
}

/// Fixed pool of standard normal draws used to turn a contrast correlation
/// matrix into a critical value for the maximum statistic.
///
/// The pool is generated once from a caller-owned stream and reused across
/// replicates, making critical values a deterministic function of the
/// correlation matrix given the seed.
#[derive(Debug, Clone)]
pub struct MaxZSampler {
    draws: Vec<f64>, // n_draws blocks of n_models values
    n_models: usize,
    n_draws: usize,
}

impl MaxZSampler {
    /// Pre-generate `n_draws` independent standard normal vectors of
    /// dimension `n_models`.
    pub fn new<R: Rng + ?Sized>(n_models: usize, n_draws: usize, rng: &mut R) -> Result<Self> {
        if n_models == 0 || n_draws == 0 {
            return Err(Error::EmptyInput("max-statistic draw pool"));
        }
        let mut draws = Vec::with_capacity(n_models * n_draws);
        for _ in 0..n_models * n_draws {
            draws.push(StandardNormal.sample(rng));
        }
        Ok(Self {
            draws,
            n_models,
            n_draws,
        })
    }

    /// Upper `alpha` quantile of `max_m Z_m` where `Z` is multivariate
    /// normal with the given correlation matrix.
    ///
    /// The correlation matrix is factored by symmetric eigendecomposition
    /// with negative eigenvalues clamped to zero, so perfectly correlated
    /// (singular) contrast sets are handled exactly.
    pub fn critical_value(&self, correlation: &DMatrix<f64>, alpha: f64) -> Result<f64> {
        let m = self.n_models;
        if correlation.shape() != (m, m) {
            return Err(Error::DimensionMismatch(
                "correlation dimension differs from the sampler's".into(),
            ));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(
                "significance level must lie in (0, 1)".into(),
            ));
        }
        let eig = correlation.clone().symmetric_eigen();
        let mut factor = eig.eigenvectors.clone();
        for j in 0..m {
            let lam = eig.eigenvalues[j].max(0.0);
            let s = libm::sqrt(lam);
            for i in 0..m {
                factor[(i, j)] *= s;
            }
        }

        let mut maxima = Vec::with_capacity(self.n_draws);
        for d in 0..self.n_draws {
            let eps = &self.draws[d * m..(d + 1) * m];
            let mut best = f64::NEG_INFINITY;
            for i in 0..m {
                let mut z = 0.0;
                for j in 0..m {
                    z += factor[(i, j)] * eps[j];
                }
                if z > best {
                    best = z;
                }
            }
            maxima.push(best);
        }
        maxima.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite maxima"));
        let idx = (libm::ceil((1.0 - alpha) * self.n_draws as f64) as usize)
            .saturating_sub(1)
            .min(self.n_draws - 1);
        Ok(maxima[idx])
    }
}

/// Outcome of the trend-test step.
#[derive(Debug, Clone, PartialEq)]
pub struct McpResult {
    /// Signed contrast statistics, one per candidate model.
    pub z_stats: Vec<f64>,
    /// Multiplicity-adjusted critical value.
    pub critical_value: f64,
    /// Whether any statistic exceeded the critical value.
    pub signal: bool,
    /// Indices of candidates whose statistic exceeded it.
    pub significant: Vec<usize>,
}

/// Run the trend test: signed statistics per candidate against the
/// max-statistic critical value.
///
/// `s_hat` must be positive definite; a failed factorization aborts the
/// step (study drivers record the replicate as non-convergent).
pub fn mcp_step(
    mu_hat: &DVector<f64>,
    s_hat: &DMatrix<f64>,
    contrasts: &OptimalContrasts,
    alpha: f64,
    sampler: &MaxZSampler,
) -> Result<McpResult> {
    let d = mu_hat.len();
    if s_hat.shape() != (d, d) || contrasts.weights.ncols() != d {
        return Err(Error::DimensionMismatch(
            "estimate, covariance and contrasts must share the dose dimension".into(),
        ));
    }
    Cholesky::new(s_hat.clone()).ok_or(Error::NotPositiveDefinite(
        "estimated covariance in the trend test",
    ))?;

    let m_count = contrasts.n_models();
    let mut z_stats = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let c = contrasts.row(m);
        let var = c.dot(&(s_hat * &c));
        if !(var > 0.0) {
            return Err(Error::NotPositiveDefinite("contrast variance"));
        }
        z_stats.push(c.dot(mu_hat) / libm::sqrt(var));
    }
    let critical_value = sampler.critical_value(&contrasts.correlation, alpha)?;
    let significant: Vec<usize> = (0..m_count)
        .filter(|&m| z_stats[m] > critical_value)
        .collect();
    Ok(McpResult {
        signal: !significant.is_empty(),
        z_stats,
        critical_value,
        significant,
    })
}
