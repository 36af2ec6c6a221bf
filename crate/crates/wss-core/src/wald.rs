//! Wald-type statistics, partitioned-information identities, and matrix
//! distances.
//!
//! Five test variants share the quadratic form
//! `W = (C b - C b0)' {C S C'}^{-1} (C b - C b0)`:
//! the estimator supplies `b` and the covariance choice supplies `S`
//! (inverse information or the second-order matrix). Under the null
//! hypothesis `C beta = C beta0` the statistic is chi-square with as many
//! degrees of freedom as `C` has rows, up to an error of order `n^{-1}`.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector};

use crate::chisq::ChiSquared;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, FitResult};
use crate::weibull::{fisher_information_from_weights, weight_set, ModelSpec};

/// The five estimation-and-covariance strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// MLE with inverse Fisher information.
    Mle,
    /// MLE with the second-order covariance.
    Mle2,
    /// Bias-corrected estimator with inverse Fisher information.
    Bce,
    /// Bias-corrected estimator with the second-order covariance.
    Bce2,
    /// Firth estimator with inverse Fisher information.
    Firth,
}

impl Strategy {
    /// All five strategies in reporting order.
    pub const ALL: [Strategy; 5] = [
        Strategy::Mle,
        Strategy::Mle2,
        Strategy::Bce,
        Strategy::Bce2,
        Strategy::Firth,
    ];

    /// The estimator this strategy fits.
    pub fn estimator(self) -> EstimatorKind {
        match self {
            Strategy::Mle | Strategy::Mle2 => EstimatorKind::Mle,
            Strategy::Bce | Strategy::Bce2 => EstimatorKind::Bce,
            Strategy::Firth => EstimatorKind::Firth,
        }
    }

    /// The covariance the strategy pairs with the estimate.
    pub fn covariance(self) -> CovarianceChoice {
        match self {
            Strategy::Mle2 | Strategy::Bce2 => CovarianceChoice::Second,
            _ => CovarianceChoice::First,
        }
    }

    fn from_parts(kind: EstimatorKind, choice: CovarianceChoice) -> Result<Self> {
        match (kind, choice) {
            (EstimatorKind::Mle, CovarianceChoice::First) => Ok(Strategy::Mle),
            (EstimatorKind::Mle, CovarianceChoice::Second) => Ok(Strategy::Mle2),
            (EstimatorKind::Bce, CovarianceChoice::First) => Ok(Strategy::Bce),
            (EstimatorKind::Bce, CovarianceChoice::Second) => Ok(Strategy::Bce2),
            (EstimatorKind::Firth, CovarianceChoice::First) => Ok(Strategy::Firth),
            (EstimatorKind::Firth, CovarianceChoice::Second) => Err(Error::InvalidArgument(
                "the Firth strategy pairs only with the first-order covariance".into(),
            )),
        }
    }
}

impl core::fmt::Display for Strategy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Strategy::Mle => write!(f, "MLE"),
            Strategy::Mle2 => write!(f, "MLE2"),
            Strategy::Bce => write!(f, "BCE"),
            Strategy::Bce2 => write!(f, "BCE2"),
            Strategy::Firth => write!(f, "Firth"),
        }
    }
}

/// Which covariance matrix of a [`FitResult`] a test should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceChoice {
    /// Inverse Fisher information.
    First,
    /// Second-order covariance.
    Second,
}

/// Contrast matrix and null values: the hypothesis `C beta = C beta0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastSpec {
    /// `m x p` contrast matrix with `m <= p`.
    pub matrix: DMatrix<f64>,
    /// Null coefficient vector `beta0` (length `p`).
    pub null_beta: DVector<f64>,
}

impl ContrastSpec {
    /// Validate shapes: `m <= p` rows, null vector of length `p`.
    pub fn new(matrix: DMatrix<f64>, null_beta: DVector<f64>) -> Result<Self> {
        let (m, p) = matrix.shape();
        if m == 0 || m > p {
            return Err(Error::DimensionMismatch(format!(
                "contrast must have 1 <= m <= p rows, got m = {m}, p = {p}"
            )));
        }
        if null_beta.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "null vector has length {}, contrast has p = {p}",
                null_beta.len()
            )));
        }
        Ok(Self { matrix, null_beta })
    }

    /// Contrast selecting the first `q` coordinates of a `p`-vector.
    pub fn first_coordinates(q: usize, p: usize, null_beta: DVector<f64>) -> Result<Self> {
        if q == 0 || q > p {
            return Err(Error::DimensionMismatch(format!(
                "subset size must satisfy 1 <= q <= p, got q = {q}, p = {p}"
            )));
        }
        let mut c = DMatrix::zeros(q, p);
        for i in 0..q {
            c[(i, i)] = 1.0;
        }
        Self::new(c, null_beta)
    }

    /// Number of restrictions `m`.
    pub fn df(&self) -> usize {
        self.matrix.nrows()
    }
}

/// A computed Wald test.
#[derive(Debug, Clone, PartialEq)]
pub struct WaldResult {
    /// Strategy tag derived from the fit kind and covariance choice.
    pub strategy: Strategy,
    /// The quadratic-form statistic (nonnegative).
    pub statistic: f64,
    /// Degrees of freedom: the number of contrast rows.
    pub df: usize,
    /// Upper chi-square tail probability of the statistic.
    pub p_value: f64,
}

/// Compute the Wald statistic for a fitted model and a contrast.
///
/// `CovarianceChoice::Second` requires [`FitResult::cov_second`] to be
/// filled. A contrast covariance that fails to factor is reported as
/// [`Error::TestUndefined`]: studies record it rather than abort.
pub fn wald_test(
    fit: &FitResult,
    choice: CovarianceChoice,
    contrast: &ContrastSpec,
) -> Result<WaldResult> {
    let strategy = Strategy::from_parts(fit.kind, choice)?;
    let p = fit.beta.len();
    if contrast.matrix.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "contrast has p = {}, fit has p = {p}",
            contrast.matrix.ncols()
        )));
    }
    let sigma_mat = match choice {
        CovarianceChoice::First => &fit.cov_first,
        CovarianceChoice::Second => fit.cov_second.as_ref().ok_or_else(|| {
            Error::InvalidArgument(
                "second-order covariance requested but not attached to the fit".into(),
            )
        })?,
    };
    let diff = &contrast.matrix * (&fit.beta - &contrast.null_beta);
    let cvc = &contrast.matrix * sigma_mat * contrast.matrix.transpose();
    let chol = Cholesky::new(cvc).ok_or(Error::TestUndefined)?;
    let statistic = diff.dot(&chol.solve(&diff));
    let df = contrast.df();
    let p_value = ChiSquared::new(df)?.sf(statistic);
    Ok(WaldResult {
        strategy,
        statistic,
        df,
        p_value,
    })
}

/// Blocks of the Fisher information under the split
/// `beta = (beta_1, beta_2)` with `q = dim(beta_1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedInformation {
    /// `K_11 = sigma^{-2} X_1' W X_1`.
    pub k11: DMatrix<f64>,
    /// `K_12 = sigma^{-2} X_1' W X_2`.
    pub k12: DMatrix<f64>,
    /// `K_22 = sigma^{-2} X_2' W X_2`.
    pub k22: DMatrix<f64>,
    /// `sigma^{-2} R' W R` with `R = X_1 - X_2 C` and
    /// `C = (X_2' W X_2)^{-1} X_2' W X_1`: the inverse of the leading
    /// block of `K^{-1}`, computed by weighted regression of the columns
    /// of `X_1` on `X_2`.
    pub k11_inv_via_r: DMatrix<f64>,
}

/// Partition the information at `beta` after the first `q` coefficients.
pub fn partitioned_information(
    spec: &ModelSpec,
    beta: &DVector<f64>,
    q: usize,
) -> Result<PartitionedInformation> {
    let p = spec.p();
    if q == 0 || q >= p {
        return Err(Error::DimensionMismatch(format!(
            "partition size must satisfy 1 <= q < p, got q = {q}, p = {p}"
        )));
    }
    let weights = weight_set(spec, beta)?;
    let k = fisher_information_from_weights(spec, &weights)?;
    let k11 = k.view((0, 0), (q, q)).into_owned();
    let k12 = k.view((0, q), (q, p - q)).into_owned();
    let k22 = k.view((q, q), (p - q, p - q)).into_owned();

    let x = spec.design.matrix();
    let n = spec.n();
    let x1 = x.view((0, 0), (n, q)).into_owned();
    let x2 = x.view((0, q), (n, p - q)).into_owned();
    let w = &weights.w;
    let wx1 = scale_rows(&x1, w);
    let wx2 = scale_rows(&x2, w);
    let x2wx2 = x2.transpose() * &wx2;
    let chol = Cholesky::new(x2wx2).ok_or(Error::SingularInformation(
        "X2' W X2 not positive definite in partition",
    ))?;
    let c = chol.solve(&(x2.transpose() * &wx1)); // (p-q) x q
    let r = &x1 - &x2 * &c;
    let wr = scale_rows(&r, w);
    let k11_inv_via_r = r.transpose() * wr / (spec.sigma * spec.sigma);
    Ok(PartitionedInformation {
        k11,
        k12,
        k22,
        k11_inv_via_r,
    })
}

fn scale_rows(m: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[(i, j)] *= w[i];
        }
    }
    out
}

/// Three scalar distances between equal-shaped matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixDistances {
    /// Largest absolute diagonal difference.
    pub d1: f64,
    /// Frobenius norm of the difference.
    pub d2: f64,
    /// Entrywise L1 distance.
    pub d3: f64,
}

/// Distances `d1 = max |diag(A - B)|, d2 = sqrt(tr[(A-B)'(A-B)]),
/// d3 = sum |a_ij - b_ij|`.
pub fn matrix_distances(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<MatrixDistances> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch(format!(
            "matrix shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut d1: f64 = 0.0;
    let mut frob = 0.0;
    let mut d3 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let d = a[(i, j)] - b[(i, j)];
            frob += d * d;
            d3 += d.abs();
            if i == j {
                d1 = d1.max(d.abs());
            }
        }
    }
    Ok(MatrixDistances {
        d1,
        d2: libm::sqrt(frob),
        d3,
    })
}

/// All pairwise combinations used in reports: distances of one matrix
/// against a list, in order.
pub fn distances_against<'a>(
    reference: &DMatrix<f64>,
    candidates: impl IntoIterator<Item = &'a DMatrix<f64>>,
) -> Result<Vec<MatrixDistances>> {
    candidates
        .into_iter()
        .map(|c| matrix_distances(reference, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{fit_mle, FitOptions};
    use crate::weibull::{simulate_sample, Censoring, CovariateDesign};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn fitted_example(n: usize, p: usize, seed: u64) -> (ModelSpec, FitResult) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, j| {
            if j == 0 {
                1.0
            } else {
                StandardNormal.sample(&mut rng)
            }
        });
        let spec = ModelSpec::new(
            CovariateDesign::new(x).unwrap(),
            1.0,
            Censoring::type_i_common(4.0, n),
        )
        .unwrap();
        let beta = DVector::from_fn(p, |j, _| 0.4 - 0.2 * j as f64);
        let sample = simulate_sample(&spec, &beta, &mut rng).unwrap();
        let fit = fit_mle(&spec, &sample, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        (spec, fit)
    }

    #[test]
    fn zero_difference_gives_zero_statistic_and_unit_p() {
        let (_, fit) = fitted_example(60, 2, 3);
        let contrast =
            ContrastSpec::first_coordinates(2, 2, fit.beta.clone()).unwrap();
        let res = wald_test(&fit, CovarianceChoice::First, &contrast).unwrap();
        assert_abs_diff_eq!(res.statistic, 0.0, epsilon = 1e-20);
        assert_abs_diff_eq!(res.p_value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unit_variance_quantile_example() {
        // m = 1, difference 1.959964, variance 1: W = 3.8415, p = 0.05.
        let fit = FitResult {
            kind: EstimatorKind::Mle,
            beta: DVector::from_element(1, 1.959964),
            cov_first: DMatrix::from_element(1, 1, 1.0),
            cov_second: None,
            converged: true,
            failure: None,
            iterations: 0,
            final_score_norm: 0.0,
            diagnostics: Default::default(),
        };
        let contrast = ContrastSpec::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 0.0),
        )
        .unwrap();
        let res = wald_test(&fit, CovarianceChoice::First, &contrast).unwrap();
        assert_abs_diff_eq!(res.statistic, 3.841459, epsilon = 1e-5);
        assert_abs_diff_eq!(res.p_value, 0.05, epsilon = 1e-6);
    }

    #[test]
    fn strategy_tags_follow_fit_and_covariance() {
        let (spec, fit) = fitted_example(50, 2, 9);
        let fit = fit.with_second_order(&spec).unwrap();
        let contrast =
            ContrastSpec::first_coordinates(1, 2, DVector::zeros(2)).unwrap();
        let first = wald_test(&fit, CovarianceChoice::First, &contrast).unwrap();
        assert_eq!(first.strategy, Strategy::Mle);
        let second = wald_test(&fit, CovarianceChoice::Second, &contrast).unwrap();
        assert_eq!(second.strategy, Strategy::Mle2);
        assert_eq!(Strategy::Mle2.estimator(), EstimatorKind::Mle);
        assert_eq!(Strategy::Bce2.covariance(), CovarianceChoice::Second);
    }

    #[test]
    fn firth_with_second_order_covariance_is_rejected() {
        let (spec, _) = fitted_example(50, 2, 10);
        let mut fit = crate::estimators::fit_firth(
            &spec,
            &simulate_sample(
                &spec,
                &DVector::from_column_slice(&[0.4, 0.2]),
                &mut ChaCha8Rng::seed_from_u64(4),
            )
            .unwrap(),
            &FitOptions::default(),
        )
        .unwrap();
        fit.cov_second = Some(fit.cov_first.clone());
        let contrast = ContrastSpec::first_coordinates(1, 2, DVector::zeros(2)).unwrap();
        assert!(matches!(
            wald_test(&fit, CovarianceChoice::Second, &contrast),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn statistic_invariant_under_contrast_row_scaling() {
        let (_spec, fit) = fitted_example(80, 3, 11);
        let c = DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, 0.5, 0.5, -1.0]);
        let contrast = ContrastSpec::new(c.clone(), DVector::zeros(3)).unwrap();
        let base = wald_test(&fit, CovarianceChoice::First, &contrast).unwrap();
        let mut scaled = c;
        for j in 0..3 {
            scaled[(0, j)] *= 7.5;
            scaled[(1, j)] *= -0.3;
        }
        let contrast2 = ContrastSpec::new(scaled, DVector::zeros(3)).unwrap();
        let res2 = wald_test(&fit, CovarianceChoice::First, &contrast2).unwrap();
        assert_relative_eq!(res2.statistic, base.statistic, max_relative = 1e-10);
    }

    #[test]
    fn subset_statistic_equals_partitioned_form() {
        let (spec, fit) = fitted_example(70, 3, 12);
        let q = 1;
        let null = DVector::from_column_slice(&[0.1, 0.0, 0.0]);
        let contrast = ContrastSpec::first_coordinates(q, 3, null.clone()).unwrap();
        let res = wald_test(&fit, CovarianceChoice::First, &contrast).unwrap();
        let part = partitioned_information(&spec, &fit.beta, q).unwrap();
        let d = fit.beta.rows(0, q) - null.rows(0, q);
        let direct = (d.transpose() * &part.k11_inv_via_r * d)[(0, 0)];
        assert_relative_eq!(res.statistic, direct, max_relative = 1e-10);
    }

    #[test]
    fn orthogonal_partition_reduces_to_leading_block() {
        // X1 and X2 orthogonal under W: the regression coefficient C is 0
        // and {K^11}^{-1} = sigma^{-2} X1' W X1 = K_11.
        let n = 8;
        let x = DMatrix::from_fn(n, 2, |i, j| match j {
            0 => {
                if i < 4 {
                    1.0
                } else {
                    0.0
                }
            }
            _ => {
                if i < 4 {
                    0.0
                } else {
                    1.0
                }
            }
        });
        let spec = ModelSpec::new(
            CovariateDesign::new(x).unwrap(),
            1.3,
            Censoring::TypeII { failures: 6 },
        )
        .unwrap();
        let part = partitioned_information(&spec, &DVector::zeros(2), 1).unwrap();
        assert_relative_eq!(
            (&part.k11_inv_via_r - &part.k11).norm(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn partition_with_intercept_centers_by_weighted_mean() {
        // q = p - 1 with the intercept in X2: R removes the W-weighted mean
        // of each X1 column.
        let n = 9;
        let x = DMatrix::from_fn(n, 2, |i, j| match j {
            0 => i as f64 - 3.0,
            _ => 1.0,
        });
        let spec = ModelSpec::new(
            CovariateDesign::new(x.clone()).unwrap(),
            1.0,
            Censoring::type_i_common(2.5, n),
        )
        .unwrap();
        let beta = DVector::from_column_slice(&[0.2, 0.1]);
        let part = partitioned_information(&spec, &beta, 1).unwrap();
        let w = weight_set(&spec, &beta).unwrap().w;
        let wsum: f64 = w.iter().sum();
        let wmean: f64 = (0..n).map(|i| w[i] * x[(i, 0)]).sum::<f64>() / wsum;
        let expected: f64 = (0..n)
            .map(|i| {
                let r = x[(i, 0)] - wmean;
                w[i] * r * r
            })
            .sum();
        assert_relative_eq!(part.k11_inv_via_r[(0, 0)], expected, max_relative = 1e-12);
    }

    #[test]
    fn distance_trivial_cases() {
        let a = DMatrix::identity(2, 2);
        let same = matrix_distances(&a, &a).unwrap();
        assert_eq!((same.d1, same.d2, same.d3), (0.0, 0.0, 0.0));
        let z = DMatrix::zeros(2, 2);
        let d = matrix_distances(&a, &z).unwrap();
        assert_abs_diff_eq!(d.d1, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.d2, libm::sqrt(2.0), epsilon = 1e-15);
        assert_abs_diff_eq!(d.d3, 2.0, epsilon = 1e-15);
        assert!(matrix_distances(&a, &DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn frobenius_distance_matches_elementwise_sum() {
        let a = DMatrix::from_row_slice(3, 3, &[0.3, -1.2, 0.7, 2.0, 0.1, -0.4, 1.1, 0.9, -2.2]);
        let b = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, -0.7, 0.5, 0.0, 0.4, -1.1, 0.3, 0.8]);
        let d = matrix_distances(&a, &b).unwrap();
        let mut frob = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let e: f64 = a[(i, j)] - b[(i, j)];
                frob += e * e;
            }
        }
        assert_relative_eq!(d.d2, libm::sqrt(frob), max_relative = 1e-12);
    }

    #[test]
    fn singular_contrast_covariance_is_test_undefined() {
        let fit = FitResult {
            kind: EstimatorKind::Mle,
            beta: DVector::from_column_slice(&[1.0, 2.0]),
            cov_first: DMatrix::zeros(2, 2),
            cov_second: None,
            converged: true,
            failure: None,
            iterations: 0,
            final_score_norm: 0.0,
            diagnostics: Default::default(),
        };
        let contrast = ContrastSpec::first_coordinates(2, 2, DVector::zeros(2)).unwrap();
        assert!(matches!(
            wald_test(&fit, CovarianceChoice::First, &contrast),
            Err(Error::TestUndefined)
        ));
    }
}
