//! Test-support oracles, compiled only with the `test-oracles` feature.
//!
//! Everything here re-derives quantities along routes independent of the
//! production code paths: bias and covariance corrections as explicit
//! cumulant index sums instead of matrix algebra, derivatives by central
//! finite differences instead of closed forms, and polygamma values from
//! recurrence plus asymptotic series. Test suites compare the two routes;
//! nothing in this module is used by the library itself.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::estimators::Tau;
use crate::weibull::{weight_set, ModelSpec};

/// Cumulant tables of the censored log-linear Weibull likelihood at a
/// fixed coefficient vector, driving the index-sum forms of the bias and
/// covariance corrections.
pub struct CumulantOracle {
    sigma: f64,
    x: DMatrix<f64>,
    w: DVector<f64>,
    wp: DVector<f64>,
    wpp: DVector<f64>,
    kinv: DMatrix<f64>,
}

impl CumulantOracle {
    /// Build the tables at `beta`.
    pub fn new(spec: &ModelSpec, beta: &DVector<f64>) -> Result<Self> {
        let weights = weight_set(spec, beta)?;
        let k = crate::weibull::fisher_information_from_weights(spec, &weights)?;
        let kinv = k
            .try_inverse()
            .ok_or(crate::error::Error::SingularInformation("oracle inverse"))?;
        Ok(Self {
            sigma: spec.sigma,
            x: spec.design.matrix().clone(),
            w: weights.w,
            wp: weights.w_prime,
            wpp: weights.w_dprime,
            kinv,
        })
    }

    fn sum3<F: Fn(usize) -> f64>(&self, f: F, r: usize, s: usize, t: usize) -> f64 {
        (0..self.x.nrows())
            .map(|i| f(i) * self.x[(i, r)] * self.x[(i, s)] * self.x[(i, t)])
            .sum()
    }

    fn sum4<F: Fn(usize) -> f64>(&self, f: F, r: usize, s: usize, t: usize, u: usize) -> f64 {
        (0..self.x.nrows())
            .map(|i| f(i) * self.x[(i, r)] * self.x[(i, s)] * self.x[(i, t)] * self.x[(i, u)])
            .sum()
    }

    /// `kappa^{rs}`: negated elements of the inverse information.
    fn inv(&self, r: usize, s: usize) -> f64 {
        -self.kinv[(r, s)]
    }

    /// `kappa_{rst}`.
    fn k3(&self, r: usize, s: usize, t: usize) -> f64 {
        self.sum3(|i| self.w[i], r, s, t) / libm::pow(self.sigma, 3.0)
    }

    /// `kappa_{rs}^{(t)}`.
    fn k3_deriv(&self, r: usize, s: usize, t: usize) -> f64 {
        -self.sum3(|i| self.wp[i], r, s, t) / (self.sigma * self.sigma)
    }

    /// `kappa_{rs,t}` (equals `kappa_{r,st}` because the per-observation
    /// factor does not depend on the index placement).
    fn k3_mixed(&self, r: usize, s: usize, t: usize) -> f64 {
        -self.sum3(|i| self.wp[i] + self.w[i] / self.sigma, r, s, t)
            / (self.sigma * self.sigma)
    }

    /// `kappa_{rs}^{(tu)}`.
    fn k4_deriv2(&self, r: usize, s: usize, t: usize, u: usize) -> f64 {
        -self.sum4(|i| self.wpp[i], r, s, t, u) / (self.sigma * self.sigma)
    }

    /// `kappa_{rst}^{(u)}`.
    fn k4_deriv(&self, r: usize, s: usize, t: usize, u: usize) -> f64 {
        self.sum4(|i| self.wp[i], r, s, t, u) / libm::pow(self.sigma, 3.0)
    }

    /// `kappa_{rs,tu}`.
    fn k4_mixed(&self, r: usize, s: usize, t: usize, u: usize) -> f64 {
        self.sum4(
            |i| 2.0 * self.w[i] + 2.0 * self.sigma * self.wp[i] - self.w[i] * self.w[i],
            r,
            s,
            t,
            u,
        ) / libm::pow(self.sigma, 4.0)
    }

    /// First-order bias by the triple index sum
    /// `B_a = sum_{r,s,t} kappa^{ar} kappa^{st} (kappa_{rs}^{(t)} - kappa_{rst}/2)`.
    pub fn bias(&self) -> DVector<f64> {
        let p = self.x.ncols();
        DVector::from_fn(p, |a, _| {
            let mut acc = 0.0;
            for r in 0..p {
                for s in 0..p {
                    for t in 0..p {
                        acc += self.inv(a, r)
                            * self.inv(s, t)
                            * (self.k3_deriv(r, s, t) - 0.5 * self.k3(r, s, t));
                    }
                }
            }
            acc
        })
    }

    /// `delta^{(1)}_{ab}` by its cumulant sum.
    pub fn delta1(&self, tau: Tau) -> DMatrix<f64> {
        let p = self.x.ncols();
        DMatrix::from_fn(p, p, |a, b| {
            let mut acc = 0.0;
            for c in 0..p {
                for d in 0..p {
                    let bracket = tau.tau1()
                        * (2.0 * self.k4_deriv2(b, c, a, d) - self.k4_deriv(b, c, d, a))
                        + self.k4_mixed(a, c, b, d);
                    acc += self.inv(c, d) * bracket;
                }
            }
            acc
        })
    }

    /// `delta^{(2)}_{ab}` by the per-observation double sum
    /// `-(1/sigma^6) sum_{ij} (w_i w_j - 2 sigma w_i w_j' - 6 sigma^2 w_i'
    /// w_j') z_ij^2 x_ai x_bj`, with `z_ij` from the explicitly inverted
    /// information. Matches the matrix form entrywise.
    pub fn delta2_pointwise(&self) -> DMatrix<f64> {
        let p = self.x.ncols();
        let n = self.x.nrows();
        let z = |i: usize, j: usize| -> f64 {
            let mut acc = 0.0;
            for c in 0..p {
                for t in 0..p {
                    acc += self.x[(i, c)] * self.kinv[(c, t)] * self.x[(j, t)];
                }
            }
            acc
        };
        let s = self.sigma;
        DMatrix::from_fn(p, p, |a, b| {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let c = self.w[i] * self.w[j]
                        - 2.0 * s * self.w[i] * self.wp[j]
                        - 6.0 * s * s * self.wp[i] * self.wp[j];
                    let zij = z(i, j);
                    acc += c * zij * zij * self.x[(i, a)] * self.x[(j, b)];
                }
            }
            -acc / libm::pow(s, 6.0)
        })
    }

    /// `delta^{(2)}_{ab}` by its cumulant index sum. The symmetrized part
    /// `delta2 + delta2'` agrees with [`Self::delta2_pointwise`]; the two
    /// routes split the asymmetric remainder (which cancels in the
    /// covariance correction) across `(a, b)` and `(b, a)` differently.
    pub fn delta2(&self) -> DMatrix<f64> {
        let p = self.x.ncols();
        DMatrix::from_fn(p, p, |a, b| {
            let mut acc = 0.0;
            for r in 0..p {
                for c in 0..p {
                    for s in 0..p {
                        for t in 0..p {
                            let first = self.k3(a, r, c)
                                * (3.0 * self.k3(b, s, t)
                                    + 2.0 * self.k3_mixed(s, t, b)
                                    + 8.0 * self.k3_mixed(b, s, t));
                            let second = 2.0
                                * self.k3_mixed(a, r, c)
                                * (2.0 * self.k3_mixed(s, t, b) + self.k3_mixed(b, t, s));
                            acc += self.inv(r, s) * self.inv(c, t) * (first + second);
                        }
                    }
                }
            }
            acc
        })
    }

    /// `delta^{(3)}_{ab}` by its cumulant sum.
    pub fn delta3(&self) -> DMatrix<f64> {
        let p = self.x.ncols();
        DMatrix::from_fn(p, p, |a, b| {
            let mut acc = 0.0;
            for c in 0..p {
                for r in 0..p {
                    for s in 0..p {
                        for t in 0..p {
                            acc += self.inv(r, s)
                                * self.inv(c, t)
                                * self.k3_deriv(b, c, a)
                                * (self.k3_deriv(s, t, r) + self.k3_mixed(r, s, t));
                        }
                    }
                }
            }
            acc
        })
    }

    /// The combined correction `Delta` for a target estimator (pointwise
    /// `delta2` route, entrywise-comparable with the implementation).
    pub fn delta_combined(&self, tau: Tau) -> DMatrix<f64> {
        self.delta1(tau) * (-0.5) + self.delta2_pointwise() * 0.25
            + self.delta3() * (0.5 * tau.tau2())
    }
}

/// Central finite difference of a scalar function.
pub fn central_difference<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central-difference gradient of a multivariate scalar function.
pub fn gradient_fd<F: FnMut(&DVector<f64>) -> f64>(
    mut f: F,
    x: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    DVector::from_fn(x.len(), |j, _| {
        let mut hi = x.clone();
        hi[j] += h;
        let mut lo = x.clone();
        lo[j] -= h;
        (f(&hi) - f(&lo)) / (2.0 * h)
    })
}

/// Digamma function via upward recurrence into the asymptotic regime.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + libm::log(x) - 0.5 * inv
        - inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 / 252.0))
}

/// Trigamma function via upward recurrence into the asymptotic regime.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv * (1.0 + 0.5 * inv + inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 / 42.0)))
}

/// Deterministic mixed-censoring model specs for randomized design sweeps.
pub fn random_design_specs<R: rand::Rng + ?Sized>(
    rng: &mut R,
    max_n: usize,
    max_p: usize,
) -> (ModelSpec, DVector<f64>) {
    use crate::weibull::{Censoring, CovariateDesign};
    use rand_distr::{Distribution, StandardNormal};

    let p = 1 + rng.random_range(0..max_p);
    let n = (p + 3) + rng.random_range(0..=(max_n.saturating_sub(p + 3)));
    let x = DMatrix::from_fn(n, p, |i, j| {
        if j == 0 {
            1.0
        } else {
            let z: f64 = StandardNormal.sample(rng);
            let _ = i;
            z
        }
    });
    let sigma = 0.5 + 1.5 * rng.random::<f64>();
    let beta = DVector::from_fn(p, |_, _| -0.8 + 1.6 * rng.random::<f64>());
    let mu = &x * &beta;
    let censoring = match rng.random_range(0..3) {
        0 => {
            let times: Vec<f64> = (0..n)
                .map(|i| libm::exp(mu[i] + sigma * (-0.5 + 1.5 * rng.random::<f64>())))
                .collect();
            Censoring::TypeI { times }
        }
        1 => Censoring::TypeII {
            failures: 1 + rng.random_range(0..n),
        },
        _ => {
            let times: Vec<f64> = (0..n)
                .map(|i| libm::exp(mu[i] + sigma * (-0.5 + 1.5 * rng.random::<f64>())))
                .collect();
            Censoring::Hybrid {
                times,
                failures: 1 + rng.random_range(0..n),
                q: rng.random::<f64>(),
            }
        }
    };
    let spec = ModelSpec::new(CovariateDesign::new(x).unwrap(), sigma, censoring)
        .expect("random spec is valid");
    (spec, beta)
}
