//! Chi-square distribution via the regularized incomplete gamma function.
//!
//! The CDF is `P(k/2, x/2)` where `P` is the lower regularized incomplete
//! gamma function, evaluated by a power series for `x < a + 1` and by a
//! Lentz continued fraction otherwise. Both converge to near machine
//! precision, comfortably inside the 1e-12 relative accuracy the Wald
//! p-values need. Quantiles are found by monotone bisection on the CDF.

use crate::error::{Error, Result};
use alloc::format;

const GAMMA_EPS: f64 = 1e-15;
const GAMMA_MAX_ITER: usize = 500;
const TINY: f64 = 1e-300;

/// Lower regularized incomplete gamma function `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_cf(a, x)
    }
}

/// Upper regularized incomplete gamma function `Q(a, x) = 1 - P(a, x)`.
///
/// Evaluated directly in the right tail so small upper probabilities keep
/// full relative precision.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_cf(a, x)
    }
}

/// Series expansion of `P(a, x)`, effective for `x < a + 1`.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..GAMMA_MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum * libm::exp(-x + a * libm::log(x) - libm::lgamma(a))
}

/// Modified Lentz continued fraction for `Q(a, x)`, effective for `x >= a + 1`.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    libm::exp(-x + a * libm::log(x) - libm::lgamma(a)) * h
}

/// Chi-square distribution with integer degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquared {
    df: usize,
}

impl ChiSquared {
    /// Create a chi-square distribution handle; requires `df >= 1`.
    pub fn new(df: usize) -> Result<Self> {
        if df == 0 {
            return Err(Error::InvalidArgument(format!(
                "chi-square degrees of freedom must be >= 1, got {df}"
            )));
        }
        Ok(Self { df })
    }

    /// Degrees of freedom.
    pub fn df(&self) -> usize {
        self.df
    }

    /// Cumulative distribution function at `x` (zero for `x <= 0`).
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        gamma_p(self.df as f64 / 2.0, x / 2.0)
    }

    /// Survival function `1 - cdf(x)`, computed directly in the tail.
    pub fn sf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 1.0;
        }
        gamma_q(self.df as f64 / 2.0, x / 2.0)
    }

    /// Quantile function: the `x` with `cdf(x) = p`, for `p` in (0, 1).
    ///
    /// Monotone bisection on the CDF; the bracket is grown geometrically
    /// from the mean before bisecting to a relative width of ~1e-14.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "quantile probability must lie in (0, 1), got {p}"
            )));
        }
        let mut lo = 0.0;
        let mut hi = (self.df as f64).max(1.0);
        let mut grow = 0;
        while self.cdf(hi) < p {
            lo = hi;
            hi *= 2.0;
            grow += 1;
            if grow > 400 {
                return Err(Error::RootFinding(format!(
                    "chi-square quantile bracket did not close for p = {p}"
                )));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi.max(1.0) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}
