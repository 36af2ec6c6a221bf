//! Aggregation kernels shared by the study drivers.

use serde::{Deserialize, Serialize};

/// Sample mean; `None` for empty input.
pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Root mean squared deviation from a reference value.
pub fn rmse_against(xs: &[f64], reference: f64) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        let ms = xs.iter().map(|x| (x - reference).powi(2)).sum::<f64>() / xs.len() as f64;
        Some(ms.sqrt())
    }
}

/// Monte Carlo standard error of a mean.
pub fn mean_se(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Some(0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    Some((var / xs.len() as f64).sqrt())
}

/// Binomial standard error of an empirical proportion.
pub fn binomial_se(p_hat: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p_hat * (1.0 - p_hat) / n as f64).sqrt()
}

/// An empirical rate with its count basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    /// Numerator.
    pub count: usize,
    /// Denominator.
    pub of: usize,
}

impl Rate {
    /// Build a rate.
    pub fn new(count: usize, of: usize) -> Self {
        Self { count, of }
    }

    /// The proportion, `None` when the denominator is zero.
    pub fn value(&self) -> Option<f64> {
        if self.of == 0 {
            None
        } else {
            Some(self.count as f64 / self.of as f64)
        }
    }

    /// Binomial standard error of the proportion.
    pub fn se(&self) -> Option<f64> {
        self.value().map(|p| binomial_se(p, self.of))
    }
}
