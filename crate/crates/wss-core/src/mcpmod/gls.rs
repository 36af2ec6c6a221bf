//! Generalized least-squares curve fitting and model selection.
//!
//! The criterion `Psi(theta) = (mu_hat - f(x, theta))' S_hat^{-1}
//! (mu_hat - f(x, theta))` is minimized by profiling: for fixed nonlinear
//! parameters, `(theta0, theta1)` enter linearly and solve a 2x2 weighted
//! normal system, so only the nonlinear parameters need searching. The
//! search is a deterministic log-spaced grid over a family-specific box,
//! refined by golden-section (one nonlinear parameter) or coordinatewise
//! golden-section sweeps (two). The starting model's nonlinear parameters
//! join the grid, which guarantees `Psi(theta_hat) <= Psi(start)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::mcpmod::model::{
    standardized_response, DoseDesign, DoseResponseModel, Shape, ShapeFamily,
};

const GRID_1D: usize = 64;
const GRID_2D: usize = 18;
const GOLDEN_TOL: f64 = 1e-10;
const COORD_SWEEPS: usize = 24;

/// A fitted candidate model with its criterion value.
#[derive(Debug, Clone, PartialEq)]
pub struct ModFit {
    /// The fitted curve.
    pub model: DoseResponseModel,
    /// Criterion value at the fit.
    pub gls_value: f64,
    /// Generalized AIC: criterion plus twice the parameter count.
    pub gaic: f64,
    /// False when the search produced no usable optimum.
    pub converged: bool,
}

struct Profiler<'a> {
    doses: &'a [f64],
    mu_hat: &'a DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl<'a> Profiler<'a> {
    /// Profile the linear parameters for a fixed shape and return the
    /// criterion value plus `(theta0, theta1)`.
    fn eval(&self, shape: &Shape) -> Result<(f64, f64, f64)> {
        let d = self.doses.len();
        let mut g = DVector::zeros(d);
        for (i, &x) in self.doses.iter().enumerate() {
            g[i] = standardized_response(shape, x)?;
        }
        let ones = DVector::from_element(d, 1.0);
        let s_inv_one = self.chol.solve(&ones);
        let s_inv_g = self.chol.solve(&g);
        let a11 = ones.dot(&s_inv_one);
        let a12 = g.dot(&s_inv_one);
        let a22 = g.dot(&s_inv_g);
        let b1 = self.mu_hat.dot(&s_inv_one);
        let b2 = self.mu_hat.dot(&s_inv_g);
        let det = a11 * a22 - a12 * a12;
        let (theta0, theta1) = if det.abs() > 1e-12 * a11.abs().max(a22.abs()).max(1.0) {
            ((a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det)
        } else {
            // Shape collinear with the intercept: fall back to the
            // weighted mean and no slope.
            (b1 / a11, 0.0)
        };
        let resid = self.mu_hat - &ones * theta0 - &g * theta1;
        let psi = resid.dot(&self.chol.solve(&resid));
        Ok((psi, theta0, theta1))
    }
}

fn log_grid(lo: f64, hi: f64, points: usize) -> impl Iterator<Item = f64> {
    let llo = libm::log(lo);
    let lhi = libm::log(hi);
    (0..points).map(move |k| {
        let t = k as f64 / (points - 1) as f64;
        libm::exp(llo + t * (lhi - llo))
    })
}

/// Golden-section minimization of a unimodal-ish slice; tolerant of mild
/// multimodality because the caller seeds it from a grid scan.
fn golden<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..120 {
        if (b - a).abs() <= GOLDEN_TOL * (a.abs() + b.abs()).max(1.0) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Family-specific search boxes for the nonlinear parameters.
fn search_box(family: ShapeFamily, design: &DoseDesign) -> (
    [f64; 2], // first parameter bounds
    [f64; 2], // second parameter bounds (unused for 1-parameter shapes)
) {
    let max_d = design.max_dose();
    let min_pos = design.min_positive_dose();
    match family {
        ShapeFamily::Emax => ([0.1 * min_pos, 10.0 * max_d], [0.0, 0.0]),
        ShapeFamily::Exponential => ([0.05 * max_d, 20.0 * max_d], [0.0, 0.0]),
        ShapeFamily::Logistic => ([0.1 * min_pos, 10.0 * max_d], [0.05 * max_d, 20.0 * max_d]),
        ShapeFamily::Beta => ([0.05, 20.0], [0.05, 20.0]),
        ShapeFamily::Linear => ([0.0, 0.0], [0.0, 0.0]),
    }
}

fn shape_of(family: ShapeFamily, t1: f64, t2: f64, scal: f64) -> Shape {
    match family {
        ShapeFamily::Linear => Shape::Linear,
        ShapeFamily::Emax => Shape::Emax { ed50: t1 },
        ShapeFamily::Exponential => Shape::Exponential { delta: t1 },
        ShapeFamily::Logistic => Shape::Logistic {
            ed50: t1,
            delta: t2,
        },
        ShapeFamily::Beta => Shape::Beta {
            delta1: t1,
            delta2: t2,
            scal,
        },
    }
}

fn nonlinear_of(shape: &Shape) -> (f64, f64) {
    match *shape {
        Shape::Linear => (0.0, 0.0),
        Shape::Emax { ed50 } => (ed50, 0.0),
        Shape::Exponential { delta } => (delta, 0.0),
        Shape::Logistic { ed50, delta } => (ed50, delta),
        Shape::Beta { delta1, delta2, .. } => (delta1, delta2),
    }
}

/// Minimize the GLS criterion for one candidate family.
///
/// `start` supplies the guess-estimate shape (its nonlinear parameters are
/// always evaluated, so the fit can never be worse than the start) and,
/// for the beta family, the fixed shape scale.
pub fn gls_fit(
    family: ShapeFamily,
    mu_hat: &DVector<f64>,
    s_hat: &DMatrix<f64>,
    design: &DoseDesign,
    start: &DoseResponseModel,
) -> Result<ModFit> {
    let d = design.n_doses();
    if mu_hat.len() != d || s_hat.shape() != (d, d) {
        return Err(Error::DimensionMismatch(
            "estimates, covariance and design must share the dose dimension".into(),
        ));
    }
    if start.family() != family {
        return Err(Error::InvalidArgument(
            "starting model family differs from the requested family".into(),
        ));
    }
    let chol = Cholesky::new(s_hat.clone()).ok_or(Error::NotPositiveDefinite(
        "estimated covariance in the curve fit",
    ))?;
    let prof = Profiler {
        doses: &design.doses,
        mu_hat,
        chol,
    };
    let scal = match start.shape {
        Shape::Beta { scal, .. } => scal,
        _ => 1.2 * design.max_dose(),
    };
    if matches!(family, ShapeFamily::Beta) && scal <= design.max_dose() {
        return Err(Error::InvalidArgument(
            "beta shape scale must exceed the maximum dose".into(),
        ));
    }

    let (start_t1, start_t2) = nonlinear_of(&start.shape);
    let mut best: Option<(f64, f64, f64)> = None; // (psi, t1, t2)
    let consider = |best: &mut Option<(f64, f64, f64)>, t1: f64, t2: f64| -> Result<()> {
        let psi = prof.eval(&shape_of(family, t1, t2, scal))?.0;
        if psi.is_finite() && best.map_or(true, |(b, _, _)| psi < b) {
            *best = Some((psi, t1, t2));
        }
        Ok(())
    };

    match family.n_nonlinear() {
        0 => consider(&mut best, 0.0, 0.0)?,
        1 => {
            let (box1, _) = search_box(family, design);
            for t in log_grid(box1[0], box1[1], GRID_1D) {
                consider(&mut best, t, 0.0)?;
            }
            consider(&mut best, start_t1, 0.0)?;
            let (_, t1_seed, _) = best.expect("grid evaluated");
            let lo = (t1_seed * 0.5).max(box1[0]);
            let hi = (t1_seed * 2.0).min(box1[1]);
            let refined = golden(
                |t| {
                    prof.eval(&shape_of(family, t, 0.0, scal))
                        .map(|(p, _, _)| p)
                        .unwrap_or(f64::INFINITY)
                },
                lo,
                hi,
            );
            consider(&mut best, refined, 0.0)?;
        }
        _ => {
            let (box1, box2) = search_box(family, design);
            for t1 in log_grid(box1[0], box1[1], GRID_2D) {
                for t2 in log_grid(box2[0], box2[1], GRID_2D) {
                    consider(&mut best, t1, t2)?;
                }
            }
            consider(&mut best, start_t1, start_t2)?;
            // Coordinatewise golden-section refinement from the grid best.
            let (_, mut t1, mut t2) = best.expect("grid evaluated");
            let mut last = f64::INFINITY;
            for _ in 0..COORD_SWEEPS {
                t1 = golden(
                    |t| {
                        prof.eval(&shape_of(family, t, t2, scal))
                            .map(|(p, _, _)| p)
                            .unwrap_or(f64::INFINITY)
                    },
                    (t1 * 0.25).max(box1[0]),
                    (t1 * 4.0).min(box1[1]),
                );
                t2 = golden(
                    |t| {
                        prof.eval(&shape_of(family, t1, t, scal))
                            .map(|(p, _, _)| p)
                            .unwrap_or(f64::INFINITY)
                    },
                    (t2 * 0.25).max(box2[0]),
                    (t2 * 4.0).min(box2[1]),
                );
                let psi = prof
                    .eval(&shape_of(family, t1, t2, scal))
                    .map(|(p, _, _)| p)
                    .unwrap_or(f64::INFINITY);
                if (last - psi).abs() <= 1e-12 * psi.max(1.0) {
                    break;
                }
                last = psi;
            }
            consider(&mut best, t1, t2)?;
        }
    }

    let (psi, t1, t2) = best.expect("at least the start was evaluated");
    let shape = shape_of(family, t1, t2, scal);
    let (_, theta0, theta1) = prof.eval(&shape)?;
    let converged = psi.is_finite() && theta0.is_finite() && theta1.is_finite();
    Ok(ModFit {
        model: DoseResponseModel {
            theta0,
            theta1,
            shape,
        },
        gls_value: psi,
        gaic: psi + 2.0 * family.n_params() as f64,
        converged,
    })
}

/// Pick the fit with the smallest generalized AIC; ties keep the earliest
/// candidate.
pub fn select_model(fits: &[ModFit]) -> Result<&ModFit> {
    let mut best: Option<&ModFit> = None;
    for fit in fits {
        if best.map_or(true, |b| fit.gaic < b.gaic) {
            best = Some(fit);
        }
    }
    best.ok_or(Error::EmptyInput("model fits to select from"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcpmod::model::GuessConstraint;
    use alloc::vec::Vec;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn design() -> DoseDesign {
        DoseDesign::balanced(alloc::vec![0.0, 5.0, 25.0, 50.0, 100.0], 10).unwrap()
    }

    fn emax_truth() -> DoseResponseModel {
        DoseResponseModel {
            theta0: 1.569,
            theta1: 2.079,
            shape: Shape::Emax { ed50: 50.0 },
        }
    }

    #[test]
    fn exact_emax_data_is_recovered() {
        let dd = design();
        let truth = emax_truth();
        let mu = truth.mean_vector(&dd).unwrap();
        let s = DMatrix::identity(5, 5);
        let fit = gls_fit(ShapeFamily::Emax, &mu, &s, &dd, &truth).unwrap();
        assert!(fit.converged);
        assert!(fit.gls_value <= 1e-8, "criterion {}", fit.gls_value);
        match fit.model.shape {
            Shape::Emax { ed50 } => assert_abs_diff_eq!(ed50, 50.0, epsilon = 1e-4),
            _ => panic!("family changed"),
        }
        assert_abs_diff_eq!(fit.model.theta0, 1.569, epsilon = 1e-4);
        assert_abs_diff_eq!(fit.model.theta1, 2.079, epsilon = 1e-4);
        assert_abs_diff_eq!(fit.gaic, fit.gls_value + 6.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_fit_matches_weighted_least_squares() {
        let dd = design();
        let mu = DVector::from_column_slice(&[1.0, 1.2, 1.9, 2.4, 3.9]);
        let mut s = DMatrix::identity(5, 5);
        for i in 0..5 {
            s[(i, i)] = 0.2 + 0.1 * i as f64;
        }
        let start = DoseResponseModel {
            theta0: 0.0,
            theta1: 1.0,
            shape: Shape::Linear,
        };
        let fit = gls_fit(ShapeFamily::Linear, &mu, &s, &dd, &start).unwrap();

        // Closed-form weighted normal equations on [1, x].
        let w: Vec<f64> = (0..5).map(|i| 1.0 / s[(i, i)]).collect();
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..5 {
            let x = dd.doses[i];
            a11 += w[i];
            a12 += w[i] * x;
            a22 += w[i] * x * x;
            b1 += w[i] * mu[i];
            b2 += w[i] * mu[i] * x;
        }
        let det = a11 * a22 - a12 * a12;
        let t0 = (a22 * b1 - a12 * b2) / det;
        let t1 = (a11 * b2 - a12 * b1) / det;
        assert_relative_eq!(fit.model.theta0, t0, epsilon = 1e-8);
        assert_relative_eq!(fit.model.theta1, t1, epsilon = 1e-8);
    }

    #[test]
    fn fit_never_beats_start_descent_contract() {
        let dd = design();
        let truth = emax_truth();
        let mut mu = truth.mean_vector(&dd).unwrap();
        // Perturb the data away from the curve.
        for (i, delta) in [0.3, -0.2, 0.15, -0.1, 0.25].iter().enumerate() {
            mu[i] += delta;
        }
        let s = DMatrix::identity(5, 5) * 0.5;
        let start = DoseResponseModel {
            theta0: 1.0,
            theta1: 1.0,
            shape: Shape::Emax { ed50: 20.0 },
        };
        let fit = gls_fit(ShapeFamily::Emax, &mu, &s, &dd, &start).unwrap();
        let prof = Profiler {
            doses: &dd.doses,
            mu_hat: &mu,
            chol: Cholesky::new(s.clone()).unwrap(),
        };
        let (psi_start, _, _) = prof.eval(&start.shape).unwrap();
        assert!(fit.gls_value <= psi_start + 1e-12);
    }

    #[test]
    fn logistic_exact_recovery_two_parameters() {
        let dd = design();
        let truth = DoseResponseModel {
            theta0: 1.565,
            theta1: 1.391,
            shape: Shape::Logistic {
                ed50: 40.329,
                delta: 6.976,
            },
        };
        let mu = truth.mean_vector(&dd).unwrap();
        let s = DMatrix::identity(5, 5);
        let fit = gls_fit(ShapeFamily::Logistic, &mu, &s, &dd, &truth).unwrap();
        assert!(fit.gls_value <= 1e-8, "criterion {}", fit.gls_value);
        match fit.model.shape {
            Shape::Logistic { ed50, delta } => {
                assert_abs_diff_eq!(ed50, 40.329, epsilon = 1e-2);
                assert_abs_diff_eq!(delta, 6.976, epsilon = 1e-2);
            }
            _ => panic!("family changed"),
        }
    }

    #[test]
    fn beta_start_from_guesses_fits_its_own_curve() {
        let dd = design();
        let start = crate::mcpmod::model::params_from_guesses(
            ShapeFamily::Beta,
            &[
                GuessConstraint {
                    fraction: 1.0,
                    dose: 50.0,
                },
                GuessConstraint {
                    fraction: 0.3,
                    dose: 5.0,
                },
            ],
            1.569,
            2.0 * core::f64::consts::LN_2,
            &dd.doses,
        )
        .unwrap();
        let mu = start.mean_vector(&dd).unwrap();
        let s = DMatrix::identity(5, 5) * 0.25;
        let fit = gls_fit(ShapeFamily::Beta, &mu, &s, &dd, &start).unwrap();
        assert!(fit.converged);
        assert!(fit.gls_value <= 1e-8, "criterion {}", fit.gls_value);
    }

    #[test]
    fn selection_prefers_smallest_gaic_then_order() {
        let dummy = |gaic: f64| ModFit {
            model: emax_truth(),
            gls_value: gaic,
            gaic,
            converged: true,
        };
        let single = [dummy(3.0)];
        assert_eq!(select_model(&single).unwrap().gaic, 3.0);
        let fits = [dummy(10.0), dummy(12.0)];
        assert!(core::ptr::eq(select_model(&fits).unwrap(), &fits[0]));
        let tied = [dummy(5.0), dummy(5.0)];
        assert!(core::ptr::eq(select_model(&tied).unwrap(), &tied[0]));
        assert!(select_model(&[]).is_err());
    }
}
