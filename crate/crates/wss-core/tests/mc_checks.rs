//! Monte Carlo identities: the score has mean zero, the information equals
//! the expected negative Hessian, simulated survival matches the model
//! survivor function, and calibrated censoring achieves its target rate.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use wss_core::{
    calibrate_censoring, fisher_information, score, simulate_sample, Censoring,
    CovariateDesign, ModelSpec,
};

fn covariate_spec(n: usize, p: usize, sigma: f64, l: f64, seed: u64) -> (ModelSpec, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, j| {
        if j == 0 {
            1.0
        } else {
            StandardNormal.sample(&mut rng)
        }
    });
    let beta = DVector::from_fn(p, |j, _| 0.5 - 0.4 * j as f64);
    let spec = ModelSpec::new(
        CovariateDesign::new(x).unwrap(),
        sigma,
        Censoring::type_i_common(l, n),
    )
    .unwrap();
    (spec, beta)
}

#[test]
fn score_has_mean_zero_at_truth() {
    // First Bartlett identity by simulation under type I censoring.
    let (spec, beta) = covariate_spec(15, 2, 0.8, 2.0, 5150);
    let replicates = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut sums: DVector<f64> = DVector::zeros(2);
    let mut sq: DVector<f64> = DVector::zeros(2);
    for _ in 0..replicates {
        let sample = simulate_sample(&spec, &beta, &mut rng).unwrap();
        let u = score(&spec, &beta, &sample).unwrap();
        for j in 0..2 {
            sums[j] += u[j];
            sq[j] += u[j] * u[j];
        }
    }
    for j in 0..2 {
        let mean: f64 = sums[j] / replicates as f64;
        let var: f64 = sq[j] / replicates as f64 - mean * mean;
        let se = (var / replicates as f64).sqrt();
        assert!(
            mean.abs() <= 4.0 * se,
            "score component {j}: mean {mean} exceeds 4 x {se}"
        );
    }
}

#[test]
fn information_matches_expected_negative_hessian() {
    // Second Bartlett identity by simulation: average the numerical
    // Hessian of the log-likelihood over replicates and compare with K.
    let (spec, beta) = covariate_spec(12, 2, 1.0, 2.5, 8282);
    let k = fisher_information(&spec, &beta).unwrap();
    let replicates = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut mean: DMatrix<f64> = DMatrix::zeros(2, 2);
    let mut sq: DMatrix<f64> = DMatrix::zeros(2, 2);
    let h = 1e-5;
    for _ in 0..replicates {
        let sample = simulate_sample(&spec, &beta, &mut rng).unwrap();
        // Hessian column j: finite difference of the analytic score (which
        // itself matches the likelihood gradient, see derivatives.rs).
        let hess = {
            let mut m = DMatrix::zeros(2, 2);
            for j in 0..2 {
                let mut hi = beta.clone();
                hi[j] += h;
                let mut lo = beta.clone();
                lo[j] -= h;
                let s_hi = score(&spec, &hi, &sample).unwrap();
                let s_lo = score(&spec, &lo, &sample).unwrap();
                for i in 0..2 {
                    m[(i, j)] = (s_hi[i] - s_lo[i]) / (2.0 * h);
                }
            }
            m
        };
        for i in 0..2 {
            for j in 0..2 {
                let v = -hess[(i, j)];
                mean[(i, j)] += v;
                sq[(i, j)] += v * v;
            }
        }
    }
    for i in 0..2 {
        for j in 0..2 {
            let m: f64 = mean[(i, j)] / replicates as f64;
            let var: f64 = sq[(i, j)] / replicates as f64 - m * m;
            let se = (var / replicates as f64).sqrt();
            assert!(
                (m - k[(i, j)]).abs() <= 4.0 * se.max(1e-12),
                "entry ({i},{j}): mc {m} vs K {} (se {se})",
                k[(i, j)]
            );
        }
    }
}

#[test]
fn intercept_type_ii_information_matches_hessian_mean() {
    // Under type II censoring the constant weights r/n come from order
    // statistics; exchangeability makes the identity exact for the
    // intercept-only model.
    let n = 10;
    let r = 7;
    let spec = ModelSpec::new(
        CovariateDesign::new(DMatrix::from_element(n, 1, 1.0)).unwrap(),
        1.0,
        Censoring::TypeII { failures: r },
    )
    .unwrap();
    let beta = DVector::from_element(1, 0.4);
    let k = fisher_information(&spec, &beta).unwrap();
    assert!((k[(0, 0)] - r as f64).abs() <= 1e-12);

    let replicates = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    let h = 1e-5;
    let (mut acc, mut sq) = (0.0, 0.0);
    for _ in 0..replicates {
        let sample = simulate_sample(&spec, &beta, &mut rng).unwrap();
        let mut hi = beta.clone();
        hi[0] += h;
        let mut lo = beta.clone();
        lo[0] -= h;
        let d = -(score(&spec, &hi, &sample).unwrap()[0] - score(&spec, &lo, &sample).unwrap()[0])
            / (2.0 * h);
        acc += d;
        sq += d * d;
    }
    let mean = acc / replicates as f64;
    let se = ((sq / replicates as f64 - mean * mean) / replicates as f64).sqrt();
    assert!(
        (mean - k[(0, 0)]).abs() <= 4.0 * se,
        "mc {mean} vs K {} (se {se})",
        k[(0, 0)]
    );
}

#[test]
fn empirical_survivor_function_matches_model() {
    // P(T > lambda) = exp(-1) for any shape; check the simulated fraction
    // within 3 binomial standard errors.
    let n = 100_000;
    let mu = 0.7;
    let sigma = 1.7;
    let spec = ModelSpec::new(
        CovariateDesign::new(DMatrix::from_element(n, 1, 1.0)).unwrap(),
        sigma,
        Censoring::TypeII { failures: n },
    )
    .unwrap();
    let sample = simulate_sample(
        &spec,
        &DVector::from_element(1, mu),
        &mut ChaCha8Rng::seed_from_u64(60_601),
    )
    .unwrap();
    let survivors = sample.log_times.iter().filter(|&&y| y > mu).count();
    let p_hat = survivors as f64 / n as f64;
    let p = (-1.0f64).exp();
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!(
        (p_hat - p).abs() <= 3.0 * se,
        "survivor fraction {p_hat} vs {p} (se {se})"
    );
}

#[test]
fn calibrated_censoring_achieves_target_rate() {
    // Three standard normal covariates, 50% target: the simulated
    // censoring fraction over 100k draws stays within 0.01.
    let n = 100_000;
    let p = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(24_001);
    let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let design = CovariateDesign::new(x).unwrap();
    let beta = DVector::from_column_slice(&[-0.5, 0.8, 0.3]);
    let sigma = 1.2;
    let l = calibrate_censoring(&design, sigma, &beta, 0.5).unwrap();
    let spec = ModelSpec::new(design, sigma, Censoring::type_i_common(l, n)).unwrap();
    let sample = simulate_sample(&spec, &beta, &mut rng).unwrap();
    let censored = sample.events.iter().filter(|&&d| !d).count() as f64 / n as f64;
    assert!(
        (censored - 0.5).abs() <= 0.01,
        "simulated censoring fraction {censored}"
    );
}
