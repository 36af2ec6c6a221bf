//! Acceptance suite: one test per acceptance criterion, each printing a
//! PASS line (run with `cargo test -p wss --test acceptance -- --nocapture`
//! to see them). Tolerances are pinned in the assertions.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use wss::mcpmod_study::{all_strategies, run_mcpmod_study, McpModScenario, TrueModel};
use wss::regression::{run_regression_study, RegressionReport, RegressionScenario};
use wss::scenarios::{
    true_curve, DEFAULT_DOSES, DEFAULT_MAX_EFFECT, DEFAULT_MED_MARGIN, DEFAULT_PLACEBO_RESPONSE,
};
use wss_core::mcpmod::{estimate_med, optimal_contrasts, DoseDesign};
use wss_core::oracles::{
    central_difference, digamma, gradient_fd, random_design_specs, trigamma, CumulantOracle,
};
use wss_core::{
    cox_snell_bias, delta_set, log_likelihood, partitioned_information, score,
    second_order_covariance, simulate_sample, weight_set, Censoring, CovariateDesign, ModelSpec,
    Tau,
};

const SEED: u64 = 42;

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

/// Criterion 1: closed-form polygamma oracle for the exponential
/// intercept-only model with n = 10.
#[test]
fn acceptance_01_closed_form_polygamma_oracle() {
    let start = Instant::now();
    let n = 10;
    let spec = ModelSpec::new(
        CovariateDesign::new(DMatrix::from_element(n, 1, 1.0)).unwrap(),
        1.0,
        Censoring::TypeII { failures: n },
    )
    .unwrap();
    let beta = DVector::from_element(1, 0.3);

    // Bias: the matrix formula gives -1/(2n) = -0.0500; the exact bias of
    // log(mean T) is digamma(n) - log n.
    let bias = cox_snell_bias(&spec, &beta).unwrap()[0];
    let exact_bias = digamma(10.0) - (10.0f64).ln();
    assert!((bias - (-0.05)).abs() <= 1e-12);
    assert!(
        (bias - exact_bias).abs() <= 1e-3,
        "bias {bias} vs exact {exact_bias}"
    );

    // Second-order variance 0.105 against the exact trigamma(10).
    let cov2 = second_order_covariance(&spec, &beta, Tau::Mle).unwrap()[(0, 0)];
    let exact_var = trigamma(10.0);
    assert!((cov2 - 0.105).abs() <= 1e-12);
    assert!(
        (cov2 - exact_var).abs() <= 2e-4,
        "cov2 {cov2} vs exact {exact_var}"
    );

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 01 PASS: bias {bias:.5} vs psi-oracle {exact_bias:.5}; \
         second-order variance {cov2:.5} vs trigamma {exact_var:.5} ({elapsed:?})"
    );
}

/// Criterion 2: matrix forms equal the tensorial cumulant sums on 100
/// random designs, entrywise within 1e-10, in under 10 seconds.
#[test]
fn acceptance_02_tensor_vs_matrix_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for trial in 0..100 {
        let (spec, beta) = random_design_specs(&mut rng, 8, 3);
        let oracle = CumulantOracle::new(&spec, &beta).unwrap();

        let bias = cox_snell_bias(&spec, &beta).unwrap();
        let diff = (&bias - oracle.bias()).amax();
        assert!(diff <= 1e-10, "trial {trial}: bias differs by {diff}");

        for tau in [Tau::Mle, Tau::Bce] {
            let ds = delta_set(&spec, &beta, tau).unwrap();
            let d1 = max_abs(&(&ds.delta1 - oracle.delta1(tau)));
            let d2 = max_abs(&(&ds.delta2 - oracle.delta2_pointwise()));
            let d3 = max_abs(&(&ds.delta3 - oracle.delta3()));
            let dc = max_abs(&(ds.combined() - oracle.delta_combined(tau)));
            assert!(
                d1 <= 1e-10 && d2 <= 1e-10 && d3 <= 1e-10 && dc <= 1e-10,
                "trial {trial} {tau:?}: deltas differ by ({d1}, {d2}, {d3}, {dc})"
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!("ACCEPTANCE 02 PASS: bias and covariance corrections match tensor sums on 100 designs ({elapsed:?})");
}

/// Criterion 3: the partitioned-information identity
/// {K^11}^{-1} = sigma^{-2} R' W R on 100 random designs.
#[test]
fn acceptance_03_partitioned_wald_identity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 3);
    let mut checked = 0;
    while checked < 100 {
        let (spec, beta) = random_design_specs(&mut rng, 12, 3);
        if spec.p() < 2 {
            continue;
        }
        let q = 1 + rng.random_range(0..spec.p() - 1);
        let part = partitioned_information(&spec, &beta, q).unwrap();
        // Direct-inversion oracle: invert the full information, extract the
        // leading block of the inverse, invert back.
        let k = wss_core::fisher_information(&spec, &beta).unwrap();
        let k_inv = k.try_inverse().expect("information invertible");
        let block = k_inv.view((0, 0), (q, q)).into_owned();
        let block_inv = block.try_inverse().expect("block invertible");
        let diff = max_abs(&(&part.k11_inv_via_r - &block_inv));
        let scale = block_inv.amax().max(1.0);
        assert!(
            diff <= 1e-10 * scale,
            "design {checked}: identity off by {diff} (scale {scale})"
        );
        checked += 1;
    }
    let elapsed = start.elapsed();
    println!("ACCEPTANCE 03 PASS: weighted-regression form matches the block inverse on 100 designs ({elapsed:?})");
}

/// Criterion 4: analytic derivatives match central finite differences to
/// relative error 1e-6 across 1,000 random points.
#[test]
fn acceptance_04_derivative_suite() {
    let start = Instant::now();
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(1.0);

    // Score against the likelihood gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 4);
    for trial in 0..1000 {
        let (spec, beta_true) = random_design_specs(&mut rng, 8, 3);
        let sample = simulate_sample(&spec, &beta_true, &mut rng).unwrap();
        let beta =
            DVector::from_fn(spec.p(), |j, _| beta_true[j] + 0.3 * rng.random::<f64>() - 0.15);
        let analytic = score(&spec, &beta, &sample).unwrap();
        let numeric = gradient_fd(|b| log_likelihood(&spec, b, &sample).unwrap(), &beta, 5e-6);
        for j in 0..spec.p() {
            let err = rel(analytic[j], numeric[j]);
            assert!(err <= 1e-6, "trial {trial} coord {j}: rel err {err}");
        }
    }

    // Weight derivatives against differences of the weights.
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 5);
    for trial in 0..1000 {
        let sigma = 0.4 + 2.0 * rng.random::<f64>();
        let log_l = -1.0 + 2.0 * rng.random::<f64>();
        let spec = ModelSpec::new(
            CovariateDesign::new(DMatrix::from_element(1, 1, 1.0)).unwrap(),
            sigma,
            Censoring::type_i_common(log_l.exp(), 1),
        )
        .unwrap();
        let mu = -0.8 + 1.6 * rng.random::<f64>();
        let h = 4e-6 * sigma.min(1.0);
        let at = |m: f64| weight_set(&spec, &DVector::from_element(1, m)).unwrap();
        let ws = at(mu);
        let wp_fd = central_difference(|m| at(m).w[0], mu, h);
        let wpp_fd = central_difference(|m| at(m).w_prime[0], mu, h);
        assert!(
            rel(ws.w_prime[0], wp_fd) <= 1e-6,
            "trial {trial}: w' rel err {}",
            rel(ws.w_prime[0], wp_fd)
        );
        assert!(
            rel(ws.w_dprime[0], wpp_fd) <= 1e-6,
            "trial {trial}: w'' rel err {}",
            rel(ws.w_dprime[0], wpp_fd)
        );
    }
    let elapsed = start.elapsed();
    println!("ACCEPTANCE 04 PASS: score and weight derivatives match finite differences at 1000+1000 points ({elapsed:?})");
}

/// Shared desk-scale study for criteria 5-7 (p = 3, sigma = 1, 25%
/// censoring, n in {20, 50}, 2000 replicates, fixed seed).
fn desk_study() -> &'static RegressionReport {
    static STUDY: OnceLock<RegressionReport> = OnceLock::new();
    STUDY.get_or_init(|| {
        let scenario = RegressionScenario {
            p: 3,
            n_grid: vec![20, 50],
            sigma: 1.0,
            censor_rate: 0.25,
            replicates: 2000,
            q: 1,
            psi_grid: vec![],
            alpha: 0.05,
            beta: None,
        };
        run_regression_study(&scenario, SEED).expect("desk study runs")
    })
}

/// Criterion 5: the corrected estimators reduce bias without losing
/// meaningful RMSE at desk scale, in under two minutes.
#[test]
fn acceptance_05_bias_reduction_reproduction() {
    let start = Instant::now();
    let report = desk_study();
    for cell in &report.cells {
        let l1 = |label: &str| -> f64 {
            let est = cell
                .estimators
                .iter()
                .find(|e| e.estimator == label)
                .unwrap();
            est.bias.iter().map(|b| b.abs()).sum()
        };
        let mle_l1 = l1("MLE");
        let bce_l1 = l1("BCE");
        let firth_l1 = l1("Firth");
        assert!(
            bce_l1 < mle_l1,
            "n = {}: |bias(BCE)| = {bce_l1} not below |bias(MLE)| = {mle_l1}",
            cell.n
        );
        assert!(
            firth_l1 < mle_l1,
            "n = {}: |bias(Firth)| = {firth_l1} not below |bias(MLE)| = {mle_l1}",
            cell.n
        );
        let rmse = |label: &str| -> Vec<f64> {
            cell.estimators
                .iter()
                .find(|e| e.estimator == label)
                .unwrap()
                .rmse
                .clone()
        };
        let mle_rmse = rmse("MLE");
        for corrected in ["BCE", "Firth"] {
            for (j, r) in rmse(corrected).iter().enumerate() {
                assert!(
                    *r <= 1.05 * mle_rmse[j],
                    "n = {}: RMSE({corrected})[{j}] = {r} exceeds 1.05 x {}",
                    cell.n,
                    mle_rmse[j]
                );
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    println!("ACCEPTANCE 05 PASS: corrected estimators cut L1 bias at n = 20 and 50 with RMSE within 5% of the MLE ({elapsed:?})");
}

/// Criterion 6: the empirical covariance sits strictly closer to the
/// second-order matrix than to the inverse information, in all three
/// distances.
#[test]
fn acceptance_06_covariance_distance_reproduction() {
    let report = desk_study();
    let cell = report.cells.iter().find(|c| c.n == 20).unwrap();
    let row = cell
        .covariance_distances
        .iter()
        .find(|r| r.estimator == "MLE")
        .unwrap();
    for (name, first, second) in [
        ("d1", row.vs_first.d1, row.vs_second.d1),
        ("d2", row.vs_first.d2, row.vs_second.d2),
        ("d3", row.vs_first.d3, row.vs_second.d3),
    ] {
        assert!(
            second < first,
            "{name}: second-order distance {second} not below first-order {first}"
        );
    }
    println!(
        "ACCEPTANCE 06 PASS: d1/d2/d3 to the second-order covariance ({:.4}, {:.4}, {:.4}) all below the inverse-information distances ({:.4}, {:.4}, {:.4})",
        row.vs_second.d1, row.vs_second.d2, row.vs_second.d3,
        row.vs_first.d1, row.vs_first.d2, row.vs_first.d3
    );
}

/// Criterion 7: type I error ordering at desk scale and five-way
/// calibration at n = 2000.
#[test]
fn acceptance_07_type_one_error_ordering() {
    let report = desk_study();
    let cell = report.cells.iter().find(|c| c.n == 20).unwrap();
    let rate = |label: &str| -> f64 {
        cell.strategies
            .iter()
            .find(|s| s.strategy == label)
            .unwrap()
            .type1_rate
            .unwrap()
    };
    let mle = rate("MLE");
    let firth = rate("Firth");
    assert!(mle > 0.05, "MLE type I {mle} not inflated above 0.05");
    assert!(
        (firth - 0.05).abs() < (mle - 0.05).abs(),
        "Firth {firth} not closer to nominal than MLE {mle}"
    );

    // Large-sample calibration: all five variants inside 0.05 +- 0.015.
    let large = RegressionScenario {
        p: 3,
        n_grid: vec![2000],
        sigma: 1.0,
        censor_rate: 0.25,
        replicates: 2000,
        q: 1,
        psi_grid: vec![],
        alpha: 0.05,
        beta: None,
    };
    let large_report = run_regression_study(&large, SEED).unwrap();
    for s in &large_report.cells[0].strategies {
        let r = s.type1_rate.unwrap();
        assert!(
            (r - 0.05).abs() <= 0.015,
            "{} rejects at {r} at n = 2000",
            s.strategy
        );
    }
    println!(
        "ACCEPTANCE 07 PASS: n = 20 rates MLE {mle:.4} > 0.05, Firth {firth:.4} closer to nominal; all five in [0.035, 0.065] at n = 2000"
    );
}

/// Criterion 8: rejection rates are nondecreasing in the alternative
/// magnitude for every variant (n = 50, 2000 replicates, common random
/// numbers across the psi grid).
#[test]
fn acceptance_08_power_monotone_in_psi() {
    let start = Instant::now();
    let scenario = RegressionScenario {
        p: 3,
        n_grid: vec![50],
        sigma: 1.0,
        censor_rate: 0.25,
        replicates: 2000,
        q: 1,
        psi_grid: vec![0.05, 0.10, 0.25, 0.50],
        alpha: 0.05,
        beta: None,
    };
    let report = run_regression_study(&scenario, SEED).unwrap();
    let rows = &report.cells[0].power;
    for strategy in ["MLE", "MLE2", "BCE", "BCE2", "Firth"] {
        let mut rates: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.strategy == strategy)
            .map(|r| (r.psi, r.rejection_rate.unwrap()))
            .collect();
        rates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for pair in rates.windows(2) {
            assert!(
                pair[1].1 + 1e-12 >= pair[0].1,
                "{strategy}: power dropped from {:?} to {:?}",
                pair[0],
                pair[1]
            );
        }
    }
    println!(
        "ACCEPTANCE 08 PASS: power nondecreasing over psi = 0.05..0.50 for all five variants ({:?})",
        start.elapsed()
    );
}

/// Criterion 9: minimum effective doses of the four true curves.
#[test]
fn acceptance_09_med_ground_truth() {
    let start = Instant::now();
    let design = DoseDesign::balanced(DEFAULT_DOSES.to_vec(), 5).unwrap();
    let expectations = [
        (TrueModel::Emax, 25.00, 1e-4),
        (TrueModel::Exponential, 84.51, 0.5),
        (TrueModel::Logistic, 40.37, 0.1),
        (TrueModel::Beta, 10.61, 0.1),
    ];
    for (model, reference, tol) in expectations {
        let curve = true_curve(
            model,
            &DEFAULT_DOSES,
            DEFAULT_PLACEBO_RESPONSE,
            DEFAULT_MAX_EFFECT,
        )
        .unwrap()
        .unwrap();
        let med = estimate_med(&curve, DEFAULT_MED_MARGIN, &design)
            .unwrap()
            .dose
            .unwrap();
        assert!(
            (med - reference).abs() <= tol,
            "{model}: MED {med} vs {reference} (tol {tol})"
        );
        if matches!(model, TrueModel::Emax) {
            // Closed form: delta ed50 / (theta1 - delta) = 25 exactly.
            let (ed50, theta1) = match curve.shape {
                wss_core::mcpmod::Shape::Emax { ed50 } => (ed50, curve.theta1),
                _ => unreachable!(),
            };
            let closed = DEFAULT_MED_MARGIN * ed50 / (theta1 - DEFAULT_MED_MARGIN);
            assert!((closed - 25.0).abs() <= 1e-9);
            assert!((med - closed).abs() <= 1e-4);
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 1.0, "took {elapsed:?}");
    println!("ACCEPTANCE 09 PASS: true-curve MEDs 25.00 / 84.51 / 40.37 / 10.61 reproduced ({elapsed:?})");
}

/// Criterion 10: no random zero-sum contrast beats the optimal one by more
/// than 1e-6 in relative noncentrality over 20 random problems.
#[test]
fn acceptance_10_contrast_optimality() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 10);
    let d = 5;
    for problem in 0..20 {
        // Random PD covariance and a non-constant candidate mean.
        let a = DMatrix::from_fn(d, d, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * 0.5
        });
        let s = &a * a.transpose() + DMatrix::identity(d, d) * 0.3;
        let mu0 = DVector::from_fn(d, |i, _| {
            i as f64 / d as f64 + 0.4 * rng.random::<f64>()
        });
        let oc = optimal_contrasts(&[mu0.clone()], &s).unwrap();
        let copt = oc.row(0);
        let ratio = |c: &DVector<f64>| -> f64 {
            let num = c.dot(&mu0);
            num * num / c.dot(&(&s * c))
        };
        let opt_ratio = ratio(&copt);
        let mut best_random: f64 = 0.0;
        for _ in 0..100_000 {
            let mut c = DVector::from_fn(d, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            });
            let mean = c.iter().sum::<f64>() / d as f64;
            for j in 0..d {
                c[j] -= mean;
            }
            if c.norm() < 1e-9 {
                continue;
            }
            best_random = best_random.max(ratio(&c));
        }
        assert!(
            best_random <= opt_ratio * (1.0 + 1e-6),
            "problem {problem}: random contrast {best_random} beats optimal {opt_ratio}"
        );
    }
    println!(
        "ACCEPTANCE 10 PASS: optimal contrasts undominated over 20 x 100000 random zero-sum contrasts ({:?})",
        start.elapsed()
    );
}

/// Criterion 11: trend-test type I error at desk scale for the constant
/// scenario, and the MLE-vs-Firth ordering at the smallest group size.
#[test]
fn acceptance_11_mcpmod_type_one_error() {
    let start = Instant::now();
    let scenario = McpModScenario {
        true_model: TrueModel::Constant,
        doses: DEFAULT_DOSES.to_vec(),
        n_per_dose_grid: vec![5, 10],
        sigma: 0.5,
        censor_rate: 0.10,
        delta: DEFAULT_MED_MARGIN,
        alpha: 0.05,
        replicates: 500,
        strategies: all_strategies(),
        placebo_response: DEFAULT_PLACEBO_RESPONSE,
        max_effect: DEFAULT_MAX_EFFECT,
        candidates: None,
    };
    let report = run_mcpmod_study(&scenario, SEED).unwrap();
    for cell in report.cells.iter().filter(|c| c.n_per_dose == 10) {
        let rate = cell.signal_rate.unwrap();
        let bound = 0.05 + 4.0 * (0.05f64 * 0.95 / cell.tested as f64).sqrt();
        assert!(
            rate <= bound,
            "{} signal rate {rate} above {bound} at n = 10/dose",
            cell.strategy
        );
    }
    let rate_at_5 = |label: &str| -> f64 {
        report
            .cells
            .iter()
            .find(|c| c.n_per_dose == 5 && c.strategy == label)
            .unwrap()
            .signal_rate
            .unwrap()
    };
    let mle5 = rate_at_5("MLE");
    let firth5 = rate_at_5("Firth");
    assert!(
        mle5 >= firth5,
        "MLE rate {mle5} below Firth rate {firth5} at n = 5/dose"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "took {elapsed:?}");
    println!(
        "ACCEPTANCE 11 PASS: constant-scenario signal rates within bound at n = 10/dose; MLE {mle5:.3} >= Firth {firth5:.3} at n = 5/dose ({elapsed:?})"
    );
}

/// Criterion 12: identical seeds give byte-identical reports for any
/// worker count.
#[test]
fn acceptance_12_determinism_across_workers() {
    let start = Instant::now();
    let scenario = McpModScenario {
        true_model: TrueModel::Emax,
        doses: DEFAULT_DOSES.to_vec(),
        n_per_dose_grid: vec![5, 10],
        sigma: 0.5,
        censor_rate: 0.10,
        delta: DEFAULT_MED_MARGIN,
        alpha: 0.05,
        replicates: 40,
        strategies: all_strategies(),
        placebo_response: DEFAULT_PLACEBO_RESPONSE,
        max_effect: DEFAULT_MAX_EFFECT,
        candidates: None,
    };
    let with_workers = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_mcpmod_study(&scenario, SEED).unwrap())
    };
    let a = with_workers(1);
    let b = with_workers(4);

    // Byte-identical emitted files, not just equal in-memory values.
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    wss::report::write_json(dir_a.path(), "mcpmod_report.json", &a).unwrap();
    wss::report::write_json(dir_b.path(), "mcpmod_report.json", &b).unwrap();
    wss::report::write_mcpmod_csv(dir_a.path(), &a).unwrap();
    wss::report::write_mcpmod_csv(dir_b.path(), &b).unwrap();
    for name in ["mcpmod_report.json", "mcpmod_oc.csv"] {
        let bytes_a = std::fs::read(dir_a.path().join(name)).unwrap();
        let bytes_b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{name} differs across worker counts");
    }
    println!(
        "ACCEPTANCE 12 PASS: 1-worker and 4-worker runs emit byte-identical reports ({:?})",
        start.elapsed()
    );
}
