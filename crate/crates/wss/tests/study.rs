//! Study-level behavior at desk scale: qualitative patterns of the
//! corrected estimators and of the dose-finding pipeline.

use wss::mcpmod_study::{all_strategies, run_mcpmod_study, McpModScenario, TrueModel};
use wss::regression::{run_regression_study, RegressionScenario};
use wss::scenarios::{
    FamilyName, DEFAULT_DOSES, DEFAULT_MAX_EFFECT, DEFAULT_MED_MARGIN, DEFAULT_PLACEBO_RESPONSE,
};

fn desk_cell(replicates: usize) -> RegressionScenario {
    RegressionScenario {
        p: 3,
        n_grid: vec![20],
        sigma: 1.0,
        censor_rate: 0.25,
        replicates,
        q: 1,
        psi_grid: vec![],
        alpha: 0.05,
        beta: None,
    }
}

#[test]
fn corrected_estimators_reduce_componentwise_bias() {
    let report = run_regression_study(&desk_cell(800), 314).unwrap();
    let cell = &report.cells[0];
    let bias = |label: &str| -> Vec<f64> {
        cell.estimators
            .iter()
            .find(|e| e.estimator == label)
            .unwrap()
            .bias
            .clone()
    };
    let mle = bias("MLE");
    for corrected in ["BCE", "Firth"] {
        let b = bias(corrected);
        let improved = (0..3).filter(|&j| b[j].abs() < mle[j].abs()).count();
        assert!(
            improved >= 2,
            "{corrected} improves only {improved}/3 components: {b:?} vs {mle:?}"
        );
    }
}

#[test]
fn type_one_error_ordering_mle_dominates_bce2() {
    let report = run_regression_study(&desk_cell(800), 314).unwrap();
    let cell = &report.cells[0];
    let rate = |label: &str| -> f64 {
        cell.strategies
            .iter()
            .find(|s| s.strategy == label)
            .unwrap()
            .type1_rate
            .unwrap()
    };
    assert!(
        rate("MLE") >= rate("BCE2"),
        "MLE {} below BCE2 {}",
        rate("MLE"),
        rate("BCE2")
    );
}

#[test]
fn estimators_are_consistent_at_large_n() {
    // At n = 2000 every estimator's bias sits within 4 Monte Carlo
    // standard errors of zero.
    let scenario = RegressionScenario {
        p: 3,
        n_grid: vec![2000],
        sigma: 1.0,
        censor_rate: 0.25,
        replicates: 400,
        q: 1,
        psi_grid: vec![],
        alpha: 0.05,
        beta: None,
    };
    let report = run_regression_study(&scenario, 1234).unwrap();
    for est in &report.cells[0].estimators {
        for j in 0..3 {
            assert!(
                est.bias[j].abs() <= 4.0 * est.mc_se[j],
                "{} coefficient {j}: bias {} vs 4 x se {}",
                est.estimator,
                est.bias[j],
                est.mc_se[j]
            );
        }
    }
}

#[test]
fn emax_truth_gives_power_and_correct_selection() {
    // Emax truth, 25 subjects per dose, 10% censoring, 500 replicates:
    // every strategy detects the signal essentially always, the true
    // family wins the selection well above the uniform-choice floor, and
    // minimum-effective-dose estimates center near the truth.
    let scenario = McpModScenario {
        true_model: TrueModel::Emax,
        doses: DEFAULT_DOSES.to_vec(),
        n_per_dose_grid: vec![25],
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
    let report = run_mcpmod_study(&scenario, 42).unwrap();
    assert!((report.true_med.unwrap() - 25.0).abs() < 1e-3);
    for cell in &report.cells {
        assert!(
            cell.signal_rate.unwrap() >= 0.8,
            "{}: signal rate {:?}",
            cell.strategy,
            cell.signal_rate
        );
        let select_true = cell.select_true_rate.unwrap();
        assert!(
            select_true > 0.2,
            "{}: true-family selection {select_true} at the uniform floor",
            cell.strategy
        );
        for row in &cell.selection {
            if row.family != FamilyName::Emax {
                assert!(
                    select_true > row.rate,
                    "{}: {:?} selected as often ({}) as the truth ({select_true})",
                    cell.strategy,
                    row.family,
                    row.rate
                );
            }
        }
        // MED estimates center near the true dose at this sample size.
        let bias = cell.med_bias.unwrap();
        assert!(bias.abs() < 5.0, "{}: MED bias {bias}", cell.strategy);
    }
}
