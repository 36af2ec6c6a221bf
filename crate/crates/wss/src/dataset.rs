//! Dataset fitting: CSV input, all three estimators, both covariance
//! orders, and the five Wald tests for a user-supplied contrast.
//!
//! The expected CSV layout is a header row `y,delta,x1,...,xp` followed by
//! one row per observation: `y` the log observation time, `delta` the
//! event indicator (1 = observed failure), and the covariates. Malformed
//! input is a hard error naming the offending column or row; statistical
//! non-convergence is reported in the output with exit code zero.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use wss_core::{
    bce_from_mle, fit_firth, fit_mle, second_order_covariance, wald_test, Censoring,
    ContrastSpec, CovarianceChoice, CovariateDesign, FitOptions, FitResult,
    ModelSpec, Strategy, Tau,
};

use crate::config::{CensoringConfig, ContrastConfig, FitConfig};
use crate::REPORT_SCHEMA_VERSION;

/// Parsed dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Log observation times.
    pub y: DVector<f64>,
    /// Event indicators.
    pub delta: Vec<bool>,
    /// Covariate matrix.
    pub x: DMatrix<f64>,
}

/// Read a `y, delta, x1..xp` CSV file.
pub fn read_dataset(path: &Path) -> anyhow::Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| anyhow::anyhow!("cannot open dataset {}: {e}", path.display()))?;
    let headers = reader
        .headers()
        .map_err(|e| anyhow::anyhow!("cannot read header row: {e}"))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let y_col = find("y").ok_or_else(|| anyhow::anyhow!("missing column `y` in dataset header"))?;
    let delta_col =
        find("delta").ok_or_else(|| anyhow::anyhow!("missing column `delta` in dataset header"))?;
    let mut x_cols = Vec::new();
    for p in 1.. {
        match find(&format!("x{p}")) {
            Some(idx) => x_cols.push(idx),
            None => break,
        }
    }
    if x_cols.is_empty() {
        anyhow::bail!("missing column `x1` in dataset header (expected y, delta, x1..xp)");
    }

    let mut y = Vec::new();
    let mut delta = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| anyhow::anyhow!("bad CSV record: {e}"))?;
        let row_no = line + 2; // header is row 1
        let parse = |idx: usize, name: &str| -> anyhow::Result<f64> {
            let raw = record
                .get(idx)
                .ok_or_else(|| anyhow::anyhow!("row {row_no}: missing field `{name}`"))?;
            raw.trim()
                .parse::<f64>()
                .map_err(|_| anyhow::anyhow!("row {row_no}: cannot parse `{name}` value {raw:?}"))
        };
        y.push(parse(y_col, "y")?);
        let d = parse(delta_col, "delta")?;
        if d != 0.0 && d != 1.0 {
            anyhow::bail!("row {row_no}: `delta` must be 0 or 1, got {d}");
        }
        delta.push(d == 1.0);
        let mut row = Vec::with_capacity(x_cols.len());
        for (j, &idx) in x_cols.iter().enumerate() {
            row.push(parse(idx, &format!("x{}", j + 1))?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        anyhow::bail!("dataset {} has no observations", path.display());
    }
    let n = rows.len();
    let p = x_cols.len();
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    Ok(Dataset {
        y: DVector::from_vec(y),
        delta,
        x,
    })
}

fn censoring_from(config: &CensoringConfig, n: usize) -> Censoring {
    match config {
        CensoringConfig::None => Censoring::TypeII { failures: n },
        CensoringConfig::Type1 { time } => Censoring::type_i_common(*time, n),
        CensoringConfig::Type2 { failures } => Censoring::TypeII {
            failures: *failures,
        },
        CensoringConfig::Hybrid { time, failures, q } => Censoring::Hybrid {
            times: vec![*time; n],
            failures: *failures,
            q: *q,
        },
    }
}

/// One estimator's results in the fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateBlock {
    /// Estimator label.
    pub estimator: String,
    /// Whether scoring converged.
    pub converged: bool,
    /// Non-convergence reason, when any.
    pub failure: Option<String>,
    /// Coefficients.
    pub beta: Vec<f64>,
    /// First-order standard errors (square roots of the covariance
    /// diagonal).
    pub se: Vec<f64>,
    /// Scoring iterations.
    pub iterations: usize,
}

/// A covariance matrix in the fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceBlock {
    /// Estimator label.
    pub estimator: String,
    /// `first` (inverse information) or `second` (second-order).
    pub order: String,
    /// Row-major matrix.
    pub matrix: Vec<Vec<f64>>,
}

/// One Wald test row in the fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldBlock {
    /// Strategy label.
    pub strategy: String,
    /// Statistic, when defined.
    pub statistic: Option<f64>,
    /// Degrees of freedom.
    pub df: usize,
    /// Upper-tail p-value, when defined.
    pub p_value: Option<f64>,
    /// `ok`, `test-undefined`, or `unavailable`.
    pub status: String,
}

/// Full fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Report schema tag.
    pub schema_version: String,
    /// Observations.
    pub n: usize,
    /// Coefficients.
    pub p: usize,
    /// Shape parameter used.
    pub sigma: f64,
    /// `ok` when every estimator converged, `non-convergent` otherwise.
    pub status: String,
    /// Estimator blocks (MLE, BCE, Firth).
    pub estimates: Vec<EstimateBlock>,
    /// Covariance matrices (first order per estimator, second order for
    /// MLE and BCE).
    pub covariances: Vec<CovarianceBlock>,
    /// Wald tests for the configured contrast, one per strategy.
    pub wald: Vec<WaldBlock>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn estimate_block(fit: &FitResult) -> EstimateBlock {
    EstimateBlock {
        estimator: fit.kind.to_string(),
        converged: fit.converged,
        failure: fit.failure.map(|f| f.to_string()),
        beta: fit.beta.iter().copied().collect(),
        se: (0..fit.beta.len())
            .map(|j| fit.cov_first[(j, j)].max(0.0).sqrt())
            .collect(),
        iterations: fit.iterations,
    }
}

/// Fit a dataset and assemble the report.
pub fn run_fit(config: &FitConfig, dataset: &Dataset) -> anyhow::Result<FitReport> {
    let n = dataset.y.len();
    let p = dataset.x.ncols();
    let design = CovariateDesign::new(dataset.x.clone())
        .map_err(|e| anyhow::anyhow!("invalid design: {e}"))?;
    let spec = ModelSpec::new(design, config.sigma, censoring_from(&config.censoring, n))
        .map_err(|e| anyhow::anyhow!("invalid model specification: {e}"))?;
    let sample = wss_core::CensoredSample {
        log_times: dataset.y.clone(),
        events: dataset.delta.clone(),
    };

    let contrast = match &config.contrast {
        Some(ContrastConfig { matrix, null }) => {
            let m = matrix.len();
            if m == 0 || matrix.iter().any(|row| row.len() != p) || null.len() != p {
                anyhow::bail!("contrast must be m x {p} with a null vector of length {p}");
            }
            let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
            ContrastSpec::new(
                DMatrix::from_row_slice(m, p, &flat),
                DVector::from_column_slice(null),
            )
            .map_err(|e| anyhow::anyhow!("invalid contrast: {e}"))?
        }
        None => ContrastSpec::first_coordinates(p, p, DVector::zeros(p))
            .expect("identity contrast is valid"),
    };

    let options = FitOptions::default();
    let mle = fit_mle(&spec, &sample, &options).map_err(|e| anyhow::anyhow!("fit failed: {e}"))?;
    let bce = bce_from_mle(&spec, mle.clone(), &options)
        .map_err(|e| anyhow::anyhow!("bias correction failed: {e}"))?;
    let firth =
        fit_firth(&spec, &sample, &options).map_err(|e| anyhow::anyhow!("fit failed: {e}"))?;

    let mut covariances = Vec::new();
    let mut wald = Vec::new();
    let mut with_second: Vec<(Strategy, Option<FitResult>)> = Vec::new();

    for fit in [&mle, &bce, &firth] {
        if fit.converged {
            covariances.push(CovarianceBlock {
                estimator: fit.kind.to_string(),
                order: "first".to_string(),
                matrix: matrix_rows(&fit.cov_first),
            });
        }
    }
    for (fit, tau, strategy) in [
        (&mle, Tau::Mle, Strategy::Mle2),
        (&bce, Tau::Bce, Strategy::Bce2),
    ] {
        let attached = if fit.converged {
            match second_order_covariance(&spec, &fit.beta, tau) {
                Ok(cov2) => {
                    covariances.push(CovarianceBlock {
                        estimator: fit.kind.to_string(),
                        order: "second".to_string(),
                        matrix: matrix_rows(&cov2),
                    });
                    let mut f = (*fit).clone();
                    f.cov_second = Some(cov2);
                    Some(f)
                }
                Err(_) => None,
            }
        } else {
            None
        };
        with_second.push((strategy, attached));
    }

    let mut push_wald = |strategy: Strategy, fit: Option<&FitResult>, choice: CovarianceChoice| {
        let block = match fit {
            Some(f) if f.converged => match wald_test(f, choice, &contrast) {
                Ok(res) => WaldBlock {
                    strategy: strategy.to_string(),
                    statistic: Some(res.statistic),
                    df: res.df,
                    p_value: Some(res.p_value),
                    status: "ok".to_string(),
                },
                Err(wss_core::Error::TestUndefined) => WaldBlock {
                    strategy: strategy.to_string(),
                    statistic: None,
                    df: contrast.df(),
                    p_value: None,
                    status: "test-undefined".to_string(),
                },
                Err(e) => WaldBlock {
                    strategy: strategy.to_string(),
                    statistic: None,
                    df: contrast.df(),
                    p_value: None,
                    status: format!("error: {e}"),
                },
            },
            _ => WaldBlock {
                strategy: strategy.to_string(),
                statistic: None,
                df: contrast.df(),
                p_value: None,
                status: "unavailable".to_string(),
            },
        };
        wald.push(block);
    };

    push_wald(Strategy::Mle, Some(&mle), CovarianceChoice::First);
    let (_, mle2) = &with_second[0];
    push_wald(Strategy::Mle2, mle2.as_ref(), CovarianceChoice::Second);
    push_wald(Strategy::Bce, Some(&bce), CovarianceChoice::First);
    let (_, bce2) = &with_second[1];
    push_wald(Strategy::Bce2, bce2.as_ref(), CovarianceChoice::Second);
    push_wald(Strategy::Firth, Some(&firth), CovarianceChoice::First);

    let all_converged = mle.converged && bce.converged && firth.converged;
    Ok(FitReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        n,
        p,
        sigma: config.sigma,
        status: if all_converged { "ok" } else { "non-convergent" }.to_string(),
        estimates: vec![
            estimate_block(&mle),
            estimate_block(&bce),
            estimate_block(&firth),
        ],
        covariances,
        wald,
    })
}

/// CSV tables for a fit report.
pub fn write_fit_csv(dir: &Path, report: &FitReport) -> anyhow::Result<Vec<std::path::PathBuf>> {
    use std::fmt::Write as _;
    let mut estimates = String::from("estimator,coefficient,estimate,se,converged,failure\n");
    for block in &report.estimates {
        for j in 0..block.beta.len() {
            writeln!(
                estimates,
                "{},{},{},{},{},{}",
                block.estimator,
                j + 1,
                block.beta[j],
                block.se[j],
                block.converged,
                block.failure.clone().unwrap_or_default(),
            )?;
        }
    }
    let mut tests = String::from("strategy,statistic,df,p_value,status\n");
    for w in &report.wald {
        writeln!(
            tests,
            "{},{},{},{},{}",
            w.strategy,
            w.statistic.map(|v| v.to_string()).unwrap_or_default(),
            w.df,
            w.p_value.map(|v| v.to_string()).unwrap_or_default(),
            w.status,
        )?;
    }
    let mut covs = String::from("estimator,order,row,col,value\n");
    for c in &report.covariances {
        for (i, row) in c.matrix.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                writeln!(covs, "{},{},{},{},{}", c.estimator, c.order, i + 1, j + 1, v)?;
            }
        }
    }
    let paths = [
        ("fit_estimates.csv", estimates),
        ("fit_tests.csv", tests),
        ("fit_covariances.csv", covs),
    ];
    let mut written = Vec::new();
    for (name, text) in paths {
        let path = dir.join(name);
        std::fs::create_dir_all(dir)?;
        std::fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}
