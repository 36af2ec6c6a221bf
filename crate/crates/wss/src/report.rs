//! Report emission: deterministic CSV tables, JSON documents, and the run
//! manifest.
//!
//! Every CSV has a header row and a fixed column order; missing values are
//! empty fields. Floats print in shortest round-trip form, so identical
//! study results produce byte-identical files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::mcpmod_study::McpModReport;
use crate::regression::RegressionReport;

/// Run metadata written next to every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Hex SHA-256 of the canonical configuration JSON.
    pub config_hash: String,
    /// Master seed of the run.
    pub seed: u64,
    /// Software version.
    pub version: String,
    /// Subcommand that ran.
    pub command: String,
    /// RFC 3339 start timestamp.
    pub started_at: String,
    /// Wall-clock duration in seconds.
    pub wall_time: f64,
}

impl RunManifest {
    /// Write as pretty JSON to `dir/run_manifest.json`.
    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join("run_manifest.json");
        write_text(&path, &format!("{}\n", serde_json::to_string_pretty(self)?))?;
        Ok(path)
    }
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)
        .map_err(|e| anyhow::anyhow!("cannot create {}: {e}", path.display()))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write a generic JSON report document.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<PathBuf> {
    let path = dir.join(name);
    write_text(&path, &format!("{}\n", serde_json::to_string_pretty(value)?))?;
    Ok(path)
}

/// Emit the regression report tables.
pub fn write_regression_csv(dir: &Path, report: &RegressionReport) -> anyhow::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let scen = &report.scenario;

    let mut estimates = String::from(
        "p,n,censoring,estimator,coefficient,bias,rmse,mc_se,converged,replicates\n",
    );
    for cell in &report.cells {
        for est in &cell.estimators {
            for j in 0..est.bias.len() {
                estimates.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    scen.p,
                    cell.n,
                    scen.censor_rate,
                    est.estimator,
                    j + 1,
                    est.bias[j],
                    est.rmse[j],
                    est.mc_se[j],
                    est.converged,
                    cell.replicates,
                ));
            }
        }
    }
    let path = dir.join("regression_estimates.csv");
    write_text(&path, &estimates)?;
    written.push(path);

    let mut tests =
        String::from("p,n,censoring,strategy,convergence,type1_rate,type1_se,tested\n");
    for cell in &report.cells {
        for s in &cell.strategies {
            tests.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                scen.p,
                cell.n,
                scen.censor_rate,
                s.strategy,
                s.convergence_rate,
                fmt_opt(s.type1_rate),
                fmt_opt(s.type1_se),
                s.tested,
            ));
        }
    }
    let path = dir.join("regression_tests.csv");
    write_text(&path, &tests)?;
    written.push(path);

    let mut power = String::from("p,n,censoring,psi,strategy,rejection_rate,mc_se,tested,convergence\n");
    for cell in &report.cells {
        for row in &cell.power {
            power.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                scen.p,
                cell.n,
                scen.censor_rate,
                row.psi,
                row.strategy,
                fmt_opt(row.rejection_rate),
                fmt_opt(row.mc_se),
                row.tested,
                row.convergence_rate,
            ));
        }
    }
    let path = dir.join("regression_power.csv");
    write_text(&path, &power)?;
    written.push(path);

    let mut dist = String::from(
        "p,n,censoring,estimator,reference,d1,d2,d3,replicates_used\n",
    );
    for cell in &report.cells {
        for row in &cell.covariance_distances {
            for (reference, t) in [("first_order", &row.vs_first), ("second_order", &row.vs_second)]
            {
                dist.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    scen.p,
                    cell.n,
                    scen.censor_rate,
                    row.estimator,
                    reference,
                    t.d1,
                    t.d2,
                    t.d3,
                    row.replicates_used,
                ));
            }
        }
    }
    let path = dir.join("regression_covdist.csv");
    write_text(&path, &dist)?;
    written.push(path);

    Ok(written)
}

/// Emit the dose-finding operating-characteristic table.
///
/// Columns: scenario, strategy, n, censoring, convergence, signal_prob,
/// select_prob, med_bias, med_rmse, mc_se (of the signal probability).
pub fn write_mcpmod_csv(dir: &Path, report: &McpModReport) -> anyhow::Result<Vec<PathBuf>> {
    let mut table = String::from(
        "scenario,strategy,n,censoring,convergence,signal_prob,select_prob,med_bias,med_rmse,mc_se\n",
    );
    for cell in &report.cells {
        table.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            report.scenario.true_model,
            cell.strategy,
            cell.n_per_dose,
            report.scenario.censor_rate,
            cell.convergence_rate,
            fmt_opt(cell.signal_rate),
            fmt_opt(cell.select_true_rate),
            fmt_opt(cell.med_bias),
            fmt_opt(cell.med_rmse),
            fmt_opt(cell.signal_se),
        ));
    }
    let path = dir.join("mcpmod_oc.csv");
    write_text(&path, &table)?;
    Ok(vec![path])
}

/// Emit the raw per-replicate regression records.
pub fn write_regression_raw_csv(
    dir: &Path,
    raw: &[crate::regression::RegressionRawRecord],
) -> anyhow::Result<PathBuf> {
    let estimators = ["MLE", "BCE", "Firth"];
    let strategies = ["MLE", "MLE2", "BCE", "BCE2", "Firth"];
    let mut estimates = String::from("n,part,psi,replicate,estimator,coefficient,estimate\n");
    let mut tests = String::from("n,part,psi,replicate,strategy,rejected\n");
    for r in raw {
        for (e_idx, label) in estimators.iter().enumerate() {
            if let Some(beta) = &r.estimates[e_idx] {
                for (j, b) in beta.iter().enumerate() {
                    estimates.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        r.n, r.part, r.psi, r.replicate, label, j + 1, b
                    ));
                }
            }
        }
        for (s_idx, label) in strategies.iter().enumerate() {
            tests.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.n,
                r.part,
                r.psi,
                r.replicate,
                label,
                r.rejections[s_idx]
                    .map(|b| if b { "1" } else { "0" })
                    .unwrap_or(""),
            ));
        }
    }
    let path = dir.join("regression_raw_estimates.csv");
    write_text(&path, &estimates)?;
    let tests_path = dir.join("regression_raw_tests.csv");
    write_text(&tests_path, &tests)?;
    Ok(path)
}

/// Emit the raw per-replicate dose-finding records.
pub fn write_mcpmod_raw_csv(
    dir: &Path,
    raw: &[crate::mcpmod_study::McpModRawRecord],
) -> anyhow::Result<PathBuf> {
    let mut table =
        String::from("n,replicate,strategy,converged,signal,selected,med,clamped\n");
    for r in raw {
        table.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.n_per_dose,
            r.replicate,
            r.strategy,
            r.converged,
            r.signal.map(|b| if b { "1" } else { "0" }).unwrap_or(""),
            r.selected
                .map(|f| format!("{:?}", f).to_lowercase())
                .unwrap_or_default(),
            r.med.map(|m| m.to_string()).unwrap_or_default(),
            r.clamped,
        ));
    }
    let path = dir.join("mcpmod_raw.csv");
    write_text(&path, &table)?;
    Ok(path)
}

/// Emit a contrast table: one row per candidate plus the correlation
/// matrix.
pub fn write_contrasts_csv(
    dir: &Path,
    families: &[String],
    doses: &[f64],
    weights: &nalgebra::DMatrix<f64>,
    correlation: &nalgebra::DMatrix<f64>,
) -> anyhow::Result<Vec<PathBuf>> {
    let mut table = String::from("model");
    for d in doses {
        table.push_str(&format!(",dose_{d}"));
    }
    table.push('\n');
    for (m, fam) in families.iter().enumerate() {
        table.push_str(fam);
        for j in 0..weights.ncols() {
            table.push_str(&format!(",{}", weights[(m, j)]));
        }
        table.push('\n');
    }
    let path = dir.join("contrasts.csv");
    write_text(&path, &table)?;

    let mut corr = String::from("model");
    for fam in families {
        corr.push_str(&format!(",{fam}"));
    }
    corr.push('\n');
    for (m, fam) in families.iter().enumerate() {
        corr.push_str(fam);
        for k in 0..families.len() {
            corr.push_str(&format!(",{}", correlation[(m, k)]));
        }
        corr.push('\n');
    }
    let corr_path = dir.join("contrast_correlation.csv");
    write_text(&corr_path, &corr)?;
    Ok(vec![path, corr_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips() {
        let m = RunManifest {
            config_hash: "ab".repeat(32),
            seed: 7,
            version: crate::VERSION.to_string(),
            command: "sim-mcpmod".to_string(),
            started_at: "2026-01-01T00:00:00Z".to_string(),
            wall_time: 1.25,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = m.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(m, back);
    }
}
