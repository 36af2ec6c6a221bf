//! `wss`: censored Weibull small-sample inference and dose-finding studies.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use nalgebra::DMatrix;

use wss::config::{Mode, OutputFormat, StudyConfig};
use wss::report::{self, RunManifest};
use wss::scenarios::build_candidates;
use wss::{dataset, mcpmod_study, regression};

#[derive(Parser)]
#[command(
    name = "wss",
    version,
    about = "Small-sample censored Weibull regression and MCP-Mod dose-finding studies"
)]
struct Cli {
    /// Study configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for reports and the run manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to available parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Tabular output format.
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a CSV dataset: estimators, covariances, and Wald tests.
    Fit {
        /// Dataset CSV (columns y, delta, x1..xp); overrides the config.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the regression-level Monte Carlo study.
    SimRegression,
    /// Run the dose-finding Monte Carlo study.
    SimMcpmod,
    /// Print optimal contrasts for the configured candidate set.
    Contrasts,
    /// Evaluate the minimum effective dose of a configured curve.
    Med,
}

impl Command {
    fn mode(&self) -> Mode {
        match self {
            Command::Fit { .. } => Mode::Fit,
            Command::SimRegression => Mode::SimRegression,
            Command::SimMcpmod => Mode::SimMcpmod,
            Command::Contrasts => Mode::Contrasts,
            Command::Med => Mode::Med,
        }
    }
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter("WSS_LOG_LEVEL")).init();
    let cli = Cli::parse();

    let mut config = match &cli.config {
        Some(path) => StudyConfig::load(path)?,
        None => StudyConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = Some(out.clone());
    }
    if let Some(format) = cli.format {
        config.format = format;
    }
    if let Some(workers) = cli.workers {
        config.workers = Some(workers);
    }

    let mode = cli.command.mode();
    if let Some(declared) = config.mode {
        if declared != mode {
            anyhow::bail!("config declares mode `{declared}` but the subcommand is `{mode}`");
        }
    }

    let out_dir = config.out.clone().unwrap_or_else(|| PathBuf::from("wss-out"));
    let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
    let start = Instant::now();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0)) // 0 = available parallelism
        .build()
        .context("cannot build worker pool")?;

    match &cli.command {
        Command::Fit { data } => {
            let mut fit_cfg = config
                .fit
                .clone()
                .ok_or_else(|| anyhow::anyhow!("config has no `fit` block"))?;
            if let Some(path) = data {
                fit_cfg.data = path.clone();
            }
            let ds = dataset::read_dataset(&fit_cfg.data)?;
            let report_doc = dataset::run_fit(&fit_cfg, &ds)?;
            report::write_json(&out_dir, "fit_report.json", &report_doc)?;
            if config.format == OutputFormat::Csv {
                dataset::write_fit_csv(&out_dir, &report_doc)?;
            }
            println!("status: {}", report_doc.status);
            for block in &report_doc.estimates {
                println!(
                    "{}: beta = {:?}{}",
                    block.estimator,
                    block.beta,
                    block
                        .failure
                        .as_ref()
                        .map(|f| format!(" (did not converge: {f})"))
                        .unwrap_or_default()
                );
            }
            for w in &report_doc.wald {
                match (w.statistic, w.p_value) {
                    (Some(s), Some(p)) => {
                        println!("W_{}: statistic = {s:.6}, df = {}, p = {p:.6}", w.strategy, w.df)
                    }
                    _ => println!("W_{}: {}", w.strategy, w.status),
                }
            }
        }
        Command::SimRegression => {
            let scenario = config
                .regression
                .clone()
                .ok_or_else(|| anyhow::anyhow!("config has no `regression` block"))?;
            let (report_doc, raw) = pool
                .install(|| regression::run_regression_study_detailed(&scenario, config.seed))?;
            report::write_json(&out_dir, "regression_report.json", &report_doc)?;
            if config.format == OutputFormat::Csv {
                report::write_regression_csv(&out_dir, &report_doc)?;
            }
            if config.emit_raw {
                report::write_regression_raw_csv(&out_dir, &raw)?;
            }
            println!(
                "regression study complete: {} cells, reports in {}",
                report_doc.cells.len(),
                out_dir.display()
            );
        }
        Command::SimMcpmod => {
            let scenario = config
                .mcpmod
                .clone()
                .ok_or_else(|| anyhow::anyhow!("config has no `mcpmod` block"))?;
            let (report_doc, raw) =
                pool.install(|| mcpmod_study::run_mcpmod_study_detailed(&scenario, config.seed))?;
            report::write_json(&out_dir, "mcpmod_report.json", &report_doc)?;
            if config.format == OutputFormat::Csv {
                report::write_mcpmod_csv(&out_dir, &report_doc)?;
            }
            if config.emit_raw {
                report::write_mcpmod_raw_csv(&out_dir, &raw)?;
            }
            println!(
                "dose-finding study complete: {} cells, reports in {}",
                report_doc.cells.len(),
                out_dir.display()
            );
        }
        Command::Contrasts => {
            let ccfg = config.contrasts.clone().unwrap_or_else(|| {
                serde_json::from_str("{}").expect("contrasts defaults parse")
            });
            let specs = ccfg
                .candidates
                .clone()
                .unwrap_or_else(wss::scenarios::default_candidate_specs);
            let candidates = build_candidates(
                &specs,
                &ccfg.doses,
                ccfg.placebo_response,
                ccfg.max_effect,
            )?;
            let d = ccfg.doses.len();
            let s = match &ccfg.s_matrix {
                Some(rows) => {
                    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                        anyhow::bail!("s_matrix must be {d} x {d}");
                    }
                    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                    DMatrix::from_row_slice(d, d, &flat)
                }
                None => DMatrix::identity(d, d) / ccfg.n.max(1) as f64,
            };
            let mu0: Vec<nalgebra::DVector<f64>> = candidates
                .iter()
                .map(|c| {
                    let mut v = nalgebra::DVector::zeros(d);
                    for (i, &x) in ccfg.doses.iter().enumerate() {
                        v[i] = wss_core::mcpmod::standardized_response(&c.shape, x)?;
                    }
                    Ok(v)
                })
                .collect::<Result<_, wss_core::Error>>()?;
            let oc = wss_core::mcpmod::optimal_contrasts(&mu0, &s)?;
            let families: Vec<String> = candidates
                .iter()
                .map(|c| c.family().to_string())
                .collect();
            report::write_contrasts_csv(&out_dir, &families, &ccfg.doses, &oc.weights, &oc.correlation)?;
            println!("optimal contrasts (rows sum to zero, unit norm):");
            for (m, fam) in families.iter().enumerate() {
                let row: Vec<String> = (0..d)
                    .map(|j| format!("{:+.5}", oc.weights[(m, j)]))
                    .collect();
                println!("  {fam:>12}: [{}]", row.join(", "));
            }
        }
        Command::Med => {
            let mcfg = config
                .med
                .clone()
                .ok_or_else(|| anyhow::anyhow!("config has no `med` block"))?;
            let curve = build_candidates(
                &[mcfg.candidate.clone()],
                &mcfg.doses,
                mcfg.e0,
                mcfg.max_effect,
            )?
            .remove(0);
            let design = wss_core::mcpmod::DoseDesign::balanced(mcfg.doses.clone(), 1)
                .map_err(|e| anyhow::anyhow!("invalid dose grid: {e}"))?;
            let med = wss_core::mcpmod::estimate_med(&curve, mcfg.delta, &design)?;
            let doc = serde_json::json!({
                "schema_version": wss::REPORT_SCHEMA_VERSION,
                "family": curve.family().to_string(),
                "theta0": curve.theta0,
                "theta1": curve.theta1,
                "delta": mcfg.delta,
                "med": med.dose,
                "clamped": med.clamped,
            });
            report::write_json(&out_dir, "med.json", &doc)?;
            match med.dose {
                Some(dose) => println!(
                    "MED = {dose:.4}{}",
                    if med.clamped { " (clamped to dose range)" } else { "" }
                ),
                None => println!("MED not reached within the dose range"),
            }
        }
    }

    let manifest = RunManifest {
        config_hash: config.hash(),
        seed: config.seed,
        version: wss::VERSION.to_string(),
        command: mode.to_string(),
        started_at,
        wall_time: start.elapsed().as_secs_f64(),
    };
    manifest.write(&out_dir)?;
    Ok(())
}
