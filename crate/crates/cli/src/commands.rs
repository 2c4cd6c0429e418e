use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use optma::data::{self, GeneratorConfig, Problem};
use optma::eval::{self, ExperimentConfig, ExperimentReport, ModelRun, Plane};
use optma::io::write_atomic;
use optma::models::Family;
use optma::parallel::{self, Execution};
use optma::suite::{self, SuiteConfig};
use optma::tape::Fault;

use crate::{Cli, Command, FaultArg};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] optma::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(optma::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> Result<()> {
    parallel::with_threads(cli.jobs, || match &cli.command {
        Command::GenData => gen_data(cli),
        Command::Train { family } => train(cli, *family),
        Command::GradCheck {
            points,
            h,
            tol,
            inject_fault,
        } => grad_check(cli, *points, *h, *tol, *inject_fault),
        Command::Experiment => experiment(cli),
        Command::Report { input } => report(cli, input),
    })
}

fn config_path(cli: &Cli) -> Result<&Path> {
    cli.config
        .as_deref()
        .ok_or_else(|| CliError::Config("this command needs --config <FILE>".into()))
}

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

/// Any failure to read, parse or validate a config is a config error.
fn as_config_error(path: &Path, e: optma::Error) -> CliError {
    match e {
        optma::Error::Io(_) | optma::Error::Json(_) | optma::Error::Config(_) => {
            CliError::Config(format!("{}: {e}", path.display()))
        }
        other => CliError::Core(other),
    }
}

fn load_experiment(cli: &Cli) -> Result<ExperimentConfig> {
    let path = config_path(cli)?;
    let mut cfg = ExperimentConfig::load(path).map_err(|e| as_config_error(path, e))?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
        cfg.n_repeats = None;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(optma::Error::from)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(optma::Error::from)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

macro_rules! say {
    ($cli:expr, $($arg:tt)*) => {
        if !$cli.quiet {
            println!($($arg)*);
        }
    };
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config_hash: String,
    rows: usize,
    config: &'a GeneratorConfig,
}

fn gen_data(cli: &Cli) -> Result<()> {
    let path = config_path(cli)?;
    let mut cfg: GeneratorConfig = serde_json::from_str(&read_config(path)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cfg.n == 0 {
        return Err(CliError::Config(format!("{}: n must be positive", path.display())));
    }
    let dataset = cfg.generate()?;
    let dir = out_dir(cli)?;
    let csv = dir.join(format!("{}.csv", cfg.problem));
    write_atomic(&csv, &data::csv_bytes(&dataset)?)?;
    write_json(
        &dir.join(format!("{}.csv.meta.json", cfg.problem)),
        &Sidecar {
            config_hash: dataset.meta().config_hash.clone(),
            rows: dataset.len(),
            config: &cfg,
        },
    )?;
    say!(cli, "wrote {} rows to {}", dataset.len(), csv.display());
    Ok(())
}

fn train(cli: &Cli, only: Option<Family>) -> Result<()> {
    let cfg = load_experiment(cli)?;
    let seed = cfg.seeds[0];
    let families: Vec<Family> = match only {
        Some(f) => vec![f],
        None => cfg.families.clone(),
    };
    let dir = out_dir(cli)?;
    let mut runs: Vec<ModelRun> = Vec::new();
    for family in families {
        let (model, run) = eval::train_seed(&cfg, seed, family, Execution::Parallel)?;
        let ck = dir.join(format!("{family}.checkpoint.json"));
        model.net.save(&ck)?;
        say!(
            cli,
            "{family:<10} seed {seed}  params {:>6}  best epoch {:>4}  test mse (norm) {:.6}  -> {}",
            run.n_params,
            run.best_epoch.map_or(-1, |e| e as i64),
            run.test_mse_norm.unwrap_or(f64::NAN),
            ck.display()
        );
        runs.push(run);
    }
    write_json(&dir.join("train.json"), &runs)
}

fn grad_check(cli: &Cli, points: usize, h: f64, tol: f64, fault: Option<FaultArg>) -> Result<()> {
    let cfg = SuiteConfig {
        points,
        h,
        tol,
        seed: cli.seed.unwrap_or(0),
        fault: fault.map(|FaultArg::CosAdjoint| Fault::CosAdjointSign),
    };
    let report = suite::run_suite(&cfg).map_err(|e| match e {
        optma::Error::Config(m) => CliError::Config(m),
        other => CliError::Core(other),
    })?;
    for c in &report.checks {
        say!(
            cli,
            "{:<24} {:>4} points  max rel err {:.3e}  skipped {:>3}  {}",
            c.name,
            c.points,
            c.max_rel_error,
            c.non_checkable,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir).map_err(optma::Error::from)?;
        write_json(&dir.join("grad_check.json"), &report)?;
    }
    if report.passed {
        say!(cli, "all {} checks passed (h = {h:e}, tol = {tol:e})", report.checks.len());
        Ok(())
    } else {
        let failed: Vec<&str> = report.failures().map(|c| c.name).collect();
        Err(CliError::Failed(format!("gradient check failed for: {}", failed.join(", "))))
    }
}

fn write_scatter(dir: &Path, report: &ExperimentReport) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if report.problem != Problem::Acoustic {
        return Ok(written);
    }
    for plane in [Plane::Yz, Plane::Xz] {
        let rows = eval::emit_scatter(report, plane)?;
        let path = dir.join(format!("scatter_{}.csv", plane.name()));
        write_atomic(&path, &eval::scatter_csv(&rows, plane)?)?;
        written.push(path);
    }
    Ok(written)
}

fn print_summary(cli: &Cli, report: &ExperimentReport) {
    if cli.quiet {
        return;
    }
    println!("problem {}  config {}", report.problem, &report.config_hash[..12.min(report.config_hash.len())]);
    for s in &report.seeds {
        print!("seed {:>6}  train {:>5}  fit {:>5}  val {:>5}  test {:>5}", s.seed, s.train_size, s.fit_size, s.val_size, s.test_size);
        if let Some(r) = s.radius {
            print!("  radius {r:.4}");
        }
        println!();
    }
    println!(
        "{:<11} {:>5} {:>6} {:>13} {:>13} {:>13} {:>13}",
        "family", "ok", "failed", "mse med", "mse mean", "rmse med", "raw mse med"
    );
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
    for s in &report.summary {
        println!(
            "{:<11} {:>5} {:>6} {:>13} {:>13} {:>13} {:>13}",
            s.family.to_string(),
            s.completed_runs,
            s.failed_runs,
            fmt(s.mse_norm_median),
            fmt(s.mse_norm_mean),
            fmt(s.rmse_norm_median),
            fmt(s.mse_raw_median)
        );
    }
    let med = |f| report.summary_for(f).and_then(|s| s.mse_norm_median);
    if let (Some(dd), Some(opt)) = (med(Family::PureDd), med(Family::OptmaNet)) {
        println!("pure_dd / optma_net median mse ratio: {:.3}", dd / opt);
    }
}

fn experiment(cli: &Cli) -> Result<()> {
    let cfg = load_experiment(cli)?;
    let dir = out_dir(cli)?;
    let report = eval::run_experiment(&cfg)?;
    let path = dir.join("report.json");
    let mut text = report.to_json()?;
    text.push('\n');
    write_atomic(&path, text.as_bytes())?;
    let scatter = write_scatter(&dir, &report)?;
    print_summary(cli, &report);
    say!(cli, "wrote {}", path.display());
    for p in scatter {
        say!(cli, "wrote {}", p.display());
    }
    if report.all_ok() {
        Ok(())
    } else {
        Err(CliError::Failed("some training runs failed; see the report for details".into()))
    }
}

fn report(cli: &Cli, input: &Path) -> Result<()> {
    let text = fs::read_to_string(input).map_err(optma::Error::from)?;
    let report: ExperimentReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
    if report.report_version != eval::REPORT_VERSION {
        return Err(CliError::Config(format!(
            "{}: report version {} is not supported",
            input.display(),
            report.report_version
        )));
    }
    print_summary(cli, &report);
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir).map_err(optma::Error::from)?;
        for p in write_scatter(dir, &report)? {
            say!(cli, "wrote {}", p.display());
        }
    }
    Ok(())
}
