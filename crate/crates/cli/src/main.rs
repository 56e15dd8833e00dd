mod config;
mod validate;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use lagcv::report::{write_bound_csv, write_estimator_csv, OutputHeader};
use lagcv::runner::{exact_bound_report, execute, execute_with_threads, ExperimentPlan, KGrid, KernelSpec, RunOutput};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{BoundMethod, LoadedConfig};

#[derive(Debug, Parser)]
#[command(
    name = "lagcv",
    version,
    about = "Lagged couplings: bias bounds and control-variate estimators"
)]
struct Cli {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `master_seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Total-variation bounds over the configured k grid.
    Bounds,
    /// Run the configured estimators.
    Estimate,
    /// Self-check battery; exits non-zero if any check fails.
    Validate,
    /// Closed-form bounds for geometric meeting times, without a config.
    Geometric(GeometricArgs),
}

#[derive(Debug, Args)]
struct GeometricArgs {
    /// Success probability of the injected meeting time.
    #[arg(long)]
    p: f64,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    lags: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    k_start: usize,
    #[arg(long)]
    k_stop: usize,
    #[arg(long, default_value_t = 1)]
    k_step: usize,
    /// Also estimate the bounds from this many processes per replicate.
    #[arg(long)]
    processes: Option<usize>,
    #[arg(long, default_value_t = 20)]
    replicates: usize,
}

/// Bad input gets exit code 1, failures while running get 2.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<lagcv::Error>() {
            Some(lagcv::Error::PlanInvalid(_) | lagcv::Error::InvalidConfig(_) | lagcv::Error::InvalidMatrix(_)) => {
                Failure::Usage(e)
            }
            Some(_) => Failure::Runtime(e),
            None if e.downcast_ref::<std::io::Error>().is_some() => Failure::Runtime(e),
            None => Failure::Usage(e),
        }
    }
}

impl From<lagcv::Error> for Failure {
    fn from(e: lagcv::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(cli: &Cli) -> Result<LoadedConfig, Failure> {
    let path = cli.config.as_deref().context("this command needs --config")?;
    let mut loaded = LoadedConfig::load(path)?;
    if let Some(seed) = cli.seed {
        loaded.config.master_seed = seed;
    }
    Ok(loaded)
}

fn run(cli: &Cli) -> Result<bool, Failure> {
    match &cli.command {
        Command::Bounds => bounds(cli),
        Command::Estimate => estimate(cli),
        Command::Validate => validate(cli),
        Command::Geometric(args) => geometric(cli, args),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(Failure::Runtime)?;
    let path = dir.join(name);
    let file = File::create(&path)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Runtime)?;
    Ok(BufWriter::new(file))
}

fn run_plan(cli: &Cli, plan: &ExperimentPlan) -> Result<RunOutput, Failure> {
    let output = match cli.threads {
        Some(n) => execute_with_threads(plan, n),
        None => execute(plan),
    };
    output.map_err(|e| Failure::Runtime(e.into()))
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    config_hash: &'a str,
    #[serde(flatten)]
    summary: &'a lagcv::runner::RunSummary,
}

fn write_summary(cli: &Cli, name: &str, hash: &str, output: &RunOutput) -> Result<(), Failure> {
    let file = SummaryFile {
        config_hash: hash,
        summary: &output.summary,
    };
    serde_json::to_writer_pretty(create(&cli.out, name)?, &file)
        .context("cannot write summary")
        .map_err(Failure::Runtime)
}

fn io(e: std::io::Error) -> Failure {
    Failure::Runtime(e.into())
}

fn bounds(cli: &Cli) -> Result<bool, Failure> {
    let loaded = load(cli)?;
    let c = &loaded.config;
    let header = OutputHeader {
        config_hash: loaded.hash.clone(),
        master_seed: c.master_seed,
    };
    match c.bounds()?.method {
        BoundMethod::Exact => {
            let ks = c.k_values()?;
            if c.lags.is_empty() || c.lags.contains(&0) {
                return Err(Failure::Usage(anyhow::anyhow!(
                    "lags must be a nonempty list of positive integers"
                )));
            }
            let report = exact_bound_report(c.kernel()?, &c.lags, &ks)?;
            write_bound_csv(&report, &header, create(&cli.out, &c.output.exact_csv)?).map_err(io)?;
            println!(
                "wrote {} rows to {}",
                report.rows.len(),
                cli.out.join(&c.output.exact_csv).display()
            );
        }
        BoundMethod::Empirical => {
            let plan = c.bound_plan()?;
            let output = run_plan(cli, &plan)?;
            write_bound_csv(&output.summary.bounds, &header, create(&cli.out, &c.output.bounds_csv)?).map_err(io)?;
            write_summary(cli, &c.output.summary_json, &loaded.hash, &output)?;
            println!(
                "wrote {} rows to {} in {:.2}s",
                output.summary.bounds.rows.len(),
                cli.out.join(&c.output.bounds_csv).display(),
                output.summary.wall_clock_seconds
            );
        }
    }
    Ok(true)
}

fn estimate(cli: &Cli) -> Result<bool, Failure> {
    let loaded = load(cli)?;
    let c = &loaded.config;
    let plan = c.estimate_plan()?;
    let output = run_plan(cli, &plan)?;
    let header = OutputHeader {
        config_hash: loaded.hash.clone(),
        master_seed: c.master_seed,
    };
    write_estimator_csv(
        &output.summary.estimators,
        &header,
        create(&cli.out, &c.output.estimates_csv)?,
    )
    .map_err(io)?;
    write_summary(cli, &c.output.summary_json, &loaded.hash, &output)?;
    for m in &output.summary.meeting {
        println!(
            "L={}: mean joint steps {:.3}, max tau {}",
            m.lag, m.mean_joint_steps, m.max_tau
        );
    }
    Ok(true)
}

fn validate(cli: &Cli) -> Result<bool, Failure> {
    let mut loaded = match &cli.config {
        Some(_) => load(cli)?,
        None => LoadedConfig::empty(),
    };
    if let Some(seed) = cli.seed {
        loaded.config.master_seed = seed;
    }
    let v = &loaded.config.validate;
    let checks = validate::run(loaded.config.master_seed, v.cases, &v.matrices);
    for check in &checks {
        println!("{check}");
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn geometric(cli: &Cli, args: &GeometricArgs) -> Result<bool, Failure> {
    // No config file, so the hash covers the arguments that shape the output.
    let canonical = format!(
        "geometric p={} lags={:?} k={}..={}/{} processes={:?} replicates={}",
        args.p, args.lags, args.k_start, args.k_stop, args.k_step, args.processes, args.replicates
    );
    let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
    let seed = cli.seed.unwrap_or(0);
    let header = OutputHeader {
        config_hash: hash.clone(),
        master_seed: seed,
    };
    let grid = KGrid {
        start: args.k_start,
        stop: args.k_stop,
        step: args.k_step,
    };
    let ks = grid.values();
    if ks.is_empty() {
        return Err(Failure::Usage(anyhow::anyhow!(
            "k grid {}..={} step {} is empty",
            grid.start,
            grid.stop,
            grid.step
        )));
    }
    if args.lags.is_empty() || args.lags.contains(&0) {
        return Err(Failure::Usage(anyhow::anyhow!(
            "lags must be a nonempty list of positive integers"
        )));
    }
    let kernel = KernelSpec::Geometric { p: args.p };
    let report = exact_bound_report(&kernel, &args.lags, &ks)?;
    write_bound_csv(&report, &header, create(&cli.out, "bounds_exact.csv")?).map_err(io)?;
    if let Some(q) = args.processes {
        let plan = ExperimentPlan::new(kernel, args.lags.clone(), q, args.replicates, seed)
            .with_k_grid(grid.start, grid.stop, grid.step);
        plan.validate()?;
        let output = run_plan(cli, &plan)?;
        write_bound_csv(&output.summary.bounds, &header, create(&cli.out, "bounds.csv")?).map_err(io)?;
        write_summary(cli, "summary.json", &hash, &output)?;
    }
    println!("wrote geometric bounds to {}", cli.out.display());
    Ok(true)
}
