use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use swarmkmc::config::{load_physics, read_config, BenchConfig, ConfigError, RunConfig};
use swarmkmc::energetics::EnergeticsError;
use swarmkmc::experiment::{execute_bench, execute_run, thread_budget, ExperimentError};
use swarmkmc::io::write_json;
use swarmkmc::training::{train, TrainConfig, TrainError};
use swarmkmc::verify::{verify, VerifyError};

#[derive(Parser, Debug)]
#[command(name = "swarmkmc", version, about = "Lattice KMC for Fe-Cu precipitation with policy-reweighted sampling")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the classical or reweighted sampler.
    Run,
    /// Train the actor and critic with PPO.
    Train {
        /// Continue from the latest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run a verification suite (`all` runs every suite).
    Verify { suite: String },
    /// Paired classical and reweighted runs to a matched zeta.
    Bench,
}

enum Failure {
    Verify,
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verify => 1,
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Energetics(_) | TrainError::Lattice(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<VerifyError> for Failure {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::UnknownSuite(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn config_or_default<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    match path {
        Some(p) => Ok(read_config(p)?),
        None => Ok(T::default()),
    }
}

fn out_dir(cli: &Cli, configured: Option<&PathBuf>, fallback: &str) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| configured.cloned())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn cmd_run(cli: &Cli) -> Result<(), Failure> {
    let mut cfg: RunConfig = config_or_default(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = out_dir(cli, cfg.output.as_ref(), "swarmkmc-run");
    cfg.output = Some(out.clone());
    let outcome = execute_run(&cfg, &out)?;
    let r = &outcome.report;
    log::info!(
        "{} steps, {:.3e} s simulated, cumulative dE {:.4} eV, TPE {:.4} eV, ETR {:.3}",
        r.steps,
        r.time_s,
        r.cumulative_de_ev,
        r.tpe_ev,
        r.etr
    );
    println!("{}", out.display());
    Ok(())
}

fn cmd_train(cli: &Cli, resume: bool) -> Result<(), Failure> {
    let cfg: TrainConfig = config_or_default(cli.config.as_deref())?;
    cfg.validate()?;
    let (pot, params) = load_physics(cfg.potential.as_deref())?;
    let params = match cfg.temperature {
        Some(t) => params.with_temperature(t).map_err(|e: EnergeticsError| Failure::Config(e.to_string()))?,
        None => params,
    };
    let out = out_dir(cli, None, "swarmkmc-train");
    std::fs::create_dir_all(&out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let seed = cli.seed.unwrap_or(0);
    let resolved = serde_json::json!({ "version": env!("CARGO_PKG_VERSION"), "seed": seed, "config": cfg });
    write_json(&out.join("config.resolved.json"), &resolved).map_err(|e| Failure::Runtime(e.to_string()))?;
    let outcome = train(&cfg, &pot, &params, seed, Some(&out), resume, |_| {})?;
    log::info!("{} episodes, {} checkpoints", outcome.logs.len(), outcome.checkpoints.len());
    println!("{}", out.display());
    Ok(())
}

fn cmd_verify(cli: &Cli, suite: &str) -> Result<(), Failure> {
    let (pot, params) = load_physics(None)?;
    let report = verify(suite, cli.seed.unwrap_or(0), &pot, &params)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(e.to_string()))?;
        write_json(&dir.join("verify_report.json"), &report).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    for p in &report.properties {
        let mark = if p.passed { "pass" } else { "FAIL" };
        log::info!("{mark} {}: {} (tolerance {}) {}", p.suite, p.measured, p.tolerance, p.property);
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Verify)
    }
}

fn cmd_bench(cli: &Cli) -> Result<(), Failure> {
    let mut cfg: BenchConfig = config_or_default(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = out_dir(cli, cfg.output.as_ref(), "swarmkmc-bench");
    cfg.output = Some(out.clone());
    let report = execute_bench(&cfg, &out, thread_budget())?;
    log::info!(
        "speedup {:.3}{} (classical {} steps, reweighted {} steps)",
        report.speedup_ratio,
        if report.speedup_lower_bound { " (lower bound)" } else { "" },
        report.classical.steps,
        report.swarm.steps
    );
    println!("{}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Run => cmd_run(&cli),
        Command::Train { resume } => cmd_train(&cli, *resume),
        Command::Verify { suite } => cmd_verify(&cli, suite),
        Command::Bench => cmd_bench(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Verify => eprintln!("error: verification failed"),
                Failure::Config(m) => eprintln!("config error: {m}"),
                Failure::Runtime(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
