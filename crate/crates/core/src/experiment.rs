//! Complete `run` and `bench` workflows with their output files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::agents::{load_checkpoint, CheckpointError, Policy, UniformPolicy};
use crate::config::{BenchConfig, ConfigError, RunConfig, SamplerKind};
use crate::energetics::{PairPotential, RateParams};
use crate::io::{self, IsAuditCsv, TrajectoryCsv, XyzSnapshots};
use crate::kinetics::{ClassicalSampler, KmcError, Sampler};
use crate::lattice::LatticeState;
use crate::metrics::{
    advancement_factor, cu_bond_change, cu_cu_bonds, equilibrium_bonds, zeta, BenchmarkReport, BondTracker,
    EnergyTracker, MetricsError, SamplerSummary, TransitionStats,
};
use crate::reweight::{ReweightError, SwarmSampler};
use crate::rng::{stream, Stream};
use crate::trajectory::StepSink;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const AUDIT_FILE: &str = "is_audit.csv";
pub const ZETA_FILE: &str = "zeta.csv";
pub const ENERGY_FILE: &str = "energy.csv";
pub const REPORT_FILE: &str = "report.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";
pub const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot load checkpoint `{path}`: {source}")]
    Checkpoint { path: String, source: CheckpointError },
    #[error(transparent)]
    Kmc(#[from] KmcError),
    #[error(transparent)]
    Reweight(#[from] ReweightError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("I/O on `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
}

impl ExperimentError {
    /// Whether the failure is attributable to the configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config(_) | ExperimentError::Checkpoint { .. })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Seed of the classical reference anneal derived from the run seed.
pub fn reference_seed(seed: u64) -> u64 {
    stream(seed, Stream::Reference).random()
}

/// Actor from a checkpoint, or the uniform policy.
pub fn load_policy(path: Option<&Path>) -> Result<Box<dyn Policy + Send + Sync>, ExperimentError> {
    match path {
        None => Ok(Box::new(UniformPolicy)),
        Some(p) => {
            let ckpt = load_checkpoint(p).map_err(|source| ExperimentError::Checkpoint {
                path: p.display().to_string(),
                source,
            })?;
            Ok(Box::new(ckpt.actor))
        }
    }
}

/// Resolved configuration plus the code version.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved<'a, T: Serialize> {
    pub version: &'static str,
    pub seed: u64,
    pub config: &'a T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub sampler: SamplerKind,
    pub seed: u64,
    pub steps: u64,
    pub time_s: f64,
    pub initial_energy_ev: f64,
    pub cumulative_de_ev: f64,
    pub energy_checks: usize,
    pub tpe_ev: f64,
    pub etr: f64,
    pub b0: u64,
    pub b_final: u64,
    pub b_eq: Option<f64>,
    pub final_zeta: Option<f64>,
    /// `ln w` of the whole trajectory; 0 for the classical sampler.
    pub log_weight: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub out_dir: PathBuf,
    pub final_state: LatticeState,
}

/// Execute a run and write its output directory.
pub fn execute_run(cfg: &RunConfig, out: &Path) -> Result<RunOutcome, ExperimentError> {
    cfg.validate()?;
    let (pot, params) = cfg.system.physics()?;
    let policy = match cfg.sampler {
        SamplerKind::Swarm => Some(load_policy(cfg.checkpoint.as_deref())?),
        SamplerKind::Classical => None,
    };
    let initial = cfg.system.initial_state(cfg.seed)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let resolved = Resolved {
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: cfg,
    };
    let p = out.join(RESOLVED_CONFIG_FILE);
    io::write_json(&p, &resolved).map_err(io_err(&p))?;

    let t0 = Instant::now();
    let p = out.join(TRAJECTORY_FILE);
    let mut traj = TrajectoryCsv::create(&p).map_err(io_err(&p))?;
    let p = out.join(AUDIT_FILE);
    let mut audit = IsAuditCsv::create(&p).map_err(io_err(&p))?;
    let mut bonds = BondTracker::new(&initial, 0.0, cfg.zeta_every);
    let mut energy = EnergyTracker::new(&initial, &pot, cfg.energy_check_every).with_series_every(cfg.energy_every);
    let mut stats = TransitionStats::new(cfg.etr_window);
    let snap_dir = out.join(SNAPSHOT_DIR);
    let cadence = if cfg.snapshot_every == 0 { u64::MAX } else { cfg.snapshot_every };
    let mut snaps = XyzSnapshots::new(&snap_dir, cadence, cfg.snapshot_all_sites, &initial).map_err(io_err(&snap_dir))?;

    let (final_state, time) = {
        let mut sinks: [&mut dyn StepSink; 6] = [&mut traj, &mut audit, &mut bonds, &mut energy, &mut stats, &mut snaps];
        match policy {
            None => {
                let mut s = ClassicalSampler::new(initial.clone(), pot, params, cfg.seed);
                drive(&mut s, cfg.steps, &mut sinks)?;
                let t = s.simulation().clock().time;
                (s.into_state(), t)
            }
            Some(policy) => {
                let mut s = SwarmSampler::new(initial.clone(), pot, params, policy, cfg.seed)?;
                drive(&mut s, cfg.steps, &mut sinks)?;
                let t = s.simulation().clock().time;
                (s.into_state(), t)
            }
        }
    };
    energy.check()?;
    if cfg.steps % cadence != 0 {
        let p = snap_dir.join(format!("snap_{:010}.xyz", cfg.steps));
        let mut f = std::io::BufWriter::new(fs::File::create(&p).map_err(io_err(&p))?);
        io::write_xyz(&mut f, &final_state, cfg.steps, time, cfg.snapshot_all_sites).map_err(io_err(&p))?;
        std::io::Write::flush(&mut f).map_err(io_err(&p))?;
    }

    let b0 = bonds.samples[0].2;
    let b_eq = if cfg.zeta_reference_factor > 0 {
        let anneal = cfg.steps.saturating_mul(cfg.zeta_reference_factor);
        log::info!("reference anneal: {anneal} classical steps");
        Some(equilibrium_bonds(initial.clone(), &pot, &params, anneal, reference_seed(cfg.seed))?)
    } else {
        None
    };
    let series = match b_eq {
        Some(beq) => match advancement_factor(&bonds.samples, b0 as f64, beq) {
            Ok(s) => Some(s),
            Err(MetricsError::DegenerateNormalization { .. }) => {
                log::warn!("reference anneal did not change the Cu-Cu bond count; zeta left empty");
                None
            }
            Err(e) => return Err(e.into()),
        },
        None => None,
    };
    let p = out.join(ZETA_FILE);
    io::write_zeta_csv(&p, &bonds.samples, series.as_ref().map(|s| s.zeta.as_slice())).map_err(io_err(&p))?;
    let p = out.join(ENERGY_FILE);
    io::write_energy_csv(&p, &energy.series).map_err(io_err(&p))?;

    let report = RunReport {
        sampler: cfg.sampler,
        seed: cfg.seed,
        steps: cfg.steps,
        time_s: time,
        initial_energy_ev: energy.initial_energy(),
        cumulative_de_ev: energy.cumulative(),
        energy_checks: energy.checks.len(),
        tpe_ev: stats.tpe(),
        etr: stats.etr(),
        b0,
        b_final: bonds.bonds,
        b_eq,
        final_zeta: series.as_ref().and_then(|s| s.zeta.last().copied()),
        log_weight: audit.log_weight(),
        wall_ms: t0.elapsed().as_millis() as u64,
    };
    let p = out.join(REPORT_FILE);
    io::write_json(&p, &report).map_err(io_err(&p))?;
    Ok(RunOutcome {
        report,
        out_dir: out.to_path_buf(),
        final_state,
    })
}

fn drive<S: Sampler>(s: &mut S, steps: u64, sinks: &mut [&mut dyn StepSink]) -> Result<(), KmcError> {
    s.run(steps, sinks)?;
    for sink in sinks.iter_mut() {
        sink.finish(s.state())?;
    }
    Ok(())
}

/// State of a run the first time the Cu-Cu bond count reached a new maximum.
#[derive(Debug, Clone)]
struct Passage {
    step: u64,
    time: f64,
    bonds: u64,
    stats: TransitionStats,
    cumulative_de: f64,
}

#[derive(Debug, Clone)]
struct PassageLog {
    passages: Vec<Passage>,
    end: Passage,
    /// State after the `mark` step, when the run got that far.
    marked: Option<Passage>,
    tail_mean: f64,
}

impl PassageLog {
    /// First passage with `bonds >= target`.
    fn first_reaching(&self, target: f64) -> Option<&Passage> {
        self.passages.iter().find(|p| p.bonds as f64 >= target)
    }
}

/// Step `s` up to `steps` times, logging new bond-count maxima and the mean
/// count over the final 10%. Stops early once `stop_at` bonds are reached.
fn record_passages<S: Sampler>(
    s: &mut S,
    steps: u64,
    window: usize,
    stop_at: Option<f64>,
    mark: Option<u64>,
) -> Result<PassageLog, KmcError> {
    let mut bonds = cu_cu_bonds(s.state());
    let mut stats = TransitionStats::new(window);
    let mut de = 0.0;
    let first = Passage {
        step: 0,
        time: 0.0,
        bonds,
        stats: stats.clone(),
        cumulative_de: 0.0,
    };
    let mut passages = vec![first.clone()];
    let mut end = first;
    let mut marked = None;
    let tail_start = steps - steps / 10;
    let mut tail = (0.0, 0u64);
    for i in 0..steps {
        let rec = s.step()?;
        bonds = (bonds as i64 + cu_bond_change(&rec, s.state())) as u64;
        stats.push(&rec);
        de += rec.delta_e;
        if i >= tail_start {
            tail.0 += bonds as f64;
            tail.1 += 1;
        }
        let here = |stats: &TransitionStats| Passage {
            step: rec.step,
            time: rec.time,
            bonds,
            stats: stats.clone(),
            cumulative_de: de,
        };
        if bonds > passages.last().map_or(0, |p| p.bonds) {
            passages.push(here(&stats));
        }
        if mark == Some(rec.step) {
            marked = Some(here(&stats));
        }
        if i + 1 == steps || stop_at.is_some_and(|b| bonds as f64 >= b) {
            end = here(&stats);
            break;
        }
    }
    Ok(PassageLog {
        passages,
        end,
        marked,
        tail_mean: tail.0 / tail.1.max(1) as f64,
    })
}

fn summarize(p: &Passage, b0: f64, b_eq: f64, reached: bool) -> SamplerSummary {
    SamplerSummary {
        steps: p.step,
        time_s: p.time,
        tpe_ev: p.stats.tpe(),
        etr: p.stats.etr(),
        cumulative_de_ev: p.cumulative_de,
        final_zeta: zeta(p.bonds as f64, b0, b_eq),
        reached_target: reached,
    }
}

/// Worker threads allowed by `SWARMKMC_THREADS`, else the available cores.
pub fn thread_budget() -> usize {
    std::env::var("SWARMKMC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Paired classical and reweighted runs from the same initial lattice.
///
/// The classical run doubles as the reference anneal: `B_eq` is its mean bond
/// count over the final 10% of `reference_steps`, and its classical step count
/// is the first step at which `zeta >= target`. A target not reached within
/// `classical_cap` steps makes the ratio a lower bound.
pub fn run_benchmark(cfg: &BenchConfig, threads: usize) -> Result<BenchmarkReport, ExperimentError> {
    cfg.validate()?;
    let (pot, params) = cfg.system.physics()?;
    let policy = load_policy(cfg.checkpoint.as_deref())?;
    let initial = cfg.system.initial_state(cfg.seed)?;
    let b0 = cu_cu_bonds(&initial) as f64;
    let reference_steps = cfg.reference_steps();
    let cap = cfg.classical_cap();

    let classical = |state: LatticeState, pot: PairPotential, params: RateParams| {
        let mut s = ClassicalSampler::new(state, pot, params, reference_seed(cfg.seed));
        record_passages(&mut s, reference_steps, cfg.etr_window, None, Some(cap))
    };
    let swarm = |state: LatticeState, stop: Option<f64>| -> Result<PassageLog, ExperimentError> {
        let mut s = SwarmSampler::new(state, pot, params, &policy, cfg.seed)?;
        Ok(record_passages(&mut s, cfg.swarm_steps, cfg.etr_window, stop, None)?)
    };

    let (reference, rl) = if threads >= 2 {
        std::thread::scope(|scope| {
            let h = scope.spawn(|| classical(initial.clone(), pot, params));
            let rl = swarm(initial.clone(), None);
            (h.join().expect("reference anneal thread panicked"), rl)
        })
    } else {
        let reference = classical(initial.clone(), pot, params)?;
        let b_eq = reference.tail_mean;
        let stop = b0 + cfg.target_zeta * (b_eq - b0);
        let rl = swarm(initial.clone(), Some(stop));
        (Ok(reference), rl)
    };
    let reference = reference?;
    let rl = rl?;
    let b_eq = reference.tail_mean;
    if (b_eq - b0).abs() < 1e-12 {
        return Err(MetricsError::DegenerateNormalization { b0, b_eq }.into());
    }
    let target = b0 + cfg.target_zeta * (b_eq - b0);
    let c = reference.first_reaching(target).filter(|p| p.step <= cap);
    let r = rl.first_reaching(target);
    let classical_summary = match c {
        Some(p) => summarize(p, b0, b_eq, true),
        None => summarize(reference.marked.as_ref().unwrap_or(&reference.end), b0, b_eq, false),
    };
    let swarm_summary = match r {
        Some(p) => summarize(p, b0, b_eq, true),
        None => summarize(&rl.end, b0, b_eq, false),
    };
    let report = BenchmarkReport {
        target_zeta: cfg.target_zeta,
        b0,
        b_eq,
        speedup_ratio: classical_summary.steps.max(1) as f64 / swarm_summary.steps.max(1) as f64,
        speedup_lower_bound: c.is_none(),
        speedup_upper_bound: r.is_none(),
        reference_steps,
        classical_cap: cap,
        classical: classical_summary,
        swarm: swarm_summary,
        seed: cfg.seed,
        checkpoint: cfg.checkpoint.as_ref().map(|p| p.display().to_string()),
    };
    Ok(report)
}

/// [`run_benchmark`] plus `report.json` and the resolved config in `out`.
pub fn execute_bench(cfg: &BenchConfig, out: &Path, threads: usize) -> Result<BenchmarkReport, ExperimentError> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let resolved = Resolved {
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config: cfg,
    };
    let p = out.join(RESOLVED_CONFIG_FILE);
    io::write_json(&p, &resolved).map_err(io_err(&p))?;
    let report = run_benchmark(cfg, threads)?;
    let p = out.join(REPORT_FILE);
    io::write_json(&p, &report).map_err(io_err(&p))?;
    Ok(report)
}
