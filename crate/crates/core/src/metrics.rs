//! Advancement factor, speedup ratio, TPE, ETR and energy bookkeeping.
//!
//! Every metric has an offline form over a [`TrajectoryRecord`] and a
//! streaming [`StepSink`] form; both give identical numbers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energetics::{total_energy, PairPotential, RateParams};
use crate::kinetics::{ClassicalSampler, KmcError, Sampler};
use crate::lattice::{LatticeState, SiteId, Species, FIRST_SHELL};
use crate::trajectory::{StepRecord, StepSink, TrajectoryRecord};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("equilibrium bond count {b_eq} equals the initial count {b0}; zeta is undefined")]
    DegenerateNormalization { b0: f64, b_eq: f64 },
    #[error("empty series")]
    Empty,
    #[error(
        "energy bookkeeping drift at step {step}: running sum {running} eV, direct difference {direct} eV"
    )]
    EnergyDrift { step: u64, running: f64, direct: f64 },
    #[error(transparent)]
    Kmc(#[from] KmcError),
}

fn cu_neighbors(state: &LatticeState, site: SiteId) -> u64 {
    (0..FIRST_SHELL)
        .filter(|&k| state.species(state.neighbor(site, k)) == Species::Cu)
        .count() as u64
}

/// First-shell Cu-Cu bond count `B`.
pub fn cu_cu_bonds(state: &LatticeState) -> u64 {
    state.cu_sites().iter().map(|&s| cu_neighbors(state, s)).sum::<u64>() / 2
}

/// Change of `B` caused by `rec`, read off the post-step state.
pub fn cu_bond_change(rec: &StepRecord, state: &LatticeState) -> i64 {
    if rec.hopping_species != Species::Cu {
        return 0;
    }
    // the Cu now sits on the old vacancy site; its old site is now vacant
    // and still borders the Cu, which must not count as a former bond
    let after = cu_neighbors(state, rec.vacancy_site) as i64;
    let before = cu_neighbors(state, rec.target_site) as i64 - 1;
    after - before
}

/// `zeta = (B - B0) / (B_eq - B0)` clamped to `[0, 1]`.
pub fn zeta(b: f64, b0: f64, b_eq: f64) -> f64 {
    ((b - b0) / (b_eq - b0)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvancementSeries {
    pub times: Vec<f64>,
    pub steps: Vec<u64>,
    pub bonds: Vec<f64>,
    pub zeta: Vec<f64>,
}

/// `zeta(t)` for sampled `(step, time, B)` triples.
pub fn advancement_factor(
    samples: &[(u64, f64, u64)],
    b0: f64,
    b_eq: f64,
) -> Result<AdvancementSeries, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    if (b_eq - b0).abs() < 1e-12 {
        return Err(MetricsError::DegenerateNormalization { b0, b_eq });
    }
    Ok(AdvancementSeries {
        steps: samples.iter().map(|s| s.0).collect(),
        times: samples.iter().map(|s| s.1).collect(),
        bonds: samples.iter().map(|s| s.2 as f64).collect(),
        zeta: samples.iter().map(|s| zeta(s.2 as f64, b0, b_eq)).collect(),
    })
}

/// Tracks `B` incrementally and samples `(step, time, B)` every `every` steps.
#[derive(Debug, Clone)]
pub struct BondTracker {
    pub bonds: u64,
    every: u64,
    pub samples: Vec<(u64, f64, u64)>,
}

impl BondTracker {
    /// Starts with a sample at step 0.
    pub fn new(state: &LatticeState, time: f64, every: u64) -> Self {
        let bonds = cu_cu_bonds(state);
        BondTracker {
            bonds,
            every: every.max(1),
            samples: vec![(0, time, bonds)],
        }
    }
}

impl StepSink for BondTracker {
    fn on_step(&mut self, rec: &StepRecord, state: &LatticeState) -> std::io::Result<()> {
        self.bonds = (self.bonds as i64 + cu_bond_change(rec, state)) as u64;
        if rec.step % self.every == 0 {
            self.samples.push((rec.step, rec.time, self.bonds));
        }
        Ok(())
    }
}

/// Mean `B` over the last 10% of a classical anneal of `steps` steps.
pub fn equilibrium_bonds(
    state: LatticeState,
    pot: &PairPotential,
    params: &RateParams,
    steps: u64,
    seed: u64,
) -> Result<f64, MetricsError> {
    if steps == 0 {
        return Err(KmcError::ZeroSteps.into());
    }
    let tail_start = steps - steps / 10;
    let mut bonds = cu_cu_bonds(&state) as i64;
    let mut sum = 0.0;
    let mut n = 0u64;
    let mut s = ClassicalSampler::new(state, *pot, *params, seed);
    for i in 0..steps {
        let rec = s.step()?;
        bonds += cu_bond_change(&rec, s.state());
        if i >= tail_start {
            sum += bonds as f64;
            n += 1;
        }
    }
    Ok(sum / n.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepsToTarget {
    pub steps: u64,
    pub time: f64,
    pub reached: bool,
}

/// Step `sampler` until `zeta >= target` or `cap` steps.
pub fn steps_to_zeta<S: Sampler + ?Sized>(
    sampler: &mut S,
    b0: f64,
    b_eq: f64,
    target: f64,
    cap: u64,
) -> Result<StepsToTarget, MetricsError> {
    if (b_eq - b0).abs() < 1e-12 {
        return Err(MetricsError::DegenerateNormalization { b0, b_eq });
    }
    let mut bonds = cu_cu_bonds(sampler.state()) as i64;
    let mut out = StepsToTarget {
        steps: 0,
        time: sampler.simulation().clock().time,
        reached: zeta(bonds as f64, b0, b_eq) >= target,
    };
    while !out.reached && out.steps < cap {
        let rec = sampler.step()?;
        bonds += cu_bond_change(&rec, sampler.state());
        out.steps += 1;
        out.time = rec.time;
        out.reached = zeta(bonds as f64, b0, b_eq) >= target;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedupResult {
    pub ratio: f64,
    pub classical_steps: u64,
    pub rl_steps: u64,
    /// The classical run hit its step cap; `ratio` is a lower bound.
    pub lower_bound: bool,
}

/// Classical steps needed to reach `target_zeta`, divided by `rl_steps`.
pub fn speedup_ratio<S: Sampler + ?Sized>(
    target_zeta: f64,
    rl_steps: u64,
    classical: &mut S,
    b0: f64,
    b_eq: f64,
    cap: u64,
) -> Result<SpeedupResult, MetricsError> {
    let c = steps_to_zeta(classical, b0, b_eq, target_zeta, cap)?;
    Ok(SpeedupResult {
        ratio: c.steps as f64 / rl_steps.max(1) as f64,
        classical_steps: c.steps,
        rl_steps,
        lower_bound: !c.reached,
    })
}

/// Mean `|dE|` per executed step, eV. Zero for an empty record.
pub fn transition_per_step_energy(record: &TrajectoryRecord) -> f64 {
    if record.is_empty() {
        return 0.0;
    }
    record.steps.iter().map(|s| s.delta_e.abs()).sum::<f64>() / record.len() as f64
}

/// Fraction of steps not undone within the next step.
pub fn effective_transition_ratio(record: &TrajectoryRecord) -> f64 {
    effective_transition_ratio_window(record, 1)
}

/// Fraction of steps not undone by any of the next `window` steps.
pub fn effective_transition_ratio_window(record: &TrajectoryRecord, window: usize) -> f64 {
    let n = record.len();
    if n == 0 {
        return 1.0;
    }
    let reversed = (0..n)
        .filter(|&t| {
            record.steps[t + 1..n.min(t + 1 + window)]
                .iter()
                .any(|next| record.steps[t].is_reversed_by(next))
        })
        .count();
    1.0 - reversed as f64 / n as f64
}

/// Streaming TPE and ETR.
#[derive(Debug, Clone)]
pub struct TransitionStats {
    window: usize,
    recent: std::collections::VecDeque<(StepRecord, bool)>,
    steps: u64,
    reversed: u64,
    abs_de: f64,
}

impl TransitionStats {
    pub fn new(window: usize) -> Self {
        TransitionStats {
            window: window.max(1),
            recent: Default::default(),
            steps: 0,
            reversed: 0,
            abs_de: 0.0,
        }
    }

    pub fn push(&mut self, rec: &StepRecord) {
        for (prev, rev) in self.recent.iter_mut() {
            if !*rev && prev.is_reversed_by(rec) {
                *rev = true;
                self.reversed += 1;
            }
        }
        self.recent.push_back((*rec, false));
        if self.recent.len() > self.window {
            self.recent.pop_front();
        }
        self.steps += 1;
        self.abs_de += rec.delta_e.abs();
    }

    pub fn tpe(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.abs_de / self.steps as f64
        }
    }

    pub fn etr(&self) -> f64 {
        if self.steps == 0 {
            1.0
        } else {
            1.0 - self.reversed as f64 / self.steps as f64
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

impl StepSink for TransitionStats {
    fn on_step(&mut self, rec: &StepRecord, _state: &LatticeState) -> std::io::Result<()> {
        self.push(rec);
        Ok(())
    }
}

/// Running sum of `dE`, starting at 0.
pub fn energy_trajectory(record: &TrajectoryRecord) -> Vec<f64> {
    let mut acc = 0.0;
    record
        .steps
        .iter()
        .map(|s| {
            acc += s.delta_e;
            acc
        })
        .collect()
}

/// Relative tolerance of the energy cross-check.
pub const ENERGY_REL_TOL: f64 = 1e-8;

/// Streams the cumulative `dE` and cross-checks it against a full energy
/// recomputation every `every` steps.
#[derive(Debug, Clone)]
pub struct EnergyTracker {
    pot: PairPotential,
    e0: f64,
    every: u64,
    series_every: u64,
    last_step: u64,
    sum: f64,
    comp: f64,
    /// `(step, time, cumulative dE)`, every step unless thinned.
    pub series: Vec<(u64, f64, f64)>,
    /// `(step, running, direct)` at each cross-check.
    pub checks: Vec<(u64, f64, f64)>,
    pub drift: Option<(u64, f64, f64)>,
}

impl EnergyTracker {
    pub fn new(state: &LatticeState, pot: &PairPotential, every: u64) -> Self {
        EnergyTracker {
            pot: *pot,
            e0: total_energy(state, pot),
            every: every.max(1),
            series_every: 1,
            last_step: 0,
            sum: 0.0,
            comp: 0.0,
            series: Vec::new(),
            checks: Vec::new(),
            drift: None,
        }
    }

    /// Keep only every `n`-th step in `series`.
    pub fn with_series_every(mut self, n: u64) -> Self {
        self.series_every = n.max(1);
        self
    }

    pub fn cumulative(&self) -> f64 {
        self.sum + self.comp
    }

    pub fn initial_energy(&self) -> f64 {
        self.e0
    }

    pub fn check(&self) -> Result<(), MetricsError> {
        match self.drift {
            Some((step, running, direct)) => Err(MetricsError::EnergyDrift { step, running, direct }),
            None => Ok(()),
        }
    }
}

impl EnergyTracker {
    fn cross_check(&mut self, step: u64, state: &LatticeState) -> std::io::Result<()> {
        let running = self.cumulative();
        let e = total_energy(state, &self.pot);
        let direct = e - self.e0;
        self.checks.push((step, running, direct));
        if (running - direct).abs() > ENERGY_REL_TOL * e.abs().max(1.0) && self.drift.is_none() {
            self.drift = Some((step, running, direct));
            return Err(std::io::Error::other(format!(
                "energy bookkeeping drift at step {step}: running {running} eV, direct {direct} eV"
            )));
        }
        Ok(())
    }
}

impl StepSink for EnergyTracker {
    fn on_step(&mut self, rec: &StepRecord, state: &LatticeState) -> std::io::Result<()> {
        let t = self.sum + rec.delta_e;
        if self.sum.abs() >= rec.delta_e.abs() {
            self.comp += (self.sum - t) + rec.delta_e;
        } else {
            self.comp += (rec.delta_e - t) + self.sum;
        }
        self.sum = t;
        self.last_step = rec.step;
        if rec.step % self.series_every == 0 {
            self.series.push((rec.step, rec.time, self.cumulative()));
        }
        if rec.step % self.every == 0 {
            self.cross_check(rec.step, state)?;
        }
        Ok(())
    }

    /// Cross-checks the final state unless the last step was just checked.
    fn finish(&mut self, state: &LatticeState) -> std::io::Result<()> {
        if self.last_step > 0 && self.checks.last().map(|c| c.0) != Some(self.last_step) {
            self.cross_check(self.last_step, state)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSummary {
    pub steps: u64,
    pub time_s: f64,
    pub tpe_ev: f64,
    pub etr: f64,
    pub cumulative_de_ev: f64,
    pub final_zeta: f64,
    pub reached_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub target_zeta: f64,
    pub b0: f64,
    pub b_eq: f64,
    pub speedup_ratio: f64,
    /// The classical run hit its cap before the target.
    pub speedup_lower_bound: bool,
    /// The reweighted run hit its cap before the target.
    pub speedup_upper_bound: bool,
    pub reference_steps: u64,
    pub classical_cap: u64,
    pub classical: SamplerSummary,
    pub swarm: SamplerSummary,
    pub seed: u64,
    pub checkpoint: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(v: SiteId, t: SiteId, de: f64) -> StepRecord {
        StepRecord {
            step: 0,
            time: 0.0,
            dt: 0.0,
            agent: 0,
            action: 0,
            vacancy_site: v,
            target_site: t,
            direction: 0,
            hopping_species: Species::Fe,
            delta_e: de,
            gamma_tot: 1.0,
            pi_a: 1.0,
            z_prime: 1.0,
        }
    }

    #[test]
    fn tpe_examples() {
        let r = TrajectoryRecord {
            steps: vec![rec(0, 1, -0.2), rec(1, 2, 0.1)],
        };
        assert!((transition_per_step_energy(&r) - 0.15).abs() < 1e-15);
        let z = TrajectoryRecord {
            steps: vec![rec(0, 1, 0.0); 3],
        };
        assert_eq!(transition_per_step_energy(&z), 0.0);
    }

    #[test]
    fn etr_examples() {
        let mut osc = TrajectoryRecord::new();
        for i in 0..1000 {
            osc.push(if i % 2 == 0 { rec(0, 1, 0.0) } else { rec(1, 0, 0.0) });
        }
        assert!(effective_transition_ratio(&osc) <= 1.0 / 1000.0 + 1e-15);
        let walk = TrajectoryRecord {
            steps: (0..50).map(|i| rec(i, i + 1, 0.0)).collect(),
        };
        assert_eq!(effective_transition_ratio(&walk), 1.0);
        let mut s = TransitionStats::new(1);
        osc.steps.iter().for_each(|r| s.push(r));
        assert_eq!(s.etr(), effective_transition_ratio(&osc));
    }

    #[test]
    fn zeta_endpoints() {
        let a = advancement_factor(&[(0, 0.0, 4), (10, 1.0, 9), (20, 2.0, 14)], 4.0, 14.0).unwrap();
        assert_eq!(a.zeta, vec![0.0, 0.5, 1.0]);
        assert!(matches!(
            advancement_factor(&[(0, 0.0, 4)], 4.0, 4.0),
            Err(MetricsError::DegenerateNormalization { .. })
        ));
    }

    #[test]
    fn energy_trajectory_prefix() {
        let r = TrajectoryRecord {
            steps: vec![rec(0, 1, 0.5), rec(1, 2, -0.25)],
        };
        assert_eq!(energy_trajectory(&r), vec![0.5, 0.25]);
        assert!(energy_trajectory(&TrajectoryRecord::new()).is_empty());
    }
}
