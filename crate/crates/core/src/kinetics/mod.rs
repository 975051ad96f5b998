//! Event catalog and the residence-time (rejection-free) KMC loop.

mod catalog;
pub mod sumtree;

pub use catalog::{EventCatalog, EventSlot, DEFAULT_REBUILD_EVERY};
pub use sumtree::{compensated_sum, SumTree};

use rand::distr::Open01;
use rand::Rng;
use thiserror::Error;

use crate::energetics::{total_energy, PairPotential, RateParams};
use crate::lattice::{LatticeError, LatticeState, SiteId, Species, FIRST_SHELL};
use crate::rng::{self, Stream, StreamRng};
use crate::trajectory::{StepRecord, StepSink, TrajectoryRecord};

#[derive(Debug, Error)]
pub enum KmcError {
    #[error("event catalog is empty: no vacancy has an atom to exchange with")]
    EmptyCatalog,
    #[error("total rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("step count must be at least 1")]
    ZeroSteps,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("policy evaluation failed: {0}")]
    Policy(String),
    #[error("sink failed: {0}")]
    Sink(#[from] std::io::Error),
}

/// A vacancy-atom exchange.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopEvent {
    pub agent: usize,
    pub vacancy_site: SiteId,
    /// Index into the canonical first-shell order.
    pub direction: usize,
    pub target_site: SiteId,
    pub hopping_species: Species,
    /// `Gamma_X`, 1/s.
    pub rate: f64,
    /// `E_f - E_i`, eV.
    pub delta_e: f64,
}

impl HopEvent {
    #[inline]
    pub fn slot(&self) -> usize {
        self.agent * FIRST_SHELL + self.direction
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KmcClock {
    pub time: f64,
    pub step: u64,
}

/// Draw an event with probability `Gamma_X / Gamma_tot`.
pub fn classical_select<R: Rng + ?Sized>(
    catalog: &EventCatalog,
    state: &LatticeState,
    rng: &mut R,
) -> Result<HopEvent, KmcError> {
    let slot = select_weighted(catalog.tree(), rng).ok_or(KmcError::EmptyCatalog)?;
    Ok(catalog.event(state, slot).expect("tree never selects a zero-rate slot"))
}

/// Index drawn proportionally to the tree's leaf weights.
#[inline]
pub fn select_weighted<R: Rng + ?Sized>(tree: &SumTree, rng: &mut R) -> Option<usize> {
    let u: f64 = rng.random();
    tree.find(u * tree.total())
}

/// `dt = -ln(r) / Gamma_tot` with `r ~ U(0, 1)` drawn fresh.
pub fn residence_time<R: Rng + ?Sized>(total_rate: f64, rng: &mut R) -> Result<f64, KmcError> {
    let r: f64 = rng.sample(Open01);
    residence_time_from_uniform(total_rate, r)
}

pub fn residence_time_from_uniform(total_rate: f64, r: f64) -> Result<f64, KmcError> {
    if !(total_rate > 0.0) || !total_rate.is_finite() {
        return Err(KmcError::NonPositiveRate(total_rate));
    }
    Ok(-r.ln() / total_rate)
}

/// Lattice, catalog, clock and random streams; both samplers drive one of these.
#[derive(Debug, Clone)]
pub struct Simulation {
    state: LatticeState,
    catalog: EventCatalog,
    pot: PairPotential,
    params: RateParams,
    clock: KmcClock,
    energy_change: f64,
    energy_comp: f64,
    pub(crate) selection_rng: StreamRng,
    residence_rng: StreamRng,
}

impl Simulation {
    pub fn new(state: LatticeState, pot: PairPotential, params: RateParams, seed: u64) -> Self {
        let catalog = EventCatalog::enumerate(&state, &pot, &params);
        Simulation {
            state,
            catalog,
            pot,
            params,
            clock: KmcClock::default(),
            energy_change: 0.0,
            energy_comp: 0.0,
            selection_rng: rng::stream(seed, Stream::Selection),
            residence_rng: rng::stream(seed, Stream::Residence),
        }
    }

    pub fn state(&self) -> &LatticeState {
        &self.state
    }

    pub fn into_state(self) -> LatticeState {
        self.state
    }

    pub fn catalog(&self) -> &EventCatalog {
        &self.catalog
    }

    pub fn potential(&self) -> &PairPotential {
        &self.pot
    }

    pub fn rate_params(&self) -> &RateParams {
        &self.params
    }

    pub fn clock(&self) -> KmcClock {
        self.clock
    }

    /// Running sum of executed `dE`, eV.
    pub fn cumulative_delta_e(&self) -> f64 {
        self.energy_change + self.energy_comp
    }

    /// Full recomputation of the current energy.
    pub fn total_energy(&self) -> f64 {
        total_energy(&self.state, &self.pot)
    }

    /// Apply the event in `slot`, advance the clock with the pre-hop total
    /// rate and refresh the catalog. `pi_a` and `z_prime` are recorded as-is.
    pub(crate) fn execute(&mut self, slot: usize, pi_a: f64, z_prime: Option<f64>) -> Result<StepRecord, KmcError> {
        let event = self.catalog.event(&self.state, slot).ok_or(KmcError::EmptyCatalog)?;
        let gamma_tot = self.catalog.total_rate();
        let dt = residence_time(gamma_tot, &mut self.residence_rng)?;
        self.state
            .swap_unchecked(event.vacancy_site, event.target_site, event.hopping_species);
        self.catalog.local_update(&self.state, &event, &self.pot, &self.params);
        self.clock.time += dt;
        self.clock.step += 1;
        // Neumaier running sum of dE
        let t = self.energy_change + event.delta_e;
        if self.energy_change.abs() >= event.delta_e.abs() {
            self.energy_comp += (self.energy_change - t) + event.delta_e;
        } else {
            self.energy_comp += (event.delta_e - t) + self.energy_change;
        }
        self.energy_change = t;
        Ok(StepRecord {
            step: self.clock.step,
            time: self.clock.time,
            dt,
            agent: event.agent,
            action: slot,
            vacancy_site: event.vacancy_site,
            target_site: event.target_site,
            direction: event.direction,
            hopping_species: event.hopping_species,
            delta_e: event.delta_e,
            gamma_tot,
            pi_a,
            z_prime: z_prime.unwrap_or(gamma_tot),
        })
    }
}

/// Common interface of the classical and policy-reweighted samplers.
pub trait Sampler {
    fn step(&mut self) -> Result<StepRecord, KmcError>;
    fn simulation(&self) -> &Simulation;

    fn state(&self) -> &LatticeState {
        self.simulation().state()
    }

    /// Run `steps` steps, feeding every record to `sinks`.
    fn run(&mut self, steps: u64, sinks: &mut [&mut dyn StepSink]) -> Result<(), KmcError> {
        for _ in 0..steps {
            let rec = self.step()?;
            for sink in sinks.iter_mut() {
                sink.on_step(&rec, self.simulation().state())?;
            }
        }
        Ok(())
    }
}

/// Residence-time sampler: select with `Gamma_X / Gamma_tot`, advance the
/// clock by `-ln(r) / Gamma_tot`.
#[derive(Debug, Clone)]
pub struct ClassicalSampler {
    sim: Simulation,
}

impl ClassicalSampler {
    pub fn new(state: LatticeState, pot: PairPotential, params: RateParams, seed: u64) -> Self {
        ClassicalSampler {
            sim: Simulation::new(state, pot, params, seed),
        }
    }

    pub fn into_state(self) -> LatticeState {
        self.sim.into_state()
    }
}

impl Sampler for ClassicalSampler {
    fn step(&mut self) -> Result<StepRecord, KmcError> {
        let slot = select_weighted(self.sim.catalog.tree(), &mut self.sim.selection_rng).ok_or(KmcError::EmptyCatalog)?;
        self.sim.execute(slot, 1.0, None)
    }

    fn simulation(&self) -> &Simulation {
        &self.sim
    }
}

/// Classical KMC for `steps` steps; returns the final state and the record.
pub fn run_classical(
    state: LatticeState,
    pot: &PairPotential,
    params: &RateParams,
    steps: u64,
    seed: u64,
    sinks: &mut [&mut dyn StepSink],
) -> Result<(LatticeState, TrajectoryRecord), KmcError> {
    if steps == 0 {
        return Err(KmcError::ZeroSteps);
    }
    let mut sampler = ClassicalSampler::new(state, *pot, *params, seed);
    let mut record = TrajectoryRecord::new();
    for _ in 0..steps {
        let rec = sampler.step()?;
        record.push(rec);
        for sink in sinks.iter_mut() {
            sink.on_step(&rec, sampler.state())?;
        }
    }
    for sink in sinks.iter_mut() {
        sink.finish(sampler.state())?;
    }
    Ok((sampler.into_state(), record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, LatticeSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn single_vacancy(n: usize) -> LatticeState {
        let mut st = LatticeState::pure_fe(LatticeSpec::cubic(n).unwrap()).unwrap();
        st.set_species(0, Species::Vacancy).unwrap();
        st
    }

    #[test]
    fn pure_fe_single_vacancy_has_eight_events() {
        let st = single_vacancy(4);
        let cat = EventCatalog::enumerate(&st, &PairPotential::fe_cu(), &RateParams::fe_cu());
        assert_eq!(cat.valid_count(), 8);
        assert_eq!(cat.events(&st).count(), 8);
    }

    #[test]
    fn adjacent_vacancies_exclude_each_other() {
        let mut st = single_vacancy(4);
        let nb = st.spec().first_neighbor(0, 4);
        st.set_species(nb, Species::Vacancy).unwrap();
        let cat = EventCatalog::enumerate(&st, &PairPotential::fe_cu(), &RateParams::fe_cu());
        assert_eq!(cat.valid_count(), 14);
        for agent in 0..2 {
            let n = (0..8).filter(|k| cat.is_valid(agent * 8 + k)).count();
            assert_eq!(n, 7);
        }
    }

    #[test]
    fn residence_time_analytic() {
        let dt = residence_time_from_uniform(1.0, (-1.0f64).exp()).unwrap();
        assert!((dt - 1.0).abs() < 1e-15);
        assert!(residence_time_from_uniform(1.0, 1.0 - 1e-12).unwrap() < 1e-11);
        assert!(matches!(residence_time_from_uniform(0.0, 0.5), Err(KmcError::NonPositiveRate(_))));
        assert!(matches!(residence_time_from_uniform(-1.0, 0.5), Err(KmcError::NonPositiveRate(_))));
    }

    #[test]
    fn select_weighted_single_and_pair() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let one = SumTree::from_weights(&[0.0, 2.5, 0.0]);
        for _ in 0..100 {
            assert_eq!(select_weighted(&one, &mut rng), Some(1));
        }
        let two = SumTree::from_weights(&[1.0, 3.0]);
        let n = 200_000;
        let hits = (0..n).filter(|_| select_weighted(&two, &mut rng) == Some(0)).count();
        let p = hits as f64 / n as f64;
        let sigma = (0.25f64 * 0.75 / n as f64).sqrt();
        assert!((p - 0.25).abs() < 4.0 * sigma, "p = {p}");
    }

    #[test]
    fn empty_catalog_is_an_error() {
        // every vacancy surrounded by vacancies: 2x2x2 lattice fully vacant
        let spec = LatticeSpec::cubic(2).unwrap();
        let st = LatticeState::from_occupancy(spec, vec![Species::Vacancy; 16]).unwrap();
        let cat = EventCatalog::enumerate(&st, &PairPotential::fe_cu(), &RateParams::fe_cu());
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert!(matches!(classical_select(&cat, &st, &mut rng), Err(KmcError::EmptyCatalog)));
    }

    #[test]
    fn zero_steps_rejected() {
        let st = single_vacancy(3);
        let r = run_classical(st, &PairPotential::fe_cu(), &RateParams::fe_cu(), 0, 1, &mut []);
        assert!(matches!(r, Err(KmcError::ZeroSteps)));
    }

    #[test]
    fn clock_strictly_increases() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let st = build_lattice(LatticeSpec::cubic(5).unwrap(), 0.05, 3, &mut rng).unwrap();
        let (_, rec) = run_classical(st, &PairPotential::fe_cu(), &RateParams::fe_cu(), 500, 9, &mut []).unwrap();
        assert_eq!(rec.len(), 500);
        for w in rec.steps.windows(2) {
            assert!(w[1].time > w[0].time);
            assert_eq!(w[1].step, w[0].step + 1);
        }
    }
}
