//! Policy-reweighted event selection with importance-sampling correction.
//!
//! Events are drawn from `q(a) = pi(a) Gamma_a / Z'` instead of the physical
//! `p(a) = Gamma_a / Z`. The clock still advances with the physical `Z`, and
//! each step records `pi(a)` and `Z'` so that `p / q = (Z' / Z) / pi(a)` can
//! be recovered for any estimator.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::agents::{observe_all, observe_unchecked, global_softmax, AgentError, GlobalPolicy, Observation, Policy, ACTIONS};
use crate::energetics::{PairPotential, RateParams};
use crate::kinetics::{compensated_sum, EventCatalog, KmcError, Sampler, Simulation, SumTree};
use crate::lattice::{LatticeState, FIRST_SHELL};
use crate::trajectory::{StepRecord, StepSink, TrajectoryRecord};

/// Steps per window for bounded-horizon weights.
pub const DEFAULT_WINDOW: usize = 64;

/// Logit excursion from the reference before the sampler trees are rebuilt.
const ZREF_SLACK: f64 = 300.0;
const CACHE_LIMIT: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum ReweightError {
    #[error("policy and catalog are misaligned: {0}")]
    Alignment(String),
    #[error("Z' = sum pi Gamma is zero")]
    ZeroZPrime,
    #[error("no samples")]
    Empty,
    #[error("step {0} has non-positive policy probability {1}")]
    NonPositivePi(usize, f64),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Kmc(#[from] KmcError),
}

/// `p` and `q` over catalog slots; invalid slots hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalDistribution {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Policy probabilities the proposal was built from.
    pub pi: Vec<f64>,
    pub z: f64,
    pub z_prime: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepWeight {
    pub pi_a: f64,
    pub inv_pi: f64,
}

impl StepWeight {
    pub fn new(pi_a: f64) -> Self {
        StepWeight { pi_a, inv_pi: 1.0 / pi_a }
    }
}

pub fn reweighted_distribution(
    policy: &GlobalPolicy,
    catalog: &EventCatalog,
) -> Result<ProposalDistribution, ReweightError> {
    if policy.len() != catalog.slot_count() {
        return Err(ReweightError::Alignment(format!(
            "{} policy entries for {} catalog slots",
            policy.len(),
            catalog.slot_count()
        )));
    }
    if let Some(i) = (0..policy.len()).find(|&i| policy.mask[i] != catalog.is_valid(i)) {
        return Err(ReweightError::Alignment(format!("mask differs at slot {i}")));
    }
    let rates = catalog.rates();
    proposal_from_parts(&policy.probs, &rates)
}

/// `p` and `q` from explicit policy probabilities and rates.
pub fn proposal_from_parts(pi: &[f64], rates: &[f64]) -> Result<ProposalDistribution, ReweightError> {
    if pi.len() != rates.len() {
        return Err(ReweightError::Alignment(format!("{} probabilities for {} rates", pi.len(), rates.len())));
    }
    let z = compensated_sum(rates.iter().copied());
    let z_prime = compensated_sum(pi.iter().zip(rates).map(|(a, g)| a * g));
    if !(z_prime > 0.0) {
        return Err(ReweightError::ZeroZPrime);
    }
    if !(z > 0.0) {
        return Err(KmcError::EmptyCatalog.into());
    }
    Ok(ProposalDistribution {
        p: rates.iter().map(|g| g / z).collect(),
        q: pi.iter().zip(rates).map(|(a, g)| a * g / z_prime).collect(),
        pi: pi.to_vec(),
        z,
        z_prime,
    })
}

pub fn sample_action<R: Rng + ?Sized>(dist: &ProposalDistribution, rng: &mut R) -> (usize, StepWeight) {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = usize::MAX;
    for (i, &q) in dist.q.iter().enumerate() {
        if q > 0.0 {
            acc += q;
            last = i;
            if u < acc {
                return (i, StepWeight::new(dist.pi[i]));
            }
        }
    }
    (last, StepWeight::new(dist.pi[last]))
}

/// Self-normalized estimate of `E_p[f]` with weights `1 / pi(a)`.
///
/// All samples must come from the same proposal, so that `Z' / Z` cancels.
pub fn is_estimate(samples: &[(f64, StepWeight)]) -> Result<f64, ReweightError> {
    if samples.is_empty() {
        return Err(ReweightError::Empty);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, (f, w)) in samples.iter().enumerate() {
        if !(w.pi_a > 0.0) {
            return Err(ReweightError::NonPositivePi(i, w.pi_a));
        }
        num += f * w.inv_pi;
        den += w.inv_pi;
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryWeight {
    pub log_w: f64,
    /// `exp(log_w)`; may over- or underflow for long records.
    pub w: f64,
}

pub fn trajectory_weight(record: &TrajectoryRecord) -> Result<TrajectoryWeight, ReweightError> {
    let mut log_w = 0.0;
    for s in &record.steps {
        if !(s.pi_a > 0.0) {
            return Err(ReweightError::NonPositivePi(s.step as usize, s.pi_a));
        }
        log_w += s.log_weight();
    }
    Ok(TrajectoryWeight { log_w, w: log_w.exp() })
}

/// Log weight of each consecutive window of `window` steps (the last may be shorter).
pub fn windowed_log_weights(record: &TrajectoryRecord, window: usize) -> Result<Vec<f64>, ReweightError> {
    let window = window.max(1);
    record
        .steps
        .chunks(window)
        .map(|c| {
            trajectory_weight(&TrajectoryRecord { steps: c.to_vec() }).map(|w| w.log_w)
        })
        .collect()
}

/// Cumulative physical time after each step with every window's `dt` scaled
/// by that window's self-normalized weight `w_k / mean(w)`.
pub fn is_weighted_times(record: &TrajectoryRecord, window: usize) -> Result<Vec<f64>, ReweightError> {
    let window = window.max(1);
    let logs = windowed_log_weights(record, window)?;
    if logs.is_empty() {
        return Ok(Vec::new());
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rel: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let mean = rel.iter().sum::<f64>() / rel.len() as f64;
    let mut t = 0.0;
    Ok(record
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            t += s.dt * rel[i / window] / mean;
            t
        })
        .collect())
}

/// Reweighted sampler.
///
/// Holds two trees over catalog slots, `u_a = exp(z_a - zref) Gamma_a` and
/// `s_a = exp(z_a - zref)` on valid slots, so `q = u / U`, `pi = s / S` and
/// `Z' = U / S`. Logits are cached per observation.
pub struct SwarmSampler<P: Policy> {
    sim: Simulation,
    policy: P,
    cache: HashMap<u32, [f64; ACTIONS]>,
    logits: Vec<[f64; ACTIONS]>,
    u: SumTree,
    s: SumTree,
    zref: f64,
}

impl<P: Policy> SwarmSampler<P> {
    pub fn new(
        state: LatticeState,
        pot: PairPotential,
        params: RateParams,
        policy: P,
        seed: u64,
    ) -> Result<Self, ReweightError> {
        let sim = Simulation::new(state, pot, params, seed);
        let agents = sim.catalog().agent_count();
        let slots = sim.catalog().slot_count();
        let mut me = SwarmSampler {
            sim,
            policy,
            cache: HashMap::new(),
            logits: vec![[0.0; ACTIONS]; agents],
            u: SumTree::new(slots),
            s: SumTree::new(slots),
            zref: 0.0,
        };
        me.refresh_all()?;
        Ok(me)
    }

    pub fn policy(&self) -> &P {
        &self.policy
    }

    pub fn into_state(self) -> LatticeState {
        self.sim.into_state()
    }

    /// Current per-agent logits, agent order.
    pub fn agent_logits(&self) -> &[[f64; ACTIONS]] {
        &self.logits
    }

    fn lookup(&mut self, agents: &[usize]) -> Result<(), ReweightError> {
        let state = self.sim.state();
        let obs: Vec<Observation> = agents.iter().map(|&a| observe_unchecked(state, state.vacancies()[a])).collect();
        let mut missing: Vec<Observation> = obs.iter().filter(|o| !self.cache.contains_key(&o.code())).copied().collect();
        missing.sort_unstable_by_key(|o| o.code());
        missing.dedup();
        if !missing.is_empty() {
            if self.cache.len() + missing.len() > CACHE_LIMIT {
                self.cache.clear();
            }
            let fresh = self.policy.logits_batch(&missing)?;
            for (o, z) in missing.iter().zip(fresh) {
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(AgentError::NonFiniteLogit.into());
                }
                self.cache.insert(o.code(), z);
            }
        }
        for (&a, o) in agents.iter().zip(&obs) {
            self.logits[a] = self.cache[&o.code()];
        }
        Ok(())
    }

    fn set_leaves(&mut self, agent: usize) {
        let cat = self.sim.catalog();
        for k in 0..FIRST_SHELL {
            let i = agent * FIRST_SHELL + k;
            let slot = cat.slot(i);
            let (s, u) = if slot.is_valid() {
                let s = (self.logits[agent][k] - self.zref).exp();
                (s, s * slot.rate)
            } else {
                (0.0, 0.0)
            };
            self.s.set_lazy(i, s);
            self.u.set_lazy(i, u);
        }
    }

    fn refresh_all(&mut self) -> Result<(), ReweightError> {
        let agents: Vec<usize> = (0..self.logits.len()).collect();
        self.lookup(&agents)?;
        self.rebuild_trees();
        Ok(())
    }

    fn rebuild_trees(&mut self) {
        let cat = self.sim.catalog();
        self.zref = (0..cat.slot_count())
            .filter(|&i| cat.is_valid(i))
            .map(|i| self.logits[i / FIRST_SHELL][i % FIRST_SHELL])
            .fold(f64::NEG_INFINITY, f64::max);
        if !self.zref.is_finite() {
            self.zref = 0.0;
        }
        for a in 0..self.logits.len() {
            self.set_leaves(a);
        }
        self.s.rebuild();
        self.u.rebuild();
    }

    fn refresh(&mut self, agents: &[usize]) -> Result<(), ReweightError> {
        self.lookup(agents)?;
        let out_of_range = agents.iter().any(|&a| {
            (0..FIRST_SHELL).any(|k| {
                self.sim.catalog().is_valid(a * FIRST_SHELL + k) && (self.logits[a][k] - self.zref).abs() > ZREF_SLACK
            })
        });
        if out_of_range {
            self.rebuild_trees();
            return Ok(());
        }
        for &a in agents {
            self.set_leaves(a);
            for k in 0..FIRST_SHELL {
                self.s.refresh_path(a * FIRST_SHELL + k);
                self.u.refresh_path(a * FIRST_SHELL + k);
            }
        }
        if !(self.u.total() > 0.0 && self.u.total().is_finite() && self.s.total().is_finite()) {
            self.rebuild_trees();
        }
        Ok(())
    }

    /// The proposal the next step will sample from, read from the trees.
    pub fn current_distribution(&self) -> ProposalDistribution {
        let cat = self.sim.catalog();
        let ut = self.u.total();
        let st = self.s.total();
        let z = cat.total_rate();
        ProposalDistribution {
            p: cat.slots().iter().map(|s| s.rate / z).collect(),
            q: self.u.leaves().iter().map(|u| u / ut).collect(),
            pi: self.s.leaves().iter().map(|s| s / st).collect(),
            z,
            z_prime: ut / st,
        }
    }

    /// The same proposal via fresh forward passes, the global softmax and
    /// [`reweighted_distribution`].
    pub fn reference_distribution(&self) -> Result<ProposalDistribution, ReweightError> {
        let state = self.sim.state();
        let logits = self.policy.logits_batch(&observe_all(state))?;
        let gp = global_softmax(&logits, &self.sim.catalog().valid_mask())?;
        reweighted_distribution(&gp, self.sim.catalog())
    }

    pub fn try_step(&mut self) -> Result<StepRecord, ReweightError> {
        let ut = self.u.total();
        if !(ut > 0.0) {
            return Err(KmcError::EmptyCatalog.into());
        }
        let r: f64 = self.sim.selection_rng.random();
        let a = self.u.find(r * ut).ok_or(KmcError::EmptyCatalog)?;
        let st = self.s.total();
        let pi_a = self.s.get(a) / st;
        let rec = self.sim.execute(a, pi_a, Some(ut / st))?;
        let dirty = self.sim.catalog().dirty_agents().to_vec();
        self.refresh(&dirty)?;
        Ok(rec)
    }
}

impl<P: Policy> Sampler for SwarmSampler<P> {
    fn step(&mut self) -> Result<StepRecord, KmcError> {
        self.try_step().map_err(|e| match e {
            ReweightError::Kmc(k) => k,
            other => KmcError::Policy(other.to_string()),
        })
    }

    fn simulation(&self) -> &Simulation {
        &self.sim
    }
}

/// Reweighted KMC for `steps` steps; returns the final state and the record.
pub fn run_swarm<P: Policy>(
    state: LatticeState,
    pot: &PairPotential,
    params: &RateParams,
    policy: P,
    steps: u64,
    seed: u64,
    sinks: &mut [&mut dyn StepSink],
) -> Result<(LatticeState, TrajectoryRecord), ReweightError> {
    if steps == 0 {
        return Err(KmcError::ZeroSteps.into());
    }
    let mut sampler = SwarmSampler::new(state, *pot, *params, policy, seed)?;
    let mut record = TrajectoryRecord::new();
    for _ in 0..steps {
        let rec = sampler.try_step()?;
        record.push(rec);
        for sink in sinks.iter_mut() {
            sink.on_step(&rec, sampler.sim.state()).map_err(KmcError::from)?;
        }
    }
    for sink in sinks.iter_mut() {
        sink.finish(sampler.sim.state()).map_err(KmcError::from)?;
    }
    Ok((sampler.into_state(), record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{global_softmax_flat, UniformPolicy};
    use crate::lattice::{build_lattice, LatticeSpec};
    use crate::rng::{stream, Stream};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn proposal_examples() {
        let d = proposal_from_parts(&[0.75, 0.25], &[1.0, 3.0]).unwrap();
        assert!((d.q[0] - 0.5).abs() < 1e-15 && (d.q[1] - 0.5).abs() < 1e-15);
        let d = proposal_from_parts(&[0.8, 0.2], &[5.0, 5.0]).unwrap();
        assert!((d.q[0] - 0.8).abs() < 1e-15);
        let d = proposal_from_parts(&[0.25; 4], &[1.0, 2.0, 3.0, 7.0]).unwrap();
        for i in 0..4 {
            assert!((d.q[i] - d.p[i]).abs() <= 1e-15);
        }
        assert!(matches!(proposal_from_parts(&[1.0, 0.0], &[0.0, 1.0]), Err(ReweightError::ZeroZPrime)));
    }

    #[test]
    fn sample_action_degenerate_and_bookkeeping() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let d = proposal_from_parts(&[0.0, 1.0, 0.0], &[1.0, 2.0, 0.0]).unwrap();
        for _ in 0..100 {
            let (i, w) = sample_action(&d, &mut rng);
            assert_eq!(i, 1);
            assert_eq!(w.pi_a.to_bits(), d.pi[1].to_bits());
        }
    }

    #[test]
    fn is_estimate_examples() {
        assert_eq!(is_estimate(&[(3.5, StepWeight::new(0.2))]).unwrap(), 3.5);
        let s = [(1.0, StepWeight::new(0.5)), (3.0, StepWeight::new(0.5))];
        assert_eq!(is_estimate(&s).unwrap(), 2.0);
        assert!(matches!(is_estimate(&[]), Err(ReweightError::Empty)));
    }

    #[test]
    fn uniform_swarm_matches_classical_bitwise() {
        let spec = LatticeSpec::cubic(6).unwrap();
        let mut rng = stream(5, Stream::Init);
        let st = build_lattice(spec, 0.05, 3, &mut rng).unwrap();
        let pot = PairPotential::fe_cu();
        let params = RateParams::fe_cu();
        let (_, a) = crate::kinetics::run_classical(st.clone(), &pot, &params, 500, 9, &mut []).unwrap();
        let (_, b) = run_swarm(st, &pot, &params, UniformPolicy, 500, 9, &mut []).unwrap();
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert_eq!(x.action, y.action);
            assert_eq!(x.dt.to_bits(), y.dt.to_bits());
            assert!(x.log_weight().abs() < 1e-12);
            assert!(y.log_weight().abs() < 1e-12);
        }
    }

    #[test]
    fn trees_match_functional_path() {
        let spec = LatticeSpec::cubic(5).unwrap();
        let mut rng = stream(8, Stream::Init);
        let st = build_lattice(spec, 0.1, 4, &mut rng).unwrap();
        let policy = crate::agents::PolicyParams::new(&[12, 12], &mut stream(1, Stream::Weights));
        let mut s = SwarmSampler::new(st, PairPotential::fe_cu(), RateParams::fe_cu(), policy, 3).unwrap();
        for _ in 0..200 {
            let a = s.current_distribution();
            let b = s.reference_distribution().unwrap();
            for i in 0..a.q.len() {
                assert!((a.q[i] - b.q[i]).abs() < 1e-12);
                assert!((a.pi[i] - b.pi[i]).abs() < 1e-12);
            }
            assert!((a.z_prime / b.z_prime - 1.0).abs() < 1e-12);
            s.try_step().unwrap();
        }
    }

    #[test]
    fn single_step_weight_is_p_over_q() {
        let gp = global_softmax_flat(vec![0.3, -1.0, 2.0], &[true; 3]).unwrap();
        let rates = [1.0, 4.0, 0.5];
        let d = proposal_from_parts(&gp.probs, &rates).unwrap();
        let rec = StepRecord {
            step: 1,
            time: 0.0,
            dt: 0.0,
            agent: 0,
            action: 1,
            vacancy_site: 0,
            target_site: 1,
            direction: 1,
            hopping_species: crate::lattice::Species::Fe,
            delta_e: 0.0,
            gamma_tot: d.z,
            pi_a: d.pi[1],
            z_prime: d.z_prime,
        };
        let w = trajectory_weight(&TrajectoryRecord { steps: vec![rec] }).unwrap();
        assert!((w.w - d.p[1] / d.q[1]).abs() < 1e-12);
    }
}
