mod common;

use common::*;
use swarmkmc::agents::{AgentError, Observation, Policy, PolicyParams, UniformPolicy, ACTIONS};
use swarmkmc::energetics::{PairPotential, RateParams, BOLTZMANN_EV};
use swarmkmc::lattice::{build_lattice, LatticeSpec, LatticeState, Species, FIRST_SHELL};
use swarmkmc::reweight::{is_estimate, proposal_from_parts, run_swarm, sample_action, trajectory_weight, SwarmSampler};
use swarmkmc::kinetics::Sampler;
use swarmkmc::rng::{stream, Stream};

fn random_state(n: usize, cu: f64, vac: usize, seed: u64) -> LatticeState {
    build_lattice(LatticeSpec::cubic(n).unwrap(), cu, vac, &mut stream(seed, Stream::Init)).unwrap()
}

/// Logits from a fixed formula of the neighbour species, so a test can
/// recompute them from the lattice alone.
struct FormulaPolicy;

fn formula_logit(codes: &[u8], k: usize) -> f64 {
    let s: f64 = codes.iter().enumerate().map(|(j, &c)| (j as f64 + 1.0) * c as f64).sum();
    (0.37 * s + 1.3 * k as f64).sin() * 2.0 + 1.5 * codes[k] as f64
}

impl Policy for FormulaPolicy {
    fn logits(&self, obs: &Observation) -> Result<[f64; ACTIONS], AgentError> {
        let mut z = [0.0; ACTIONS];
        for (k, v) in z.iter_mut().enumerate() {
            *v = formula_logit(&obs.species_codes, k);
        }
        Ok(z)
    }
}

/// Puts overwhelming weight on directions blocked by another vacancy.
struct GreedyForBlocked;

impl Policy for GreedyForBlocked {
    fn logits(&self, obs: &Observation) -> Result<[f64; ACTIONS], AgentError> {
        let mut z = [0.0; ACTIONS];
        for (k, v) in z.iter_mut().enumerate() {
            if obs.species_codes[k] == Species::Vacancy.code() {
                *v = 60.0;
            }
        }
        Ok(z)
    }
}

#[test]
fn proposal_frequencies_match_q() {
    // pi = [0.25, 0.75], Gamma = [3, 1] gives q = [0.5, 0.5]
    let dist = proposal_from_parts(&[0.25, 0.75], &[3.0, 1.0]).unwrap();
    assert!((dist.q[0] - 0.5).abs() < 1e-15);
    let mut rng = stream(1, Stream::Selection);
    let n = 1_000_000;
    let hits = (0..n).filter(|_| sample_action(&dist, &mut rng).0 == 0).count() as f64;
    let sigma = (n as f64 * 0.25).sqrt();
    assert!((hits - 0.5 * n as f64).abs() <= 3.0 * sigma, "{hits}");
}

#[test]
fn importance_estimate_recovers_physical_expectation() {
    // under p = [0.25, 0.75] the indicator of event 0 has mean 0.25
    let dist = proposal_from_parts(&[0.9, 0.1], &[1.0, 3.0]).unwrap();
    let f = [1.0, 0.0];
    let mut rng = stream(2, Stream::Selection);
    let samples: Vec<_> = (0..100_000)
        .map(|_| {
            let (a, w) = sample_action(&dist, &mut rng);
            (f[a], w)
        })
        .collect();
    let est = is_estimate(&samples).unwrap();
    assert!((est - 0.25).abs() <= 0.02, "{est}");
}

#[test]
fn step_log_weights_equal_independent_p_over_q() {
    let pot = PairPotential::fe_cu();
    let params = RateParams::fe_cu();
    let kt = BOLTZMANN_EV * params.temperature;
    let state = random_state(6, 0.15, 6, 3);
    let mut s = SwarmSampler::new(state, pot, params, FormulaPolicy, 3).unwrap();
    let mut product = 0.0;
    let mut steps = Vec::new();
    for _ in 0..10 {
        let st = s.state().clone();
        let spec = st.spec();
        // (vacancy, target, rate, exp(logit)) for every valid hop
        let mut events = Vec::new();
        for &v in st.vacancies() {
            let codes: Vec<u8> = (0..14).map(|j| st.species(st.neighbor(v, j)).code()).collect();
            for k in 0..FIRST_SHELL {
                let t = st.neighbor(v, k);
                let sp = st.species(t);
                if sp == Species::Vacancy {
                    continue;
                }
                let de = local_swap_delta(st.occupancy(), spec, &pot, v, t);
                let ea0 = if sp == Species::Cu { params.ea0[1] } else { params.ea0[0] };
                let rate = params.gamma0 * (-(ea0 + de / 2.0) / kt).exp();
                events.push((v, t, rate, formula_logit(&codes, k).exp()));
            }
        }
        let z: f64 = events.iter().map(|e| e.2).sum();
        let zs: f64 = events.iter().map(|e| e.3).sum();
        let zq: f64 = events.iter().map(|e| e.2 * e.3).sum();
        let rec = s.try_step().unwrap();
        let e = events.iter().find(|e| e.0 == rec.vacancy_site && e.1 == rec.target_site).unwrap();
        let p = e.2 / z;
        let q = e.2 * e.3 / zq;
        assert!(rel_err(rec.pi_a, e.3 / zs) < 1e-12);
        assert!((rec.log_weight() - (p / q).ln()).abs() < 1e-12);
        product += (p / q).ln();
        steps.push(rec);
    }
    let w = trajectory_weight(&swarmkmc::trajectory::TrajectoryRecord { steps }).unwrap();
    assert!((w.log_w - product).abs() < 1e-12, "{} vs {product}", w.log_w);
}

#[test]
fn masked_events_are_never_executed() {
    let pot = PairPotential::fe_cu();
    let params = RateParams::fe_cu();
    // crowded vacancies so blocked directions are common
    let state = random_state(4, 0.1, 24, 4);
    let mut s = SwarmSampler::new(state, pot, params, GreedyForBlocked, 4).unwrap();
    for _ in 0..100_000 {
        let before = s.state().species(s.state().vacancies()[0]);
        assert_eq!(before, Species::Vacancy);
        let rec = s.try_step().unwrap();
        assert_ne!(rec.hopping_species, Species::Vacancy);
        assert_eq!(s.state().species(rec.vacancy_site), rec.hopping_species);
        assert_eq!(s.state().species(rec.target_site), Species::Vacancy);
    }
    assert!(s.state().check_consistency());
}

#[test]
fn uniform_policy_has_unit_weights() {
    let pot = PairPotential::fe_cu();
    let params = RateParams::fe_cu();
    let state = random_state(8, 0.1, 5, 5);
    let (_, rec) = run_swarm(state.clone(), &pot, &params, UniformPolicy, 2000, 5, &mut []).unwrap();
    assert!(rec.steps.iter().all(|r| r.log_weight().abs() < 1e-12));
    assert!(trajectory_weight(&rec).unwrap().log_w.abs() < 1e-9);
    let zeros = PolicyParams::zeros(&[16]);
    let (_, rec) = run_swarm(state, &pot, &params, &zeros, 2000, 5, &mut []).unwrap();
    assert!((trajectory_weight(&rec).unwrap().w - 1.0).abs() < 1e-9);
}
