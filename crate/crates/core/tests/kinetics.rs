mod common;

use std::collections::HashMap;

use common::*;
use rand::Rng;
use swarmkmc::energetics::{PairPotential, RateParams, BOLTZMANN_EV};
use swarmkmc::kinetics::{residence_time, run_classical, select_weighted, ClassicalSampler, EventCatalog, Sampler, SumTree};
use swarmkmc::lattice::{build_lattice, pair_index, LatticeSpec, LatticeState, Species, FIRST_SHELL};
use swarmkmc::metrics::{effective_transition_ratio, transition_per_step_energy};
use swarmkmc::rng::{stream, Stream};

fn random_state(n: usize, cu: f64, vac: usize, seed: u64) -> LatticeState {
    build_lattice(LatticeSpec::cubic(n).unwrap(), cu, vac, &mut stream(seed, Stream::Init)).unwrap()
}

/// `(vacancy, target) -> (species, dE, rate)` by swapping and recomputing.
fn oracle_events(
    state: &LatticeState,
    pot: &PairPotential,
    params: &RateParams,
) -> HashMap<(usize, usize), (Species, f64, f64)> {
    let spec = state.spec();
    let e0 = state_energy(state, pot);
    let kt = BOLTZMANN_EV * params.temperature;
    let mut out = HashMap::new();
    for &v in state.vacancies() {
        for d in FIRST_OFFSETS {
            let t = offset_site(spec, v, d);
            let sp = state.species(t);
            if sp == Species::Vacancy {
                continue;
            }
            let mut occ = state.occupancy().to_vec();
            occ.swap(v, t);
            let de = brute_energy(&occ, spec, pot) - e0;
            let ea0 = if sp == Species::Cu { params.ea0[1] } else { params.ea0[0] };
            out.insert((v, t), (sp, de, params.gamma0 * (-(ea0 + de / 2.0) / kt).exp()));
        }
    }
    out
}

fn assert_catalog_matches(cat: &EventCatalog, state: &LatticeState, pot: &PairPotential, params: &RateParams) {
    let oracle = oracle_events(state, pot, params);
    let events: Vec<_> = cat.events(state).collect();
    assert_eq!(events.len(), oracle.len());
    for e in events {
        let (sp, de, rate) = oracle[&(e.vacancy_site, e.target_site)];
        assert_eq!(e.hopping_species, sp);
        assert!((e.delta_e - de).abs() < 1e-10, "dE {} vs {de}", e.delta_e);
        assert!((e.rate - rate).abs() <= 1e-9 * rate, "rate {} vs {rate}", e.rate);
    }
}

#[test]
fn catalog_equals_brute_force_enumeration() {
    let pot = PairPotential::fe_cu();
    let params = RateParams::fe_cu();
    for seed in 0..4 {
        // dense vacancies so some are adjacent
        let state = random_state(6, 0.1, 40, seed);
        let cat = EventCatalog::enumerate(&state, &pot, &params);
        assert_catalog_matches(&cat, &state, &pot, &params);
    }
}

#[test]
fn local_updates_track_fresh_enumeration() {
    let pot = PairPotential::fe_cu();
    let params = RateParams::fe_cu().with_temperature(773.0).unwrap();
    let mut state = random_state(6, 0.1, 12, 9);
    let mut cat = EventCatalog::enumerate(&state, &pot, &params);
    let mut rng = stream(9, Stream::Verify);
    for step in 0..1000 {
        let events: Vec<_> = cat.events(&state).collect();
        let e = events[rng.random_range(0..events.len())];
        state.apply_hop(e.vacancy_site, e.target_site).unwrap();
        cat.local_update(&state, &e, &pot, &params);
        let fresh = EventCatalog::enumerate(&state, &pot, &params);
        assert!(cat.same_events(&fresh), "catalog diverged at step {step}");
        if step % 100 == 0 {
            assert_catalog_matches(&cat, &state, &pot, &params);
        }
    }
}

#[test]
fn distant_vacancy_rates_untouched() {
    let pot = PairPotential::fe_cu();
    let params = RateParams::fe_cu();
    let spec = LatticeSpec::cubic(10).unwrap();
    let mut occ = vec![Species::Fe; spec.site_count()];
    let near = spec.encode(1, 1, 1, 0);
    let far = spec.encode(6, 6, 6, 0);
    occ[near] = Species::Vacancy;
    occ[far] = Species::Vacancy;
    occ[spec.encode(1, 1, 1, 1)] = Species::Cu;
    let mut state = LatticeState::from_occupancy(spec, occ).unwrap();
    let mut cat = EventCatalog::enumerate(&state, &pot, &params);
    let far_agent = state.vacancy_agent(far).unwrap();
    let before: Vec<u64> = (0..FIRST_SHELL).map(|k| cat.slot(far_agent * FIRST_SHELL + k).rate.to_bits()).collect();
    let e = cat.events(&state).find(|e| e.vacancy_site == near).unwrap();
    state.apply_hop(e.vacancy_site, e.target_site).unwrap();
    let dirty = cat.local_update(&state, &e, &pot, &params).to_vec();
    assert!(!dirty.contains(&far_agent));
    let after: Vec<u64> = (0..FIRST_SHELL).map(|k| cat.slot(far_agent * FIRST_SHELL + k).rate.to_bits()).collect();
    assert_eq!(before, after);
}

#[test]
fn total_rate_drift_is_small_without_rebuild() {
    let pot = PairPotential::fe_cu();
    let params = RateParams::fe_cu();
    let mut state = random_state(10, 0.0134, 10, 2);
    let mut cat = EventCatalog::enumerate(&state, &pot, &params);
    cat.set_rebuild_every(u64::MAX);
    let mut rng = stream(2, Stream::Verify);
    for _ in 0..100_000 {
        let mask = cat.valid_mask();
        let valid: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let e = cat.event(&state, valid[rng.random_range(0..valid.len())]).unwrap();
        state.apply_hop(e.vacancy_site, e.target_site).unwrap();
        cat.local_update(&state, &e, &pot, &params);
    }
    let exact = cat.exact_total_rate();
    let drift = (cat.total_rate() - exact).abs() / exact;
    assert!(drift <= 1e-10, "relative drift {drift:e}");
}

#[test]
fn selection_frequencies_are_multinomial() {
    let tree = SumTree::from_weights(&[2.0, 2.0, 4.0]);
    let mut rng = stream(4, Stream::Selection);
    let n = 1_000_000;
    let mut counts = [0u64; 3];
    for _ in 0..n {
        counts[select_weighted(&tree, &mut rng).unwrap()] += 1;
    }
    for (c, p) in counts.iter().zip([0.25, 0.25, 0.5]) {
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((*c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn residence_time_mean_is_inverse_rate() {
    let mut rng = stream(5, Stream::Residence);
    let n = 1_000_000;
    let mean: f64 = (0..n).map(|_| residence_time(2.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() <= 0.005, "mean {mean}");
}

#[test]
fn frozen_system_advances_clock_with_negligible_energy_change() {
    // barriers of 5 eV on every hop: nothing is kT-scale
    let pot = PairPotential::fe_cu();
    let frozen = RateParams::new(6e12, 5.0, 5.0, 663.0).unwrap();
    let mobile = RateParams::fe_cu();
    let state = random_state(8, 0.05, 4, 6);
    let (_, slow) = run_classical(state.clone(), &pot, &frozen, 2000, 6, &mut []).unwrap();
    let (_, fast) = run_classical(state, &pot, &mobile, 2000, 6, &mut []).unwrap();
    let t_slow = slow.steps.last().unwrap().time;
    let t_fast = fast.steps.last().unwrap().time;
    assert!(slow.steps.windows(2).all(|w| w[1].time > w[0].time));
    // same energy landscape, so per-step energy changes are alike but the
    // clock runs exp((5 - 0.6) / kT) times slower
    assert!(t_slow / t_fast > 1e30);
    let per_unit_time = transition_per_step_energy(&slow) * slow.len() as f64 / t_slow;
    assert!(per_unit_time < 1e-25, "{per_unit_time}");
}

#[test]
fn double_well_trap_is_mostly_reversed() {
    // strong vacancy-Cu binding: only the vacancy-Cu exchange is cheap
    let mut eps = [[0.0; 6]; 2];
    eps[0][pair_index(Species::Cu, Species::Vacancy)] = -2.0;
    let pot = PairPotential::new(eps);
    let params = RateParams::fe_cu();
    let spec = LatticeSpec::cubic(6).unwrap();
    let mut occ = vec![Species::Fe; spec.site_count()];
    occ[spec.encode(2, 2, 2, 0)] = Species::Vacancy;
    occ[spec.encode(2, 2, 2, 1)] = Species::Cu;
    let state = LatticeState::from_occupancy(spec, occ).unwrap();
    let (_, record) = run_classical(state, &pot, &params, 5000, 8, &mut []).unwrap();
    let etr = effective_transition_ratio(&record);
    assert!(etr < 0.1, "ETR {etr}");
}

#[test]
fn classical_loop_is_strictly_timed_and_counted() {
    let pot = PairPotential::fe_cu();
    let params = RateParams::fe_cu();
    let mut s = ClassicalSampler::new(random_state(6, 0.05, 3, 1), pot, params, 1);
    let mut last = (0, 0.0);
    for _ in 0..1000 {
        let r = s.step().unwrap();
        assert_eq!(r.step, last.0 + 1);
        assert!(r.time > last.1);
        assert!((r.time - last.1 - r.dt).abs() <= 1e-12 * r.time);
        last = (r.step, r.time);
    }
}
