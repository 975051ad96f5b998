//! Property suites run by `swarmkmc verify`, each against an independent
//! oracle: brute-force counts, exact enumeration, finite differences or
//! naive reference formulas.

use std::collections::HashMap;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::agents::{
    global_softmax_flat, one_hot_batch, CriticParams, Mlp, MlpSpec, Observation, PolicyParams, ACTIONS, CRITIC_INPUT,
    OBS_INPUT,
};
use crate::energetics::{total_energy, PairPotential, RateParams};
use crate::kinetics::{ClassicalSampler, EventCatalog, KmcError, Sampler};
use crate::lattice::{pair_index, LatticeError, LatticeSpec, LatticeState, SiteId, Species, SHELL_SITES};
use crate::metrics::{EnergyTracker, ENERGY_REL_TOL};
use crate::reweight::{proposal_from_parts, sample_action, ReweightError, SwarmSampler};
use crate::rng::{stream, Stream, StreamRng};
use crate::stats::{chi_square_gof, ks_two_sample};
use crate::training::{compute_gae_with, ppo_loss_grad, PpoConfig, TrainError, Transition};

pub const SUITES: [&str; 7] = [
    "bonds",
    "boltzmann",
    "is-unbiasedness",
    "uniform-reduction",
    "energy",
    "gradients",
    "gae",
];

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("unknown suite `{0}`; available: all, {names}", names = SUITES.join(", "))]
    UnknownSuite(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Kmc(#[from] KmcError),
    #[error(transparent)]
    Reweight(#[from] ReweightError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Agent(#[from] crate::agents::AgentError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub suite: String,
    pub property: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl PropertyResult {
    fn upper(suite: &str, property: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        PropertyResult {
            suite: suite.into(),
            property: property.into(),
            passed: measured <= tolerance,
            measured,
            tolerance,
            detail,
        }
    }

    fn lower(suite: &str, property: &str, measured: f64, tolerance: f64, detail: String) -> Self {
        PropertyResult {
            passed: measured >= tolerance,
            ..Self::upper(suite, property, measured, tolerance, detail)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<String>,
    pub seed: u64,
    pub passed: bool,
    pub wall_ms: u64,
    pub properties: Vec<PropertyResult>,
}

/// Run one suite, or every suite for `"all"`.
pub fn verify(name: &str, seed: u64, pot: &PairPotential, params: &RateParams) -> Result<VerifyReport, VerifyError> {
    let names: Vec<&str> = if name == "all" {
        SUITES.to_vec()
    } else if SUITES.contains(&name) {
        vec![name]
    } else {
        return Err(VerifyError::UnknownSuite(name.into()));
    };
    let t0 = Instant::now();
    let mut properties = Vec::new();
    for n in &names {
        log::info!("verify: {n}");
        properties.extend(run_suite(n, seed, pot, params)?);
    }
    Ok(VerifyReport {
        suites: names.iter().map(|s| s.to_string()).collect(),
        seed,
        passed: properties.iter().all(|p| p.passed),
        wall_ms: t0.elapsed().as_millis() as u64,
        properties,
    })
}

fn run_suite(name: &str, seed: u64, pot: &PairPotential, params: &RateParams) -> Result<Vec<PropertyResult>, VerifyError> {
    match name {
        "bonds" => suite_bonds(seed),
        "boltzmann" => suite_boltzmann(seed, pot, params),
        "is-unbiasedness" => suite_is(seed, pot, params),
        "uniform-reduction" => suite_uniform(seed, pot, params),
        "energy" => suite_energy(seed, pot, params),
        "gradients" => suite_gradients(seed),
        "gae" => suite_gae(seed),
        other => Err(VerifyError::UnknownSuite(other.into())),
    }
}

/// Squared minimum-image separation in units of `(a/2)^2`.
pub fn half_unit_distance2(spec: &LatticeSpec, a: SiteId, b: SiteId) -> u32 {
    let (xa, ya, za, ba) = spec.decode(a);
    let (xb, yb, zb, bb) = spec.decode(b);
    let mut d2 = 0;
    for (pa, pb, n) in [
        (2 * xa + ba, 2 * xb + bb, spec.nx),
        (2 * ya + ba, 2 * yb + bb, spec.ny),
        (2 * za + ba, 2 * zb + bb, spec.nz),
    ] {
        let period = 2 * n;
        let d = (pa + period - pb) % period;
        let d = d.min(period - d) as u32;
        d2 += d * d;
    }
    d2
}

fn random_state<R: Rng + ?Sized>(spec: LatticeSpec, cu: usize, vac: usize, rng: &mut R) -> Result<LatticeState, LatticeError> {
    let mut occ = vec![Species::Fe; spec.site_count()];
    for (i, s) in sample(rng, spec.site_count(), cu + vac).into_iter().enumerate() {
        occ[s] = if i < cu { Species::Cu } else { Species::Vacancy };
    }
    LatticeState::from_occupancy(spec, occ)
}

fn suite_bonds(seed: u64) -> Result<Vec<PropertyResult>, VerifyError> {
    let mut rng = stream(seed, Stream::Verify);
    let mut mismatches = 0u64;
    let mut lattices = 0;
    for dims in [[4, 4, 4], [6, 5, 4], [3, 7, 5], [5, 5, 5]] {
        let spec = LatticeSpec::new(dims[0], dims[1], dims[2])?;
        let n = spec.site_count();
        let cu = rng.random_range(0..n / 3);
        let vac = rng.random_range(1..n / 4);
        let state = random_state(spec, cu, vac, &mut rng)?;
        let mut brute = [[0u64; 6]; 2];
        for a in 0..n {
            for b in a + 1..n {
                let shell = match half_unit_distance2(&spec, a, b) {
                    3 => 0,
                    4 => 1,
                    _ => continue,
                };
                brute[shell][pair_index(state.species(a), state.species(b))] += 1;
            }
        }
        let fast = state.count_bonds().counts;
        for shell in 0..2 {
            for p in 0..6 {
                mismatches += fast[shell][p].abs_diff(brute[shell][p]);
            }
        }
        lattices += 1;
    }
    Ok(vec![PropertyResult::upper(
        "bonds",
        "bond counts equal the all-pairs distance count",
        mismatches as f64,
        0.0,
        format!("{lattices} random lattices"),
    )])
}

/// Symmetry-invariant class of a one-vacancy, two-Cu configuration; it fixes
/// every pair separation and therefore the energy.
fn three_body_key(spec: &LatticeSpec, v: SiteId, c1: SiteId, c2: SiteId) -> (u32, u32, u32) {
    let a = half_unit_distance2(spec, v, c1);
    let b = half_unit_distance2(spec, v, c2);
    (a.min(b), a.max(b), half_unit_distance2(spec, c1, c2))
}

/// Result of the equilibrium-distribution check.
#[derive(Debug, Clone)]
pub struct BoltzmannCheck {
    pub chi_square: crate::stats::ChiSquareResult,
    pub classes: usize,
    pub samples: u64,
}

/// Classical KMC on a 1-vacancy, 2-Cu lattice sampled on a uniform time grid,
/// tested against `exp(-E/kT)` summed over every configuration of each class.
pub fn boltzmann_check(
    n: usize,
    pot: &PairPotential,
    params: &RateParams,
    steps: u64,
    stride: u64,
    seed: u64,
) -> Result<BoltzmannCheck, VerifyError> {
    let spec = LatticeSpec::cubic(n)?;
    let sites = spec.site_count();
    // every site is equivalent under translation, so fix the vacancy at 0
    let mut weight: HashMap<(u32, u32, u32), f64> = HashMap::new();
    let mut energy_of: HashMap<(u32, u32, u32), f64> = HashMap::new();
    let kt = params.kt();
    let mut occ = vec![Species::Fe; sites];
    occ[0] = Species::Vacancy;
    let mut energies = Vec::new();
    for c1 in 1..sites {
        for c2 in c1 + 1..sites {
            let key = three_body_key(&spec, 0, c1, c2);
            let e = *energy_of.entry(key).or_insert_with(|| {
                let mut o = occ.clone();
                o[c1] = Species::Cu;
                o[c2] = Species::Cu;
                let st = LatticeState::from_occupancy(spec, o).expect("valid occupancy");
                total_energy(&st, pot)
            });
            energies.push((key, e));
        }
    }
    let e_min = energies.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    for (key, e) in energies {
        *weight.entry(key).or_default() += (-(e - e_min) / kt).exp();
    }
    let mut keys: Vec<_> = weight.keys().copied().collect();
    keys.sort();
    let index: HashMap<_, _> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let probs: Vec<f64> = keys.iter().map(|k| weight[k]).collect();

    let mut rng = stream(seed, Stream::Verify);
    let mut occ = vec![Species::Fe; sites];
    for (i, s) in sample(&mut rng, sites, 3).into_iter().enumerate() {
        occ[s] = if i == 0 { Species::Vacancy } else { Species::Cu };
    }
    let state = LatticeState::from_occupancy(spec, occ)?;
    let mut sampler = ClassicalSampler::new(state, *pot, *params, seed);
    let key_of = |st: &LatticeState| {
        let cu = st.cu_sites();
        index[&three_body_key(&spec, st.vacancies()[0], cu[0], cu[1])]
    };
    // burn-in doubles as the pilot that sets the grid spacing
    let burn = (steps / 100).max(1000);
    let mut t_burn = 0.0;
    for _ in 0..burn {
        t_burn = sampler.step()?.time;
    }
    let grid = stride as f64 * t_burn / burn as f64;
    let mut counts = vec![0u64; keys.len()];
    let mut next = t_burn + grid;
    for _ in burn..steps {
        let before = key_of(sampler.state());
        let rec = sampler.step()?;
        while next < rec.time {
            counts[before] += 1;
            next += grid;
        }
    }
    let samples = counts.iter().sum();
    Ok(BoltzmannCheck {
        chi_square: chi_square_gof(&counts, &probs, 5.0),
        classes: keys.len(),
        samples,
    })
}

fn suite_boltzmann(seed: u64, pot: &PairPotential, params: &RateParams) -> Result<Vec<PropertyResult>, VerifyError> {
    let c = boltzmann_check(4, pot, params, 10_000_000, 200, seed)?;
    Ok(vec![PropertyResult::lower(
        "boltzmann",
        "time-sampled configuration classes follow exp(-E/kT) (chi-square p-value)",
        c.chi_square.p_value,
        0.01,
        format!(
            "chi2 {:.2} on {} dof, {} samples over {} classes",
            c.chi_square.statistic, c.chi_square.dof, c.samples, c.classes
        ),
    )])
}

/// Fixed micro-system for the importance-sampling checks: 4x4x4, 3 vacancies
/// and 20 Cu, so at most 24 events.
pub fn is_micro_system(seed: u64) -> Result<LatticeState, LatticeError> {
    let spec = LatticeSpec::cubic(4)?;
    random_state(spec, 20, 3, &mut stream(seed, Stream::Init))
}

/// Observables of an event: `|dE|`, direction index + 1, target x + 1.
pub fn is_observables(catalog: &EventCatalog, state: &LatticeState) -> Vec<[f64; 3]> {
    (0..catalog.slot_count())
        .map(|i| match catalog.event(state, i) {
            Some(e) => {
                let (x, _, _, b) = state.spec().decode(e.target_site);
                [e.delta_e.abs(), e.direction as f64 + 1.0, (2 * x + b) as f64 + 1.0]
            }
            None => [0.0; 3],
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct IsCheck {
    /// Max relative error per repetition over policies and observables.
    pub max_rel_error: Vec<f64>,
    pub events: usize,
}

/// Self-normalized estimates of three observables under `p`, drawn from
/// `q = pi Gamma / Z'` for `policies` random policies, repeated `reps` times.
pub fn is_unbiasedness_check(
    pot: &PairPotential,
    params: &RateParams,
    policies: usize,
    reps: usize,
    samples: usize,
    seed: u64,
) -> Result<IsCheck, VerifyError> {
    let state = is_micro_system(seed)?;
    let catalog = EventCatalog::enumerate(&state, pot, params);
    let obs = is_observables(&catalog, &state);
    let rates = catalog.rates();
    let z: f64 = rates.iter().sum();
    let exact: Vec<f64> = (0..3)
        .map(|k| rates.iter().zip(&obs).map(|(g, f)| g / z * f[k]).sum())
        .collect();
    let mut rng = stream(seed, Stream::Verify);
    let mask = catalog.valid_mask();
    let pis: Vec<Vec<f64>> = (0..policies)
        .map(|_| {
            let logits = (0..mask.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
            global_softmax_flat(logits, &mask).map(|g| g.probs)
        })
        .collect::<Result<_, _>>()?;
    let mut max_rel_error = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut worst: f64 = 0.0;
        for pi in &pis {
            let dist = proposal_from_parts(pi, &rates)?;
            let mut num = [0.0; 3];
            let mut den = 0.0;
            for _ in 0..samples {
                let (a, w) = sample_action(&dist, &mut rng);
                for k in 0..3 {
                    num[k] += w.inv_pi * obs[a][k];
                }
                den += w.inv_pi;
            }
            for k in 0..3 {
                worst = worst.max((num[k] / den - exact[k]).abs() / exact[k].abs());
            }
        }
        max_rel_error.push(worst);
    }
    Ok(IsCheck {
        max_rel_error,
        events: catalog.valid_count(),
    })
}

fn suite_is(seed: u64, pot: &PairPotential, params: &RateParams) -> Result<Vec<PropertyResult>, VerifyError> {
    let c = is_unbiasedness_check(pot, params, 5, 20, 100_000, seed)?;
    let within = c.max_rel_error.iter().filter(|&&e| e <= 0.02).count();
    let worst = c.max_rel_error.iter().copied().fold(0.0, f64::max);
    Ok(vec![PropertyResult::lower(
        "is-unbiasedness",
        "repetitions with every estimate within 2% relative of exact enumeration",
        within as f64,
        18.0,
        format!(
            "{} events, 5 policies x 3 observables, 1e5 samples, 20 repetitions; worst relative error {:.4}",
            c.events, worst
        ),
    )])
}

/// `dE` of step `burst` in each of `replicas` independent runs from one start,
/// for the classical sampler and for the reweighted sampler with a
/// constant-logit network. Each replica has its own seed, so the samples are
/// independent.
pub fn uniform_reduction_samples(
    pot: &PairPotential,
    params: &RateParams,
    replicas: usize,
    burst: u64,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>), VerifyError> {
    let spec = LatticeSpec::cubic(10)?;
    let state = crate::lattice::build_lattice(spec, 0.0134, 10, &mut stream(seed, Stream::Init))?;
    let mut seeds = stream(seed, Stream::Verify);
    let flat = PolicyParams::zeros(&[8]);
    let mut a = Vec::with_capacity(replicas);
    let mut b = Vec::with_capacity(replicas);
    for _ in 0..replicas {
        let mut classical = ClassicalSampler::new(state.clone(), *pot, *params, seeds.random());
        let mut last = 0.0;
        for _ in 0..burst {
            last = classical.step()?.delta_e;
        }
        a.push(last);
        let mut swarm = SwarmSampler::new(state.clone(), *pot, *params, &flat, seeds.random())?;
        for _ in 0..burst {
            last = swarm.try_step()?.delta_e;
        }
        b.push(last);
    }
    Ok((a, b))
}

fn suite_uniform(seed: u64, pot: &PairPotential, params: &RateParams) -> Result<Vec<PropertyResult>, VerifyError> {
    let (a, b) = uniform_reduction_samples(pot, params, 10_000, 20, seed)?;
    let ks = ks_two_sample(&a, &b);
    Ok(vec![PropertyResult::lower(
        "uniform-reduction",
        "constant-policy dE distribution matches classical (KS p-value)",
        ks.p_value,
        0.01,
        format!("D = {:.4}, 1e4 independent replicas each, dE of step 20", ks.statistic),
    )])
}

/// Largest `|running - direct| / max(|E|, 1)` over checkpoints of a run that
/// mixes classical and randomly reweighted hops.
pub fn energy_drift(pot: &PairPotential, params: &RateParams, steps: u64, seed: u64) -> Result<(f64, usize), VerifyError> {
    let spec = LatticeSpec::cubic(10)?;
    let state = crate::lattice::build_lattice(spec, 0.0134, 10, &mut stream(seed, Stream::Init))?;
    let e_start = total_energy(&state, pot);
    let half = steps / 2;
    let mut tracker = EnergyTracker::new(&state, pot, 1000).with_series_every(u64::MAX);
    let mut classical = ClassicalSampler::new(state, *pot, *params, seed);
    classical.run(half, &mut [&mut tracker])?;
    let mid = classical.into_state();
    let actor = PolicyParams::new(&[16, 16], &mut stream(seed, Stream::Weights));
    let mut tail = EnergyTracker::new(&mid, pot, 1000).with_series_every(u64::MAX);
    let mut swarm = SwarmSampler::new(mid, *pot, *params, actor, seed ^ 1)?;
    swarm.run(steps - half, &mut [&mut tail])?;
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for (tr, e0) in [(&tracker, e_start), (&tail, tail.initial_energy())] {
        for &(_, running, direct) in &tr.checks {
            let e = e0 + direct;
            worst = worst.max((running - direct).abs() / e.abs().max(1.0));
            checks += 1;
        }
    }
    Ok((worst, checks))
}

fn suite_energy(seed: u64, pot: &PairPotential, params: &RateParams) -> Result<Vec<PropertyResult>, VerifyError> {
    let (worst, checks) = energy_drift(pot, params, 100_000, seed)?;
    Ok(vec![PropertyResult::upper(
        "energy",
        "cumulative dE equals recomputed energy difference",
        worst,
        ENERGY_REL_TOL,
        format!("{checks} checkpoints over 1e5 hops on 10x10x10"),
    )])
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Max relative error of analytic gradients against central differences over
/// `probes` random parameters of `f`.
fn fd_probe<F>(net: &Mlp, grad: &Mlp, probes: usize, rng: &mut StreamRng, mut f: F) -> f64
where
    F: FnMut(&Mlp) -> f64,
{
    let h = 1e-5;
    let g = grad.to_flat();
    let mut work = net.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let i = rng.random_range(0..g.len());
        let orig = *work.param_mut(i);
        *work.param_mut(i) = orig + h;
        let up = f(&work);
        *work.param_mut(i) = orig - h;
        let down = f(&work);
        *work.param_mut(i) = orig;
        worst = worst.max(rel_err(g[i], (up - down) / (2.0 * h)));
    }
    worst
}

fn random_matrix(rows: usize, cols: usize, rng: &mut StreamRng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn random_observation(rng: &mut StreamRng) -> Observation {
    let mut species_codes = [0u8; SHELL_SITES];
    for c in species_codes.iter_mut() {
        *c = rng.random_range(0..3u8);
    }
    Observation { species_codes }
}

/// Randomized transitions for `agents` agents with slot rates, advantages and
/// returns, with old log-probabilities spread around the current policy.
pub fn toy_batch(
    actor: &PolicyParams,
    agents: usize,
    rows: usize,
    rng: &mut StreamRng,
) -> (Vec<Transition>, Vec<f64>, Vec<f64>) {
    let mut out = Vec::with_capacity(rows);
    for _ in 0..rows {
        let obs: Vec<Observation> = (0..agents).map(|_| random_observation(rng)).collect();
        let slots = agents * ACTIONS;
        let log_rates: Vec<f64> = (0..slots)
            .map(|_| {
                if rng.random::<f64>() < 0.2 {
                    f64::NEG_INFINITY
                } else {
                    rng.random_range(-3.0..3.0)
                }
            })
            .collect();
        let valid: Vec<usize> = (0..slots).filter(|&i| log_rates[i].is_finite()).collect();
        let action = if valid.is_empty() { 0 } else { valid[rng.random_range(0..valid.len())] };
        let mut log_rates = log_rates;
        log_rates[action] = rng.random_range(-3.0..3.0);
        let y = actor.net.predict(one_hot_batch(&obs).view()).expect("finite toy actor");
        let s: Vec<f64> = (0..slots).map(|i| y[[i / ACTIONS, i % ACTIONS]] + log_rates[i]).collect();
        let mask: Vec<bool> = log_rates.iter().map(|l| l.is_finite()).collect();
        let log_q = s[action] - crate::agents::masked_logsumexp(&s, &mask);
        out.push(Transition {
            obs,
            log_rates,
            action,
            log_q_old: log_q + rng.random_range(-0.5..0.5),
            log_pi_old: 0.0,
            reward: 0.0,
            value: 0.0,
            critic_input: (0..CRITIC_INPUT).map(|_| rng.random_range(0.0..1.0)).collect(),
        });
    }
    let adv = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ret = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
    (out, adv, ret)
}

/// Max relative errors for actor, critic, masked softmax and the full loss.
pub fn gradient_errors(probes: usize, seed: u64) -> Result<[f64; 4], VerifyError> {
    let mut rng = stream(seed, Stream::Verify);
    let hidden = [12, 10];

    let actor = Mlp::init(MlpSpec { input: OBS_INPUT, hidden: hidden.to_vec(), output: ACTIONS }, 1.0, &mut rng);
    let x = random_matrix(6, OBS_INPUT, &mut rng);
    let c = random_matrix(6, ACTIONS, &mut rng);
    let (_, cache) = actor.forward(x.view())?;
    let ga = actor.backward(&cache, c.view())?;
    let e_actor = fd_probe(&actor, &ga, probes, &mut rng, |n| (&n.predict(x.view()).unwrap() * &c).sum());

    let critic = Mlp::init(MlpSpec { input: CRITIC_INPUT, hidden: hidden.to_vec(), output: 1 }, 1.0, &mut rng);
    let x = random_matrix(5, CRITIC_INPUT, &mut rng);
    let c = random_matrix(5, 1, &mut rng);
    let (_, cache) = critic.forward(x.view())?;
    let gc = critic.backward(&cache, c.view())?;
    let e_critic = fd_probe(&critic, &gc, probes, &mut rng, |n| (&n.predict(x.view()).unwrap() * &c).sum());

    let mut e_soft: f64 = 0.0;
    let h = 1e-6;
    for _ in 0..probes {
        let n = 16;
        let mut mask: Vec<bool> = (0..n).map(|_| rng.random::<f64>() > 0.25).collect();
        mask[0] = true;
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |l: &[f64]| -> f64 {
            let g = global_softmax_flat(l.to_vec(), &mask).unwrap();
            g.probs.iter().zip(&w).map(|(p, w)| p * w).sum()
        };
        let g = global_softmax_flat(logits.clone(), &mask)?.backward(&w);
        let i = loop {
            let i = rng.random_range(0..n);
            if mask[i] {
                break i;
            }
        };
        let mut l = logits.clone();
        l[i] += h;
        let up = loss(&l);
        l[i] -= 2.0 * h;
        let down = loss(&l);
        e_soft = e_soft.max(rel_err(g[i], (up - down) / (2.0 * h)));
    }

    let policy = PolicyParams::from_net(Mlp::init(PolicyParams::spec(&hidden), 1.0, &mut rng))?;
    let value = CriticParams::from_net(Mlp::init(CriticParams::spec(&hidden), 1.0, &mut rng))?;
    let (rows, adv, ret) = toy_batch(&policy, 2, 16, &mut rng);
    let refs: Vec<&Transition> = rows.iter().collect();
    let cfg = PpoConfig::default();
    let (_, g_pol, g_val) = ppo_loss_grad(&policy, &value, &refs, &adv, &ret, &cfg)?;
    let e_pol = fd_probe(&policy.net, &g_pol, probes / 2, &mut rng, |n| {
        let p = PolicyParams::from_net(n.clone()).unwrap();
        ppo_loss_grad(&p, &value, &refs, &adv, &ret, &cfg).unwrap().0.total
    });
    let e_val = fd_probe(&value.net, &g_val, probes - probes / 2, &mut rng, |n| {
        let v = CriticParams::from_net(n.clone()).unwrap();
        ppo_loss_grad(&policy, &v, &refs, &adv, &ret, &cfg).unwrap().0.total
    });
    Ok([e_actor, e_critic, e_soft, e_pol.max(e_val)])
}

fn suite_gradients(seed: u64) -> Result<Vec<PropertyResult>, VerifyError> {
    let e = gradient_errors(100, seed)?;
    let names = ["actor", "critic", "masked softmax", "full loss"];
    Ok(names
        .iter()
        .zip(e)
        .map(|(n, err)| {
            PropertyResult::upper(
                "gradients",
                &format!("{n} gradient matches central differences"),
                err,
                1e-4,
                "max relative error over 100 probes".into(),
            )
        })
        .collect())
}

/// `A_t = sum_l (gamma lambda)^l delta_{t+l}`, evaluated directly.
pub fn naive_gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| {
            let next = if t + 1 < n { values[t + 1] } else { bootstrap };
            rewards[t] + gamma * next - values[t]
        })
        .collect();
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            let mut k = 1.0;
            for d in &delta[t..] {
                acc += k * d;
                k *= gamma * lambda;
            }
            acc
        })
        .collect()
}

fn suite_gae(seed: u64) -> Result<Vec<PropertyResult>, VerifyError> {
    let mut rng = stream(seed, Stream::Verify);
    let mut pairs = vec![(0.99, 0.95)];
    for _ in 0..10 {
        pairs.push((rng.random_range(0.5..1.0), rng.random_range(0.0..1.0)));
    }
    let n = 2048;
    let mut worst: f64 = 0.0;
    for (gamma, lambda) in &pairs {
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let boot = rng.random_range(-1.0..1.0);
        let fast = compute_gae_with(&r, &v, boot, *gamma, *lambda)?;
        for (a, b) in fast.advantages.iter().zip(naive_gae(&r, &v, boot, *gamma, *lambda)) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(vec![PropertyResult::upper(
        "gae",
        "advantages equal the direct discounted sum",
        worst,
        1e-12,
        format!("T = {n}, {} (gamma, lambda) pairs", pairs.len()),
    )])
}
