//! Decentralized actor, global softmax arbitration and the centralized critic.
//!
//! Every vacancy is an agent. Its actor sees the species of its 14-site shell
//! and emits one logit per first-shell hop direction. The logits of all agents
//! are flattened in [`EventCatalog`](crate::kinetics::catalog::EventCatalog)
//! slot order (`agent * 8 + direction`) and normalized jointly.

pub mod checkpoint;
pub mod features;
pub mod mlp;

use ndarray::Array2;
use rand::Rng;
use thiserror::Error;

use crate::lattice::{LatticeError, LatticeState, SiteId, Species, FIRST_SHELL, SHELL_SITES};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, OptimizerState};
pub use features::{critic_features, CriticFeatures, CRITIC_INPUT};
pub use mlp::{Mlp, MlpCache, MlpSpec};

/// One-hot width of an observation.
pub const OBS_INPUT: usize = SHELL_SITES * Species::COUNT;
/// Logits per agent.
pub const ACTIONS: usize = FIRST_SHELL;
/// Hidden widths of both networks unless configured otherwise.
pub const DEFAULT_HIDDEN: [usize; 5] = [256; 5];
/// Scale applied to the He bound of the actor's output layer.
pub const ACTOR_OUTPUT_GAIN: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("network weights contain non-finite values")]
    NonFiniteWeights,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("every event is masked")]
    AllMasked,
    #[error("{0} logits but {1} mask entries")]
    MaskLength(usize, usize),
    #[error("critic features need at least one Cu atom")]
    NoCu,
    #[error("critic features need at least one vacancy")]
    NoVacancy,
    #[error("non-finite logit")]
    NonFiniteLogit,
}

/// Species codes of the 14 sites around a vacancy, canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Observation {
    pub species_codes: [u8; SHELL_SITES],
}

impl Observation {
    /// Base-3 packing; distinct observations get distinct codes.
    pub fn code(&self) -> u32 {
        self.species_codes
            .iter()
            .rev()
            .fold(0u32, |acc, &c| acc * Species::COUNT as u32 + c as u32)
    }

    pub fn from_code(mut code: u32) -> Option<Self> {
        let mut species_codes = [0u8; SHELL_SITES];
        for c in species_codes.iter_mut() {
            *c = (code % Species::COUNT as u32) as u8;
            code /= Species::COUNT as u32;
        }
        (code == 0).then_some(Observation { species_codes })
    }

    /// Write the 42-wide one-hot encoding into `out`.
    pub fn encode_into(&self, out: &mut [f64]) {
        out[..OBS_INPUT].fill(0.0);
        for (j, &c) in self.species_codes.iter().enumerate() {
            out[j * Species::COUNT + c as usize] = 1.0;
        }
    }

    pub fn one_hot(&self) -> [f64; OBS_INPUT] {
        let mut out = [0.0; OBS_INPUT];
        self.encode_into(&mut out);
        out
    }
}

pub fn observe(state: &LatticeState, vacancy_site: SiteId) -> Result<Observation, AgentError> {
    state.spec().check_site(vacancy_site)?;
    if state.species(vacancy_site) != Species::Vacancy {
        return Err(LatticeError::NotAVacancy(vacancy_site).into());
    }
    Ok(observe_unchecked(state, vacancy_site))
}

#[inline]
pub(crate) fn observe_unchecked(state: &LatticeState, site: SiteId) -> Observation {
    let mut species_codes = [0u8; SHELL_SITES];
    for (j, c) in species_codes.iter_mut().enumerate() {
        *c = state.species(state.neighbor(site, j)).code();
    }
    Observation { species_codes }
}

/// Observations of every agent, in agent order.
pub fn observe_all(state: &LatticeState) -> Vec<Observation> {
    state.vacancies().iter().map(|&v| observe_unchecked(state, v)).collect()
}

pub fn one_hot_batch(obs: &[Observation]) -> Array2<f64> {
    let mut x = Array2::zeros((obs.len(), OBS_INPUT));
    for (row, o) in x.outer_iter_mut().zip(obs) {
        o.encode_into(row.into_slice().expect("standard layout"));
    }
    x
}

/// Maps an observation to 8 direction logits.
pub trait Policy {
    fn logits(&self, obs: &Observation) -> Result<[f64; ACTIONS], AgentError>;

    fn logits_batch(&self, obs: &[Observation]) -> Result<Vec<[f64; ACTIONS]>, AgentError> {
        obs.iter().map(|o| self.logits(o)).collect()
    }

    /// True when every logit is the same constant for every observation.
    fn is_uniform(&self) -> bool {
        false
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn logits(&self, obs: &Observation) -> Result<[f64; ACTIONS], AgentError> {
        (**self).logits(obs)
    }

    fn logits_batch(&self, obs: &[Observation]) -> Result<Vec<[f64; ACTIONS]>, AgentError> {
        (**self).logits_batch(obs)
    }

    fn is_uniform(&self) -> bool {
        (**self).is_uniform()
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn logits(&self, obs: &Observation) -> Result<[f64; ACTIONS], AgentError> {
        (**self).logits(obs)
    }

    fn logits_batch(&self, obs: &[Observation]) -> Result<Vec<[f64; ACTIONS]>, AgentError> {
        (**self).logits_batch(obs)
    }

    fn is_uniform(&self) -> bool {
        (**self).is_uniform()
    }
}

/// Constant logits: the reweighted sampler then reduces to classical KMC.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    fn logits(&self, _obs: &Observation) -> Result<[f64; ACTIONS], AgentError> {
        Ok([0.0; ACTIONS])
    }

    fn is_uniform(&self) -> bool {
        true
    }
}

/// Shared actor network `f_theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub net: Mlp,
}

impl PolicyParams {
    pub fn spec(hidden: &[usize]) -> MlpSpec {
        MlpSpec {
            input: OBS_INPUT,
            hidden: hidden.to_vec(),
            output: ACTIONS,
        }
    }

    pub fn new<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Self {
        PolicyParams {
            net: Mlp::init(Self::spec(hidden), ACTOR_OUTPUT_GAIN, rng),
        }
    }

    pub fn zeros(hidden: &[usize]) -> Self {
        PolicyParams {
            net: Mlp::zeros(Self::spec(hidden)),
        }
    }

    pub fn from_net(net: Mlp) -> Result<Self, AgentError> {
        if net.spec().input != OBS_INPUT || net.spec().output != ACTIONS {
            return Err(AgentError::ShapeMismatch(format!(
                "actor must map {OBS_INPUT} inputs to {ACTIONS} logits, got {} -> {}",
                net.spec().input,
                net.spec().output
            )));
        }
        Ok(PolicyParams { net })
    }
}

pub fn actor_forward(params: &PolicyParams, obs: &Observation) -> Result<[f64; ACTIONS], AgentError> {
    Ok(actor_forward_batch(params, std::slice::from_ref(obs))?[0])
}

pub fn actor_forward_batch(params: &PolicyParams, obs: &[Observation]) -> Result<Vec<[f64; ACTIONS]>, AgentError> {
    params.net.check_finite()?;
    predict_rows(params, obs)
}

// Non-finite weights surface later as non-finite logits.
fn predict_rows(params: &PolicyParams, obs: &[Observation]) -> Result<Vec<[f64; ACTIONS]>, AgentError> {
    if obs.is_empty() {
        return Ok(Vec::new());
    }
    let y = params.net.predict(one_hot_batch(obs).view())?;
    Ok(y.outer_iter()
        .map(|r| {
            let mut z = [0.0; ACTIONS];
            z.iter_mut().zip(r.iter()).for_each(|(d, &s)| *d = s);
            z
        })
        .collect())
}

impl Policy for PolicyParams {
    fn logits(&self, obs: &Observation) -> Result<[f64; ACTIONS], AgentError> {
        Ok(predict_rows(self, std::slice::from_ref(obs))?[0])
    }

    fn logits_batch(&self, obs: &[Observation]) -> Result<Vec<[f64; ACTIONS]>, AgentError> {
        predict_rows(self, obs)
    }
}

/// Centralized value network `f_phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticParams {
    pub net: Mlp,
}

impl CriticParams {
    pub fn spec(hidden: &[usize]) -> MlpSpec {
        MlpSpec {
            input: CRITIC_INPUT,
            hidden: hidden.to_vec(),
            output: 1,
        }
    }

    pub fn new<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Self {
        CriticParams {
            net: Mlp::init(Self::spec(hidden), 1.0, rng),
        }
    }

    pub fn zeros(hidden: &[usize]) -> Self {
        CriticParams {
            net: Mlp::zeros(Self::spec(hidden)),
        }
    }

    pub fn from_net(net: Mlp) -> Result<Self, AgentError> {
        if net.spec().input != CRITIC_INPUT || net.spec().output != 1 {
            return Err(AgentError::ShapeMismatch(format!(
                "critic must map {CRITIC_INPUT} inputs to 1 value, got {} -> {}",
                net.spec().input,
                net.spec().output
            )));
        }
        Ok(CriticParams { net })
    }
}

pub fn critic_forward(params: &CriticParams, feats: &CriticFeatures) -> Result<f64, AgentError> {
    params.net.check_finite()?;
    let x = Array2::from_shape_vec((1, CRITIC_INPUT), feats.to_input()).expect("fixed width");
    Ok(params.net.predict(x.view())?[[0, 0]])
}

/// Joint policy over every `(agent, direction)` slot.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPolicy {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub mask: Vec<bool>,
}

impl GlobalPolicy {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn argmax(&self) -> usize {
        let mut best = usize::MAX;
        for i in 0..self.logits.len() {
            if self.mask[i] && (best == usize::MAX || self.logits[i] > self.logits[best]) {
                best = i;
            }
        }
        best
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    /// Chain `d loss / d probs` back to `d loss / d logits`. Masked entries get 0.
    pub fn backward(&self, d_probs: &[f64]) -> Vec<f64> {
        let dot: f64 = self.probs.iter().zip(d_probs).map(|(p, g)| p * g).sum();
        self.probs
            .iter()
            .zip(d_probs)
            .zip(&self.mask)
            .map(|((&p, &g), &m)| if m { p * (g - dot) } else { 0.0 })
            .collect()
    }
}

/// Masked, max-subtracted softmax over agent-major per-agent logits.
pub fn global_softmax(per_agent_logits: &[[f64; ACTIONS]], valid_mask: &[bool]) -> Result<GlobalPolicy, AgentError> {
    let flat: Vec<f64> = per_agent_logits.iter().flatten().copied().collect();
    global_softmax_flat(flat, valid_mask)
}

pub fn global_softmax_flat(logits: Vec<f64>, valid_mask: &[bool]) -> Result<GlobalPolicy, AgentError> {
    if logits.len() != valid_mask.len() {
        return Err(AgentError::MaskLength(logits.len(), valid_mask.len()));
    }
    let mut max = f64::NEG_INFINITY;
    for (&z, &m) in logits.iter().zip(valid_mask) {
        if m {
            if !z.is_finite() {
                return Err(AgentError::NonFiniteLogit);
            }
            max = max.max(z);
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(AgentError::AllMasked);
    }
    let mut probs: Vec<f64> = logits
        .iter()
        .zip(valid_mask)
        .map(|(&z, &m)| if m { (z - max).exp() } else { 0.0 })
        .collect();
    let norm: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= norm);
    Ok(GlobalPolicy {
        logits,
        probs,
        mask: valid_mask.to_vec(),
    })
}

/// `ln sum exp` over the unmasked entries of `v`.
pub fn masked_logsumexp(v: &[f64], mask: &[bool]) -> f64 {
    let max = v
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = v.iter().zip(mask).filter(|(_, &m)| m).map(|(&x, _)| (x - max).exp()).sum();
    max + s.ln()
}
