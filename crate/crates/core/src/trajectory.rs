//! Per-step records shared by both samplers, and the sink interface used to
//! stream them to files and metric accumulators.

use crate::lattice::{LatticeState, SiteId, Species};

/// One executed hop with its importance-sampling bookkeeping.
///
/// Classical steps carry the identity weight: `pi_a = 1` and `z_prime = z`,
/// so `p(a) / q(a) = (z_prime / z) / pi_a = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based index of this step.
    pub step: u64,
    /// Simulated time after the step, s.
    pub time: f64,
    pub dt: f64,
    pub agent: usize,
    /// Flat event index `agent * 8 + direction`.
    pub action: usize,
    pub vacancy_site: SiteId,
    pub target_site: SiteId,
    pub direction: usize,
    pub hopping_species: Species,
    pub delta_e: f64,
    /// Physical total rate `Z = sum Gamma` before the step, 1/s.
    pub gamma_tot: f64,
    pub pi_a: f64,
    /// `Z' = sum pi Gamma`, 1/s.
    pub z_prime: f64,
}

impl StepRecord {
    /// `ln(p(a) / q(a))` for this step.
    #[inline]
    pub fn log_weight(&self) -> f64 {
        (self.z_prime / self.gamma_tot).ln() - self.pi_a.ln()
    }

    /// Whether `next` swaps the same two sites back.
    #[inline]
    pub fn is_reversed_by(&self, next: &StepRecord) -> bool {
        (next.vacancy_site == self.target_site && next.target_site == self.vacancy_site)
            || (next.vacancy_site == self.vacancy_site && next.target_site == self.target_site)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub steps: Vec<StepRecord>,
}

impl TrajectoryRecord {
    pub fn new() -> Self {
        Self::default()
    }

    /// Horizon `T`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, rec: StepRecord) {
        self.steps.push(rec);
    }

    pub fn delta_energies(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.delta_e)
    }
}

/// Receives every executed step together with the post-step lattice.
pub trait StepSink {
    fn on_step(&mut self, rec: &StepRecord, state: &LatticeState) -> std::io::Result<()>;

    fn finish(&mut self, _state: &LatticeState) -> std::io::Result<()> {
        Ok(())
    }
}

impl StepSink for TrajectoryRecord {
    fn on_step(&mut self, rec: &StepRecord, _state: &LatticeState) -> std::io::Result<()> {
        self.push(*rec);
        Ok(())
    }
}

impl<F> StepSink for F
where
    F: FnMut(&StepRecord, &LatticeState),
{
    fn on_step(&mut self, rec: &StepRecord, state: &LatticeState) -> std::io::Result<()> {
        self(rec, state);
        Ok(())
    }
}
