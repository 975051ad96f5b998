use crate::energetics::{hop_rate_unchecked, PairPotential, RateParams};
use crate::lattice::{LatticeState, SiteId, Species, FIRST_SHELL, SHELL_SITES};

use super::sumtree::{compensated_sum, SumTree};
use super::HopEvent;

/// Exact re-summation cadence for the total rate, in executed steps.
pub const DEFAULT_REBUILD_EVERY: u64 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventSlot {
    pub target: SiteId,
    /// Species at the target; `Vacancy` marks an invalid slot.
    pub species: Species,
    pub delta_e: f64,
    pub rate: f64,
}

impl EventSlot {
    const INVALID: EventSlot = EventSlot {
        target: usize::MAX,
        species: Species::Vacancy,
        delta_e: 0.0,
        rate: 0.0,
    };

    #[inline]
    pub fn is_valid(&self) -> bool {
        self.species != Species::Vacancy
    }
}

/// Every vacancy-to-atom first-shell hop with its rate.
///
/// Slots are agent-major: slot `agent * 8 + direction`. Directions that point
/// at another vacancy are kept as zero-rate invalid slots so the layout
/// matches the flat policy vector.
#[derive(Debug, Clone)]
pub struct EventCatalog {
    slots: Vec<EventSlot>,
    tree: SumTree,
    /// Agents whose rates were refreshed by the last local update.
    dirty: Vec<usize>,
    steps_since_rebuild: u64,
    rebuild_every: u64,
}

impl EventCatalog {
    pub fn enumerate(state: &LatticeState, pot: &PairPotential, params: &RateParams) -> Self {
        let agents = state.vacancies().len();
        let mut cat = EventCatalog {
            slots: vec![EventSlot::INVALID; agents * FIRST_SHELL],
            tree: SumTree::new(agents * FIRST_SHELL),
            dirty: Vec::new(),
            steps_since_rebuild: 0,
            rebuild_every: DEFAULT_REBUILD_EVERY,
        };
        for agent in 0..agents {
            cat.fill_agent(state, pot, params, agent);
        }
        cat.tree.rebuild();
        cat
    }

    pub fn set_rebuild_every(&mut self, steps: u64) {
        self.rebuild_every = steps.max(1);
    }

    fn fill_agent(&mut self, state: &LatticeState, pot: &PairPotential, params: &RateParams, agent: usize) {
        let v = state.vacancies()[agent];
        for k in 0..FIRST_SHELL {
            let slot = agent * FIRST_SHELL + k;
            let target = state.neighbor(v, k);
            let species = state.species(target);
            let entry = if species.is_atom() {
                let (delta_e, rate) = hop_rate_unchecked(state, pot, params, v, target, species);
                EventSlot {
                    target,
                    species,
                    delta_e,
                    rate,
                }
            } else {
                EventSlot {
                    target,
                    ..EventSlot::INVALID
                }
            };
            self.slots[slot] = entry;
            self.tree.set_lazy(slot, entry.rate);
        }
    }

    /// Number of slots, `N * 8`.
    #[inline]
    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    #[inline]
    pub fn agent_count(&self) -> usize {
        self.slots.len() / FIRST_SHELL
    }

    #[inline]
    pub fn slot(&self, i: usize) -> &EventSlot {
        &self.slots[i]
    }

    pub fn slots(&self) -> &[EventSlot] {
        &self.slots
    }

    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        self.slots[i].is_valid()
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.slots.iter().map(|s| s.is_valid()).collect()
    }

    pub fn rates(&self) -> Vec<f64> {
        self.slots.iter().map(|s| s.rate).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_valid()).count()
    }

    pub fn is_empty(&self) -> bool {
        !(self.tree.total() > 0.0)
    }

    /// `Gamma_tot` as held by the selection tree.
    #[inline]
    pub fn total_rate(&self) -> f64 {
        self.tree.total()
    }

    /// Compensated sum over all slot rates.
    pub fn exact_total_rate(&self) -> f64 {
        compensated_sum(self.slots.iter().map(|s| s.rate))
    }

    pub(crate) fn tree(&self) -> &SumTree {
        &self.tree
    }

    /// Materialize slot `i` as an event, if valid.
    pub fn event(&self, state: &LatticeState, i: usize) -> Option<HopEvent> {
        let s = &self.slots[i];
        if !s.is_valid() {
            return None;
        }
        let agent = i / FIRST_SHELL;
        Some(HopEvent {
            agent,
            vacancy_site: state.vacancies()[agent],
            direction: i % FIRST_SHELL,
            target_site: s.target,
            hopping_species: s.species,
            rate: s.rate,
            delta_e: s.delta_e,
        })
    }

    pub fn events<'a>(&'a self, state: &'a LatticeState) -> impl Iterator<Item = HopEvent> + 'a {
        (0..self.slots.len()).filter_map(move |i| self.event(state, i))
    }

    /// Agents refreshed by the most recent [`EventCatalog::local_update`].
    pub fn dirty_agents(&self) -> &[usize] {
        &self.dirty
    }

    /// Refresh the rates invalidated by `executed`, which must already have
    /// been applied to `state`.
    ///
    /// A hop rate depends on the species at the vacancy, the target and both
    /// their 14-site shells. So an event is stale exactly when its vacancy or
    /// its target lies in `{c} + shell(c)` for a swapped site `c`; every
    /// vacancy in that region or first-shell adjacent to it is refreshed.
    pub fn local_update(
        &mut self,
        state: &LatticeState,
        executed: &HopEvent,
        pot: &PairPotential,
        params: &RateParams,
    ) -> &[usize] {
        self.collect_affected(state, executed.vacancy_site, executed.target_site);
        for idx in 0..self.dirty.len() {
            let agent = self.dirty[idx];
            self.fill_agent(state, pot, params, agent);
            for k in 0..FIRST_SHELL {
                self.tree.refresh_path(agent * FIRST_SHELL + k);
            }
        }
        self.steps_since_rebuild += 1;
        if self.steps_since_rebuild >= self.rebuild_every {
            self.tree.rebuild();
            self.steps_since_rebuild = 0;
        }
        &self.dirty
    }

    fn collect_affected(&mut self, state: &LatticeState, a: SiteId, b: SiteId) {
        self.dirty.clear();
        let visit = |site: SiteId, dirty: &mut Vec<usize>| {
            if let Some(agent) = state.vacancy_agent(site) {
                dirty.push(agent);
            }
        };
        for c in [a, b] {
            for j in 0..=SHELL_SITES {
                let r = if j == SHELL_SITES { c } else { state.neighbor(c, j) };
                visit(r, &mut self.dirty);
                for k in 0..FIRST_SHELL {
                    visit(state.neighbor(r, k), &mut self.dirty);
                }
            }
        }
        self.dirty.sort_unstable();
        self.dirty.dedup();
    }

    /// Slot-by-slot equality with another catalog (rates compared bitwise).
    pub fn same_events(&self, other: &EventCatalog) -> bool {
        self.slots.len() == other.slots.len()
            && self
                .slots
                .iter()
                .zip(&other.slots)
                .all(|(a, b)| a.target == b.target && a.species == b.species && a.rate.to_bits() == b.rate.to_bits())
    }
}
