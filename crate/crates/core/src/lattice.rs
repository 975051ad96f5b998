//! Body-centred cubic lattice with periodic boundaries.
//!
//! Sites are stored as two interleaved simple-cubic sublattices. The site in
//! cubic cell `(x, y, z)` on sublattice `b` (0 = cell corner, 1 = body centre)
//! sits at `((x + b/2), (y + b/2), (z + b/2)) * a` and has linear index
//!
//! ```text
//! site = 2 * (x + nx * (y + ny * z)) + b
//! ```
//!
//! Neighbours are computed arithmetically from that formula, so no neighbour
//! tables are stored.
//!
//! Canonical neighbour order (it also indexes actor logits):
//!
//! * first shell, `k = 0..8`: half-lattice-parameter offsets with sign
//!   vector `(sx, sy, sz)` where `sx = + for k < 4`, `sy = + for k mod 4 < 2`,
//!   `sz = + for k even`. Direction `7 - k` is the opposite of `k`.
//! * second shell, `k = 0..6`: `+x, -x, +y, -y, +z, -z`. Direction `k ^ 1`
//!   is the opposite of `k`.

use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type SiteId = usize;

pub const FIRST_SHELL: usize = 8;
pub const SECOND_SHELL: usize = 6;
/// Sites observed around a vacancy: both shells.
pub const SHELL_SITES: usize = FIRST_SHELL + SECOND_SHELL;

/// First-shell sign vectors, in canonical direction order.
pub const FIRST_SHELL_DIRS: [[i8; 3]; FIRST_SHELL] = [
    [1, 1, 1],
    [1, 1, -1],
    [1, -1, 1],
    [1, -1, -1],
    [-1, 1, 1],
    [-1, 1, -1],
    [-1, -1, 1],
    [-1, -1, -1],
];

/// Second-shell unit-cell offsets, in canonical direction order.
pub const SECOND_SHELL_DIRS: [[i8; 3]; SECOND_SHELL] = [
    [1, 0, 0],
    [-1, 0, 0],
    [0, 1, 0],
    [0, -1, 0],
    [0, 0, 1],
    [0, 0, -1],
];

/// Opposite first-shell direction.
#[inline]
pub const fn reverse_direction(k: usize) -> usize {
    7 - k
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("lattice extent along {axis} is {extent}; every extent must be at least 2")]
    DegenerateSpec { axis: char, extent: usize },
    #[error("lattice parameter must be positive and finite, got {0}")]
    BadLatticeParameter(f64),
    #[error("Cu fraction {0} outside [0, 1)")]
    InvalidCuFraction(f64),
    #[error("at least one vacancy is required")]
    NoVacancies,
    #[error("requested {cu} Cu atoms and {vacancies} vacancies but the lattice has only {sites} sites")]
    Overfull {
        cu: usize,
        vacancies: usize,
        sites: usize,
    },
    #[error("site {site} is out of range for a lattice of {sites} sites")]
    InvalidSite { site: SiteId, sites: usize },
    #[error("site {0} does not hold a vacancy")]
    NotAVacancy(SiteId),
    #[error("site {target} is not a first-shell neighbour of {vacancy}")]
    NotANeighbor { vacancy: SiteId, target: SiteId },
    #[error("target site {0} holds a vacancy; vacancy-vacancy swaps are not events")]
    TargetIsVacancy(SiteId),
    #[error("occupancy has {got} entries, expected {expected}")]
    OccupancyLength { got: usize, expected: usize },
}

/// Chemical species on a lattice site. The integer codes are part of the
/// file formats and must not change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Species {
    Fe = 0,
    Cu = 1,
    Vacancy = 2,
}

impl Species {
    pub const ALL: [Species; 3] = [Species::Fe, Species::Cu, Species::Vacancy];
    pub const COUNT: usize = 3;

    #[inline]
    pub const fn code(self) -> u8 {
        self as u8
    }

    pub const fn from_code(code: u8) -> Option<Species> {
        match code {
            0 => Some(Species::Fe),
            1 => Some(Species::Cu),
            2 => Some(Species::Vacancy),
            _ => None,
        }
    }

    pub const fn symbol(self) -> &'static str {
        match self {
            Species::Fe => "Fe",
            Species::Cu => "Cu",
            Species::Vacancy => "V",
        }
    }

    #[inline]
    pub const fn is_atom(self) -> bool {
        !matches!(self, Species::Vacancy)
    }
}

/// Unordered species pairs, in the order used by bond tables.
pub const PAIRS: [(Species, Species); 6] = [
    (Species::Fe, Species::Fe),
    (Species::Fe, Species::Cu),
    (Species::Fe, Species::Vacancy),
    (Species::Cu, Species::Cu),
    (Species::Cu, Species::Vacancy),
    (Species::Vacancy, Species::Vacancy),
];

/// Index of an unordered species pair into [`PAIRS`].
#[inline]
pub const fn pair_index(a: Species, b: Species) -> usize {
    // row offsets for a <= b: Fe -> 0, Cu -> 3, Vacancy -> 5
    const PAIR_TABLE: [[usize; 3]; 3] = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];
    PAIR_TABLE[a as usize][b as usize]
}

pub fn pair_name(pair: usize) -> String {
    let (a, b) = PAIRS[pair];
    format!("{}{}", a.symbol(), b.symbol())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    #[serde(default = "default_lattice_parameter")]
    pub lattice_parameter: f64,
}

fn default_lattice_parameter() -> f64 {
    1.0
}

impl LatticeSpec {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self, LatticeError> {
        let spec = LatticeSpec {
            nx,
            ny,
            nz,
            lattice_parameter: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn cubic(n: usize) -> Result<Self, LatticeError> {
        Self::new(n, n, n)
    }

    pub fn validate(&self) -> Result<(), LatticeError> {
        for (axis, extent) in [('x', self.nx), ('y', self.ny), ('z', self.nz)] {
            if extent < 2 {
                return Err(LatticeError::DegenerateSpec { axis, extent });
            }
        }
        if !(self.lattice_parameter.is_finite() && self.lattice_parameter > 0.0) {
            return Err(LatticeError::BadLatticeParameter(self.lattice_parameter));
        }
        Ok(())
    }

    #[inline]
    pub fn site_count(&self) -> usize {
        2 * self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn cell_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn contains(&self, site: SiteId) -> bool {
        site < self.site_count()
    }

    pub fn check_site(&self, site: SiteId) -> Result<(), LatticeError> {
        if self.contains(site) {
            Ok(())
        } else {
            Err(LatticeError::InvalidSite {
                site,
                sites: self.site_count(),
            })
        }
    }

    /// Cell coordinates and sublattice of a site.
    #[inline]
    pub fn decode(&self, site: SiteId) -> (usize, usize, usize, usize) {
        let b = site & 1;
        let cell = site >> 1;
        let x = cell % self.nx;
        let rest = cell / self.nx;
        (x, rest % self.ny, rest / self.ny, b)
    }

    #[inline]
    pub fn encode(&self, x: usize, y: usize, z: usize, b: usize) -> SiteId {
        2 * (x + self.nx * (y + self.ny * z)) + b
    }

    #[inline]
    fn wrap(v: usize, d: isize, n: usize) -> usize {
        (v as isize + d).rem_euclid(n as isize) as usize
    }

    /// First-shell neighbour of `site` in canonical direction `k`.
    #[inline]
    pub fn first_neighbor(&self, site: SiteId, k: usize) -> SiteId {
        let (x, y, z, b) = self.decode(site);
        let [sx, sy, sz] = FIRST_SHELL_DIRS[k];
        // corner sites reach the body centres of cells (x-1|x), body centres
        // reach the corners of cells (x|x+1)
        let step = |s: i8| -> isize {
            match (b, s > 0) {
                (0, true) => 0,
                (0, false) => -1,
                (_, true) => 1,
                (_, false) => 0,
            }
        };
        self.encode(
            Self::wrap(x, step(sx), self.nx),
            Self::wrap(y, step(sy), self.ny),
            Self::wrap(z, step(sz), self.nz),
            1 - b,
        )
    }

    /// Second-shell neighbour of `site` in canonical direction `k`.
    #[inline]
    pub fn second_neighbor(&self, site: SiteId, k: usize) -> SiteId {
        let (x, y, z, b) = self.decode(site);
        let [dx, dy, dz] = SECOND_SHELL_DIRS[k];
        self.encode(
            Self::wrap(x, dx as isize, self.nx),
            Self::wrap(y, dy as isize, self.ny),
            Self::wrap(z, dz as isize, self.nz),
            b,
        )
    }

    /// Neighbour `j` of the combined 14-site shell (first shell, then second).
    #[inline]
    pub fn shell_neighbor(&self, site: SiteId, j: usize) -> SiteId {
        if j < FIRST_SHELL {
            self.first_neighbor(site, j)
        } else {
            self.second_neighbor(site, j - FIRST_SHELL)
        }
    }

    pub fn neighborhood(&self, site: SiteId) -> SiteNeighborhood {
        SiteNeighborhood {
            first_shell: std::array::from_fn(|k| self.first_neighbor(site, k)),
            second_shell: std::array::from_fn(|k| self.second_neighbor(site, k)),
        }
    }

    /// Cartesian position in units of the lattice parameter times `a`.
    pub fn position(&self, site: SiteId) -> [f64; 3] {
        let (x, y, z, b) = self.decode(site);
        let h = 0.5 * b as f64;
        let a = self.lattice_parameter;
        [(x as f64 + h) * a, (y as f64 + h) * a, (z as f64 + h) * a]
    }

    pub fn box_lengths(&self) -> [f64; 3] {
        let a = self.lattice_parameter;
        [self.nx as f64 * a, self.ny as f64 * a, self.nz as f64 * a]
    }

    /// Minimum-image distance between two sites.
    pub fn distance(&self, a: SiteId, b: SiteId) -> f64 {
        let pa = self.position(a);
        let pb = self.position(b);
        let l = self.box_lengths();
        let mut sq = 0.0;
        for ax in 0..3 {
            let d = min_image(pb[ax] - pa[ax], l[ax]);
            sq += d * d;
        }
        sq.sqrt()
    }
}

/// Wrap a displacement into `[-L/2, L/2)`.
#[inline]
pub fn min_image(d: f64, length: f64) -> f64 {
    d - length * (d / length + 0.5).floor()
}

/// The 14 periodic neighbours of a site, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiteNeighborhood {
    pub first_shell: [SiteId; FIRST_SHELL],
    pub second_shell: [SiteId; SECOND_SHELL],
}

impl SiteNeighborhood {
    pub fn iter(&self) -> impl Iterator<Item = SiteId> + '_ {
        self.first_shell.iter().chain(self.second_shell.iter()).copied()
    }
}

/// Per-shell bond counts over unordered species pairs, each bond counted once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BondCounts {
    pub counts: [[u64; 6]; 2],
}

impl BondCounts {
    /// `shell` is 1 or 2.
    pub fn get(&self, shell: usize, a: Species, b: Species) -> u64 {
        self.counts[shell - 1][pair_index(a, b)]
    }
}

const NO_SLOT: u32 = u32::MAX;

/// Species occupancy of every site plus index lists of vacancies and Cu atoms.
///
/// The position of a vacancy in `vacancy_index` is its agent id; it follows
/// the vacancy as it hops, so the agent-major event order stays stable.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeState {
    spec: LatticeSpec,
    occupancy: Vec<Species>,
    vacancy_index: Vec<SiteId>,
    cu_index: Vec<SiteId>,
    // site -> position in vacancy_index / cu_index
    slot: Vec<u32>,
    // site * 14 + j -> shell neighbour j, shared between clones
    neighbors: Arc<Vec<u32>>,
}

impl LatticeState {
    /// All-Fe lattice.
    pub fn pure_fe(spec: LatticeSpec) -> Result<Self, LatticeError> {
        spec.validate()?;
        Self::from_occupancy(spec, vec![Species::Fe; spec.site_count()])
    }

    pub fn from_occupancy(spec: LatticeSpec, occupancy: Vec<Species>) -> Result<Self, LatticeError> {
        spec.validate()?;
        if occupancy.len() != spec.site_count() {
            return Err(LatticeError::OccupancyLength {
                got: occupancy.len(),
                expected: spec.site_count(),
            });
        }
        let neighbors = (0..spec.site_count())
            .flat_map(|site| (0..SHELL_SITES).map(move |j| spec.shell_neighbor(site, j) as u32))
            .collect();
        let mut state = LatticeState {
            spec,
            occupancy,
            vacancy_index: Vec::new(),
            cu_index: Vec::new(),
            slot: Vec::new(),
            neighbors: Arc::new(neighbors),
        };
        state.reindex();
        Ok(state)
    }

    fn reindex(&mut self) {
        self.vacancy_index.clear();
        self.cu_index.clear();
        self.slot = vec![NO_SLOT; self.occupancy.len()];
        for (site, &sp) in self.occupancy.iter().enumerate() {
            match sp {
                Species::Vacancy => {
                    self.slot[site] = self.vacancy_index.len() as u32;
                    self.vacancy_index.push(site);
                }
                Species::Cu => {
                    self.slot[site] = self.cu_index.len() as u32;
                    self.cu_index.push(site);
                }
                Species::Fe => {}
            }
        }
    }

    /// Overwrite one site and rebuild the index lists (agent ids are
    /// reassigned in ascending site order). Intended for setting up
    /// configurations, not for dynamics.
    pub fn set_species(&mut self, site: SiteId, species: Species) -> Result<(), LatticeError> {
        self.spec.check_site(site)?;
        self.occupancy[site] = species;
        self.reindex();
        Ok(())
    }

    #[inline]
    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    #[inline]
    pub fn site_count(&self) -> usize {
        self.occupancy.len()
    }

    /// Tabulated [`LatticeSpec::shell_neighbor`].
    #[inline]
    pub fn neighbor(&self, site: SiteId, j: usize) -> SiteId {
        self.neighbors[site * SHELL_SITES + j] as usize
    }

    #[inline]
    pub fn species(&self, site: SiteId) -> Species {
        self.occupancy[site]
    }

    pub fn occupancy(&self) -> &[Species] {
        &self.occupancy
    }

    pub fn vacancies(&self) -> &[SiteId] {
        &self.vacancy_index
    }

    pub fn cu_sites(&self) -> &[SiteId] {
        &self.cu_index
    }

    /// Agent id of the vacancy at `site`, if any.
    #[inline]
    pub fn vacancy_agent(&self, site: SiteId) -> Option<usize> {
        match self.occupancy.get(site) {
            Some(Species::Vacancy) => Some(self.slot[site] as usize),
            _ => None,
        }
    }

    pub fn species_histogram(&self) -> [usize; 3] {
        let mut h = [0usize; 3];
        for &sp in &self.occupancy {
            h[sp as usize] += 1;
        }
        h
    }

    pub fn neighborhood(&self, site: SiteId) -> Result<SiteNeighborhood, LatticeError> {
        self.spec.check_site(site)?;
        Ok(self.spec.neighborhood(site))
    }

    /// Check a hop without applying it; returns the hopping species.
    pub fn validate_hop(&self, vacancy_site: SiteId, target_site: SiteId) -> Result<Species, LatticeError> {
        self.spec.check_site(vacancy_site)?;
        self.spec.check_site(target_site)?;
        if self.occupancy[vacancy_site] != Species::Vacancy {
            return Err(LatticeError::NotAVacancy(vacancy_site));
        }
        if !(0..FIRST_SHELL).any(|k| self.spec.first_neighbor(vacancy_site, k) == target_site) {
            return Err(LatticeError::NotANeighbor {
                vacancy: vacancy_site,
                target: target_site,
            });
        }
        match self.occupancy[target_site] {
            Species::Vacancy => Err(LatticeError::TargetIsVacancy(target_site)),
            sp => Ok(sp),
        }
    }

    /// Exchange a vacancy with a first-shell atom.
    pub fn apply_hop(&mut self, vacancy_site: SiteId, target_site: SiteId) -> Result<Species, LatticeError> {
        let atom = self.validate_hop(vacancy_site, target_site)?;
        self.swap_unchecked(vacancy_site, target_site, atom);
        Ok(atom)
    }

    #[inline]
    pub(crate) fn swap_unchecked(&mut self, vacancy_site: SiteId, target_site: SiteId, atom: Species) {
        let vslot = self.slot[vacancy_site];
        self.vacancy_index[vslot as usize] = target_site;
        if atom == Species::Cu {
            let cslot = self.slot[target_site];
            self.cu_index[cslot as usize] = vacancy_site;
            self.slot[vacancy_site] = cslot;
        } else {
            self.slot[vacancy_site] = NO_SLOT;
        }
        self.slot[target_site] = vslot;
        self.occupancy[vacancy_site] = atom;
        self.occupancy[target_site] = Species::Vacancy;
    }

    /// Bond counts per shell and species pair, each bond counted once.
    pub fn count_bonds(&self) -> BondCounts {
        let mut out = BondCounts::default();
        for site in 0..self.site_count() {
            let a = self.occupancy[site];
            // the first four first-shell directions and the three positive
            // second-shell directions visit every bond exactly once
            for k in 0..4 {
                let b = self.occupancy[self.neighbor(site, k)];
                out.counts[0][pair_index(a, b)] += 1;
            }
            for k in [0, 2, 4] {
                let b = self.occupancy[self.neighbor(site, FIRST_SHELL + k)];
                out.counts[1][pair_index(a, b)] += 1;
            }
        }
        out
    }

    /// Copy of the state shifted by a whole number of cubic cells.
    pub fn translated(&self, shift: [isize; 3]) -> LatticeState {
        let spec = self.spec;
        let mut occ = vec![Species::Fe; self.site_count()];
        for (site, &sp) in self.occupancy.iter().enumerate() {
            let (x, y, z, b) = spec.decode(site);
            let to = spec.encode(
                LatticeSpec::wrap(x, shift[0], spec.nx),
                LatticeSpec::wrap(y, shift[1], spec.ny),
                LatticeSpec::wrap(z, shift[2], spec.nz),
                b,
            );
            occ[to] = sp;
        }
        LatticeState::from_occupancy(spec, occ).expect("translation preserves shape")
    }

    /// Internal consistency of the index lists against the occupancy.
    pub fn check_consistency(&self) -> bool {
        let vac_ok = self
            .vacancy_index
            .iter()
            .enumerate()
            .all(|(i, &s)| self.occupancy[s] == Species::Vacancy && self.slot[s] as usize == i);
        let cu_ok = self
            .cu_index
            .iter()
            .enumerate()
            .all(|(i, &s)| self.occupancy[s] == Species::Cu && self.slot[s] as usize == i);
        let h = self.species_histogram();
        vac_ok && cu_ok && h[1] == self.cu_index.len() && h[2] == self.vacancy_index.len()
    }
}

/// Number of Cu atoms placed for a given fraction (round half up).
pub fn cu_count_for(sites: usize, cu_fraction: f64) -> usize {
    (cu_fraction * sites as f64 + 0.5).floor() as usize
}

/// Random alloy with exact Cu and vacancy counts, uniformly placed.
pub fn build_lattice<R: Rng + ?Sized>(
    spec: LatticeSpec,
    cu_fraction: f64,
    vacancy_count: usize,
    rng: &mut R,
) -> Result<LatticeState, LatticeError> {
    spec.validate()?;
    if !(0.0..1.0).contains(&cu_fraction) || !cu_fraction.is_finite() {
        return Err(LatticeError::InvalidCuFraction(cu_fraction));
    }
    if vacancy_count == 0 {
        return Err(LatticeError::NoVacancies);
    }
    build_lattice_counts(spec, cu_count_for(spec.site_count(), cu_fraction), vacancy_count, rng)
}

/// Like [`build_lattice`] with an explicit number of Cu atoms.
pub fn build_lattice_counts<R: Rng + ?Sized>(
    spec: LatticeSpec,
    cu: usize,
    vacancy_count: usize,
    rng: &mut R,
) -> Result<LatticeState, LatticeError> {
    spec.validate()?;
    if vacancy_count == 0 {
        return Err(LatticeError::NoVacancies);
    }
    let sites = spec.site_count();
    if cu + vacancy_count > sites {
        return Err(LatticeError::Overfull {
            cu,
            vacancies: vacancy_count,
            sites,
        });
    }
    let mut occ = vec![Species::Fe; sites];
    let picks = index::sample(rng, sites, cu + vacancy_count);
    for (i, site) in picks.into_iter().enumerate() {
        occ[site] = if i < cu { Species::Cu } else { Species::Vacancy };
    }
    LatticeState::from_occupancy(spec, occ)
}
