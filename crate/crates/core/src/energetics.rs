//! Pair-potential energy and Arrhenius hop rates.
//!
//! The system energy is a sum over first- and second-shell bonds, each bond
//! contributing the energy of its unordered species pair. Hop barriers use
//! the kinetically resolved form `E_a = E_a0(species) + dE/2`, and rates are
//! `gamma0 * exp(-E_a / kT)`.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use serde_json::{Map, Value};
use thiserror::Error;

use crate::lattice::{pair_index, pair_name, LatticeState, SiteId, Species, FIRST_SHELL, PAIRS, SECOND_SHELL};

/// Boltzmann constant in eV/K (CODATA 2018).
pub const BOLTZMANN_EV: f64 = 8.617333262e-5;

/// Default attempt frequency, 1/s.
pub const DEFAULT_GAMMA0: f64 = 6.0e12;

const DEFAULT_POTENTIAL_JSON: &str = include_str!("../data/fe_cu_pair.json");

#[derive(Debug, Error)]
pub enum EnergeticsError {
    #[error("cannot read potential file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("potential file {path} is not valid JSON: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("potential file {path} failed validation:\n  {}", problems.join("\n  "))]
    Schema { path: String, problems: Vec<String> },
    #[error("invalid rate parameters: {0}")]
    BadRates(String),
    #[error("hopping species must be an atom, got {0:?}")]
    VacancyHop(Species),
    #[error(transparent)]
    Lattice(#[from] crate::lattice::LatticeError),
}

/// Bond energies in eV per shell (1 and 2) and unordered species pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPotential {
    /// `epsilon[shell - 1][pair_index(a, b)]`
    pub epsilon: [[f64; 6]; 2],
    // dense symmetric lookup used on the hot path
    table: [[[f64; 3]; 3]; 2],
}

impl PairPotential {
    pub fn new(epsilon: [[f64; 6]; 2]) -> Self {
        let mut table = [[[0.0; 3]; 3]; 2];
        for (shell, row) in epsilon.iter().enumerate() {
            for a in Species::ALL {
                for b in Species::ALL {
                    table[shell][a as usize][b as usize] = row[pair_index(a, b)];
                }
            }
        }
        PairPotential { epsilon, table }
    }

    pub fn zero() -> Self {
        Self::new([[0.0; 6]; 2])
    }

    /// Shipped Fe-Cu defaults (`data/fe_cu_pair.json`).
    pub fn fe_cu() -> Self {
        parse_potential_str(DEFAULT_POTENTIAL_JSON, "<builtin>")
            .expect("builtin potential is valid")
            .0
    }

    /// Bond energy for `shell` in {1, 2}.
    #[inline]
    pub fn bond(&self, shell: usize, a: Species, b: Species) -> f64 {
        self.table[shell - 1][a as usize][b as usize]
    }

    pub fn is_finite(&self) -> bool {
        self.epsilon.iter().flatten().all(|e| e.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    pub gamma0: f64,
    /// Reference barrier for a hopping Fe (index 0) or Cu (index 1) atom, eV.
    pub ea0: [f64; 2],
    pub kb: f64,
    pub temperature: f64,
}

impl RateParams {
    pub fn new(gamma0: f64, ea0_fe: f64, ea0_cu: f64, temperature: f64) -> Result<Self, EnergeticsError> {
        let p = RateParams {
            gamma0,
            ea0: [ea0_fe, ea0_cu],
            kb: BOLTZMANN_EV,
            temperature,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn fe_cu() -> Self {
        parse_potential_str(DEFAULT_POTENTIAL_JSON, "<builtin>")
            .expect("builtin potential is valid")
            .1
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self, EnergeticsError> {
        self.temperature = temperature;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), EnergeticsError> {
        if !(self.gamma0.is_finite() && self.gamma0 > 0.0) {
            return Err(EnergeticsError::BadRates(format!("gamma0 must be > 0, got {}", self.gamma0)));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(EnergeticsError::BadRates(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.ea0.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(EnergeticsError::BadRates(format!("ea0 must be >= 0, got {:?}", self.ea0)));
        }
        Ok(())
    }

    #[inline]
    pub fn kt(&self) -> f64 {
        self.kb * self.temperature
    }

    #[inline]
    fn ea0_for(&self, species: Species) -> f64 {
        match species {
            Species::Fe => self.ea0[0],
            _ => self.ea0[1],
        }
    }
}

/// Total pair energy of a configuration, eV.
pub fn total_energy(state: &LatticeState, pot: &PairPotential) -> f64 {
    let bonds = state.count_bonds();
    let mut e = 0.0;
    for shell in 0..2 {
        for pair in 0..PAIRS.len() {
            e += bonds.counts[shell][pair] as f64 * pot.epsilon[shell][pair];
        }
    }
    e
}

/// `E_f - E_i` for exchanging the vacancy at `vacancy_site` with the atom at
/// `target_site`, from the bonds of the two swapped sites only.
pub fn delta_energy_swap(
    state: &LatticeState,
    pot: &PairPotential,
    vacancy_site: SiteId,
    target_site: SiteId,
) -> Result<f64, EnergeticsError> {
    let atom = state.validate_hop(vacancy_site, target_site)?;
    Ok(delta_energy_unchecked(state, pot, vacancy_site, target_site, atom))
}

/// Same as [`delta_energy_swap`] without precondition checks.
#[inline]
pub(crate) fn delta_energy_unchecked(
    state: &LatticeState,
    pot: &PairPotential,
    vacancy_site: SiteId,
    target_site: SiteId,
    atom: Species,
) -> f64 {
    let occ = state.occupancy();
    let a = atom as usize;
    let v = Species::Vacancy as usize;
    let t1 = &pot.table[0];
    let t2 = &pot.table[1];
    let mut de = 0.0;
    for k in 0..FIRST_SHELL {
        let n = state.neighbor(vacancy_site, k);
        if n != target_site {
            let s = occ[n] as usize;
            de += t1[a][s] - t1[v][s];
        }
        let n = state.neighbor(target_site, k);
        if n != vacancy_site {
            let s = occ[n] as usize;
            de += t1[v][s] - t1[a][s];
        }
    }
    for k in 0..SECOND_SHELL {
        let s = occ[state.neighbor(vacancy_site, FIRST_SHELL + k)] as usize;
        de += t2[a][s] - t2[v][s];
        let s = occ[state.neighbor(target_site, FIRST_SHELL + k)] as usize;
        de += t2[v][s] - t2[a][s];
    }
    de
}

/// `E_a = E_a0(species) + dE / 2` for the hopping atom.
pub fn activation_energy(delta_e: f64, species: Species, params: &RateParams) -> Result<f64, EnergeticsError> {
    if !species.is_atom() {
        return Err(EnergeticsError::VacancyHop(species));
    }
    Ok(params.ea0_for(species) + 0.5 * delta_e)
}

static NEGATIVE_BARRIER_WARNED: AtomicBool = AtomicBool::new(false);

/// Arrhenius rate `gamma0 * exp(-E_a / kT)`, 1/s.
#[inline]
pub fn transition_rate(ea: f64, params: &RateParams) -> f64 {
    if ea < 0.0 && !NEGATIVE_BARRIER_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("negative activation energy {ea:.4} eV; rate exceeds the attempt frequency");
    }
    params.gamma0 * (-ea / params.kt()).exp()
}

/// Energy change and rate of a hop, for an atom species already known valid.
#[inline]
pub(crate) fn hop_rate_unchecked(
    state: &LatticeState,
    pot: &PairPotential,
    params: &RateParams,
    vacancy_site: SiteId,
    target_site: SiteId,
    atom: Species,
) -> (f64, f64) {
    let de = delta_energy_unchecked(state, pot, vacancy_site, target_site, atom);
    let ea = params.ea0_for(atom) + 0.5 * de;
    (de, transition_rate(ea, params))
}

/// Load a potential parameter file.
///
/// Layout (all values in eV, 1/s or K):
///
/// ```json
/// { "epsilon": { "shell1": { "FeFe": .., "FeCu": .., "FeV": .., "CuCu": .., "CuV": .., "VV": .. },
///                "shell2": { ... } },
///   "gamma0": 6e12, "ea0": { "Fe": .., "Cu": .. }, "temperature": 663 }
/// ```
///
/// Every missing or malformed key is reported, not just the first.
pub fn load_potential_file(path: &Path) -> Result<(PairPotential, RateParams), EnergeticsError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| EnergeticsError::Io {
        path: name.clone(),
        source,
    })?;
    parse_potential_str(&text, &name)
}

pub fn parse_potential_str(text: &str, name: &str) -> Result<(PairPotential, RateParams), EnergeticsError> {
    let root: Value = serde_json::from_str(text).map_err(|source| EnergeticsError::Json {
        path: name.to_string(),
        source,
    })?;
    let mut problems = Vec::new();
    let empty = Map::new();
    let root_obj = match root.as_object() {
        Some(o) => o,
        None => {
            problems.push("top level must be an object".to_string());
            &empty
        }
    };
    check_unknown(root_obj, &["epsilon", "gamma0", "ea0", "temperature"], "", &mut problems);

    let mut epsilon = [[0.0; 6]; 2];
    let eps_obj = object_at(root_obj, "epsilon", "epsilon", &mut problems);
    for shell in 0..2 {
        let shell_key = format!("shell{}", shell + 1);
        let path = format!("epsilon.{shell_key}");
        let shell_obj = eps_obj.and_then(|o| object_at(o, &shell_key, &path, &mut problems));
        let names: Vec<String> = (0..6).map(pair_name).collect();
        if let Some(so) = shell_obj {
            let allowed: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
            check_unknown(so, &allowed, &path, &mut problems);
        }
        for (pair, pname) in names.iter().enumerate() {
            let key_path = format!("{path}.{pname}");
            match shell_obj {
                Some(so) => {
                    if let Some(v) = number_at(so, pname, &key_path, &mut problems) {
                        epsilon[shell][pair] = v;
                    }
                }
                None => problems.push(format!("missing key `{key_path}`")),
            }
        }
    }

    let gamma0 = number_at(root_obj, "gamma0", "gamma0", &mut problems);
    let temperature = number_at(root_obj, "temperature", "temperature", &mut problems);
    let ea0_obj = object_at(root_obj, "ea0", "ea0", &mut problems);
    let mut ea0 = [None, None];
    match ea0_obj {
        Some(o) => {
            check_unknown(o, &["Fe", "Cu"], "ea0", &mut problems);
            ea0[0] = number_at(o, "Fe", "ea0.Fe", &mut problems);
            ea0[1] = number_at(o, "Cu", "ea0.Cu", &mut problems);
        }
        None => {
            problems.push("missing key `ea0.Fe`".to_string());
            problems.push("missing key `ea0.Cu`".to_string());
        }
    }

    if !problems.is_empty() {
        return Err(EnergeticsError::Schema {
            path: name.to_string(),
            problems,
        });
    }
    let pot = PairPotential::new(epsilon);
    let rates = RateParams {
        gamma0: gamma0.unwrap_or_default(),
        ea0: [ea0[0].unwrap_or_default(), ea0[1].unwrap_or_default()],
        kb: BOLTZMANN_EV,
        temperature: temperature.unwrap_or_default(),
    };
    if !pot.is_finite() {
        return Err(EnergeticsError::Schema {
            path: name.to_string(),
            problems: vec!["epsilon values must be finite".into()],
        });
    }
    rates.validate()?;
    Ok((pot, rates))
}

fn check_unknown(obj: &Map<String, Value>, allowed: &[&str], prefix: &str, problems: &mut Vec<String>) {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            let full = if prefix.is_empty() {
                key.clone()
            } else {
                format!("{prefix}.{key}")
            };
            problems.push(format!("unknown key `{full}`"));
        }
    }
}

fn object_at<'a>(
    obj: &'a Map<String, Value>,
    key: &str,
    path: &str,
    problems: &mut Vec<String>,
) -> Option<&'a Map<String, Value>> {
    match obj.get(key) {
        None => {
            problems.push(format!("missing key `{path}`"));
            None
        }
        Some(Value::Object(o)) => Some(o),
        Some(_) => {
            problems.push(format!("`{path}` must be an object"));
            None
        }
    }
}

fn number_at(obj: &Map<String, Value>, key: &str, path: &str, problems: &mut Vec<String>) -> Option<f64> {
    match obj.get(key) {
        None => {
            problems.push(format!("missing key `{path}`"));
            None
        }
        Some(v) => match v.as_f64() {
            Some(x) => Some(x),
            None => {
                problems.push(format!("`{path}` must be a number"));
                None
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeSpec;

    fn pure(n: usize) -> LatticeState {
        LatticeState::pure_fe(LatticeSpec::cubic(n).unwrap()).unwrap()
    }

    #[test]
    fn pure_fe_energy() {
        let mut eps = [[0.0; 6]; 2];
        eps[0][0] = -0.1;
        let e = total_energy(&pure(4), &PairPotential::new(eps));
        assert!((e - (-51.2)).abs() < 1e-12);
        assert_eq!(total_energy(&pure(4), &PairPotential::zero()), 0.0);
    }

    #[test]
    fn activation_energy_arithmetic() {
        let p = RateParams::new(1e13, 0.6, 0.6, 600.0).unwrap();
        assert_eq!(activation_energy(0.0, Species::Fe, &p).unwrap(), 0.6);
        assert!((activation_energy(-0.2, Species::Cu, &p).unwrap() - 0.5).abs() < 1e-15);
        assert!((activation_energy(0.2, Species::Fe, &p).unwrap() - 0.7).abs() < 1e-15);
        assert!(matches!(
            activation_energy(0.0, Species::Vacancy, &p),
            Err(EnergeticsError::VacancyHop(_))
        ));
    }

    #[test]
    fn rate_limits() {
        let p = RateParams::new(5e12, 0.6, 0.5, 700.0).unwrap();
        assert_eq!(transition_rate(0.0, &p), 5e12);
        let r = transition_rate(p.kt(), &p);
        assert!((r - 5e12 * (-1.0f64).exp()).abs() / r < 1e-14);
        let hot = p.with_temperature(900.0).unwrap();
        assert!(transition_rate(0.5, &hot) > transition_rate(0.5, &p));
        assert!(transition_rate(-0.1, &p) > p.gamma0);
    }

    #[test]
    fn bad_rate_params_rejected() {
        assert!(RateParams::new(0.0, 0.6, 0.6, 600.0).is_err());
        assert!(RateParams::new(1e13, 0.6, 0.6, 0.0).is_err());
        assert!(RateParams::new(1e13, -0.1, 0.6, 600.0).is_err());
    }

    #[test]
    fn mirror_environment_has_zero_delta() {
        // vacancy and target in pure Fe: both sites see identical shells
        let mut st = pure(5);
        st.set_species(0, Species::Vacancy).unwrap();
        let t = st.spec().first_neighbor(0, 3);
        let de = delta_energy_swap(&st, &PairPotential::fe_cu(), 0, t).unwrap();
        assert!(de.abs() < 1e-12);
    }

    #[test]
    fn builtin_defaults_load() {
        let pot = PairPotential::fe_cu();
        assert_eq!(pot.bond(1, Species::Fe, Species::Fe), -0.778);
        assert_eq!(pot.bond(2, Species::Vacancy, Species::Cu), -0.170);
        let r = RateParams::fe_cu();
        assert_eq!(r.gamma0, DEFAULT_GAMMA0);
        assert_eq!(r.ea0, [0.62, 0.56]);
    }

    #[test]
    fn schema_errors_are_exhaustive() {
        let text = r#"{"epsilon": {"shell1": {"FeFe": -0.7, "FeCu": "x", "Bogus": 1}}, "gamma0": 1e13, "ea0": {"Fe": 0.6}}"#;
        let err = parse_potential_str(text, "p.json").unwrap_err();
        let EnergeticsError::Schema { problems, .. } = err else {
            panic!("expected schema error")
        };
        let joined = problems.join("\n");
        for needle in [
            "`epsilon.shell1.FeCu` must be a number",
            "unknown key `epsilon.shell1.Bogus`",
            "missing key `epsilon.shell1.VV`",
            "missing key `epsilon.shell2`",
            "missing key `epsilon.shell2.CuV`",
            "missing key `ea0.Cu`",
            "missing key `temperature`",
        ] {
            assert!(joined.contains(needle), "{needle} not in:\n{joined}");
        }
    }
}
