//! JSON run and benchmark configurations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energetics::{load_potential_file, EnergeticsError, PairPotential, RateParams};
use crate::lattice::{build_lattice, build_lattice_counts, LatticeError, LatticeSpec, LatticeState};
use crate::rng::{stream, Stream};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config `{path}`: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Potential(#[from] EnergeticsError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Classical,
    Swarm,
}

/// Physical system shared by runs, benchmarks and training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub lattice: [usize; 3],
    /// Lattice parameter; only scales reported positions.
    pub lattice_parameter: f64,
    pub cu_fraction: f64,
    /// Exact Cu count; overrides `cu_fraction` when set.
    pub cu_atoms: Option<usize>,
    pub vacancies: usize,
    /// Overrides the potential file's temperature, K.
    pub temperature: Option<f64>,
    /// Potential parameter file; the built-in Fe-Cu set when absent.
    pub potential: Option<PathBuf>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            lattice: [40, 40, 40],
            lattice_parameter: 1.0,
            cu_fraction: 0.0134,
            cu_atoms: None,
            vacancies: 10,
            temperature: None,
            potential: None,
        }
    }
}

impl SystemConfig {
    pub fn spec(&self) -> Result<LatticeSpec, ConfigError> {
        let [nx, ny, nz] = self.lattice;
        let mut spec = LatticeSpec::new(nx, ny, nz)?;
        spec.lattice_parameter = self.lattice_parameter;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.spec()?;
        if !(0.0..1.0).contains(&self.cu_fraction) {
            return Err(ConfigError::Invalid("cu_fraction must be in [0, 1)".into()));
        }
        if self.vacancies == 0 {
            return Err(ConfigError::Invalid("vacancies must be >= 1".into()));
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ConfigError::Invalid("temperature must be positive".into()));
            }
        }
        Ok(())
    }

    /// Potential and rate parameters with the temperature override applied.
    pub fn physics(&self) -> Result<(PairPotential, RateParams), ConfigError> {
        let (pot, params) = load_physics(self.potential.as_deref())?;
        let params = match self.temperature {
            Some(t) => params.with_temperature(t)?,
            None => params,
        };
        Ok((pot, params))
    }

    /// Random initial configuration from the `Init` stream of `seed`.
    pub fn initial_state(&self, seed: u64) -> Result<LatticeState, ConfigError> {
        let spec = self.spec()?;
        let mut rng = stream(seed, Stream::Init);
        Ok(match self.cu_atoms {
            Some(cu) => build_lattice_counts(spec, cu, self.vacancies, &mut rng)?,
            None => build_lattice(spec, self.cu_fraction, self.vacancies, &mut rng)?,
        })
    }
}

/// Built-in parameters, or the file at `path`.
pub fn load_physics(path: Option<&Path>) -> Result<(PairPotential, RateParams), ConfigError> {
    match path {
        Some(p) => Ok(load_potential_file(p)?),
        None => Ok((PairPotential::fe_cu(), RateParams::fe_cu())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub sampler: SamplerKind,
    /// Actor checkpoint for the swarm sampler; uniform policy when absent.
    pub checkpoint: Option<PathBuf>,
    pub steps: u64,
    pub seed: u64,
    pub output: Option<PathBuf>,
    /// XYZ frame cadence in steps; 0 writes only the initial and final frames.
    pub snapshot_every: u64,
    pub snapshot_all_sites: bool,
    /// `zeta.csv` sampling cadence in steps.
    pub zeta_every: u64,
    /// Reference anneal length as a multiple of `steps`; 0 skips the anneal
    /// and leaves the zeta column empty.
    pub zeta_reference_factor: u64,
    /// Full energy recomputation cadence in steps.
    pub energy_check_every: u64,
    /// `energy.csv` sampling cadence in steps.
    pub energy_every: u64,
    pub etr_window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: SystemConfig::default(),
            sampler: SamplerKind::Classical,
            checkpoint: None,
            steps: 10_000,
            seed: 0,
            output: None,
            snapshot_every: 0,
            snapshot_all_sites: false,
            zeta_every: 100,
            zeta_reference_factor: 10,
            energy_check_every: 1000,
            energy_every: 1,
            etr_window: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.system.validate()?;
        let mut bad = Vec::new();
        if self.steps == 0 {
            bad.push("steps must be >= 1");
        }
        if self.zeta_every == 0 || self.energy_check_every == 0 || self.energy_every == 0 {
            bad.push("zeta_every, energy_check_every and energy_every must be >= 1");
        }
        if self.etr_window == 0 {
            bad.push("etr_window must be >= 1");
        }
        if self.checkpoint.is_some() && self.sampler == SamplerKind::Classical {
            bad.push("checkpoint is only used by the swarm sampler");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub system: SystemConfig,
    /// Trained actor; uniform policy when absent.
    pub checkpoint: Option<PathBuf>,
    pub target_zeta: f64,
    /// Step cap of the swarm run.
    pub swarm_steps: u64,
    /// Classical reference anneal length. Defaults to ten times `swarm_steps`.
    pub reference_steps: Option<u64>,
    /// Classical steps counted towards the target; defaults to `reference_steps`.
    pub classical_cap: Option<u64>,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub etr_window: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            system: SystemConfig::default(),
            checkpoint: None,
            target_zeta: 0.5,
            swarm_steps: 1_000_000,
            reference_steps: None,
            classical_cap: None,
            seed: 0,
            output: None,
            etr_window: 1,
        }
    }
}

impl BenchConfig {
    pub fn reference_steps(&self) -> u64 {
        self.reference_steps.unwrap_or(self.swarm_steps.saturating_mul(10))
    }

    pub fn classical_cap(&self) -> u64 {
        self.classical_cap.unwrap_or_else(|| self.reference_steps())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.system.validate()?;
        if !(self.target_zeta > 0.0 && self.target_zeta <= 1.0) {
            return Err(ConfigError::Invalid("target_zeta must be in (0, 1]".into()));
        }
        if self.swarm_steps == 0 || self.reference_steps() == 0 {
            return Err(ConfigError::Invalid("swarm_steps and reference_steps must be >= 1".into()));
        }
        if !(1..=self.reference_steps()).contains(&self.classical_cap()) {
            return Err(ConfigError::Invalid("classical_cap must be in [1, reference_steps]".into()));
        }
        if self.etr_window == 0 {
            return Err(ConfigError::Invalid("etr_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// Parse a JSON config file; unknown keys are rejected.
pub fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: name.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: name, source })
}
