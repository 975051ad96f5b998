//! Global state summary fed to the critic.

use std::f64::consts::TAU;

use crate::lattice::{min_image, LatticeState, Species, SHELL_SITES};

use super::{observe_unchecked, AgentError, OBS_INPUT};

/// Mean and max of the agents' one-hot observations, then
/// `mu(3), sigma(3), c, d, rho`.
pub const CRITIC_INPUT: usize = 2 * OBS_INPUT + 9;

#[derive(Debug, Clone, PartialEq)]
pub struct CriticFeatures {
    /// Elementwise mean over agents of the one-hot observations.
    pub obs_mean: Vec<f64>,
    /// Elementwise max over agents of the one-hot observations.
    pub obs_max: Vec<f64>,
    /// Cu centroid, wrapped into the box.
    pub mu: [f64; 3],
    /// Per-axis variance of Cu positions about the centroid.
    pub sigma: [f64; 3],
    /// Population variance of Cu counts over the 8 half-box subcells.
    pub c: f64,
    /// Mean over vacancies of the distance to the nearest Cu.
    pub d: f64,
    /// Mean over vacancies of the Cu fraction of their 14-site shell.
    pub rho: f64,
    box_lengths: [f64; 3],
    lattice_parameter: f64,
    cu_per_subcell: f64,
}

impl CriticFeatures {
    /// Network input with the statistics made dimensionless: `mu / L`,
    /// `sigma / L^2`, `c / mean^2`, `d / a`.
    pub fn to_input(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(CRITIC_INPUT);
        x.extend_from_slice(&self.obs_mean);
        x.extend_from_slice(&self.obs_max);
        for ax in 0..3 {
            x.push(self.mu[ax] / self.box_lengths[ax]);
        }
        for ax in 0..3 {
            x.push(self.sigma[ax] / (self.box_lengths[ax] * self.box_lengths[ax]));
        }
        x.push(self.c / (self.cu_per_subcell * self.cu_per_subcell));
        x.push(self.d / self.lattice_parameter);
        x.push(self.rho);
        x
    }
}

pub fn critic_features(state: &LatticeState) -> Result<CriticFeatures, AgentError> {
    let spec = state.spec();
    let cu = state.cu_sites();
    let vac = state.vacancies();
    if cu.is_empty() {
        return Err(AgentError::NoCu);
    }
    if vac.is_empty() {
        return Err(AgentError::NoVacancy);
    }
    let n_cu = cu.len() as f64;
    let n_vac = vac.len() as f64;

    let mut obs_mean = vec![0.0; OBS_INPUT];
    let mut obs_max = vec![0.0; OBS_INPUT];
    let mut rho = 0.0;
    for &v in vac {
        let o = observe_unchecked(state, v);
        let hot = o.one_hot();
        for i in 0..OBS_INPUT {
            obs_mean[i] += hot[i];
            obs_max[i] = f64::max(obs_max[i], hot[i]);
        }
        let cu_near = o.species_codes.iter().filter(|&&c| c == Species::Cu.code()).count();
        rho += cu_near as f64 / SHELL_SITES as f64;
    }
    obs_mean.iter_mut().for_each(|m| *m /= n_vac);
    rho /= n_vac;

    let l = spec.box_lengths();
    let positions: Vec<[f64; 3]> = cu.iter().map(|&s| spec.position(s)).collect();
    let mut mu = [0.0; 3];
    let mut sigma = [0.0; 3];
    for ax in 0..3 {
        let (mut s, mut c) = (0.0, 0.0);
        for p in &positions {
            let th = TAU * p[ax] / l[ax];
            s += th.sin();
            c += th.cos();
        }
        let centre = (s.atan2(c) / TAU * l[ax]).rem_euclid(l[ax]);
        let (mut m1, mut m2) = (0.0, 0.0);
        for p in &positions {
            let d = min_image(p[ax] - centre, l[ax]);
            m1 += d;
            m2 += d * d;
        }
        m1 /= n_cu;
        m2 /= n_cu;
        mu[ax] = (centre + m1).rem_euclid(l[ax]);
        sigma[ax] = (m2 - m1 * m1).max(0.0);
    }

    let mut cells = [0usize; 8];
    for &s in cu {
        let (x, y, z, _) = spec.decode(s);
        let ix = usize::from(2 * x >= spec.nx);
        let iy = usize::from(2 * y >= spec.ny);
        let iz = usize::from(2 * z >= spec.nz);
        cells[ix + 2 * iy + 4 * iz] += 1;
    }
    let cell_mean = n_cu / 8.0;
    let c = cells.iter().map(|&k| (k as f64 - cell_mean).powi(2)).sum::<f64>() / 8.0;

    let mut d = 0.0;
    for &v in vac {
        d += cu.iter().map(|&s| spec.distance(v, s)).fold(f64::INFINITY, f64::min);
    }
    d /= n_vac;

    Ok(CriticFeatures {
        obs_mean,
        obs_max,
        mu,
        sigma,
        c,
        d,
        rho,
        box_lengths: l,
        lattice_parameter: spec.lattice_parameter,
        cu_per_subcell: cell_mean,
    })
}
