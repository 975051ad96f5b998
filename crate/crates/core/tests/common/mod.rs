//! Reference computations shared by the integration tests. Nothing here
//! goes through the library's bond tables, catalog or statistics code.
#![allow(dead_code)]

use swarmkmc::energetics::PairPotential;
use swarmkmc::lattice::{LatticeSpec, LatticeState, SiteId, Species};

/// First- and second-shell offsets in half lattice units.
pub const FIRST_OFFSETS: [[i64; 3]; 8] = [
    [1, 1, 1],
    [1, 1, -1],
    [1, -1, 1],
    [1, -1, -1],
    [-1, 1, 1],
    [-1, 1, -1],
    [-1, -1, 1],
    [-1, -1, -1],
];
pub const SECOND_OFFSETS: [[i64; 3]; 6] = [[2, 0, 0], [-2, 0, 0], [0, 2, 0], [0, -2, 0], [0, 0, 2], [0, 0, -2]];

/// Site position in half lattice units.
pub fn half_coords(spec: &LatticeSpec, site: SiteId) -> [i64; 3] {
    let (x, y, z, b) = spec.decode(site);
    [(2 * x + b) as i64, (2 * y + b) as i64, (2 * z + b) as i64]
}

/// Site at half-unit position `h`, wrapped periodically.
pub fn site_at(spec: &LatticeSpec, h: [i64; 3]) -> SiteId {
    let dims = [spec.nx as i64, spec.ny as i64, spec.nz as i64];
    let w: Vec<i64> = (0..3).map(|k| h[k].rem_euclid(2 * dims[k])).collect();
    let b = (w[0] % 2) as usize;
    assert!(w.iter().all(|c| (c % 2) as usize == b), "mixed parity is not a bcc site");
    spec.encode((w[0] as usize - b) / 2, (w[1] as usize - b) / 2, (w[2] as usize - b) / 2, b)
}

pub fn offset_site(spec: &LatticeSpec, site: SiteId, d: [i64; 3]) -> SiteId {
    let h = half_coords(spec, site);
    site_at(spec, [h[0] + d[0], h[1] + d[1], h[2] + d[2]])
}

/// Pair energy by visiting every site's neighbours and halving.
pub fn brute_energy(occ: &[Species], spec: &LatticeSpec, pot: &PairPotential) -> f64 {
    let mut e = 0.0;
    for site in 0..occ.len() {
        for (shell, offsets) in [(1, &FIRST_OFFSETS[..]), (2, &SECOND_OFFSETS[..])] {
            for d in offsets {
                let n = offset_site(spec, site, *d);
                e += pot.bond(shell, occ[site], occ[n]);
            }
        }
    }
    0.5 * e
}

/// Energy change of swapping sites `a` and `b`, from the bonds touching them.
pub fn local_swap_delta(occ: &[Species], spec: &LatticeSpec, pot: &PairPotential, a: SiteId, b: SiteId) -> f64 {
    let local = |occ: &[Species]| {
        let mut e = 0.0;
        for (shell, offsets) in [(1, &FIRST_OFFSETS[..]), (2, &SECOND_OFFSETS[..])] {
            for d in offsets {
                e += pot.bond(shell, occ[a], occ[offset_site(spec, a, *d)]);
                let n = offset_site(spec, b, *d);
                if n != a {
                    e += pot.bond(shell, occ[b], occ[n]);
                }
            }
        }
        e
    };
    let mut swapped = occ.to_vec();
    swapped.swap(a, b);
    local(&swapped) - local(occ)
}

pub fn state_energy(state: &LatticeState, pot: &PairPotential) -> f64 {
    brute_energy(state.occupancy(), state.spec(), pot)
}

/// Cu-Cu first-shell pairs counted from coordinates.
pub fn brute_cu_bonds(state: &LatticeState) -> u64 {
    let spec = state.spec();
    let mut n = 0;
    for &c in state.cu_sites() {
        for d in FIRST_OFFSETS {
            if state.species(offset_site(spec, c, d)) == Species::Cu {
                n += 1;
            }
        }
    }
    n / 2
}

/// Asymptotic two-sample Kolmogorov-Smirnov p-value.
pub fn ks_p_value(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut all: Vec<(f64, usize)> = a.iter().map(|&x| (x, 0)).chain(b.iter().map(|&x| (x, 1))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut ca, mut cb) = (0.0, 0.0);
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 == 0 {
                ca += 1.0;
            } else {
                cb += 1.0;
            }
            i += 1;
        }
        d = d.max((ca / n - cb / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let mut q = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        q += 2.0 * if k % 2 == 1 { 1.0 } else { -1.0 } * (-2.0 * kf * kf * lambda * lambda).exp();
    }
    (d, q.clamp(0.0, 1.0))
}

/// Pearson chi-square p-value with the sparsest bins pooled until every bin
/// expects at least `min_expected`.
pub fn chi_square_p(observed: &[f64], expected: &[f64], min_expected: f64) -> (f64, usize, f64) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let mut bins: Vec<(f64, f64)> = expected.iter().copied().zip(observed.iter().copied()).collect();
    bins.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let (mut e, mut o) = (0.0, 0.0);
    for (be, bo) in bins {
        e += be;
        o += bo;
        if e >= min_expected {
            pooled.push((e, o));
            e = 0.0;
            o = 0.0;
        }
    }
    if let Some(last) = pooled.last_mut() {
        last.0 += e;
        last.1 += o;
    }
    let stat: f64 = pooled.iter().map(|(e, o)| (o - e) * (o - e) / e).sum();
    let dof = pooled.len() - 1;
    let p = ChiSquared::new(dof as f64).unwrap().sf(stat);
    (stat, dof, p)
}

/// Direct O(T^2) generalized advantage estimate.
pub fn naive_gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut out = vec![0.0; n];
    for (t, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for l in 0..n - t {
            let next = if t + l + 1 < n { values[t + l + 1] } else { bootstrap };
            let delta = rewards[t + l] + gamma * next - values[t + l];
            acc += (gamma * lambda).powi(l as i32) * delta;
        }
        *slot = acc;
    }
    out
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}
