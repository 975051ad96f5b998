//! CSV, XYZ and JSON outputs, all written as streaming step sinks.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::lattice::{LatticeSpec, LatticeState, Species};
use crate::trajectory::{StepRecord, StepSink, TrajectoryRecord};

pub const TRAJECTORY_HEADER: &str = "step,time_s,vacancy_site,direction,dE_eV,gamma_tot,dt_s";
pub const AUDIT_HEADER: &str = "step,action_index,pi_a,Z,Zprime,log_w_cum,dt_s,dE_eV";
pub const ZETA_HEADER: &str = "step,time_s,cu_cu_bonds,zeta";
pub const ENERGY_HEADER: &str = "step,time_s,cumulative_dE_eV";

pub struct TrajectoryCsv<W: Write> {
    out: W,
}

impl TrajectoryCsv<BufWriter<File>> {
    pub fn create(path: &Path) -> io::Result<Self> {
        TrajectoryCsv::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> TrajectoryCsv<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "{TRAJECTORY_HEADER}")?;
        Ok(TrajectoryCsv { out })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> StepSink for TrajectoryCsv<W> {
    fn on_step(&mut self, r: &StepRecord, _state: &LatticeState) -> io::Result<()> {
        writeln!(
            self.out,
            "{},{:e},{},{},{},{:e},{:e}",
            r.step, r.time, r.vacancy_site, r.direction, r.delta_e, r.gamma_tot, r.dt
        )
    }

    fn finish(&mut self, _state: &LatticeState) -> io::Result<()> {
        self.out.flush()
    }
}

/// Per-step importance-sampling bookkeeping with the running `ln w`.
pub struct IsAuditCsv<W: Write> {
    out: W,
    log_w: f64,
}

impl IsAuditCsv<BufWriter<File>> {
    pub fn create(path: &Path) -> io::Result<Self> {
        IsAuditCsv::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> IsAuditCsv<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "{AUDIT_HEADER}")?;
        Ok(IsAuditCsv { out, log_w: 0.0 })
    }

    pub fn log_weight(&self) -> f64 {
        self.log_w
    }
}

impl<W: Write> StepSink for IsAuditCsv<W> {
    fn on_step(&mut self, r: &StepRecord, _state: &LatticeState) -> io::Result<()> {
        self.log_w += r.log_weight();
        writeln!(
            self.out,
            "{},{},{:e},{:e},{:e},{},{:e},{}",
            r.step, r.action, r.pi_a, r.gamma_tot, r.z_prime, self.log_w, r.dt, r.delta_e
        )
    }

    fn finish(&mut self, _state: &LatticeState) -> io::Result<()> {
        self.out.flush()
    }
}

/// Extended-XYZ frame in lattice-parameter units. Fe sites are omitted
/// unless `all_sites` is set.
pub fn write_xyz<W: Write>(
    out: &mut W,
    state: &LatticeState,
    step: u64,
    time: f64,
    all_sites: bool,
) -> io::Result<()> {
    let spec = state.spec();
    let listed: Vec<usize> = (0..state.site_count())
        .filter(|&s| all_sites || state.species(s) != Species::Fe)
        .collect();
    writeln!(out, "{}", listed.len())?;
    writeln!(
        out,
        "Lattice=\"{} 0 0 0 {} 0 0 0 {}\" Properties=species:S:1:pos:R:3 step={} time={:e}",
        spec.nx, spec.ny, spec.nz, step, time
    )?;
    for site in listed {
        let (x, y, z, b) = spec.decode(site);
        let h = 0.5 * b as f64;
        writeln!(
            out,
            "{} {} {} {}",
            state.species(site).symbol(),
            x as f64 + h,
            y as f64 + h,
            z as f64 + h
        )?;
    }
    Ok(())
}

/// Writes `snap_<step>.xyz` into a directory every `every` steps.
pub struct XyzSnapshots {
    dir: PathBuf,
    every: u64,
    all_sites: bool,
    pub written: Vec<PathBuf>,
}

impl XyzSnapshots {
    /// Also writes the initial frame.
    pub fn new(dir: &Path, every: u64, all_sites: bool, initial: &LatticeState) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let mut me = XyzSnapshots {
            dir: dir.to_path_buf(),
            every: every.max(1),
            all_sites,
            written: Vec::new(),
        };
        me.write(initial, 0, 0.0)?;
        Ok(me)
    }

    fn write(&mut self, state: &LatticeState, step: u64, time: f64) -> io::Result<()> {
        let path = self.dir.join(format!("snap_{step:010}.xyz"));
        let mut f = BufWriter::new(File::create(&path)?);
        write_xyz(&mut f, state, step, time, self.all_sites)?;
        f.flush()?;
        self.written.push(path);
        Ok(())
    }
}

impl StepSink for XyzSnapshots {
    fn on_step(&mut self, r: &StepRecord, state: &LatticeState) -> io::Result<()> {
        if r.step % self.every == 0 {
            self.write(state, r.step, r.time)?;
        }
        Ok(())
    }
}

/// `(species, position)` rows of an XYZ frame written by [`write_xyz`].
pub fn read_xyz(path: &Path) -> io::Result<Vec<(Species, [f64; 3])>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let count: usize = lines
        .next()
        .and_then(|l| l.trim().parse().ok())
        .ok_or_else(|| bad(1, "missing site count"))?;
    lines.next().ok_or_else(|| bad(2, "missing comment line"))?;
    let mut out = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(bad(i + 3, "expected `species x y z`"));
        }
        let sp = Species::ALL
            .into_iter()
            .find(|s| s.symbol() == f[0])
            .ok_or_else(|| bad(i + 3, "unknown species"))?;
        let mut p = [0.0; 3];
        for k in 0..3 {
            p[k] = f[k + 1].parse().map_err(|_| bad(i + 3, "bad coordinate"))?;
        }
        out.push((sp, p));
    }
    if out.len() != count {
        return Err(bad(1, "site count does not match the rows"));
    }
    Ok(out)
}

pub fn write_zeta_csv(path: &Path, samples: &[(u64, f64, u64)], zeta: Option<&[f64]>) -> io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "{ZETA_HEADER}")?;
    for (i, (step, time, b)) in samples.iter().enumerate() {
        match zeta {
            Some(z) => writeln!(f, "{step},{time:e},{b},{}", z[i])?,
            None => writeln!(f, "{step},{time:e},{b},")?,
        }
    }
    f.flush()
}

pub fn write_energy_csv(path: &Path, series: &[(u64, f64, f64)]) -> io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "{ENERGY_HEADER}")?;
    writeln!(f, "0,0e0,0")?;
    for (step, time, e) in series {
        writeln!(f, "{step},{time:e},{e}")?;
    }
    f.flush()
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

fn bad(line: usize, msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, format!("line {line}: {msg}"))
}

/// Rebuild a trajectory from its CSV. Fields the CSV does not carry
/// (agent, species, policy bookkeeping) are left at neutral values.
pub fn read_trajectory_csv(path: &Path, spec: &LatticeSpec) -> io::Result<TrajectoryRecord> {
    let f = BufReader::new(File::open(path)?);
    let mut lines = f.lines();
    match lines.next() {
        Some(Ok(h)) if h == TRAJECTORY_HEADER => {}
        _ => return Err(bad(1, "missing trajectory header")),
    }
    let mut rec = TrajectoryRecord::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(i + 2, "expected 7 fields"));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(i + 2, "bad number"));
        let int = |k: usize| f[k].parse::<usize>().map_err(|_| bad(i + 2, "bad integer"));
        let vacancy_site = int(2)?;
        let direction = int(3)?;
        if !spec.contains(vacancy_site) || direction >= 8 {
            return Err(bad(i + 2, "site or direction out of range"));
        }
        let gamma_tot = num(5)?;
        rec.push(StepRecord {
            step: int(0)? as u64,
            time: num(1)?,
            dt: num(6)?,
            agent: 0,
            action: direction,
            vacancy_site,
            target_site: spec.first_neighbor(vacancy_site, direction),
            direction,
            hopping_species: Species::Fe,
            delta_e: num(4)?,
            gamma_tot,
            pi_a: 1.0,
            z_prime: gamma_tot,
        });
    }
    Ok(rec)
}
