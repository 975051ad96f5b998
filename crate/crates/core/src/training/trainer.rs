//! Rollout collection, the episode loop, checkpoints and the training log.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;

use crate::agents::{
    critic_features, load_checkpoint, observe_all, save_checkpoint, Checkpoint, CriticParams, Observation,
    OptimizerState, PolicyParams, CRITIC_INPUT,
};
use crate::energetics::{total_energy, PairPotential, RateParams};
use crate::lattice::{build_lattice, build_lattice_counts, LatticeSpec};
use crate::kinetics::Sampler;
use crate::reweight::SwarmSampler;
use crate::rng::{self, RngState, Stream, StreamRng};

use super::{compute_gae, ppo_update, Adam, TrainConfig, TrainError};

pub const LOG_HEADER: &str = "episode,mean_reward,policy_loss,value_loss,entropy,grad_norm,wall_ms";
const LOG_FILE: &str = "training_log.csv";
const LATEST: &str = "latest";

/// One collected step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Observation of every agent before the step.
    pub obs: Vec<Observation>,
    /// `ln Gamma` per catalog slot; `-inf` marks an invalid slot.
    pub log_rates: Vec<f64>,
    pub action: usize,
    /// `ln q(a)` under the behaviour policy, fixed at collection time.
    pub log_q_old: f64,
    pub log_pi_old: f64,
    pub reward: f64,
    pub value: f64,
    pub critic_input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub rows: Vec<Transition>,
    capacity: usize,
    /// Critic value of the state after the last step.
    pub bootstrap_value: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
}

impl RolloutBuffer {
    pub fn new(capacity: usize) -> Self {
        RolloutBuffer {
            rows: Vec::with_capacity(capacity),
            capacity,
            bootstrap_value: 0.0,
            initial_energy: 0.0,
            final_energy: 0.0,
        }
    }

    pub fn push(&mut self, t: Transition) -> Result<(), TrainError> {
        if self.rows.len() >= self.capacity {
            return Err(TrainError::BufferFull(self.capacity));
        }
        self.rows.push(t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.rows.len() == self.capacity
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.reward).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.value).collect()
    }
}

/// Run one episode of the reweighted sampler on a fresh random lattice.
pub fn collect_rollout(
    actor: &PolicyParams,
    critic: &CriticParams,
    cfg: &TrainConfig,
    pot: &PairPotential,
    params: &RateParams,
    episode_seed: u64,
) -> Result<RolloutBuffer, TrainError> {
    let [nx, ny, nz] = cfg.ppo.train_lattice;
    let spec = LatticeSpec::new(nx, ny, nz)?;
    let mut init = rng::stream(episode_seed, Stream::Init);
    let state = match cfg.cu_atoms {
        Some(cu) => build_lattice_counts(spec, cu, cfg.vacancies, &mut init)?,
        None => build_lattice(spec, cfg.cu_fraction, cfg.vacancies, &mut init)?,
    };
    actor.net.check_finite()?;
    critic.net.check_finite()?;
    let mut buf = RolloutBuffer::new(cfg.ppo.episode_length);
    buf.initial_energy = total_energy(&state, pot);
    let mut sampler = SwarmSampler::new(state, *pot, *params, actor, episode_seed)?;
    let mut inputs = Vec::with_capacity(cfg.ppo.episode_length + 1);
    for _ in 0..cfg.ppo.episode_length {
        let sim = sampler.simulation();
        let obs = observe_all(sim.state());
        inputs.push(critic_features(sim.state())?.to_input());
        let log_rates: Vec<f64> = sim
            .catalog()
            .slots()
            .iter()
            .map(|s| if s.is_valid() { s.rate.ln() } else { f64::NEG_INFINITY })
            .collect();
        let rec = sampler.try_step()?;
        let log_pi = rec.pi_a.ln();
        buf.push(Transition {
            obs,
            log_q_old: log_pi + log_rates[rec.action] - rec.z_prime.ln(),
            log_rates,
            action: rec.action,
            log_pi_old: log_pi,
            reward: -rec.delta_e,
            value: 0.0,
            critic_input: Vec::new(),
        })?;
    }
    let state = sampler.simulation().state();
    inputs.push(critic_features(state)?.to_input());
    buf.final_energy = total_energy(state, pot);

    let mut x = Array2::<f64>::zeros((inputs.len(), CRITIC_INPUT));
    for (i, row) in inputs.iter().enumerate() {
        x.row_mut(i).as_slice_mut().expect("standard layout").copy_from_slice(row);
    }
    let v = critic.net.predict(x.view())?;
    for (i, (row, input)) in buf.rows.iter_mut().zip(inputs.iter_mut()).enumerate() {
        row.value = v[[i, 0]];
        row.critic_input = std::mem::take(input);
    }
    buf.bootstrap_value = v[[inputs.len() - 1, 0]];
    Ok(buf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: u64,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    pub wall_ms: u64,
}

impl EpisodeLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.episode, self.mean_reward, self.policy_loss, self.value_loss, self.entropy, self.grad_norm, self.wall_ms
        )
    }

    fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return None;
        }
        Some(EpisodeLog {
            episode: f[0].parse().ok()?,
            mean_reward: f[1].parse().ok()?,
            policy_loss: f[2].parse().ok()?,
            value_loss: f[3].parse().ok()?,
            entropy: f[4].parse().ok()?,
            grad_norm: f[5].parse().ok()?,
            wall_ms: f[6].parse().ok()?,
        })
    }
}

pub fn read_training_log(path: &Path) -> Result<Vec<EpisodeLog>, TrainError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| EpisodeLog::parse(l).ok_or_else(|| TrainError::Config(format!("malformed training log line `{l}`"))))
        .collect()
}

/// Actor, critic, optimizer and training stream, advanced one episode at a time.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub pot: PairPotential,
    pub params: RateParams,
    pub actor: PolicyParams,
    pub critic: CriticParams,
    pub adam: Adam,
    rng: StreamRng,
    episode: u64,
    seed: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, pot: PairPotential, params: RateParams, seed: u64) -> Result<Self, TrainError> {
        cfg.validate()?;
        let mut w = rng::stream(seed, Stream::Weights);
        let actor = PolicyParams::new(&cfg.hidden, &mut w);
        let critic = CriticParams::new(&cfg.hidden, &mut w);
        let adam = Adam::new(&cfg.ppo, &actor.net, &critic.net);
        Ok(Trainer {
            cfg,
            pot,
            params,
            actor,
            critic,
            adam,
            rng: rng::stream(seed, Stream::Training),
            episode: 0,
            seed,
        })
    }

    pub fn from_checkpoint(
        ckpt: Checkpoint,
        cfg: TrainConfig,
        pot: PairPotential,
        params: RateParams,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        ckpt.check_architecture(&PolicyParams::spec(&cfg.hidden), &CriticParams::spec(&cfg.hidden))?;
        let rng = ckpt
            .rng
            .as_ref()
            .and_then(RngState::restore)
            .ok_or_else(|| TrainError::Config("checkpoint carries no training RNG state".into()))?;
        let mut adam = Adam::new(&cfg.ppo, &ckpt.actor.net, &ckpt.critic.net);
        if let Some(o) = ckpt.optimizer {
            adam.step = o.step;
            adam.actor_m = o.actor_m;
            adam.actor_v = o.actor_v;
            adam.critic_m = o.critic_m;
            adam.critic_v = o.critic_v;
        }
        let seed = ckpt.meta.get("seed").and_then(|s| s.as_u64()).unwrap_or(0);
        Ok(Trainer {
            cfg,
            pot,
            params,
            actor: ckpt.actor,
            critic: ckpt.critic,
            adam,
            rng,
            episode: ckpt.episode,
            seed,
        })
    }

    /// Completed episodes.
    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn run_episode(&mut self) -> Result<EpisodeLog, TrainError> {
        let t0 = Instant::now();
        let episode_seed: u64 = self.rng.random();
        let buf = collect_rollout(&self.actor, &self.critic, &self.cfg, &self.pot, &self.params, episode_seed)?;
        let est = compute_gae(&buf.rewards(), &buf.values(), buf.bootstrap_value, &self.cfg.ppo)?;
        let stats = ppo_update(
            &mut self.actor,
            &mut self.critic,
            &mut self.adam,
            &buf.rows,
            &est,
            &self.cfg.ppo,
            &mut self.rng,
        )?;
        self.episode += 1;
        Ok(EpisodeLog {
            episode: self.episode,
            mean_reward: buf.rewards().iter().sum::<f64>() / buf.len() as f64,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            grad_norm: stats.grad_norm,
            wall_ms: t0.elapsed().as_millis() as u64,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            actor: self.actor.clone(),
            critic: self.critic.clone(),
            episode: self.episode,
            optimizer: Some(OptimizerState {
                step: self.adam.step,
                actor_m: self.adam.actor_m.clone(),
                actor_v: self.adam.actor_v.clone(),
                critic_m: self.adam.critic_m.clone(),
                critic_v: self.adam.critic_v.clone(),
            }),
            rng: Some(RngState::capture(&self.rng)),
            meta: serde_json::json!({ "seed": self.seed, "config": self.cfg }),
        }
    }
}

/// Path named by the `latest` manifest in `dir`.
pub fn latest_checkpoint(dir: &Path) -> Result<PathBuf, TrainError> {
    let name = fs::read_to_string(dir.join(LATEST))?;
    Ok(dir.join(name.trim()))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub logs: Vec<EpisodeLog>,
    pub checkpoints: Vec<PathBuf>,
    pub actor: PolicyParams,
    pub critic: CriticParams,
}

/// Train until `cfg.episodes` episodes are complete. With `out`, writes the
/// training log and checkpoints there; `resume` continues from its `latest`
/// checkpoint.
pub fn train(
    cfg: &TrainConfig,
    pot: &PairPotential,
    params: &RateParams,
    seed: u64,
    out: Option<&Path>,
    resume: bool,
    mut progress: impl FnMut(&EpisodeLog),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut trainer = match (resume, out) {
        (true, Some(dir)) => {
            let ckpt = load_checkpoint(&latest_checkpoint(dir)?)?;
            Trainer::from_checkpoint(ckpt, cfg.clone(), *pot, *params)?
        }
        (true, None) => return Err(TrainError::Config("resume needs an output directory".into())),
        _ => Trainer::new(cfg.clone(), *pot, *params, seed)?,
    };
    let mut log = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(LOG_FILE);
            let mut kept = Vec::new();
            if resume && path.exists() {
                kept = read_training_log(&path)?;
                kept.retain(|l| l.episode <= trainer.episode());
            }
            let mut f = fs::File::create(&path)?;
            writeln!(f, "{LOG_HEADER}")?;
            for l in &kept {
                writeln!(f, "{}", l.csv_row())?;
            }
            Some(f)
        }
        None => None,
    };
    let mut outcome = TrainOutcome {
        logs: Vec::new(),
        checkpoints: Vec::new(),
        actor: trainer.actor.clone(),
        critic: trainer.critic.clone(),
    };
    while trainer.episode() < cfg.episodes {
        let entry = trainer.run_episode()?;
        log::info!(
            "episode {} mean reward {:.5} eV entropy {:.3} ({} ms)",
            entry.episode,
            entry.mean_reward,
            entry.entropy,
            entry.wall_ms
        );
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", entry.csv_row())?;
            f.flush()?;
        }
        progress(&entry);
        let done = trainer.episode() == cfg.episodes;
        if let Some(dir) = out {
            if trainer.episode() % cfg.checkpoint_every == 0 || done {
                let name = format!("ckpt_{}.bin", trainer.episode());
                let path = dir.join(&name);
                save_checkpoint(&path, &trainer.checkpoint())?;
                fs::write(dir.join(LATEST), format!("{name}\n"))?;
                outcome.checkpoints.push(path);
            }
        }
        outcome.logs.push(entry);
    }
    outcome.actor = trainer.actor;
    outcome.critic = trainer.critic;
    Ok(outcome)
}
