//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u32` header length, a JSON
//! header, then every parameter as little-endian `f64` in this order: actor,
//! critic, and, when the header says so, the Adam moments
//! (actor m, actor v, critic m, critic v).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngState;

use super::{AgentError, CriticParams, Mlp, MlpSpec, PolicyParams};

const MAGIC: &[u8; 8] = b"SWKMCCK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub actor_m: Vec<f64>,
    pub actor_v: Vec<f64>,
    pub critic_m: Vec<f64>,
    pub critic_v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub actor: PolicyParams,
    pub critic: CriticParams,
    /// Completed training episodes.
    pub episode: u64,
    pub optimizer: Option<OptimizerState>,
    pub rng: Option<RngState>,
    /// Free-form run metadata (training configuration, ...).
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    actor: MlpSpec,
    critic: MlpSpec,
    episode: u64,
    optimizer_step: Option<u64>,
    rng: Option<RngState>,
    #[serde(default)]
    meta: serde_json::Value,
}

impl Checkpoint {
    pub fn check_architecture(&self, actor: &MlpSpec, critic: &MlpSpec) -> Result<(), CheckpointError> {
        if self.actor.net.spec() != actor {
            return Err(CheckpointError::Architecture(format!(
                "actor hidden layers {:?}, expected {:?}",
                self.actor.net.spec().hidden,
                actor.hidden
            )));
        }
        if self.critic.net.spec() != critic {
            return Err(CheckpointError::Architecture(format!(
                "critic hidden layers {:?}, expected {:?}",
                self.critic.net.spec().hidden,
                critic.hidden
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let header = Header {
            actor: self.actor.net.spec().clone(),
            critic: self.critic.net.spec().clone(),
            episode: self.episode,
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            rng: self.rng.clone(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut push = |v: &[f64]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        push(&self.actor.net.to_flat());
        push(&self.critic.net.to_flat());
        if let Some(o) = &self.optimizer {
            let na = self.actor.net.param_count();
            let nc = self.critic.net.param_count();
            if o.actor_m.len() != na || o.actor_v.len() != na || o.critic_m.len() != nc || o.critic_v.len() != nc {
                return Err(CheckpointError::Corrupt("optimizer moments do not match the networks".into()));
            }
            push(&o.actor_m);
            push(&o.actor_v);
            push(&o.critic_m);
            push(&o.critic_v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| CheckpointError::Corrupt("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let payload = &bytes[16 + hlen..];
        if payload.len() % 8 != 0 {
            return Err(CheckpointError::Corrupt("payload is not a whole number of f64".into()));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let mut actor = Mlp::zeros(header.actor);
        let mut critic = Mlp::zeros(header.critic);
        let na = actor.param_count();
        let nc = critic.param_count();
        let expected = if header.optimizer_step.is_some() {
            3 * (na + nc)
        } else {
            na + nc
        };
        if values.len() != expected {
            return Err(CheckpointError::Corrupt(format!(
                "payload holds {} values, header implies {}",
                values.len(),
                expected
            )));
        }
        actor.set_flat(&values[..na])?;
        critic.set_flat(&values[na..na + nc])?;
        let optimizer = header.optimizer_step.map(|step| {
            let mut at = na + nc;
            let mut take = |n: usize| {
                let v = values[at..at + n].to_vec();
                at += n;
                v
            };
            OptimizerState {
                step,
                actor_m: take(na),
                actor_v: take(na),
                critic_m: take(nc),
                critic_v: take(nc),
            }
        });
        Ok(Checkpoint {
            actor: PolicyParams::from_net(actor)?,
            critic: CriticParams::from_net(critic)?,
            episode: header.episode,
            optimizer,
            rng: header.rng,
            meta: header.meta,
        })
    }
}

/// Write atomically via a sibling temporary file.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn sample(with_opt: bool) -> Checkpoint {
        let mut rng = stream(3, Stream::Weights);
        let actor = PolicyParams::new(&[7, 5], &mut rng);
        let critic = CriticParams::new(&[6], &mut rng);
        let na = actor.net.param_count();
        let nc = critic.net.param_count();
        Checkpoint {
            optimizer: with_opt.then(|| OptimizerState {
                step: 11,
                actor_m: vec![0.5; na],
                actor_v: vec![0.25; na],
                critic_m: vec![-1.0; nc],
                critic_v: vec![2.0; nc],
            }),
            actor,
            critic,
            episode: 42,
            rng: Some(RngState::capture(&rng)),
            meta: serde_json::json!({"note": "x"}),
        }
    }

    #[test]
    fn roundtrip_bitwise() {
        for opt in [false, true] {
            let c = sample(opt);
            assert_eq!(Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap(), c);
        }
    }

    #[test]
    fn rejects_damage_and_mismatch() {
        let c = sample(true);
        let mut b = c.to_bytes().unwrap();
        b.pop();
        assert!(matches!(Checkpoint::from_bytes(&b), Err(CheckpointError::Corrupt(_))));
        b[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&b), Err(CheckpointError::BadMagic)));
        let other = PolicyParams::spec(&[7, 6]);
        assert!(matches!(
            c.check_architecture(&other, c.critic.net.spec()),
            Err(CheckpointError::Architecture(_))
        ));
    }
}
