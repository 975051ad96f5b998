//! Clipped-surrogate loss, its exact gradients, and the Adam update.

use std::collections::HashMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::agents::{one_hot_batch, CriticParams, Mlp, Observation, PolicyParams, ACTIONS, CRITIC_INPUT};

use super::{normalize_advantages, AdvantageEstimate, PpoConfig, TrainError, Transition};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    /// Mean entropy of the global policy `pi`, nats.
    pub entropy: f64,
    pub total: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Loss over `rows` and its gradients with respect to every actor and critic
/// parameter.
///
/// `log q(a) = z_a + ln Gamma_a - logsumexp(z + ln Gamma)` over valid slots;
/// the rates carry no parameters so only `z` is differentiated. The entropy
/// bonus uses the global softmax `pi` of `z`.
pub fn ppo_loss_grad(
    actor: &PolicyParams,
    critic: &CriticParams,
    rows: &[&Transition],
    advantages: &[f64],
    returns: &[f64],
    cfg: &PpoConfig,
) -> Result<(LossParts, Mlp, Mlp), TrainError> {
    let m = rows.len();
    if m == 0 || advantages.len() != m || returns.len() != m {
        return Err(TrainError::LengthMismatch(advantages.len(), m));
    }
    let mf = m as f64;

    // one actor pass over the distinct observations of the batch
    let mut index: HashMap<u32, usize> = HashMap::new();
    let mut unique: Vec<Observation> = Vec::new();
    let row_idx: Vec<Vec<usize>> = rows
        .iter()
        .map(|r| {
            r.obs
                .iter()
                .map(|o| {
                    *index.entry(o.code()).or_insert_with(|| {
                        unique.push(*o);
                        unique.len() - 1
                    })
                })
                .collect()
        })
        .collect();
    let (y, actor_cache) = actor.net.forward(one_hot_batch(&unique).view())?;
    let mut dy = Array2::<f64>::zeros(y.raw_dim());

    let mut xc = Array2::<f64>::zeros((m, CRITIC_INPUT));
    for (i, r) in rows.iter().enumerate() {
        xc.row_mut(i).as_slice_mut().expect("standard layout").copy_from_slice(&r.critic_input);
    }
    let (v, critic_cache) = critic.net.forward(xc.view())?;
    let mut dv = Array2::<f64>::zeros((m, 1));

    let mut parts = LossParts::default();
    let mut clipped = 0usize;
    let mut z = Vec::new();
    let mut s = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let slots = r.log_rates.len();
        z.clear();
        for &u in &row_idx[i] {
            z.extend(y.row(u).iter().copied());
        }
        debug_assert_eq!(z.len(), slots);
        s.clear();
        s.extend(z.iter().zip(&r.log_rates).map(|(a, b)| a + b));
        let lse_s = logsumexp_finite(&s, &r.log_rates);
        let log_q = s[r.action] - lse_s;
        let ratio = (log_q - r.log_q_old).exp();
        let a = advantages[i];
        let lo = 1.0 - cfg.clip;
        let hi = 1.0 + cfg.clip;
        let surr1 = ratio * a;
        let surr2 = ratio.clamp(lo, hi) * a;
        parts.policy -= surr1.min(surr2) / mf;
        parts.approx_kl += (r.log_q_old - log_q) / mf;
        if !(lo..=hi).contains(&ratio) {
            clipped += 1;
        }

        let mut dz = vec![0.0; slots];
        if surr1 <= surr2 {
            let g = -a * ratio / mf;
            for b in 0..slots {
                if r.log_rates[b].is_finite() {
                    dz[b] -= g * (s[b] - lse_s).exp();
                }
            }
            dz[r.action] += g;
        }

        let lse_z = logsumexp_finite(&z, &r.log_rates);
        let mut h = 0.0;
        for b in 0..slots {
            if r.log_rates[b].is_finite() {
                let lp = z[b] - lse_z;
                h -= lp.exp() * lp;
            }
        }
        parts.entropy += h / mf;
        for b in 0..slots {
            if r.log_rates[b].is_finite() {
                let lp = z[b] - lse_z;
                dz[b] += cfg.entropy_coef / mf * lp.exp() * (lp + h);
            }
        }

        for (agent, &u) in row_idx[i].iter().enumerate() {
            for k in 0..ACTIONS {
                dy[[u, k]] += dz[agent * ACTIONS + k];
            }
        }

        let err = v[[i, 0]] - returns[i];
        parts.value += err * err / mf;
        dv[[i, 0]] = 2.0 * cfg.value_coef * err / mf;
    }
    parts.clip_fraction = clipped as f64 / mf;
    parts.total = parts.policy + cfg.value_coef * parts.value - cfg.entropy_coef * parts.entropy;

    let ga = actor.net.backward(&actor_cache, dy.view())?;
    let gc = critic.net.backward(&critic_cache, dv.view())?;
    Ok((parts, ga, gc))
}

// logsumexp of `v` over the slots where `mask_src` is finite
fn logsumexp_finite(v: &[f64], mask_src: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (x, m) in v.iter().zip(mask_src) {
        if m.is_finite() {
            max = max.max(*x);
        }
    }
    let sum: f64 = v
        .iter()
        .zip(mask_src)
        .filter(|(_, m)| m.is_finite())
        .map(|(x, _)| (x - max).exp())
        .sum();
    max + sum.ln()
}

/// Adam with bias correction over the concatenated actor and critic parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub actor_m: Vec<f64>,
    pub actor_v: Vec<f64>,
    pub critic_m: Vec<f64>,
    pub critic_v: Vec<f64>,
}

impl Adam {
    pub fn new(cfg: &PpoConfig, actor: &Mlp, critic: &Mlp) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            step: 0,
            actor_m: vec![0.0; actor.param_count()],
            actor_v: vec![0.0; actor.param_count()],
            critic_m: vec![0.0; critic.param_count()],
            critic_v: vec![0.0; critic.param_count()],
        }
    }

    pub fn apply(&mut self, actor: &mut Mlp, critic: &mut Mlp, ga: &Mlp, gc: &Mlp) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let update = |p: &mut Mlp, g: &Mlp, m: &mut [f64], v: &mut [f64]| {
            let grads = g.to_flat();
            let mut at = 0;
            p.visit_mut(|w| {
                for x in w.iter_mut() {
                    let gi = grads[at];
                    m[at] = b1 * m[at] + (1.0 - b1) * gi;
                    v[at] = b2 * v[at] + (1.0 - b2) * gi * gi;
                    *x -= lr * (m[at] / c1) / ((v[at] / c2).sqrt() + eps);
                    at += 1;
                }
            });
        };
        update(actor, ga, &mut self.actor_m, &mut self.actor_v);
        update(critic, gc, &mut self.critic_m, &mut self.critic_v);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean pre-clip global gradient norm.
    pub grad_norm: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub minibatches: usize,
}

/// `epochs_per_update` passes of shuffled minibatches over `rows`.
pub fn ppo_update<R: Rng + ?Sized>(
    actor: &mut PolicyParams,
    critic: &mut CriticParams,
    adam: &mut Adam,
    rows: &[Transition],
    estimate: &AdvantageEstimate,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats, TrainError> {
    if rows.len() != estimate.advantages.len() {
        return Err(TrainError::LengthMismatch(estimate.advantages.len(), rows.len()));
    }
    let mut adv = estimate.advantages.clone();
    if cfg.normalize_advantages {
        normalize_advantages(&mut adv);
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut stats = UpdateStats::default();
    for epoch in 0..cfg.epochs_per_update {
        order.shuffle(rng);
        for (batch, chunk) in order.chunks(cfg.minibatch).enumerate() {
            let mb: Vec<&Transition> = chunk.iter().map(|&i| &rows[i]).collect();
            let a: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
            let r: Vec<f64> = chunk.iter().map(|&i| estimate.returns[i]).collect();
            let (parts, mut ga, mut gc) = ppo_loss_grad(actor, critic, &mb, &a, &r, cfg)?;
            let norm = (ga.sum_squares() + gc.sum_squares()).sqrt();
            if !parts.total.is_finite() || !norm.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch,
                    detail: format!(
                        "policy {} value {} entropy {} grad norm {}",
                        parts.policy, parts.value, parts.entropy, norm
                    ),
                });
            }
            if norm > cfg.max_grad_norm {
                let k = cfg.max_grad_norm / norm;
                ga.scale(k);
                gc.scale(k);
            }
            adam.apply(&mut actor.net, &mut critic.net, &ga, &gc);
            stats.policy_loss += parts.policy;
            stats.value_loss += parts.value;
            stats.entropy += parts.entropy;
            stats.grad_norm += norm;
            stats.clip_fraction += parts.clip_fraction;
            stats.approx_kl += parts.approx_kl;
            stats.minibatches += 1;
        }
    }
    let n = stats.minibatches.max(1) as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.grad_norm /= n;
    stats.clip_fraction /= n;
    stats.approx_kl /= n;
    Ok(stats)
}
