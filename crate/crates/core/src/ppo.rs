//! Proximal policy optimization over pixel observations.
//!
//! The policy/value net mirrors the controller's conv encoder but owns its
//! parameters; the two feature extractors are deliberately not shared.
//! Updates run the clipped surrogate with GAE advantages, a value loss, and
//! an entropy bonus over the whole rollout buffer for a fixed number of
//! epochs.

use crate::error::{FearError, Result};
use crate::numcore::{Adam, Conv2d, Linear, ParamStore, Tape, Tensor, Var};
use crate::numcore::{checkpoint, conv_out};
use crate::slstm::ObsShape;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::path::Path;

pub const N_ACTIONS: usize = 3;
const FEATURES: usize = 128;

#[derive(Debug, Clone, Copy)]
pub struct PpoConfig {
    pub gamma: f32,
    pub lam: f32,
    pub clip: f32,
    pub epochs: usize,
    pub lr: f32,
    pub value_coef: f32,
    pub entropy_coef: f32,
    pub update_rate: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            lam: 0.95,
            clip: 0.2,
            epochs: 40,
            lr: 1e-5,
            value_coef: 0.5,
            entropy_coef: 0.01,
            update_rate: 450,
        }
    }
}

/// Shared conv encoder (3 layers, stride 2, relu, flatten, linear to 128)
/// with a 3-logit policy head and a scalar value head.
pub struct PolicyValueNet {
    pub obs: ObsShape,
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    proj: Linear,
    policy: Linear,
    value: Linear,
}

impl PolicyValueNet {
    pub fn new(store: &mut ParamStore, obs: ObsShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h3 = conv_out(conv_out(conv_out(obs.height, 3, 2), 3, 2), 3, 2);
        let w3 = conv_out(conv_out(conv_out(obs.width, 3, 2), 3, 2), 3, 2);
        let flat = 16 * h3 * w3;
        PolicyValueNet {
            obs,
            conv1: Conv2d::new(store, "ppo.conv1", obs.channels, 8, 3, 2, &mut rng),
            conv2: Conv2d::new(store, "ppo.conv2", 8, 16, 3, 2, &mut rng),
            conv3: Conv2d::new(store, "ppo.conv3", 16, 16, 3, 2, &mut rng),
            proj: Linear::new(store, "ppo.proj", flat, FEATURES, &mut rng),
            policy: Linear::new(store, "ppo.policy", FEATURES, N_ACTIONS, &mut rng),
            value: Linear::new(store, "ppo.value", FEATURES, 1, &mut rng),
        }
    }

    fn features(&self, tape: &mut Tape, store: &ParamStore, obs: Var) -> Result<Var> {
        if tape.shape(obs) != self.obs.dims().as_slice() {
            return Err(FearError::dim(format!(
                "observation shape {:?} != configured {:?}",
                tape.shape(obs),
                self.obs.dims()
            )));
        }
        let c1 = self.conv1.apply(tape, store, obs)?;
        let r1 = tape.relu(c1)?;
        let c2 = self.conv2.apply(tape, store, r1)?;
        let r2 = tape.relu(c2)?;
        let c3 = self.conv3.apply(tape, store, r2)?;
        let r3 = tape.relu(c3)?;
        let numel = tape.value(r3).len();
        let flat = tape.reshape(r3, vec![numel])?;
        self.proj.apply(tape, store, flat)
    }

    /// Policy distribution and value estimate for one observation.
    pub fn evaluate(&self, tape: &mut Tape, store: &ParamStore, obs: Var) -> Result<(Var, Var)> {
        let feat = self.features(tape, store, obs)?;
        let logits = self.policy.apply(tape, store, feat)?;
        let probs = tape.softmax(logits)?;
        let value = self.value.apply(tape, store, feat)?;
        Ok((probs, value))
    }

    /// Samples an action; returns (action, log-prob, value). Inference only.
    pub fn act(
        &self,
        store: &ParamStore,
        obs: &Tensor,
        rng: &mut ChaCha8Rng,
    ) -> Result<(usize, f32, f32)> {
        let mut tape = Tape::new();
        let ov = tape.constant(obs);
        let (probs, value) = self.evaluate(&mut tape, store, ov)?;
        let p = tape.value(probs);
        let draw: f32 = rng.gen();
        let mut cum = 0.0;
        let mut action = N_ACTIONS - 1;
        for (i, &pi) in p.iter().enumerate() {
            cum += pi;
            if draw < cum {
                action = i;
                break;
            }
        }
        let logp = p[action].max(crate::numcore::LOG_EPS).ln();
        Ok((action, logp, tape.scalar(value)))
    }

    pub fn save(&self, store: &ParamStore, path: &Path) -> Result<()> {
        checkpoint::save_store(store, path)
    }

    pub fn load(path: &Path, obs: ObsShape) -> Result<(PolicyValueNet, ParamStore)> {
        let mut store = ParamStore::new();
        let net = PolicyValueNet::new(&mut store, obs, 0);
        checkpoint::load_into_store(&mut store, path)?;
        Ok((net, store))
    }
}

/// One step of experience.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Tensor,
    pub action: usize,
    pub log_prob: f32,
    pub value: f32,
    pub reward: f32,
    pub done: bool,
}

/// Fixed-capacity on-policy buffer; cleared after every update.
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    pub capacity: usize,
}

impl RolloutBuffer {
    pub fn new(capacity: usize) -> Self {
        RolloutBuffer { transitions: Vec::with_capacity(capacity), capacity }
    }

    pub fn push(&mut self, t: Transition) {
        debug_assert!(self.transitions.len() < self.capacity);
        self.transitions.push(t);
    }

    pub fn is_full(&self) -> bool {
        self.transitions.len() >= self.capacity
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
    }
}

/// Generalized advantage estimation with episode-boundary masking.
/// `bootstrap` is the value estimate of the state after the last stored
/// transition (0 when that transition ended its episode).
pub fn compute_gae(
    rewards: &[f32],
    values: &[f32],
    dones: &[bool],
    gamma: f32,
    lam: f32,
    bootstrap: f32,
) -> (Vec<f32>, Vec<f32>) {
    let n = rewards.len();
    let mut advantages = vec![0.0f32; n];
    let mut next_value = bootstrap;
    let mut next_adv = 0.0f32;
    for t in (0..n).rev() {
        let mask = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * mask - values[t];
        next_adv = delta + gamma * lam * mask * next_adv;
        advantages[t] = next_adv;
        next_value = values[t];
    }
    let returns: Vec<f32> = advantages.iter().zip(values.iter()).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// The clipped surrogate term for one sample:
/// `min(ratio * adv, clamp(ratio, 1-eps, 1+eps) * adv)`.
pub fn clipped_objective(ratio: f32, advantage: f32, eps: f32) -> f32 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

#[derive(Debug, Clone, Copy)]
pub struct UpdateStats {
    /// Mean probability ratio recomputed before the first epoch; 1 up to
    /// rounding when the stored log-probs are consistent.
    pub mean_ratio: f32,
    pub policy_loss: f32,
    pub value_loss: f32,
    pub entropy: f32,
}

/// Runs `cfg.epochs` full-batch passes of the clipped-surrogate objective
/// over the buffer. Advantages are normalized once per update.
pub fn update(
    net: &PolicyValueNet,
    store: &mut ParamStore,
    adam: &mut Adam,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    bootstrap_value: f32,
) -> Result<UpdateStats> {
    if buffer.is_empty() {
        return Err(FearError::contract("ppo update on an empty buffer"));
    }
    let n = buffer.len();
    let rewards: Vec<f32> = buffer.transitions.iter().map(|t| t.reward).collect();
    let values: Vec<f32> = buffer.transitions.iter().map(|t| t.value).collect();
    let dones: Vec<bool> = buffer.transitions.iter().map(|t| t.done).collect();
    let (mut advantages, returns) =
        compute_gae(&rewards, &values, &dones, cfg.gamma, cfg.lam, bootstrap_value);
    let mean = advantages.iter().sum::<f32>() / n as f32;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f32>() / n as f32;
    let std = var.sqrt();
    advantages.iter_mut().for_each(|a| *a = (*a - mean) / (std + 1e-8));

    let mut stats = UpdateStats { mean_ratio: 0.0, policy_loss: 0.0, value_loss: 0.0, entropy: 0.0 };
    for epoch in 0..cfg.epochs {
        store.zero_grad();
        let mut tape = Tape::new();
        let mut total: Option<Var> = None;
        let mut ratio_sum = 0.0f64;
        let mut policy_sum = 0.0f64;
        let mut value_sum = 0.0f64;
        let mut entropy_sum = 0.0f64;
        for (i, tr) in buffer.transitions.iter().enumerate() {
            let ov = tape.constant(&tr.obs);
            let (probs, value) = net.evaluate(&mut tape, store, ov)?;
            let nll = tape.cross_entropy(probs, tr.action)?;
            let logp = tape.neg(nll)?;
            let logp_old = tape.constant_scalar(tr.log_prob);
            let logdiff = tape.sub(logp, logp_old)?;
            let ratio = tape.exp(logdiff)?;
            let adv = tape.constant_scalar(advantages[i]);
            let surr1 = tape.mul(ratio, adv)?;
            let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)?;
            let surr2 = tape.mul(clipped, adv)?;
            let surr = tape.minimum(surr1, surr2)?;
            let policy_term = tape.neg(surr)?;

            let ret = tape.constant_scalar(returns[i]);
            let vdiff = tape.sub(value, ret)?;
            let vloss = tape.mul(vdiff, vdiff)?;

            let logs = tape.ln(probs)?;
            let plogp = tape.mul(probs, logs)?;
            let neg_entropy = tape.sum(plogp)?;
            let entropy = tape.neg(neg_entropy)?;

            let v_scaled = tape.scale(vloss, cfg.value_coef)?;
            let e_scaled = tape.scale(entropy, -cfg.entropy_coef)?;
            let s1 = tape.add(policy_term, v_scaled)?;
            let sample_loss = tape.add(s1, e_scaled)?;
            total = Some(match total {
                None => sample_loss,
                Some(acc) => tape.add(acc, sample_loss)?,
            });

            if epoch == 0 {
                ratio_sum += tape.scalar(ratio) as f64;
                policy_sum += tape.scalar(policy_term) as f64;
                value_sum += tape.scalar(vloss) as f64;
                entropy_sum += tape.scalar(entropy) as f64;
            }
        }
        if epoch == 0 {
            stats.mean_ratio = (ratio_sum / n as f64) as f32;
            stats.policy_loss = (policy_sum / n as f64) as f32;
            stats.value_loss = (value_sum / n as f64) as f32;
            stats.entropy = (entropy_sum / n as f64) as f32;
        }
        let loss = tape.scale(total.expect("non-empty buffer"), 1.0 / n as f32)?;
        tape.backward(loss)?;
        tape.accumulate_grads(store);
        adam.step(store)?;
    }
    Ok(stats)
}
