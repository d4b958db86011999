//! PPO actor-critic: clipped-ratio surrogate, GAE advantages, value MSE,
//! Gaussian policy head with a learned state-independent log-std.
//!
//! Sampled actions are clipped to the action box before reaching the
//! environment; log-probabilities are those of the unclipped sample.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mlp::{self, MlpShape};
use super::Observation;
use crate::env::{step_record, EnvConfig, PathPool};
use crate::error::{Error, Result};
use crate::optim::{clip_grad_norm, Adam};

pub const PPO_CHECKPOINT_SCHEMA_VERSION: u32 = 1;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub epochs_per_update: usize,
    pub steps_per_update: usize,
    pub minibatch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub total_updates: usize,
    pub checkpoint_every: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub init_log_std: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            gae_lambda: 0.95,
            gamma: 0.99,
            epochs_per_update: 4,
            steps_per_update: 4096,
            minibatch_size: 512,
            lr: 3e-4,
            hidden: vec![64, 64],
            total_updates: 100,
            checkpoint_every: 10,
            value_coef: 0.5,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            init_log_std: 0.3f64.ln(),
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad(format!("clip_eps must lie in (0, 1), got {}", self.clip_eps));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda must lie in [0, 1], got {}", self.gae_lambda));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.epochs_per_update < 1 || self.steps_per_update < 1 || self.minibatch_size < 1 {
            return bad("epochs_per_update, steps_per_update and minibatch_size must be >= 1".into());
        }
        if self.total_updates < 1 || self.checkpoint_every < 1 {
            return bad("total_updates and checkpoint_every must be >= 1".into());
        }
        if !(self.lr > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("lr and max_grad_norm must be > 0".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be >= 1".into());
        }
        if !(self.value_coef >= 0.0) || !(self.entropy_coef >= 0.0) || !self.init_log_std.is_finite() {
            return bad("value_coef and entropy_coef must be >= 0, init_log_std finite".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON of the config and `lambda_law`.
    pub fn hash(&self, lambda_law: f64) -> String {
        let text = serde_json::to_string(&(self, lambda_law)).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Episodic environment with a flat feature vector as observation.
pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn a_max(&self) -> f64;
    /// Starts an episode and returns its first observation.
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
    /// Applies an in-box action; returns `(next observation, reward, done)`.
    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64, bool)>;
}

/// Market features: latest bucket values ×10, window bucket changes ×100, positions.
pub fn market_features(obs: &Observation) -> Vec<f64> {
    let last = obs.buckets.last().expect("nonempty window");
    let mut x: Vec<f64> = last.iter().map(|v| 10.0 * v).collect();
    for pair in obs.buckets.windows(2) {
        x.extend(pair[1].iter().zip(&pair[0]).map(|(b, a)| 100.0 * (b - a)));
    }
    x.extend_from_slice(obs.positions);
    x
}

pub fn market_feature_dim(window_len: usize, n_buckets: usize) -> usize {
    (window_len + 1) * n_buckets
}

/// Hedging MDP over precomputed world-model paths; each episode starts
/// from a uniformly drawn path.
pub struct MarketEnv {
    pool: PathPool,
    cfg: EnvConfig,
    path: usize,
    t: usize,
    positions: Vec<f64>,
}

impl MarketEnv {
    pub fn new(pool: PathPool, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        if pool.is_empty() || pool.iter().any(|p| p.is_empty()) {
            return Err(Error::EmptyInput("path pool"));
        }
        let positions = vec![0.0; cfg.n_buckets];
        Ok(Self {
            pool,
            cfg,
            path: 0,
            t: 0,
            positions,
        })
    }

    fn features(&self) -> Vec<f64> {
        market_features(&self.pool[self.path].observation(self.t, &self.positions))
    }
}

impl Environment for MarketEnv {
    fn obs_dim(&self) -> usize {
        market_feature_dim(self.pool[0].window_len(), self.cfg.n_buckets)
    }

    fn action_dim(&self) -> usize {
        self.cfg.n_buckets
    }

    fn a_max(&self) -> f64 {
        self.cfg.a_max
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.path = rand::Rng::random_range(rng, 0..self.pool.len());
        self.t = 0;
        self.positions.iter_mut().for_each(|p| *p = 0.0);
        Ok(self.features())
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
        let path = &self.pool[self.path];
        let rec = step_record(&self.cfg, path, self.t, action.to_vec())?;
        self.positions.copy_from_slice(action);
        self.t += 1;
        let done = self.t >= path.len();
        let next = if done {
            vec![0.0; self.obs_dim()]
        } else {
            self.features()
        };
        Ok((next, rec.reward, done))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoPolicy {
    pub shape: MlpShape,
    pub params: Vec<f64>,
    pub a_max: f64,
    /// Acts with the mean action instead of sampling.
    pub deterministic: bool,
}

impl PpoPolicy {
    pub fn new(shape: MlpShape, params: Vec<f64>, a_max: f64) -> Result<Self> {
        if params.len() != shape.n_params() {
            return Err(Error::InvalidParameter(format!(
                "expected {} policy parameters, got {}",
                shape.n_params(),
                params.len()
            )));
        }
        Ok(Self {
            shape,
            params,
            a_max,
            deterministic: true,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.shape.n_act
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    /// Mean action and state value for one feature vector.
    pub fn mean_and_value(&self, features: &[f64]) -> (Vec<f64>, f64) {
        let x = Array2::from_shape_vec((1, features.len()), features.to_vec()).expect("row");
        let f = mlp::forward(&self.shape, &self.params, &x);
        (f.mean.row(0).to_vec(), f.value[0])
    }

    fn sample(&self, mean: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let log_std = self.shape.log_std(&self.params);
        mean.iter()
            .zip(log_std)
            .map(|(m, s)| {
                let z: f64 = StandardNormal.sample(rng);
                m + s.exp() * z
            })
            .collect()
    }

    fn clip(&self, a: &[f64]) -> Vec<f64> {
        a.iter().map(|v| v.clamp(-self.a_max, self.a_max)).collect()
    }

    /// In-box action from a feature vector.
    pub fn act_features(&self, features: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (mean, _) = self.mean_and_value(features);
        if self.deterministic {
            self.clip(&mean)
        } else {
            self.clip(&self.sample(&mean, rng))
        }
    }

    pub fn act(&self, obs: &Observation, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.act_features(&market_features(obs), rng)
    }
}

fn log_prob(mean: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(a)
        .map(|((m, s), x)| {
            let z = (x - m) / s.exp();
            -0.5 * z * z - s - 0.5 * LN_2PI
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoCheckpoint {
    pub schema_version: u32,
    pub config_hash: String,
    pub update: usize,
    pub lambda_law: f64,
    pub policy: PpoPolicy,
}

impl PpoCheckpoint {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text)?;
        if ck.schema_version != PPO_CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: ck.schema_version,
                expected: PPO_CHECKPOINT_SCHEMA_VERSION,
            });
        }
        Ok(ck)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingOutcome {
    /// Final policy, or the last good checkpoint's if training diverged.
    pub policy: PpoPolicy,
    pub checkpoints: Vec<PpoCheckpoint>,
    /// Mean per-step reward collected in each update.
    pub curve: Vec<f64>,
    /// Update at which a non-finite loss aborted training.
    pub diverged_at: Option<usize>,
}

impl TrainingOutcome {
    /// Converts an aborted run into `DivergenceDetected`.
    pub fn check(self) -> Result<Self> {
        match self.diverged_at {
            Some(update) => Err(Error::DivergenceDetected { update }),
            None => Ok(self),
        }
    }
}

/// One minibatch of collected experience.
pub struct Batch {
    pub obs: Array2<f64>,
    /// Unclipped sampled actions.
    pub actions: Array2<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

pub struct LossTerms {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

impl LossTerms {
    pub fn total(&self, cfg: &PpoConfig) -> f64 {
        self.policy + cfg.value_coef * self.value - cfg.entropy_coef * self.entropy
    }
}

/// Clipped surrogate plus value MSE minus entropy bonus, and its gradient.
pub fn loss_and_grad(shape: &MlpShape, theta: &[f64], batch: &Batch, cfg: &PpoConfig) -> (LossTerms, Vec<f64>) {
    let n = batch.obs.nrows();
    let nf = n as f64;
    let fwd = mlp::forward(shape, theta, &batch.obs);
    let log_std = shape.log_std(theta).to_vec();
    let inv_var: Vec<f64> = log_std.iter().map(|s| (-2.0 * s).exp()).collect();
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);

    let mut d_mean = Array2::<f64>::zeros(fwd.mean.raw_dim());
    let mut d_value = Array1::<f64>::zeros(n);
    let mut d_log_std = vec![0.0; shape.n_act];
    let (mut policy_loss, mut value_loss) = (0.0, 0.0);

    for i in 0..n {
        let mean = fwd.mean.row(i);
        let a = batch.actions.row(i);
        let lp = log_prob(mean.as_slice().unwrap(), &log_std, a.as_slice().unwrap());
        let ratio = (lp - batch.old_log_probs[i]).exp();
        let adv = batch.advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(lo, hi) * adv;
        policy_loss -= unclipped.min(clipped) / nf;
        // Gradient flows only through the unclipped branch when it is the active minimum.
        let active = unclipped <= clipped;
        if active {
            let g = -ratio * adv / nf;
            for j in 0..shape.n_act {
                let diff = a[j] - mean[j];
                d_mean[[i, j]] = g * diff * inv_var[j];
                d_log_std[j] += g * (diff * diff * inv_var[j] - 1.0);
            }
        }
        let err = fwd.value[i] - batch.returns[i];
        value_loss += err * err / nf;
        d_value[i] = cfg.value_coef * 2.0 * err / nf;
    }
    let entropy: f64 = log_std.iter().map(|s| s + 0.5 * (1.0 + LN_2PI)).sum();
    d_log_std.iter_mut().for_each(|g| *g -= cfg.entropy_coef);
    let grad = mlp::backward(shape, theta, &fwd, &d_mean, &d_value, &d_log_std);
    (
        LossTerms {
            policy: policy_loss,
            value: value_loss,
            entropy,
        },
        grad,
    )
}

/// GAE advantages and returns. `values` has one extra entry: the bootstrap
/// value after the last step.
pub(crate) fn gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        next = delta + gamma * lambda * live * next;
        adv[t] = next;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    x.iter_mut().for_each(|v| *v = (*v - mean) / sd);
}

fn gather(batch: &Batch, ids: &[usize]) -> Batch {
    Batch {
        obs: batch.obs.select(ndarray::Axis(0), ids),
        actions: batch.actions.select(ndarray::Axis(0), ids),
        old_log_probs: ids.iter().map(|&i| batch.old_log_probs[i]).collect(),
        advantages: ids.iter().map(|&i| batch.advantages[i]).collect(),
        returns: ids.iter().map(|&i| batch.returns[i]).collect(),
    }
}

/// Trains a policy on `env`, whose rewards already carry any law penalty.
/// `lambda_law` is recorded in checkpoints.
pub fn ppo_train<E: Environment>(env: &mut E, cfg: &PpoConfig, lambda_law: f64) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let shape = MlpShape {
        n_in: env.obs_dim(),
        hidden: cfg.hidden.clone(),
        n_act: env.action_dim(),
    };
    let a_max = env.a_max();
    let hash = cfg.hash(lambda_law);
    let mut theta = shape.init(cfg.seed, cfg.init_log_std);
    let mut opt = Adam::new(theta.len(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_99);
    let n_steps = cfg.steps_per_update;
    let d_in = shape.n_in;
    let d_a = shape.n_act;

    let mut checkpoints = Vec::new();
    let mut curve = Vec::with_capacity(cfg.total_updates);
    let mut obs = env.reset(&mut rng)?;
    let snapshot = |theta: &[f64]| PpoPolicy {
        shape: shape.clone(),
        params: theta.to_vec(),
        a_max,
        deterministic: true,
    };

    for update in 0..cfg.total_updates {
        let mut policy = snapshot(&theta);
        policy.deterministic = false;
        let mut obs_buf = Vec::with_capacity(n_steps * d_in);
        let mut act_buf = Vec::with_capacity(n_steps * d_a);
        let mut log_probs = Vec::with_capacity(n_steps);
        let mut values = Vec::with_capacity(n_steps + 1);
        let mut rewards = Vec::with_capacity(n_steps);
        let mut dones = Vec::with_capacity(n_steps);
        let log_std = shape.log_std(&theta).to_vec();
        for _ in 0..n_steps {
            let (mean, value) = policy.mean_and_value(&obs);
            let raw = policy.sample(&mean, &mut rng);
            log_probs.push(log_prob(&mean, &log_std, &raw));
            values.push(value);
            obs_buf.extend_from_slice(&obs);
            let (next, r, done) = env.step(&policy.clip(&raw))?;
            act_buf.extend_from_slice(&raw);
            rewards.push(r);
            dones.push(done);
            obs = if done { env.reset(&mut rng)? } else { next };
        }
        values.push(policy.mean_and_value(&obs).1);
        curve.push(rewards.iter().sum::<f64>() / n_steps as f64);

        let (mut advantages, returns) = gae(&rewards, &values, &dones, cfg.gamma, cfg.gae_lambda);
        if cfg.normalize_advantages && n_steps > 1 {
            standardize(&mut advantages);
        }
        let full = Batch {
            obs: Array2::from_shape_vec((n_steps, d_in), obs_buf).expect("obs shape"),
            actions: Array2::from_shape_vec((n_steps, d_a), act_buf).expect("action shape"),
            old_log_probs: log_probs,
            advantages,
            returns,
        };

        let mut ids: Vec<usize> = (0..n_steps).collect();
        let mut diverged = false;
        'epochs: for _ in 0..cfg.epochs_per_update {
            ids.shuffle(&mut rng);
            for chunk in ids.chunks(cfg.minibatch_size) {
                let mb = gather(&full, chunk);
                let (loss, mut grad) = loss_and_grad(&shape, &theta, &mb, cfg);
                if !loss.total(cfg).is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    diverged = true;
                    break 'epochs;
                }
                clip_grad_norm(&mut grad, cfg.max_grad_norm);
                opt.step(&mut theta, &grad);
            }
        }
        if diverged || theta.iter().any(|p| !p.is_finite()) {
            let policy = checkpoints
                .last()
                .map(|c: &PpoCheckpoint| c.policy.clone())
                .unwrap_or_else(|| snapshot(&shape.init(cfg.seed, cfg.init_log_std)));
            return Ok(TrainingOutcome {
                policy,
                checkpoints,
                curve,
                diverged_at: Some(update),
            });
        }
        if (update + 1) % cfg.checkpoint_every == 0 || update + 1 == cfg.total_updates {
            checkpoints.push(PpoCheckpoint {
                schema_version: PPO_CHECKPOINT_SCHEMA_VERSION,
                config_hash: hash.clone(),
                update: update + 1,
                lambda_law,
                policy: snapshot(&theta),
            });
        }
    }
    Ok(TrainingOutcome {
        policy: snapshot(&theta),
        checkpoints,
        curve,
        diverged_at: None,
    })
}
