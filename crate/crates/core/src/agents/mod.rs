//! Policies: the structural baselines (zero-hedge, random-Gaussian,
//! vol-trend) and PPO actor-critic agents, plus checkpoint selection.

mod mlp;
pub mod ppo;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use mlp::MlpShape;
pub use ppo::{
    loss_and_grad, market_feature_dim, market_features, ppo_train, Batch, Environment, LossTerms, MarketEnv,
    PpoCheckpoint, PpoConfig, PpoPolicy, TrainingOutcome,
};

/// What a policy sees before acting.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub t: usize,
    /// Bucket values of the `L` most recent surfaces, oldest first.
    pub buckets: &'a [Vec<f64>],
    /// Mean total variance of the same surfaces.
    pub surface_means: &'a [f64],
    /// Positions held, i.e. the previous action.
    pub positions: &'a [f64],
}

/// Per-episode mutable policy state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyState {
    /// Exponentially weighted trend of the surface mean.
    pub trend: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    ZeroHedge {
        action_dim: usize,
        a_max: f64,
    },
    /// `κ ξ`, `ξ ~ N(0, diag(s²))` with `s = 1 / (1 + recent bucket volatility)`, clipped.
    RandomGaussian {
        action_dim: usize,
        a_max: f64,
        scale: f64,
    },
    /// `κ tanh(θ τ)` spread over buckets in fixed proportions.
    VolTrend {
        action_dim: usize,
        a_max: f64,
        theta: f64,
        kappa: f64,
        beta: f64,
        proportions: Vec<f64>,
    },
    Ppo(PpoPolicy),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineParams {
    pub random_gaussian_scale: f64,
    pub vol_trend_theta: f64,
    pub vol_trend_kappa: f64,
    pub vol_trend_beta: f64,
    /// Relative bucket weights, short to long; normalized to sum 1.
    pub vol_trend_proportions: Vec<f64>,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            random_gaussian_scale: 0.25,
            vol_trend_theta: 500.0,
            vol_trend_kappa: 0.5,
            vol_trend_beta: 0.9,
            vol_trend_proportions: vec![1.0, 0.5, 0.25],
        }
    }
}

pub fn zero_hedge(action_dim: usize, a_max: f64) -> Policy {
    Policy::ZeroHedge { action_dim, a_max }
}

pub fn random_gaussian(action_dim: usize, a_max: f64, scale: f64) -> Result<Policy> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("random-Gaussian scale must be >= 0, got {scale}")));
    }
    Ok(Policy::RandomGaussian {
        action_dim,
        a_max,
        scale,
    })
}

pub fn vol_trend(action_dim: usize, a_max: f64, theta: f64, kappa: f64, beta: f64, proportions: &[f64]) -> Result<Policy> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!("vol-trend beta must lie in [0, 1), got {beta}")));
    }
    if !(kappa >= 0.0 && kappa <= a_max) {
        return Err(Error::InvalidParameter(format!("vol-trend kappa must lie in [0, a_max], got {kappa}")));
    }
    let props: Vec<f64> = if proportions.len() == action_dim {
        proportions.to_vec()
    } else {
        (0..action_dim).map(|i| 0.5f64.powi(i as i32)).collect()
    };
    let total: f64 = props.iter().map(|p| p.abs()).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("vol-trend proportions must not all be zero".into()));
    }
    Ok(Policy::VolTrend {
        action_dim,
        a_max,
        theta,
        kappa,
        beta,
        proportions: props.iter().map(|p| p / total).collect(),
    })
}

/// Structural baselines built from shared parameters.
pub fn baselines(params: &BaselineParams, action_dim: usize, a_max: f64) -> Result<Vec<(String, Policy)>> {
    Ok(vec![
        ("zero_hedge".into(), zero_hedge(action_dim, a_max)),
        (
            "random_gaussian".into(),
            random_gaussian(action_dim, a_max, params.random_gaussian_scale)?,
        ),
        (
            "vol_trend".into(),
            vol_trend(
                action_dim,
                a_max,
                params.vol_trend_theta,
                params.vol_trend_kappa,
                params.vol_trend_beta,
                &params.vol_trend_proportions,
            )?,
        ),
    ])
}

/// Sample standard deviation of one-step bucket changes across the window, per bucket.
fn bucket_volatility(buckets: &[Vec<f64>], b: usize) -> f64 {
    if buckets.len() < 3 {
        return 0.0;
    }
    let diffs: Vec<f64> = buckets.windows(2).map(|p| p[1][b] - p[0][b]).collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    (diffs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

impl Policy {
    pub fn action_dim(&self) -> usize {
        match self {
            Policy::ZeroHedge { action_dim, .. }
            | Policy::RandomGaussian { action_dim, .. }
            | Policy::VolTrend { action_dim, .. } => *action_dim,
            Policy::Ppo(p) => p.action_dim(),
        }
    }

    pub fn a_max(&self) -> f64 {
        match self {
            Policy::ZeroHedge { a_max, .. } | Policy::RandomGaussian { a_max, .. } | Policy::VolTrend { a_max, .. } => {
                *a_max
            }
            Policy::Ppo(p) => p.a_max(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Policy::ZeroHedge { .. } => "zero_hedge",
            Policy::RandomGaussian { .. } => "random_gaussian",
            Policy::VolTrend { .. } => "vol_trend",
            Policy::Ppo(_) => "ppo",
        }
    }

    pub fn start(&self) -> PolicyState {
        PolicyState::default()
    }

    /// Action for `obs`, always inside `[−a_max, a_max]^{d_a}`.
    pub fn act(&self, state: &mut PolicyState, obs: &Observation, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Policy::ZeroHedge { action_dim, .. } => vec![0.0; *action_dim],
            Policy::RandomGaussian {
                action_dim,
                a_max,
                scale,
            } => (0..*action_dim)
                .map(|b| {
                    let s = 1.0 / (1.0 + bucket_volatility(obs.buckets, b));
                    let xi: f64 = rng.sample(StandardNormal);
                    (scale * s * xi).clamp(-a_max, *a_max)
                })
                .collect(),
            Policy::VolTrend {
                a_max,
                theta,
                kappa,
                beta,
                proportions,
                ..
            } => {
                let m = obs.surface_means;
                if m.len() >= 2 {
                    let change = m[m.len() - 1] - m[m.len() - 2];
                    state.trend = beta * state.trend + (1.0 - beta) * change;
                }
                let level = kappa * (theta * state.trend).tanh();
                proportions.iter().map(|p| (level * p).clamp(-a_max, *a_max)).collect()
            }
            Policy::Ppo(p) => p.act(obs, rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionCriterion {
    pub law_weight: f64,
    /// Largest admissible mean-PnL shortfall against the naive reference.
    pub pnl_floor_slack: f64,
    pub eval_episodes: usize,
}

impl Default for SelectionCriterion {
    fn default() -> Self {
        Self {
            law_weight: 1e-3,
            pnl_floor_slack: 0.005,
            eval_episodes: 16,
        }
    }
}

/// What the selection harness reports for one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointScore {
    pub mean_pnl: f64,
    pub mean_law_pen: f64,
    pub gfi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    pub floor_unmet: bool,
    pub scores: Vec<CheckpointScore>,
}

/// Among checkpoints whose mean PnL clears `reference_pnl − slack`, the one
/// minimizing `mean_law_pen + law_weight · gfi`. Ties go to higher PnL, then
/// to the earlier checkpoint. If none clears the floor, the minimizer over all
/// checkpoints is returned with `floor_unmet` set.
pub fn select_checkpoint<T>(
    checkpoints: &[T],
    criterion: &SelectionCriterion,
    reference_pnl: f64,
    mut harness: impl FnMut(&T) -> Result<CheckpointScore>,
) -> Result<Selection> {
    if checkpoints.is_empty() {
        return Err(Error::NoCheckpoints);
    }
    if criterion.eval_episodes < 1 {
        return Err(Error::InvalidParameter("eval_episodes must be >= 1".into()));
    }
    let scores: Vec<CheckpointScore> = checkpoints.iter().map(&mut harness).collect::<Result<_>>()?;
    let law = |s: &CheckpointScore| s.mean_law_pen + criterion.law_weight * s.gfi;
    let best_of = |ids: &mut dyn Iterator<Item = usize>| -> Option<usize> {
        ids.fold(None, |best: Option<usize>, i| match best {
            None => Some(i),
            Some(b) => {
                let (si, sb) = (&scores[i], &scores[b]);
                let better = law(si) < law(sb) || (law(si) == law(sb) && si.mean_pnl > sb.mean_pnl);
                Some(if better { i } else { b })
            }
        })
    };
    let floor = reference_pnl - criterion.pnl_floor_slack;
    let admissible = best_of(&mut (0..scores.len()).filter(|&i| scores[i].mean_pnl >= floor));
    let (index, floor_unmet) = match admissible {
        Some(i) => (i, false),
        None => (best_of(&mut (0..scores.len())).expect("nonempty"), true),
    };
    Ok(Selection {
        index,
        floor_unmet,
        scores,
    })
}
