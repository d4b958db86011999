//! Hedging MDP on top of a world model.
//!
//! Actions are positions in `d_a` maturity buckets. Step PnL is linear in the
//! bucket value changes, less proportional costs, plus carry on the mean
//! total variance. Rewards subtract `λ ×` the surrogate law penalty of the
//! predicted surface. Every step also carries its Goodhart split:
//! `r_on_manifold` is the PnL against the projected prediction and `r_ghost`
//! is the remainder.
//!
//! The world model ignores actions, so an episode's surface path depends only
//! on its initial window. [`simulate_paths`] computes paths (predictions,
//! projections, penalties) once; [`run_episode`] plays a policy along one.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{Observation, Policy};
use crate::error::{Error, Result};
use crate::generator::Regime;
use crate::grid::{SurfaceGrid, TotalVarianceSurface};
use crate::manifold::LawManifold;
use crate::world_model::WorldModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub episode_len: usize,
    pub gamma: f64,
    pub lambda_law: f64,
    pub n_buckets: usize,
    pub a_max: f64,
    pub trade_cost: f64,
    pub carry_coeff: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            episode_len: 64,
            gamma: 0.99,
            lambda_law: 0.0,
            n_buckets: 3,
            a_max: 1.0,
            trade_cost: 5e-4,
            carry_coeff: 0.5,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.episode_len < 1 {
            return bad("episode_len must be >= 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.lambda_law >= 0.0) {
            return bad(format!("lambda_law must be >= 0, got {}", self.lambda_law));
        }
        if self.n_buckets < 1 {
            return bad("n_buckets must be >= 1".into());
        }
        if !(self.a_max > 0.0) {
            return bad(format!("a_max must be > 0, got {}", self.a_max));
        }
        if !(self.trade_cost >= 0.0) || !self.carry_coeff.is_finite() {
            return bad("trade_cost must be >= 0 and carry_coeff finite".into());
        }
        Ok(())
    }

    pub fn with_lambda(&self, lambda_law: f64) -> Self {
        Self {
            lambda_law,
            ..self.clone()
        }
    }
}

/// Maturity index ranges of the `n_buckets` contiguous bands (short to long).
pub fn bucket_bands(grid: &SurfaceGrid, n_buckets: usize) -> Result<Vec<std::ops::Range<usize>>> {
    let n_t = grid.n_t();
    if n_buckets < 1 || n_buckets > n_t {
        return Err(Error::InvalidParameter(format!(
            "n_buckets must lie in [1, {n_t}], got {n_buckets}"
        )));
    }
    Ok((0..n_buckets)
        .map(|b| (b * n_t / n_buckets)..((b + 1) * n_t / n_buckets))
        .collect())
}

/// Mean total variance over each maturity band, all strikes.
pub fn bucket_values(grid: &SurfaceGrid, w: &TotalVarianceSurface, n_buckets: usize) -> Result<Vec<f64>> {
    let bands = bucket_bands(grid, n_buckets)?;
    let n_k = grid.n_k();
    let v = w.values();
    Ok(bands
        .into_iter()
        .map(|band| {
            let n = band.len() * n_k;
            // The flat layout keeps each maturity band contiguous.
            v[band.start * n_k..band.end * n_k].iter().sum::<f64>() / n as f64
        })
        .collect())
}

/// Largest Euclidean norm among the bucket-averaging rows, `1/√(points in band)`.
pub fn max_bucket_row_norm(grid: &SurfaceGrid, n_buckets: usize) -> Result<f64> {
    let n_k = grid.n_k();
    Ok(bucket_bands(grid, n_buckets)?
        .iter()
        .map(|b| 1.0 / ((b.len() * n_k) as f64).sqrt())
        .fold(0.0, f64::max))
}

/// Lipschitz constant of the ghost reward in the prediction:
/// `|r_ghost| ≤ L_r · ‖ŵ − Π ŵ‖`. Bucket rows have disjoint supports, so the
/// operator norm of the bucket map is its largest row norm.
pub fn ghost_lipschitz(cfg: &EnvConfig, grid: &SurfaceGrid) -> Result<f64> {
    Ok(cfg.a_max * (cfg.n_buckets as f64).sqrt() * max_bucket_row_norm(grid, cfg.n_buckets)?)
}

pub fn check_action(cfg: &EnvConfig, a: &[f64]) -> Result<()> {
    if a.len() != cfg.n_buckets {
        return Err(Error::InvalidParameter(format!(
            "action has {} coordinates, expected {}",
            a.len(),
            cfg.n_buckets
        )));
    }
    for (index, &value) in a.iter().enumerate() {
        if !(value.abs() <= cfg.a_max) {
            return Err(Error::ActionOutOfBounds {
                index,
                value,
                a_max: cfg.a_max,
            });
        }
    }
    Ok(())
}

fn pnl_from_buckets(cfg: &EnvConfig, v_t: &[f64], v_next: &[f64], mean_w_t: f64, a: &[f64]) -> f64 {
    let exposure: f64 = a.iter().zip(v_next.iter().zip(v_t)).map(|(a, (n, c))| a * (n - c)).sum();
    let cost: f64 = cfg.trade_cost * a.iter().map(|x| x.abs()).sum::<f64>();
    exposure - cost + cfg.carry_coeff * mean_w_t
}

/// `Σ_b a_b (V_b(w_next) − V_b(w_t)) − c Σ_b |a_b| + κ_carry · mean(w_t)`.
pub fn step_pnl(
    cfg: &EnvConfig,
    grid: &SurfaceGrid,
    w_t: &TotalVarianceSurface,
    w_next: &TotalVarianceSurface,
    a: &[f64],
) -> Result<f64> {
    check_action(cfg, a)?;
    let v_t = bucket_values(grid, w_t, cfg.n_buckets)?;
    let v_next = bucket_values(grid, w_next, cfg.n_buckets)?;
    Ok(pnl_from_buckets(cfg, &v_t, &v_next, w_t.mean(), a))
}

/// `(r_on_manifold, r_ghost)`: PnL against the projected prediction, and the
/// remainder of the PnL against the raw prediction.
pub fn goodhart_decompose(
    m: &LawManifold,
    cfg: &EnvConfig,
    grid: &SurfaceGrid,
    w_t: &TotalVarianceSurface,
    w_pred: &TotalVarianceSurface,
    a: &[f64],
) -> Result<(f64, f64)> {
    let projected = m.project(w_pred)?.into_converged()?.projected;
    let pnl = step_pnl(cfg, grid, w_t, w_pred, a)?;
    let on = step_pnl(cfg, grid, w_t, &projected, a)?;
    Ok((on, pnl - on))
}

/// World-model trajectory from one initial window, with everything the
/// reward needs precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedPath {
    pub init_window: Vec<TotalVarianceSurface>,
    /// `ŵ_1 … ŵ_T`.
    pub predictions: Vec<TotalVarianceSurface>,
    /// Bucket values of the window followed by every prediction (`L + T` rows).
    pub buckets: Vec<Vec<f64>>,
    /// Bucket values of each projected prediction.
    pub projected_buckets: Vec<Vec<f64>>,
    /// Surface means of the window followed by every prediction.
    pub surface_means: Vec<f64>,
    pub surrogate_penalties: Vec<f64>,
    pub exact_penalties: Vec<f64>,
    pub regime: Regime,
}

impl PredictedPath {
    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.init_window.len()
    }

    /// Observation before acting at step `t`: the `L` most recent surfaces.
    pub fn observation<'a>(&'a self, t: usize, positions: &'a [f64]) -> Observation<'a> {
        let l = self.window_len();
        Observation {
            t,
            buckets: &self.buckets[t..t + l],
            surface_means: &self.surface_means[t..t + l],
            positions,
        }
    }
}

/// Rolls the model forward `cfg.episode_len` steps from every window, in lockstep.
pub fn simulate_paths(
    model: &WorldModel,
    m: &LawManifold,
    cfg: &EnvConfig,
    init_windows: &[Vec<TotalVarianceSurface>],
    regime: Regime,
) -> Result<Vec<PredictedPath>> {
    cfg.validate()?;
    let grid = model.grid();
    let n_b = cfg.n_buckets;
    let mut windows: Vec<Vec<TotalVarianceSurface>> = init_windows.to_vec();
    let mut paths: Vec<PredictedPath> = init_windows
        .iter()
        .map(|w| -> Result<PredictedPath> {
            for s in w {
                if !m.is_feasible(s, crate::manifold::TOL_FEAS)?.feasible {
                    return Err(Error::InvalidParameter("initial window surfaces must be feasible".into()));
                }
            }
            Ok(PredictedPath {
                init_window: w.clone(),
                predictions: Vec::with_capacity(cfg.episode_len),
                buckets: w.iter().map(|s| bucket_values(&grid, s, n_b)).collect::<Result<_>>()?,
                projected_buckets: Vec::with_capacity(cfg.episode_len),
                surface_means: w.iter().map(|s| s.mean()).collect(),
                surrogate_penalties: Vec::with_capacity(cfg.episode_len),
                exact_penalties: Vec::with_capacity(cfg.episode_len),
                regime,
            })
        })
        .collect::<Result<_>>()?;
    for _ in 0..cfg.episode_len {
        let refs: Vec<&[TotalVarianceSurface]> = windows.iter().map(|w| w.as_slice()).collect();
        let preds = model.predict_batch(&refs)?;
        for ((path, window), pred) in paths.iter_mut().zip(windows.iter_mut()).zip(preds) {
            let proj = m.project(&pred)?.into_converged()?;
            path.buckets.push(bucket_values(&grid, &pred, n_b)?);
            path.projected_buckets.push(bucket_values(&grid, &proj.projected, n_b)?);
            path.surface_means.push(pred.mean());
            path.surrogate_penalties.push(m.surrogate_penalty(&pred)?);
            path.exact_penalties.push(proj.penalty);
            window.remove(0);
            window.push(pred.clone());
            path.predictions.push(pred);
        }
    }
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    #[serde(skip)]
    pub w_pred: Option<TotalVarianceSurface>,
    pub action: Vec<f64>,
    pub pnl: f64,
    /// Surrogate penalty of the prediction (the one the reward uses).
    pub law_pen: f64,
    pub law_pen_exact: f64,
    pub reward: f64,
    pub r_on_manifold: f64,
    pub r_ghost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub steps: Vec<StepRecord>,
    pub init_window: Vec<TotalVarianceSurface>,
    pub seed: u64,
    pub regime: Regime,
}

/// Reward and Goodhart split of one step, given the action.
pub fn step_record(cfg: &EnvConfig, path: &PredictedPath, t: usize, action: Vec<f64>) -> Result<StepRecord> {
    check_action(cfg, &action)?;
    let l = path.window_len();
    let v_t = &path.buckets[t + l - 1];
    let v_next = &path.buckets[t + l];
    let mean_t = path.surface_means[t + l - 1];
    let pnl = pnl_from_buckets(cfg, v_t, v_next, mean_t, &action);
    let on = pnl_from_buckets(cfg, v_t, &path.projected_buckets[t], mean_t, &action);
    let law_pen = path.surrogate_penalties[t];
    Ok(StepRecord {
        w_pred: Some(path.predictions[t].clone()),
        pnl,
        law_pen,
        law_pen_exact: path.exact_penalties[t],
        reward: pnl - cfg.lambda_law * law_pen,
        r_on_manifold: on,
        r_ghost: pnl - on,
        action,
    })
}

/// Plays `policy` along a precomputed path. `seed` drives the policy's noise.
pub fn run_episode(cfg: &EnvConfig, path: &PredictedPath, policy: &Policy, seed: u64) -> Result<EpisodeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = policy.start();
    let mut positions = vec![0.0; cfg.n_buckets];
    let mut steps = Vec::with_capacity(path.len());
    for t in 0..path.len() {
        let action = policy.act(&mut state, &path.observation(t, &positions), &mut rng);
        let rec = step_record(cfg, path, t, action)?;
        positions.copy_from_slice(&rec.action);
        steps.push(rec);
    }
    Ok(EpisodeRecord {
        steps,
        init_window: path.init_window.clone(),
        seed,
        regime: path.regime,
    })
}

/// Simulates the path from `init_window` and plays `policy` along it.
pub fn rollout(
    model: &WorldModel,
    m: &LawManifold,
    cfg: &EnvConfig,
    policy: &Policy,
    init_window: &[TotalVarianceSurface],
    seed: u64,
    regime: Regime,
) -> Result<EpisodeRecord> {
    if init_window.len() != model.window_len() {
        return Err(Error::WindowLengthMismatch {
            expected: model.window_len(),
            actual: init_window.len(),
        });
    }
    let path = simulate_paths(model, m, cfg, &[init_window.to_vec()], regime)?.remove(0);
    run_episode(cfg, &path, policy, seed)
}

impl EpisodeRecord {
    pub fn discounted_return(&self, gamma: f64, lambda_law: f64) -> f64 {
        self.steps
            .iter()
            .rev()
            .fold(0.0, |acc, s| (s.pnl - lambda_law * s.law_pen) + gamma * acc)
    }

    /// `t,pnl,law_pen,reward,r_on_manifold,r_ghost,a_0..a_{d-1},law_pen_exact`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d_a = self.steps.first().map_or(0, |s| s.action.len());
        let mut wtr = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["t", "pnl", "law_pen", "reward", "r_on_manifold", "r_ghost"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..d_a).map(|i| format!("a_{i}")));
        header.push("law_pen_exact".into());
        wtr.write_record(&header)?;
        for (t, s) in self.steps.iter().enumerate() {
            let mut row = vec![
                t.to_string(),
                s.pnl.to_string(),
                s.law_pen.to_string(),
                s.reward.to_string(),
                s.r_on_manifold.to_string(),
                s.r_ghost.to_string(),
            ];
            row.extend(s.action.iter().map(|a| a.to_string()));
            row.push(s.law_pen_exact.to_string());
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Writes `<stem>.csv` and the `<stem>.json` sidecar.
    pub fn save(&self, dir: &Path, stem: &str, cfg: &EnvConfig) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.write_csv(std::io::BufWriter::new(file))?;
        let sidecar = EpisodeSidecar {
            config: cfg.clone(),
            seed: self.seed,
            regime: self.regime,
            episode_len: self.steps.len(),
        };
        let json_path = dir.join(format!("{stem}.json"));
        fs::write(&json_path, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&json_path, e))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeSidecar {
    config: EnvConfig,
    seed: u64,
    regime: Regime,
    episode_len: usize,
}

/// Shared, immutable pool of paths for training-time sampling.
pub type PathPool = Arc<Vec<PredictedPath>>;
