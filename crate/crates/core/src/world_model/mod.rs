//! One-step surface predictors trained on prediction error only.
//!
//! A model maps a window of the last `L` surfaces to the next surface. Inputs
//! and outputs are standardized per grid point with training-set moments.
//! Nothing in training knows about the law manifold, so predictions are free
//! to leave it; [`diagnose`] measures by how much.

mod affine;
mod gru;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::Trajectory;
use crate::grid::{SurfaceGrid, TotalVarianceSurface};
use crate::manifold::LawManifold;
use crate::optim::Adam;
use gru::GruShape;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Recurrent,
    AffineAr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldModelConfig {
    pub window_len: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub arch: Architecture,
    /// Ridge weight of the affine fit on standardized features.
    pub ridge: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for WorldModelConfig {
    fn default() -> Self {
        Self {
            window_len: 12,
            hidden_dim: 64,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 64,
            arch: Architecture::Recurrent,
            ridge: 1e-6,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl WorldModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.window_len < 1 {
            return bad("window_len must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.hidden_dim < 1 || self.batch_size < 1 {
            return bad("hidden_dim and batch_size must be >= 1");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if !(self.ridge >= 0.0) {
            return bad("ridge must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
enum Params {
    Recurrent { theta: Vec<f64> },
    /// Row-major `(d, d·L + 1)`; the last column is the intercept.
    AffineAr { weights: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    schema_version: u32,
    config: WorldModelConfig,
    grid: SurfaceGrid,
    mean: Vec<f64>,
    /// Zero where the coordinate never varied in training; those outputs are
    /// pinned to the training mean.
    scale: Vec<f64>,
    params: Params,
    /// Per-point mean squared error in total-variance units.
    pub train_mse: f64,
    pub val_mse: f64,
    /// Per-point error of repeating the last surface, on the validation set.
    pub persistence_mse: f64,
    pub history: Vec<EpochStats>,
    #[serde(skip)]
    grid_arc: Option<Arc<SurfaceGrid>>,
}

struct Standardizer<'a> {
    mean: &'a [f64],
    scale: &'a [f64],
}

impl Standardizer<'_> {
    fn forward(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(self.mean.iter().zip(self.scale))
            .map(|(x, (m, s))| (x - m) / if *s > 0.0 { *s } else { 1.0 })
            .collect()
    }

    fn inverse(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.mean.iter().zip(self.scale))
            .map(|(y, (m, s))| m + s * y)
            .collect()
    }
}

/// A single training example: window `[start, start + L)` of sequence `seq`, target `start + L`.
#[derive(Debug, Clone, Copy)]
struct Sample {
    seq: usize,
    start: usize,
}

fn samples_of(seqs: &[Vec<Vec<f64>>], ids: &[usize], l: usize) -> Vec<Sample> {
    ids.iter()
        .flat_map(|&seq| (0..seqs[seq].len() - l).map(move |start| Sample { seq, start }))
        .collect()
}

fn batch_inputs(seqs: &[Vec<Vec<f64>>], batch: &[Sample], l: usize, d: usize) -> Vec<Array2<f64>> {
    (0..l)
        .map(|t| gru::stack_rows(batch.iter().map(|s| seqs[s.seq][s.start + t].as_slice()), d))
        .collect()
}

fn batch_targets(seqs: &[Vec<Vec<f64>>], batch: &[Sample], l: usize, d: usize) -> Array2<f64> {
    gru::stack_rows(batch.iter().map(|s| seqs[s.seq][s.start + l].as_slice()), d)
}

const EVAL_CHUNK: usize = 512;

impl WorldModel {
    pub fn config(&self) -> &WorldModelConfig {
        &self.config
    }

    pub fn window_len(&self) -> usize {
        self.config.window_len
    }

    pub fn grid(&self) -> Arc<SurfaceGrid> {
        self.grid_arc.clone().unwrap_or_else(|| Arc::new(self.grid.clone()))
    }

    fn standardizer(&self) -> Standardizer<'_> {
        Standardizer {
            mean: &self.mean,
            scale: &self.scale,
        }
    }

    /// Predicts in standardized coordinates; `xs[t]` is `(batch, d)`.
    fn predict_std(&self, xs: &[Array2<f64>]) -> Array2<f64> {
        let d = self.grid.d();
        match &self.params {
            Params::Recurrent { theta } => gru::forward(&self.shape(), theta, xs),
            Params::AffineAr { weights } => affine::forward(weights, xs, d),
        }
    }

    fn shape(&self) -> GruShape {
        GruShape {
            d_in: self.grid.d(),
            hidden: self.config.hidden_dim,
            d_out: self.grid.d(),
        }
    }

    fn check_window(&self, window: &[TotalVarianceSurface]) -> Result<()> {
        if window.len() != self.config.window_len {
            return Err(Error::WindowLengthMismatch {
                expected: self.config.window_len,
                actual: window.len(),
            });
        }
        for w in window {
            if w.grid().as_ref() != &self.grid {
                return Err(Error::GridMismatch {
                    expected: self.grid.d(),
                    actual: w.values().len(),
                });
            }
        }
        Ok(())
    }

    /// Next-surface prediction from exactly `L` surfaces, oldest first.
    pub fn predict(&self, window: &[TotalVarianceSurface]) -> Result<TotalVarianceSurface> {
        Ok(self.predict_batch(&[window])?.pop().expect("one window in, one surface out"))
    }

    /// Row-wise identical to calling [`WorldModel::predict`] on each window.
    pub fn predict_batch(&self, windows: &[&[TotalVarianceSurface]]) -> Result<Vec<TotalVarianceSurface>> {
        for w in windows {
            self.check_window(w)?;
        }
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let d = self.grid.d();
        let st = self.standardizer();
        let std_windows: Vec<Vec<Vec<f64>>> = windows
            .iter()
            .map(|w| w.iter().map(|s| st.forward(s.values())).collect())
            .collect();
        let xs: Vec<Array2<f64>> = (0..self.config.window_len)
            .map(|t| gru::stack_rows(std_windows.iter().map(|w| w[t].as_slice()), d))
            .collect();
        let y = self.predict_std(&xs);
        let grid = self.grid();
        y.rows()
            .into_iter()
            .map(|row| TotalVarianceSurface::new(grid.clone(), st.inverse(row.as_slice().expect("contiguous row"))))
            .collect()
    }

    /// Per-point MSE in total-variance units over `samples`.
    fn raw_mse(&self, seqs: &[Vec<Vec<f64>>], samples: &[Sample]) -> f64 {
        let (l, d) = (self.config.window_len, self.grid.d());
        let mut sse = 0.0;
        for chunk in samples.chunks(EVAL_CHUNK) {
            let y = self.predict_std(&batch_inputs(seqs, chunk, l, d));
            let t = batch_targets(seqs, chunk, l, d);
            for (row_y, row_t) in y.rows().into_iter().zip(t.rows()) {
                for j in 0..d {
                    let e = (row_y[j] - row_t[j]) * self.scale[j];
                    sse += e * e;
                }
            }
        }
        sse / (samples.len() * d) as f64
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut m: WorldModel = serde_json::from_str(text)?;
        if m.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: m.schema_version,
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        m.grid_arc = Some(Arc::new(m.grid.clone()));
        Ok(m)
    }
}

/// Trains on generator trajectories; see [`train_sequences`].
pub fn train(dataset: &[Trajectory], cfg: &WorldModelConfig) -> Result<WorldModel> {
    let seqs: Vec<&[TotalVarianceSurface]> = dataset.iter().map(|t| t.surfaces.as_slice()).collect();
    train_sequences(&seqs, cfg)
}

/// Splits sequences 80/20 (per `val_fraction`) by sequence, fits on the
/// training part with a pure MSE loss, and records validation and
/// copy-last-surface errors.
///
/// Fails with [`Error::TrainingDegenerate`] unless the model beats the
/// copy-last predictor on validation data (an exact fit of a constant series
/// counts as beating it).
pub fn train_sequences(seqs: &[&[TotalVarianceSurface]], cfg: &WorldModelConfig) -> Result<WorldModel> {
    cfg.validate()?;
    let l = cfg.window_len;
    if seqs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need >= 2 sequences for a train/validation split, got {}",
            seqs.len()
        )));
    }
    if let Some(short) = seqs.iter().position(|s| s.len() < l + 1) {
        return Err(Error::InsufficientData(format!(
            "sequence {short} has {} surfaces, window needs {}",
            seqs[short].len(),
            l + 1
        )));
    }
    let grid = seqs[0][0].grid().clone();
    if seqs.iter().flat_map(|s| s.iter()).any(|w| w.grid().as_ref() != grid.as_ref()) {
        return Err(Error::InvalidParameter("sequences live on different grids".into()));
    }
    let d = grid.d();

    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_val = ((seqs.len() as f64 * cfg.val_fraction).round() as usize).clamp(1, seqs.len() - 1);
    let (val_ids, train_ids) = order.split_at(n_val);
    let (mut val_ids, mut train_ids) = (val_ids.to_vec(), train_ids.to_vec());
    val_ids.sort_unstable();
    train_ids.sort_unstable();

    let (mean, scale) = moments(train_ids.iter().flat_map(|&i| seqs[i].iter()), d);
    let st = Standardizer {
        mean: &mean,
        scale: &scale,
    };
    let std_seqs: Vec<Vec<Vec<f64>>> = seqs
        .iter()
        .map(|s| s.iter().map(|w| st.forward(w.values())).collect())
        .collect();
    let train_samples = samples_of(&std_seqs, &train_ids, l);
    let val_samples = samples_of(&std_seqs, &val_ids, l);

    let persistence_mse = {
        let sse: f64 = val_samples
            .iter()
            .map(|s| {
                let last = seqs[s.seq][s.start + l - 1].values();
                let next = seqs[s.seq][s.start + l].values();
                last.iter().zip(next).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum();
        sse / (val_samples.len() * d) as f64
    };

    let mut model = WorldModel {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        config: cfg.clone(),
        grid: grid.as_ref().clone(),
        mean: mean.clone(),
        scale: scale.clone(),
        params: Params::AffineAr { weights: Vec::new() },
        train_mse: f64::NAN,
        val_mse: f64::NAN,
        persistence_mse,
        history: Vec::new(),
        grid_arc: Some(grid.clone()),
    };

    match cfg.arch {
        Architecture::AffineAr => {
            let weights = affine::fit(&std_seqs, &train_samples, l, d, cfg.ridge)?;
            model.params = Params::AffineAr { weights };
            model.val_mse = model.raw_mse(&std_seqs, &val_samples);
        }
        Architecture::Recurrent => fit_recurrent(&mut model, &std_seqs, &train_samples, &val_samples)?,
    }
    model.train_mse = model.raw_mse(&std_seqs, &train_samples);

    if model.val_mse > 0.0 && model.val_mse >= model.persistence_mse {
        return Err(Error::TrainingDegenerate {
            val_mse: model.val_mse,
            persistence_mse: model.persistence_mse,
        });
    }
    Ok(model)
}

/// Per-point mean and population standard deviation; exactly `(value, 0)`
/// for a coordinate that never changes.
fn moments<'a>(surfaces: impl Iterator<Item = &'a TotalVarianceSurface> + Clone, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut n = 0usize;
    let mut mean = vec![0.0; d];
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for w in surfaces.clone() {
        n += 1;
        for (j, &x) in w.values().iter().enumerate() {
            mean[j] += x;
            lo[j] = lo[j].min(x);
            hi[j] = hi[j].max(x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for w in surfaces {
        var.iter_mut()
            .zip(w.values().iter().zip(&mean))
            .for_each(|(v, (x, m))| *v += (x - m) * (x - m));
    }
    let mut scale = vec![0.0; d];
    for j in 0..d {
        if lo[j] == hi[j] {
            mean[j] = lo[j];
        } else {
            scale[j] = (var[j] / n as f64).sqrt();
        }
    }
    (mean, scale)
}

/// Mini-batch Adam; keeps the parameters of the epoch with the lowest validation error.
fn fit_recurrent(model: &mut WorldModel, seqs: &[Vec<Vec<f64>>], train: &[Sample], val: &[Sample]) -> Result<()> {
    let cfg = model.config.clone();
    let (l, d) = (cfg.window_len, model.grid.d());
    let shape = model.shape();
    let mut theta = shape.init(cfg.seed.wrapping_add(1));
    let mut opt = Adam::new(theta.len(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..train.len()).collect();

    model.params = Params::Recurrent { theta: theta.clone() };
    let mut best = (model.raw_mse(seqs, val), theta.clone());
    let mut update = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = idx.iter().map(|&i| train[i]).collect();
            let xs = batch_inputs(seqs, &batch, l, d);
            let target = batch_targets(seqs, &batch, l, d);
            let (loss, grad) = gru::mse_and_grad(&shape, &theta, &xs, &target);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                model.params = Params::Recurrent { theta: best.1 };
                return Err(Error::DivergenceDetected { update });
            }
            opt.step(&mut theta, &grad);
            loss_sum += loss;
            n_batches += 1;
            update += 1;
        }
        model.params = Params::Recurrent { theta: theta.clone() };
        let val_mse = model.raw_mse(seqs, val);
        model.history.push(EpochStats {
            epoch,
            train_loss: loss_sum / n_batches.max(1) as f64,
            val_mse,
        });
        if val_mse < best.0 {
            best = (val_mse, theta.clone());
        }
    }
    model.params = Params::Recurrent { theta: best.1 };
    model.val_mse = best.0;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhostDiagnostics {
    pub mean_pred_penalty: f64,
    pub max_pred_penalty: f64,
    /// `(δ, fraction of predictions with penalty > δ)`.
    pub frac_offmanifold: Vec<(f64, f64)>,
    /// Mean squared Euclidean prediction error `E‖ŵ − w‖²`.
    pub mean_residual_sq: f64,
    pub persistence_mse: f64,
    pub n_predictions: usize,
}

impl GhostDiagnostics {
    pub fn frac_above(&self, delta: f64) -> Option<f64> {
        self.frac_offmanifold.iter().find(|(d, _)| *d == delta).map(|p| p.1)
    }

    pub(crate) fn from_penalties(penalties: &[f64], residual_sq: f64, persistence_mse: f64, deltas: &[f64]) -> Self {
        let n = penalties.len().max(1) as f64;
        Self {
            mean_pred_penalty: penalties.iter().sum::<f64>() / n,
            max_pred_penalty: penalties.iter().cloned().fold(0.0, f64::max),
            frac_offmanifold: deltas
                .iter()
                .map(|&d| (d, penalties.iter().filter(|&&p| p > d).count() as f64 / n))
                .collect(),
            mean_residual_sq: residual_sq,
            persistence_mse,
            n_predictions: penalties.len(),
        }
    }
}

/// One-step predictions over every window of every trajectory, scored by the
/// exact law penalty.
pub fn diagnose(model: &WorldModel, dataset: &[Trajectory], m: &LawManifold, deltas: &[f64]) -> Result<GhostDiagnostics> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("diagnose needs at least one trajectory"));
    }
    let l = model.window_len();
    let mut penalties = Vec::new();
    let mut resid = 0.0;
    let mut persist = 0.0;
    let mut n_points = 0usize;
    for traj in dataset {
        let s = &traj.surfaces;
        if s.len() <= l {
            continue;
        }
        let n_windows = s.len() - l;
        for chunk_start in (0..n_windows).step_by(EVAL_CHUNK) {
            let chunk_end = (chunk_start + EVAL_CHUNK).min(n_windows);
            let windows: Vec<&[TotalVarianceSurface]> = (chunk_start..chunk_end).map(|t| &s[t..t + l]).collect();
            let preds = model.predict_batch(&windows)?;
            for (k, pred) in preds.iter().enumerate() {
                let t = chunk_start + k + l;
                let truth = s[t].values();
                resid += pred.values().iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                persist += s[t - 1].values().iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                n_points += truth.len();
                penalties.push(m.law_penalty(pred)?);
            }
        }
    }
    if penalties.is_empty() {
        return Err(Error::InsufficientData(format!("no trajectory longer than the window ({l})")));
    }
    let n = penalties.len() as f64;
    Ok(GhostDiagnostics::from_penalties(
        &penalties,
        resid / n,
        persist / n_points as f64,
        deltas,
    ))
}
