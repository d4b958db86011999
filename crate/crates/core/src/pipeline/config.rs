//! Experiment configuration: one TOML file with top-level run settings and
//! one table per component.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{BaselineParams, PpoConfig, SelectionCriterion};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::generator::{GeneratorParams, ShockSpec};
use crate::grid::{GridPreset, SurfaceGrid};
use crate::metrics::{GfiConfig, PenaltyKind, DEFAULT_COVERAGE_THRESHOLDS};
use crate::world_model::{Architecture, WorldModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub grid: GridPreset,
    /// Training trajectories for the world model.
    pub n_trajectories: usize,
    pub horizon: usize,
    /// Evaluation episodes per regime.
    pub eval_episodes: usize,
    /// Generator steps simulated before an evaluation window starts.
    pub eval_burn_in: usize,
    /// Initial windows drawn from the dataset for agent training.
    pub train_pool_size: usize,
    /// Must contain 0 (the naive agent).
    pub lambda_grid: Vec<f64>,
    pub selection_only: bool,
    /// Penalty used by the reported law metrics.
    pub penalty_kind: PenaltyKind,
    pub coverage_thresholds: Vec<f64>,
    pub band_edges: Vec<f64>,
    pub diagnostic_deltas: Vec<f64>,
    pub generator: GeneratorParams,
    pub shock: ShockSpec,
    pub world_model: WorldModelConfig,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub selection: SelectionCriterion,
    pub baselines: BaselineParams,
    pub gfi: GfiConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            output_dir: PathBuf::from("runs/default"),
            grid: GridPreset::Default,
            n_trajectories: 100,
            horizon: 160,
            eval_episodes: 50,
            eval_burn_in: 24,
            train_pool_size: 256,
            lambda_grid: vec![0.0, 5.0, 10.0, 20.0, 40.0],
            selection_only: true,
            penalty_kind: PenaltyKind::Exact,
            coverage_thresholds: DEFAULT_COVERAGE_THRESHOLDS.to_vec(),
            band_edges: vec![0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
            diagnostic_deltas: vec![1e-6, 1e-4, 1e-3],
            generator: GeneratorParams {
                kappa: 4.0,
                smile_a: 0.05,
                smile_b: -0.2,
                dt: 1.0 / 12.0,
                ..Default::default()
            },
            shock: ShockSpec::default(),
            world_model: WorldModelConfig {
                epochs: 40,
                ..Default::default()
            },
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            selection: SelectionCriterion::default(),
            baselines: BaselineParams::default(),
            gfi: GfiConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Smoke-test scale: 2×3 grid, a handful of episodes and updates.
    pub fn tiny() -> Self {
        let d = Self::default();
        Self {
            output_dir: PathBuf::from("runs/tiny"),
            grid: GridPreset::Tiny,
            n_trajectories: 32,
            horizon: 60,
            eval_episodes: 5,
            eval_burn_in: 8,
            train_pool_size: 16,
            world_model: WorldModelConfig {
                window_len: 2,
                arch: Architecture::AffineAr,
                ..d.world_model.clone()
            },
            env: EnvConfig {
                episode_len: 16,
                n_buckets: 2,
                ..d.env.clone()
            },
            ppo: PpoConfig {
                steps_per_update: 256,
                minibatch_size: 128,
                hidden: vec![16, 16],
                total_updates: 3,
                checkpoint_every: 1,
                ..d.ppo.clone()
            },
            selection: SelectionCriterion {
                eval_episodes: 4,
                ..d.selection.clone()
            },
            baselines: BaselineParams {
                vol_trend_proportions: vec![1.0, 0.5],
                ..d.baselines.clone()
            },
            ..d
        }
    }

    pub fn grid(&self) -> Arc<SurfaceGrid> {
        Arc::new(SurfaceGrid::preset(self.grid))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        self.generator.validate()?;
        self.shock.validate()?;
        self.world_model.validate()?;
        self.env.validate()?;
        self.ppo.validate()?;
        if self.lambda_grid.is_empty() || !self.lambda_grid.contains(&0.0) {
            return bad("lambda_grid must be nonempty and contain 0");
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("lambda_grid values must be finite and >= 0");
        }
        let mut sorted = self.lambda_grid.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() != self.lambda_grid.len() {
            return bad("lambda_grid values must be distinct");
        }
        if self.n_trajectories < 2 || self.eval_episodes < 1 || self.train_pool_size < 1 {
            return bad("need n_trajectories >= 2, eval_episodes >= 1, train_pool_size >= 1");
        }
        if self.horizon < self.world_model.window_len + 1 {
            return bad("horizon must exceed the world-model window length");
        }
        if self.selection.eval_episodes < 1 {
            return bad("selection.eval_episodes must be >= 1");
        }
        if self.band_edges.len() < 2 || self.band_edges.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("band_edges must have at least two strictly increasing values");
        }
        if self.env.n_buckets > SurfaceGrid::preset(self.grid).n_t() {
            return bad("env.n_buckets exceeds the number of maturities");
        }
        if !(self.gfi.scale > 0.0) {
            return bad("gfi.scale must be > 0");
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let text = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Stage seed: the first eight bytes of `SHA-256(master ‖ stage ‖ index)`.
pub fn derive_seed(master: u64, stage: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(stage.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
}
