//! End-to-end experiment: dataset → world model → agents → evaluation under
//! both regimes → GFI, frontier and bands → reports.
//!
//! Every stage reads its inputs from the run directory and records its
//! outputs in the manifest, so stages can run one at a time (the CLI) or in
//! sequence with resume ([`run_pipeline`]).

pub mod config;
pub mod manifest;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{derive_seed, ExperimentConfig};
pub use manifest::Manifest;
pub use report::render_markdown;

use crate::agents::{
    baselines, ppo_train, select_checkpoint, CheckpointScore, MarketEnv, Policy, PpoCheckpoint, Selection,
};
use crate::env::{run_episode, simulate_paths, EnvConfig, EpisodeRecord, PredictedPath};
use crate::error::{Error, Result};
use crate::frontier::{
    lambda_sweep_table, pareto_frontier, penalty_bands, write_frontier_csv, Coords, FrontierPoint, SweepTable,
};
use crate::generator::{apply_shock, generate, generate_many, shock_intensity, Regime, Trajectory};
use crate::grid::{SurfaceGrid, TotalVarianceSurface};
use crate::manifold::LawManifold;
use crate::metrics::{
    compute_gfi, compute_metrics, decade_edges, histogram, write_metrics_csv, write_scatter_csv, GfiReport, MetricsReport,
};
use crate::world_model::{diagnose, train, GhostDiagnostics, WorldModel};

pub const STAGES: [&str; 6] = ["dataset", "world_model", "agents", "evaluate", "frontier", "report"];

pub const ZERO_HEDGE: &str = "zero_hedge";
pub const VOL_TREND: &str = "vol_trend";

/// PPO training regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `λ = 0`.
    Naive,
    /// `λ > 0` in the reward.
    Soft,
    /// Naive training, checkpoint chosen by law score.
    Selection,
}

pub fn ppo_id(variant: Variant, lambda: f64) -> String {
    match variant {
        Variant::Naive => "ppo_naive".into(),
        Variant::Soft => format!("ppo_soft_l{lambda}"),
        Variant::Selection => "ppo_selection".into(),
    }
}

/// A named policy together with the `λ` its rewards were shaped with.
#[derive(Debug, Clone)]
pub struct NamedPolicy {
    pub id: String,
    pub lambda: Option<f64>,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub policy_id: String,
    pub lambda: f64,
    pub seed: u64,
    pub diverged_at: Option<usize>,
    pub final_update: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub selection: Selection,
    pub selected_update: usize,
    pub reference_pnl: f64,
}

/// Frontier-stage outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierSummary {
    pub gfi: Vec<GfiReport>,
    pub points: Vec<FrontierPoint>,
    pub sweep: Option<SweepTable>,
}

type Window = Vec<TotalVarianceSurface>;

pub struct Run {
    dir: PathBuf,
    cfg: ExperimentConfig,
    manifest: Manifest,
    grid: Arc<SurfaceGrid>,
    manifold: LawManifold,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

impl Run {
    /// Opens (or creates) a run directory for `cfg`. An existing manifest must
    /// carry the same config hash.
    pub fn open(cfg: ExperimentConfig, dir: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let hash = cfg.hash();
        let manifest = match Manifest::load(&dir)? {
            Some(m) if m.config_hash != hash => {
                return Err(Error::InvalidParameter(format!(
                    "run directory {} holds a run with a different configuration",
                    dir.display()
                )))
            }
            Some(m) => m,
            None => Manifest::new(hash, cfg.master_seed),
        };
        let cfg_path = dir.join("config.toml");
        fs::write(&cfg_path, cfg.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
        let grid = cfg.grid();
        let manifold = LawManifold::with_default_box(grid.clone())?;
        Ok(Self {
            dir,
            cfg,
            manifest,
            grid,
            manifold,
        })
    }

    /// Opens an existing run from its stored `config.toml`.
    pub fn resume(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let cfg = ExperimentConfig::load(&dir.join("config.toml"))?;
        Self::open(cfg, dir)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn manifold(&self) -> &LawManifold {
        &self.manifold
    }

    fn seed(&self, stage: &str, index: u64) -> u64 {
        derive_seed(self.cfg.master_seed, stage, index)
    }

    /// Runs `name` unless it already completed with intact artifacts.
    /// Returns whether the stage ran.
    pub fn run_stage(&mut self, name: &str) -> Result<bool> {
        if self.manifest.verified(&self.dir, name) {
            return Ok(false);
        }
        self.manifest.invalidate_from(name);
        self.manifest.save(&self.dir)?;
        let files = match name {
            "dataset" => self.stage_dataset()?,
            "world_model" => self.stage_world_model()?,
            "agents" => self.stage_agents()?,
            "evaluate" => self.stage_evaluate()?,
            "frontier" => self.stage_frontier()?,
            "report" => self.stage_report()?,
            other => return Err(Error::InvalidParameter(format!("unknown stage {other}"))),
        };
        self.manifest.complete(&self.dir, name, self.seed(name, 0), &files)?;
        self.manifest.save(&self.dir)?;
        Ok(true)
    }

    // ---- dataset -------------------------------------------------------

    fn trajectory_dir(&self, i: usize) -> PathBuf {
        self.dir.join("dataset").join(format!("traj_{i:05}"))
    }

    pub fn stage_dataset(&mut self) -> Result<Vec<String>> {
        let seeds: Vec<u64> = (0..self.cfg.n_trajectories as u64).map(|i| self.seed("dataset", i)).collect();
        let data = generate_many(&self.cfg.generator, &self.grid, &self.manifold, self.cfg.horizon, &seeds)?;
        let root = self.dir.join("dataset");
        if root.exists() {
            fs::remove_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        }
        data.par_iter()
            .enumerate()
            .try_for_each(|(i, t)| t.save_dir(&self.trajectory_dir(i)))?;
        Ok(vec!["dataset".into()])
    }

    pub fn load_dataset(&self) -> Result<Vec<Trajectory>> {
        (0..self.cfg.n_trajectories)
            .into_par_iter()
            .map(|i| Trajectory::load_dir(&self.trajectory_dir(i), &self.grid))
            .collect()
    }

    // ---- world model ---------------------------------------------------

    fn model_path(&self) -> PathBuf {
        self.dir.join("world_model").join("model.json")
    }

    pub fn stage_world_model(&mut self) -> Result<Vec<String>> {
        let data = self.load_dataset()?;
        let wcfg = crate::world_model::WorldModelConfig {
            seed: self.seed("world_model", 0),
            ..self.cfg.world_model.clone()
        };
        let model = train(&data, &wcfg)?;
        model.save_json(&self.model_path())?;
        let diag = diagnose(&model, &data, &self.manifold, &self.cfg.diagnostic_deltas)?;
        write_json(&self.dir.join("world_model").join("diagnostics.json"), &diag)?;
        Ok(vec!["world_model/model.json".into(), "world_model/diagnostics.json".into()])
    }

    pub fn load_model(&self) -> Result<WorldModel> {
        WorldModel::load_json(&self.model_path())
    }

    pub fn load_diagnostics(&self) -> Result<GhostDiagnostics> {
        read_json(&self.dir.join("world_model").join("diagnostics.json"))
    }

    // ---- windows and paths ---------------------------------------------

    /// Training windows drawn uniformly from the dataset.
    fn pool_windows(&self, data: &[Trajectory], l: usize) -> Vec<Window> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed("pool", 0));
        (0..self.cfg.train_pool_size)
            .map(|_| {
                let t = &data[rng.random_range(0..data.len())];
                let start = rng.random_range(0..=t.surfaces.len() - l);
                t.surfaces[start..start + l].to_vec()
            })
            .collect()
    }

    /// Fresh generator windows after a burn-in, with their shocked counterparts.
    pub fn fresh_windows(&self, stage: &str, n: usize, l: usize) -> Result<(Vec<Window>, Vec<Window>)> {
        let horizon = self.cfg.eval_burn_in + l - 1;
        let pairs: Vec<(Window, Window)> = (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let params = self.cfg.generator.with_seed(self.seed(stage, i));
                let base = generate(&params, &self.grid, &self.manifold, horizon.max(1))?;
                let shock = apply_shock(&base, &self.cfg.shock, &self.manifold)?;
                let tail = |t: &Trajectory| t.surfaces[t.surfaces.len() - l..].to_vec();
                Ok((tail(&base), tail(&shock)))
            })
            .collect::<Result<_>>()?;
        Ok(pairs.into_iter().unzip())
    }

    fn env_for(&self, lambda: f64) -> EnvConfig {
        self.cfg.env.with_lambda(lambda)
    }

    pub fn evaluation_paths(&self, model: &WorldModel, stage: &str, n: usize) -> Result<[Vec<PredictedPath>; 2]> {
        let (base, shock) = self.fresh_windows(stage, n, model.window_len())?;
        let env = self.env_for(0.0);
        Ok([
            simulate_paths(model, &self.manifold, &env, &base, Regime::Baseline)?,
            simulate_paths(model, &self.manifold, &env, &shock, Regime::Shock)?,
        ])
    }

    // ---- agents --------------------------------------------------------

    fn agent_dir(&self, id: &str) -> PathBuf {
        self.dir.join("agents").join(id)
    }

    fn training_pool(&self, model: &WorldModel) -> Result<Arc<Vec<PredictedPath>>> {
        let data = self.load_dataset()?;
        let windows = self.pool_windows(&data, model.window_len());
        Ok(Arc::new(simulate_paths(
            model,
            &self.manifold,
            &self.env_for(0.0),
            &windows,
            Regime::Baseline,
        )?))
    }

    fn train_with_pool(&self, pool: &Arc<Vec<PredictedPath>>, variant: Variant, lambda: f64) -> Result<TrainingSummary> {
        let id = ppo_id(variant, lambda);
        let seed = derive_seed(self.cfg.master_seed, &format!("agents/{id}"), 0);
        let pcfg = crate::agents::PpoConfig {
            seed,
            ..self.cfg.ppo.clone()
        };
        let mut env = MarketEnv::new(pool.clone(), self.env_for(lambda))?;
        let out = ppo_train(&mut env, &pcfg, lambda)?;
        let dir = self.agent_dir(&id);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        for ck in &out.checkpoints {
            ck.save_json(&dir.join(format!("checkpoint_{:05}.json", ck.update)))?;
        }
        let final_update = out.checkpoints.last().map_or(0, |c| c.update);
        let final_ck = PpoCheckpoint {
            schema_version: crate::agents::ppo::PPO_CHECKPOINT_SCHEMA_VERSION,
            config_hash: pcfg.hash(lambda),
            update: final_update,
            lambda_law: lambda,
            policy: out.policy.clone(),
        };
        final_ck.save_json(&dir.join("policy.json"))?;
        let mut wtr = csv::Writer::from_writer(create_file(&dir.join("curve.csv"))?);
        wtr.write_record(["update", "mean_reward"])?;
        for (u, r) in out.curve.iter().enumerate() {
            wtr.write_record([(u + 1).to_string(), r.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io(dir.join("curve.csv"), e))?;
        let summary = TrainingSummary {
            policy_id: id,
            lambda,
            seed,
            diverged_at: out.diverged_at,
            final_update,
        };
        write_json(&dir.join("training.json"), &summary)?;
        Ok(summary)
    }

    /// Trains one variant. Selection needs the naive agent's checkpoints.
    pub fn train_agent(&self, variant: Variant, lambda: f64) -> Result<()> {
        let model = self.load_model()?;
        match variant {
            Variant::Selection => self.select(&model).map(|_| ()),
            _ => {
                let lambda = if variant == Variant::Naive { 0.0 } else { lambda };
                let pool = self.training_pool(&model)?;
                self.train_with_pool(&pool, variant, lambda).map(|_| ())
            }
        }
    }

    fn trained_variants(&self) -> Vec<(Variant, f64)> {
        self.cfg
            .lambda_grid
            .iter()
            .map(|&l| (if l == 0.0 { Variant::Naive } else { Variant::Soft }, l))
            .collect()
    }

    pub fn stage_agents(&mut self) -> Result<Vec<String>> {
        let model = self.load_model()?;
        let pool = self.training_pool(&model)?;
        let variants = self.trained_variants();
        variants
            .par_iter()
            .map(|&(v, l)| self.train_with_pool(&pool, v, l))
            .collect::<Result<Vec<_>>>()?;
        let mut files: Vec<String> = variants.iter().map(|&(v, l)| format!("agents/{}", ppo_id(v, l))).collect();
        if self.cfg.selection_only {
            self.select(&model)?;
            files.push(format!("agents/{}", ppo_id(Variant::Selection, 0.0)));
        }
        Ok(files)
    }

    fn episodes(&self, paths: &[PredictedPath], policy: &Policy, lambda: f64, stage: &str) -> Result<Vec<EpisodeRecord>> {
        let env = self.env_for(lambda);
        paths
            .iter()
            .enumerate()
            .map(|(i, p)| run_episode(&env, p, policy, self.seed(stage, i as u64)))
            .collect()
    }

    /// Mean PnL, mean penalty and GFI of `policy` against Zero-Hedge on the given paths.
    fn law_score(&self, paths: &[Vec<PredictedPath>; 2], policy: &Policy, reference: &[MetricsReport; 2]) -> Result<CheckpointScore> {
        let reports = self.regime_metrics("candidate", paths, policy, 0.0, "selection_episode")?;
        let g = compute_gfi(
            &reports[0],
            &reports[1],
            &reference[0],
            &reference[1],
            shock_intensity(&self.cfg.shock),
            &self.cfg.gfi,
        )?;
        Ok(CheckpointScore {
            mean_pnl: reports[0].mean_pnl,
            mean_law_pen: reports[0].mean_law_pen,
            gfi: g.gfi,
        })
    }

    fn regime_metrics(
        &self,
        id: &str,
        paths: &[Vec<PredictedPath>; 2],
        policy: &Policy,
        lambda: f64,
        stage: &str,
    ) -> Result<[MetricsReport; 2]> {
        let mut out = Vec::with_capacity(2);
        for (regime, ps) in [Regime::Baseline, Regime::Shock].into_iter().zip(paths) {
            let eps = self.episodes(ps, policy, lambda, stage)?;
            out.push(compute_metrics(id, regime, &eps, &self.cfg.coverage_thresholds, self.cfg.penalty_kind)?);
        }
        Ok(out.try_into().expect("two regimes"))
    }

    fn load_checkpoints(&self, id: &str) -> Result<Vec<PpoCheckpoint>> {
        let dir = self.agent_dir(id);
        if !dir.exists() {
            return Err(Error::MissingArtifact(dir));
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("checkpoint_")))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::NoCheckpoints);
        }
        paths.iter().map(|p| PpoCheckpoint::load_json(p)).collect()
    }

    fn select(&self, model: &WorldModel) -> Result<SelectionSummary> {
        let naive_id = ppo_id(Variant::Naive, 0.0);
        let checkpoints = self.load_checkpoints(&naive_id)?;
        let naive = self.load_policy(&naive_id)?;
        let paths = self.evaluation_paths(model, "selection_windows", self.cfg.selection.eval_episodes)?;
        let zh = crate::agents::zero_hedge(self.cfg.env.n_buckets, self.cfg.env.a_max);
        let reference = self.regime_metrics(ZERO_HEDGE, &paths, &zh, 0.0, "selection_episode")?;
        let naive_reports = self.regime_metrics(&naive_id, &paths, &naive.policy, 0.0, "selection_episode")?;
        let reference_pnl = naive_reports[0].mean_pnl;
        let selection = select_checkpoint(&checkpoints, &self.cfg.selection, reference_pnl, |ck| {
            self.law_score(&paths, &Policy::Ppo(ck.policy.clone()), &reference)
        })?;
        let chosen = &checkpoints[selection.index];
        let dir = self.agent_dir(&ppo_id(Variant::Selection, 0.0));
        chosen.save_json(&dir.join("policy.json"))?;
        let summary = SelectionSummary {
            selected_update: chosen.update,
            selection,
            reference_pnl,
        };
        write_json(&dir.join("selection.json"), &summary)?;
        Ok(summary)
    }

    // ---- evaluation ----------------------------------------------------

    /// Every evaluated policy id, baselines first.
    pub fn policy_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = vec![ZERO_HEDGE.into(), "random_gaussian".into(), VOL_TREND.into()];
        ids.extend(self.trained_variants().iter().map(|&(v, l)| ppo_id(v, l)));
        if self.cfg.selection_only {
            ids.push(ppo_id(Variant::Selection, 0.0));
        }
        ids
    }

    pub fn load_policy(&self, id: &str) -> Result<NamedPolicy> {
        let (d_a, a_max) = (self.cfg.env.n_buckets, self.cfg.env.a_max);
        if let Some((_, p)) = baselines(&self.cfg.baselines, d_a, a_max)?.into_iter().find(|(n, _)| n == id) {
            return Ok(NamedPolicy {
                id: id.into(),
                lambda: None,
                policy: p,
            });
        }
        let ck = PpoCheckpoint::load_json(&self.agent_dir(id).join("policy.json"))?;
        Ok(NamedPolicy {
            id: id.into(),
            lambda: (id != ppo_id(Variant::Selection, 0.0)).then_some(ck.lambda_law),
            policy: Policy::Ppo(ck.policy),
        })
    }

    fn regime_dir(&self, regime: Regime) -> PathBuf {
        self.dir.join("eval").join(regime.to_string())
    }

    /// Evaluates every policy on the regime's evaluation paths. Returns the
    /// written artifacts.
    pub fn evaluate(&self, regime: Regime) -> Result<Vec<String>> {
        let model = self.load_model()?;
        let policies: Vec<NamedPolicy> = self.policy_ids().iter().map(|id| self.load_policy(id)).collect::<Result<_>>()?;
        let (base, shock) = self.fresh_windows("eval_windows", self.cfg.eval_episodes, model.window_len())?;
        let windows = if regime == Regime::Baseline { base } else { shock };
        let paths = simulate_paths(&model, &self.manifold, &self.env_for(0.0), &windows, regime)?;
        let runs: Vec<(String, Vec<EpisodeRecord>)> = policies
            .par_iter()
            .map(|p| Ok((p.id.clone(), self.episodes(&paths, &p.policy, p.lambda.unwrap_or(0.0), "eval_episode")?)))
            .collect::<Result<_>>()?;
        let reports: Vec<MetricsReport> = runs
            .iter()
            .map(|(id, eps)| compute_metrics(id, regime, eps, &self.cfg.coverage_thresholds, self.cfg.penalty_kind))
            .collect::<Result<_>>()?;
        let rdir = self.regime_dir(regime);
        if rdir.exists() {
            fs::remove_dir_all(&rdir).map_err(|e| Error::io(&rdir, e))?;
        }
        write_json(&rdir.join("metrics.json"), &reports)?;
        for ((id, eps), p) in runs.iter().zip(&policies) {
            eps[0].save(&rdir.join("episodes"), &format!("{id}_ep000"), &self.env_for(p.lambda.unwrap_or(0.0)))?;
        }
        let scatter = format!("diag/scatter_{regime}.csv");
        write_scatter_csv(create_file(&self.dir.join(&scatter))?, &runs, self.cfg.penalty_kind)?;
        Ok(vec![format!("eval/{regime}"), scatter])
    }

    pub fn stage_evaluate(&mut self) -> Result<Vec<String>> {
        let mut files = self.evaluate(Regime::Baseline)?;
        files.extend(self.evaluate(Regime::Shock)?);
        Ok(files)
    }

    pub fn load_metrics(&self, regime: Regime) -> Result<Vec<MetricsReport>> {
        read_json(&self.regime_dir(regime).join("metrics.json"))
    }

    // ---- frontier and report -------------------------------------------

    pub fn stage_frontier(&mut self) -> Result<Vec<String>> {
        self.frontier()?;
        Ok(["metrics.csv", "gfi.json", "frontier.csv", "frontier.json", "bands.json", "bands.csv", "sweep.json"]
            .iter()
            .map(|f| format!("reports/{f}"))
            .collect())
    }

    /// GFI, Pareto frontier, bands and the λ sweep from the stored metrics.
    pub fn frontier(&self) -> Result<FrontierSummary> {
        let base = self.load_metrics(Regime::Baseline)?;
        let shock = self.load_metrics(Regime::Shock)?;
        let find = |rs: &[MetricsReport], id: &str| -> Result<MetricsReport> {
            rs.iter()
                .find(|r| r.policy_id == id)
                .cloned()
                .ok_or_else(|| Error::InvalidParameter(format!("no metrics for policy {id}")))
        };
        let (ref_b, ref_s) = (find(&base, ZERO_HEDGE)?, find(&shock, ZERO_HEDGE)?);
        let intensity = shock_intensity(&self.cfg.shock);
        let gfi: Vec<GfiReport> = base
            .iter()
            .map(|b| compute_gfi(b, &find(&shock, &b.policy_id)?, &ref_b, &ref_s, intensity, &self.cfg.gfi))
            .collect::<Result<_>>()?;
        let rdir = self.dir.join("reports");
        let mut all = base.clone();
        all.extend(shock.iter().cloned());
        write_metrics_csv(create_file(&rdir.join("metrics.csv"))?, &all, &gfi)?;
        write_json(&rdir.join("gfi.json"), &gfi)?;

        let lambda_of = |id: &str| self.load_policy(id).map(|p| p.lambda);
        let points: Vec<FrontierPoint> = base
            .iter()
            .zip(&gfi)
            .map(|(r, g)| Ok(FrontierPoint::new(&r.policy_id, lambda_of(&r.policy_id)?, Coords::from_report(r, g.gfi))))
            .collect::<Result<_>>()?;
        let points = pareto_frontier(&points)?;
        write_frontier_csv(create_file(&rdir.join("frontier.csv"))?, &points)?;
        write_json(&rdir.join("frontier.json"), &points)?;

        let entries: Vec<(&MetricsReport, f64)> = base.iter().zip(gfi.iter().map(|g| g.gfi)).collect();
        let bands = penalty_bands(&entries, &self.cfg.band_edges)?;
        write_json(&rdir.join("bands.json"), &bands)?;
        let mut wtr = csv::Writer::from_writer(create_file(&rdir.join("bands.csv"))?);
        wtr.write_record(["band_lo", "band_hi", "policy", "mean_law_pen", "sharpe", "gfi", "var5", "cvar5"])?;
        for b in &bands {
            for r in &b.rows {
                wtr.write_record([
                    b.lo.to_string(),
                    b.hi.to_string(),
                    r.policy_id.clone(),
                    r.mean_law_pen.to_string(),
                    r.sharpe.to_string(),
                    r.gfi.to_string(),
                    r.var5.to_string(),
                    r.cvar5.to_string(),
                ])?;
            }
        }
        wtr.flush().map_err(|e| Error::io(rdir.join("bands.csv"), e))?;

        let sweep_rows: Vec<(f64, &MetricsReport, f64)> = self
            .trained_variants()
            .iter()
            .map(|&(v, l)| {
                let id = ppo_id(v, l);
                let i = base.iter().position(|r| r.policy_id == id).expect("trained policy evaluated");
                (l, &base[i], gfi[i].gfi)
            })
            .collect();
        let sweep = if sweep_rows.len() >= 2 {
            Some(lambda_sweep_table(&sweep_rows)?)
        } else {
            None
        };
        write_json(&rdir.join("sweep.json"), &sweep)?;
        Ok(FrontierSummary { gfi, points, sweep })
    }

    pub fn stage_report(&mut self) -> Result<Vec<String>> {
        let base = self.load_metrics(Regime::Baseline)?;
        let shock = self.load_metrics(Regime::Shock)?;
        let points: Vec<FrontierPoint> = read_json(&self.dir.join("reports").join("frontier.json"))?;
        let gfi: Vec<GfiReport> = read_json(&self.dir.join("reports").join("gfi.json"))?;
        let sweep: Option<SweepTable> = read_json(&self.dir.join("reports").join("sweep.json"))?;
        let diag = self.load_diagnostics()?;
        let text = render_markdown(&base, &shock, &gfi, &points, sweep.as_ref(), &diag);
        let path = self.dir.join("reports").join("report.md");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(vec!["reports/report.md".into()])
    }
}

impl Run {
    /// Per-policy law-penalty histograms (decade bins) from the stored scatter
    /// data of both regimes. Returns the written files.
    pub fn diagnostics(&self) -> Result<Vec<String>> {
        #[derive(Deserialize)]
        struct Point {
            policy: String,
            law_pen: f64,
        }
        let edges = decade_edges(-12, 0);
        let mut files = Vec::new();
        for regime in [Regime::Baseline, Regime::Shock] {
            let src = self.dir.join(format!("diag/scatter_{regime}.csv"));
            if !src.exists() {
                return Err(Error::MissingArtifact(src));
            }
            let mut rdr = csv::Reader::from_path(&src)?;
            let mut by_policy: Vec<(String, Vec<f64>)> = Vec::new();
            for p in rdr.deserialize::<Point>() {
                let p = p?;
                match by_policy.iter_mut().find(|(id, _)| *id == p.policy) {
                    Some((_, v)) => v.push(p.law_pen),
                    None => by_policy.push((p.policy, vec![p.law_pen])),
                }
            }
            let name = format!("diag/penalty_hist_{regime}.csv");
            let out = self.dir.join(&name);
            let mut wtr = csv::Writer::from_writer(create_file(&out)?);
            wtr.write_record(["policy", "bin_lo", "bin_hi", "count"])?;
            for (id, pens) in &by_policy {
                for (k, c) in histogram(pens, &edges)?.into_iter().enumerate() {
                    wtr.write_record([id.clone(), edges[k].to_string(), edges[k + 1].to_string(), c.to_string()])?;
                }
            }
            wtr.flush().map_err(|e| Error::io(&out, e))?;
            files.push(name);
        }
        Ok(files)
    }
}

/// Runs every stage in order inside `cfg.output_dir`, skipping stages that
/// already completed there with intact artifacts.
pub fn run_pipeline(cfg: ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone();
    run_pipeline_in(cfg, dir)
}

pub fn run_pipeline_in(cfg: ExperimentConfig, dir: impl Into<PathBuf>) -> Result<PathBuf> {
    let mut run = Run::open(cfg, dir)?;
    for stage in STAGES {
        run.run_stage(stage)?;
    }
    Ok(run.dir)
}
