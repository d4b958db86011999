//! Law-consistent synthetic surface trajectories and the shock transform.
//!
//! A latent mean-reverting variance drives a parametric surface (term
//! structure from the expected integrated variance, plus a quadratic smile).
//! Every raw surface is projected onto the law manifold before it is stored,
//! so each stored surface is feasible by construction.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SurfaceGrid, TotalVarianceSurface};
use crate::manifold::LawManifold;

/// Floor applied to the latent variance after every step.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    pub v0: f64,
    pub kappa: f64,
    pub theta_bar: f64,
    pub xi: f64,
    pub smile_a: f64,
    pub smile_b: f64,
    pub dt: f64,
    /// Each of `v0, kappa, theta_bar, xi, smile_a, smile_b` is scaled by an
    /// independent factor uniform in `[1 − jitter, 1 + jitter]` per trajectory.
    pub param_jitter: f64,
    pub seed: u64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            v0: 0.04,
            kappa: 2.0,
            theta_bar: 0.04,
            xi: 0.3,
            smile_a: 0.5,
            smile_b: -0.1,
            dt: 1.0 / 252.0,
            param_jitter: 0.2,
            seed: 0,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("v0", self.v0),
            ("kappa", self.kappa),
            ("theta_bar", self.theta_bar),
            ("xi", self.xi),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            // xi = 0 is admitted: it switches the noise off.
            let ok = if name == "xi" { v >= 0.0 } else { v > 0.0 };
            if !ok || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.param_jitter) {
            return Err(Error::InvalidParameter(format!(
                "param_jitter must lie in [0, 1), got {}",
                self.param_jitter
            )));
        }
        if !self.smile_a.is_finite() || !self.smile_b.is_finite() {
            return Err(Error::InvalidParameter("smile coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    fn jittered(&self, rng: &mut ChaCha8Rng) -> Self {
        let j = self.param_jitter;
        let mut f = || {
            if j == 0.0 {
                1.0
            } else {
                1.0 + rng.random_range(-j..=j)
            }
        };
        Self {
            v0: self.v0 * f(),
            kappa: self.kappa * f(),
            theta_bar: self.theta_bar * f(),
            xi: self.xi * f(),
            smile_a: self.smile_a * f(),
            smile_b: self.smile_b * f(),
            ..self.clone()
        }
    }

    /// Raw (pre-projection) surface for latent variance `v`, floored at `w_min`.
    ///
    /// The level is the expected integrated variance of the mean-reverting
    /// latent process over `[0, T]`.
    pub fn raw_surface(&self, grid: &SurfaceGrid, v: f64, w_min: f64) -> Vec<f64> {
        let mut w = vec![0.0; grid.d()];
        for (j, &t) in grid.maturities().iter().enumerate() {
            let kt = self.kappa * t;
            let level = (self.theta_bar + (v - self.theta_bar) * (1.0 - (-kt).exp()) / kt) * t;
            let sqrt_t = t.sqrt();
            for (i, &k) in grid.log_moneyness().iter().enumerate() {
                let raw = level + self.smile_a * k * k * sqrt_t + self.smile_b * k * t;
                w[grid.index(i, j)] = raw.max(w_min);
            }
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Baseline,
    Shock,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Baseline => "baseline",
            Regime::Shock => "shock",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShockSpec {
    pub alpha_long: f64,
    pub alpha_spot: f64,
    /// Overrides the default intensity `‖(alpha_long − 1, alpha_spot − 1)‖₂`.
    pub intensity: Option<f64>,
}

impl Default for ShockSpec {
    fn default() -> Self {
        Self {
            alpha_long: 4.0,
            alpha_spot: 2.0,
            intensity: None,
        }
    }
}

impl ShockSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_long >= 1.0 && self.alpha_spot >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "shock multipliers must be >= 1, got long={} spot={}",
                self.alpha_long, self.alpha_spot
            )));
        }
        if let Some(i) = self.intensity {
            if !(i > 0.0 && i.is_finite()) {
                return Err(Error::InvalidParameter(format!("shock intensity must be > 0, got {i}")));
            }
        }
        Ok(())
    }

    /// Per-maturity multiplier, linear in maturity from `alpha_spot` at the
    /// shortest to `alpha_long` at the longest.
    pub fn multipliers(&self, grid: &SurfaceGrid) -> Vec<f64> {
        let ts = grid.maturities();
        let (t1, tn) = (ts[0], ts[ts.len() - 1]);
        ts.iter()
            .map(|&t| {
                if tn == t1 {
                    self.alpha_spot
                } else {
                    self.alpha_spot + (self.alpha_long - self.alpha_spot) * (t - t1) / (tn - t1)
                }
            })
            .collect()
    }

    /// Multiplies every surface value by its maturity's multiplier. No projection.
    pub fn scale_surface(&self, w: &TotalVarianceSurface) -> TotalVarianceSurface {
        let grid = w.grid();
        let alpha = self.multipliers(grid);
        let values = w
            .values()
            .iter()
            .enumerate()
            .map(|(idx, &x)| x * alpha[grid.coords(idx).1])
            .collect();
        TotalVarianceSurface::new(grid.clone(), values).expect("scaling preserves shape and finiteness")
    }
}

pub fn shock_intensity(spec: &ShockSpec) -> f64 {
    spec.intensity
        .unwrap_or_else(|| (spec.alpha_long - 1.0).hypot(spec.alpha_spot - 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub surfaces: Vec<TotalVarianceSurface>,
    /// Exact law penalty of each surface before projection.
    pub raw_penalties: Vec<f64>,
    pub regime: Regime,
    pub params: GeneratorParams,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.surfaces.len() - 1
    }

    pub fn grid(&self) -> &Arc<SurfaceGrid> {
        self.surfaces[0].grid()
    }
}

fn project_step(m: &LawManifold, raw: &TotalVarianceSurface, step: usize) -> Result<(TotalVarianceSurface, f64)> {
    let p = m.project(raw)?;
    if !p.converged {
        return Err(Error::ProjectionFailure {
            step,
            reason: format!(
                "no convergence after {} iterations (kkt residual {:e})",
                p.iterations, p.kkt_residual
            ),
        });
    }
    Ok((p.projected, p.penalty))
}

/// Simulates `horizon` steps, returning `horizon + 1` projected surfaces.
pub fn generate(
    params: &GeneratorParams,
    grid: &Arc<SurfaceGrid>,
    m: &LawManifold,
    horizon: usize,
) -> Result<Trajectory> {
    params.validate()?;
    if horizon < 1 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    if m.grid().as_ref() != grid.as_ref() {
        return Err(Error::GridMismatch {
            expected: m.grid().d(),
            actual: grid.d(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let p = params.jittered(&mut rng);
    let mut v = p.v0;
    let mut surfaces = Vec::with_capacity(horizon + 1);
    let mut raw_penalties = Vec::with_capacity(horizon + 1);
    for step in 0..=horizon {
        if step > 0 {
            let eps: f64 = rng.sample(StandardNormal);
            v += p.kappa * (p.theta_bar - v) * p.dt + p.xi * (v.max(0.0) * p.dt).sqrt() * eps;
            v = v.max(VARIANCE_FLOOR);
        }
        let raw = TotalVarianceSurface::new(grid.clone(), p.raw_surface(grid, v, m.w_min()))?;
        let (w, pen) = project_step(m, &raw, step)?;
        surfaces.push(w);
        raw_penalties.push(pen);
    }
    Ok(Trajectory {
        surfaces,
        raw_penalties,
        regime: Regime::Baseline,
        params: params.clone(),
    })
}

/// One trajectory per seed, generated in parallel and returned in seed order.
pub fn generate_many(
    params: &GeneratorParams,
    grid: &Arc<SurfaceGrid>,
    m: &LawManifold,
    horizon: usize,
    seeds: &[u64],
) -> Result<Vec<Trajectory>> {
    seeds
        .par_iter()
        .map(|&s| generate(&params.with_seed(s), grid, m, horizon))
        .collect()
}

/// Shocked copy of a baseline trajectory; every scaled surface is re-projected.
pub fn apply_shock(traj: &Trajectory, spec: &ShockSpec, m: &LawManifold) -> Result<Trajectory> {
    spec.validate()?;
    if traj.regime != Regime::Baseline {
        return Err(Error::InvalidParameter("shock applies to baseline trajectories only".into()));
    }
    let mut surfaces = Vec::with_capacity(traj.surfaces.len());
    let mut raw_penalties = Vec::with_capacity(traj.surfaces.len());
    for (step, w) in traj.surfaces.iter().enumerate() {
        let (p, pen) = project_step(m, &spec.scale_surface(w), step)?;
        surfaces.push(p);
        raw_penalties.push(pen);
    }
    Ok(Trajectory {
        surfaces,
        raw_penalties,
        regime: Regime::Shock,
        params: traj.params.clone(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryMeta {
    params: GeneratorParams,
    seed: u64,
    regime: Regime,
    horizon: usize,
    raw_penalties: Vec<f64>,
}

pub fn step_file_name(t: usize) -> String {
    format!("step_{t:05}.csv")
}

impl Trajectory {
    /// Writes `step_{t:05}.csv` for every surface plus `meta.json`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (t, w) in self.surfaces.iter().enumerate() {
            w.save_csv(&dir.join(step_file_name(t)))?;
        }
        let meta = TrajectoryMeta {
            params: self.params.clone(),
            seed: self.params.seed,
            regime: self.regime,
            horizon: self.horizon(),
            raw_penalties: self.raw_penalties.clone(),
        };
        let path = dir.join("meta.json");
        let text = serde_json::to_string_pretty(&meta)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load_dir(dir: &Path, grid: &Arc<SurfaceGrid>) -> Result<Self> {
        let path = dir.join("meta.json");
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: TrajectoryMeta = serde_json::from_str(&text)?;
        if meta.raw_penalties.len() != meta.horizon + 1 {
            return Err(Error::Malformed {
                path,
                reason: "raw_penalties length differs from horizon + 1".into(),
            });
        }
        let surfaces = (0..=meta.horizon)
            .map(|t| {
                let p = dir.join(step_file_name(t));
                if !p.exists() {
                    return Err(Error::MissingArtifact(p));
                }
                TotalVarianceSurface::load_csv(&p, grid.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            surfaces,
            raw_penalties: meta.raw_penalties,
            regime: meta.regime,
            params: meta.params,
        })
    }
}
