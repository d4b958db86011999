//! Law-manifold testbed for total-variance surfaces.
//!
//! The crate covers the full pipeline: a polyhedral no-arbitrage manifold with
//! exact projection and penalties, a law-consistent synthetic generator with a
//! shock regime, learned one-step world models, a hedging MDP whose rewards
//! split into on-manifold and ghost components, structural baselines and PPO
//! agents, and the metric suite (tail risk, graceful-failure index, Pareto
//! frontiers) used to compare them.

pub mod agents;
pub mod env;
pub mod error;
pub mod frontier;
pub mod generator;
pub mod grid;
pub mod manifold;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod world_model;

pub use error::{Error, Result};
pub use grid::{
    total_variance_to_vol, vol_to_total_variance, GridPreset, ImpliedVolSurface, SurfaceGrid,
    TotalVarianceSurface,
};
pub use generator::{apply_shock, generate, shock_intensity, GeneratorParams, Regime, ShockSpec, Trajectory};
pub use manifold::{law_coverage, LawManifold, ProjectionResult};
pub use world_model::{diagnose, Architecture, GhostDiagnostics, WorldModel, WorldModelConfig};
