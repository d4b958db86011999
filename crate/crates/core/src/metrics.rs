//! Per-policy metric suite: profitability, law alignment, tail risk, and the
//! graceful-failure index.
//!
//! Tail measures are on signed step PnL (negative = loss). VaR₅ is the lower
//! order statistic at rank `⌈0.05 n⌉`; CVaR₅ is the mean of all PnL at or
//! below it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::EpisodeRecord;
use crate::error::{Error, Result};
use crate::generator::Regime;

pub const SHARPE_EPS: f64 = 1e-8;
pub const TAIL_LEVEL: f64 = 0.05;
pub const DEFAULT_COVERAGE_THRESHOLDS: [f64; 2] = [0.003, 0.006];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    Exact,
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy_id: String,
    pub regime: Regime,
    pub mean_pnl: f64,
    pub std_pnl: f64,
    pub sharpe: f64,
    pub mean_law_pen: f64,
    /// Mean over episodes of the per-episode maximum penalty.
    pub max_law_pen: f64,
    pub law_adj_return: f64,
    /// `(threshold, fraction of steps with penalty ≤ threshold)`.
    pub coverage: Vec<(f64, f64)>,
    pub var5: f64,
    pub cvar5: f64,
    /// Mean ghost component of step PnL.
    pub mean_ghost: f64,
    pub n_steps: usize,
    pub penalty_kind: PenaltyKind,
}

/// Two-pass mean; exact on constant samples.
fn mean(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m0 = xs.iter().sum::<f64>() / n;
    m0 + xs.iter().map(|x| x - m0).sum::<f64>() / n
}

/// `(VaR, CVaR)` at level `alpha` on signed values.
pub fn var_cvar(values: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput("tail sample"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((alpha * n as f64).ceil() as usize).clamp(1, n);
    let var = sorted[rank - 1];
    let tail: Vec<f64> = sorted.iter().copied().take_while(|&x| x <= var).collect();
    let cvar = mean(&tail);
    Ok((var, cvar))
}

/// Pooled per-step statistics over `episodes`.
pub fn compute_metrics(
    policy_id: &str,
    regime: Regime,
    episodes: &[EpisodeRecord],
    thresholds: &[f64],
    kind: PenaltyKind,
) -> Result<MetricsReport> {
    if episodes.is_empty() {
        return Err(Error::EmptyInput("episodes"));
    }
    let pen_of = |s: &crate::env::StepRecord| match kind {
        PenaltyKind::Exact => s.law_pen_exact,
        PenaltyKind::Surrogate => s.law_pen,
    };
    let pnl: Vec<f64> = episodes.iter().flat_map(|e| e.steps.iter().map(|s| s.pnl)).collect();
    let pens: Vec<f64> = episodes.iter().flat_map(|e| e.steps.iter().map(pen_of)).collect();
    if pnl.is_empty() {
        return Err(Error::EmptyInput("episode steps"));
    }
    let n = pnl.len() as f64;
    let mean_pnl = mean(&pnl);
    let std_pnl = (pnl.iter().map(|x| (x - mean_pnl).powi(2)).sum::<f64>() / n).sqrt();
    let mean_law_pen = mean(&pens);
    let max_law_pen = episodes
        .iter()
        .map(|e| e.steps.iter().map(pen_of).fold(0.0, f64::max))
        .sum::<f64>()
        / episodes.len() as f64;
    let coverage = thresholds
        .iter()
        .map(|&tau| (tau, pens.iter().filter(|&&p| p <= tau).count() as f64 / n))
        .collect();
    let (var5, cvar5) = var_cvar(&pnl, TAIL_LEVEL)?;
    let mean_ghost = episodes.iter().flat_map(|e| e.steps.iter().map(|s| s.r_ghost)).sum::<f64>() / n;
    Ok(MetricsReport {
        policy_id: policy_id.to_string(),
        regime,
        mean_pnl,
        std_pnl,
        sharpe: mean_pnl / (std_pnl + SHARPE_EPS),
        mean_law_pen,
        max_law_pen,
        law_adj_return: mean_pnl - mean_law_pen,
        coverage,
        var5,
        cvar5,
        mean_ghost,
        n_steps: pnl.len(),
        penalty_kind: kind,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GfiMode {
    /// `[(Δ(π) − Δ(ref)) / I] / scale`; zero for the reference.
    #[default]
    ReferenceSubtracted,
    /// `Δ(π) / (Δ(ref) + ε)`; one for the reference.
    Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GfiConfig {
    pub mode: GfiMode,
    pub scale: f64,
    /// Stabilizer of the ratio form.
    pub eps: f64,
}

impl Default for GfiConfig {
    fn default() -> Self {
        Self {
            mode: GfiMode::ReferenceSubtracted,
            scale: 1.0,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GfiReport {
    pub policy_id: String,
    pub delta_law: f64,
    pub ref_policy_id: String,
    pub gfi: f64,
    pub intensity_used: f64,
}

pub fn compute_gfi(
    base: &MetricsReport,
    shock: &MetricsReport,
    ref_base: &MetricsReport,
    ref_shock: &MetricsReport,
    intensity: f64,
    cfg: &GfiConfig,
) -> Result<GfiReport> {
    let kind = base.penalty_kind;
    if [shock, ref_base, ref_shock].iter().any(|r| r.penalty_kind != kind) {
        return Err(Error::InconsistentPenaltyKind);
    }
    if !(intensity > 0.0 && intensity.is_finite()) || !(cfg.scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "shock intensity and GFI scale must be > 0, got {intensity} and {}",
            cfg.scale
        )));
    }
    let delta = shock.mean_law_pen - base.mean_law_pen;
    let delta_ref = ref_shock.mean_law_pen - ref_base.mean_law_pen;
    let gfi = match cfg.mode {
        GfiMode::ReferenceSubtracted => ((delta - delta_ref) / intensity) / cfg.scale,
        GfiMode::Ratio => delta / (delta_ref + cfg.eps),
    };
    Ok(GfiReport {
        policy_id: base.policy_id.clone(),
        delta_law: delta,
        ref_policy_id: ref_base.policy_id.clone(),
        gfi,
        intensity_used: intensity,
    })
}

fn coverage_header(tau: f64) -> String {
    format!("cov_{tau}")
}

/// One row per report; `gfi` is looked up by policy id (empty when absent).
/// Coverage columns follow the first report's thresholds.
pub fn write_metrics_csv<W: Write>(out: W, reports: &[MetricsReport], gfi: &[GfiReport]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let taus: Vec<f64> = reports
        .first()
        .map(|r| r.coverage.iter().map(|c| c.0).collect())
        .unwrap_or_else(|| DEFAULT_COVERAGE_THRESHOLDS.to_vec());
    let mut header: Vec<String> = [
        "policy",
        "regime",
        "mean_pnl",
        "std_pnl",
        "sharpe",
        "mean_law_pen",
        "max_law_pen",
        "law_adj_ret",
        "gfi",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(taus.iter().map(|&t| coverage_header(t)));
    header.extend(["var5".to_string(), "cvar5".to_string()]);
    wtr.write_record(&header)?;
    for r in reports {
        let g = gfi
            .iter()
            .find(|g| g.policy_id == r.policy_id)
            .map_or(String::new(), |g| g.gfi.to_string());
        let mut row = vec![
            r.policy_id.clone(),
            r.regime.to_string(),
            r.mean_pnl.to_string(),
            r.std_pnl.to_string(),
            r.sharpe.to_string(),
            r.mean_law_pen.to_string(),
            r.max_law_pen.to_string(),
            r.law_adj_return.to_string(),
            g,
        ];
        row.extend(taus.iter().map(|t| {
            r.coverage
                .iter()
                .find(|c| c.0 == *t)
                .map_or(String::new(), |c| c.1.to_string())
        }));
        row.extend([r.var5.to_string(), r.cvar5.to_string()]);
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<metrics csv>", e))
}

/// `policy,t,pnl,law_pen` for every step of every episode, penalties of `kind`.
pub fn write_scatter_csv<W: Write>(out: W, runs: &[(String, Vec<EpisodeRecord>)], kind: PenaltyKind) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["policy", "t", "pnl", "law_pen"])?;
    for (policy, episodes) in runs {
        for e in episodes {
            for (t, s) in e.steps.iter().enumerate() {
                let pen = match kind {
                    PenaltyKind::Exact => s.law_pen_exact,
                    PenaltyKind::Surrogate => s.law_pen,
                };
                wtr.write_record([policy.clone(), t.to_string(), s.pnl.to_string(), pen.to_string()])?;
            }
        }
    }
    wtr.flush().map_err(|e| Error::io("<scatter csv>", e))
}

/// Edges `0, 10^lo, 10^(lo+1), …, 10^hi`; the first bin holds exact zeros and tiny values.
pub fn decade_edges(lo: i32, hi: i32) -> Vec<f64> {
    std::iter::once(0.0).chain((lo..=hi).map(|e| 10f64.powi(e))).collect()
}

/// Counts per half-open bin `[edges[k], edges[k+1])`; values past the last edge land in the last bin.
pub fn histogram(values: &[f64], edges: &[f64]) -> Result<Vec<usize>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("histogram edges must be strictly increasing".into()));
    }
    let mut counts = vec![0; edges.len() - 1];
    for &v in values.iter().filter(|v| **v >= edges[0]) {
        let k = edges.partition_point(|&e| e <= v).min(counts.len());
        counts[k - 1] += 1;
    }
    Ok(counts)
}
