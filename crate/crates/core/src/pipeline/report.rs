//! Markdown rendering of a finished run.

use std::fmt::Write;

use crate::frontier::{dominators, FrontierPoint, SweepTable};
use crate::metrics::{GfiReport, MetricsReport};
use crate::world_model::GhostDiagnostics;

use super::{VOL_TREND, ZERO_HEDGE};

fn num(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else if x.abs() >= 1e-3 && x.abs() < 1e4 {
        format!("{x:.4}")
    } else {
        format!("{x:.3e}")
    }
}

fn metrics_table(out: &mut String, reports: &[MetricsReport], gfi: &[GfiReport]) {
    let taus: Vec<f64> = reports.first().map_or(vec![], |r| r.coverage.iter().map(|c| c.0).collect());
    let mut header = String::from("| Policy | Mean PnL | Std PnL | Sharpe | Mean Law Pen | Max Law Pen | Law-Adj Ret | GFI |");
    for t in &taus {
        let _ = write!(header, " Cov@{t} |");
    }
    header.push_str(" VaR5 | CVaR5 |");
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "|{}", "---|".repeat(10 + taus.len()));
    for r in reports {
        let g = gfi.iter().find(|g| g.policy_id == r.policy_id).map_or("".into(), |g| num(g.gfi));
        let mut row = format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            r.policy_id,
            num(r.mean_pnl),
            num(r.std_pnl),
            num(r.sharpe),
            num(r.mean_law_pen),
            num(r.max_law_pen),
            num(r.law_adj_return),
            g
        );
        for c in &r.coverage {
            let _ = write!(row, " {} |", num(c.1));
        }
        let _ = write!(row, " {} | {} |", num(r.var5), num(r.cvar5));
        let _ = writeln!(out, "{row}");
    }
}

pub fn render_markdown(
    base: &[MetricsReport],
    shock: &[MetricsReport],
    gfi: &[GfiReport],
    points: &[FrontierPoint],
    sweep: Option<&SweepTable>,
    diag: &GhostDiagnostics,
) -> String {
    let mut out = String::from("# Experiment report\n\n");
    let kind = base.first().map_or("exact".into(), |r| format!("{:?}", r.penalty_kind).to_lowercase());
    let _ = writeln!(out, "Law metrics use {kind} penalties. GFI reference: {ZERO_HEDGE}.\n");

    out.push_str("## World-model ghost channel\n\n");
    let _ = writeln!(
        out,
        "- one-step mean predicted penalty: {}\n- one-step max predicted penalty: {}\n- persistence MSE: {}\n- mean squared residual: {}",
        num(diag.mean_pred_penalty),
        num(diag.max_pred_penalty),
        num(diag.persistence_mse),
        num(diag.mean_residual_sq)
    );
    for (d, f) in &diag.frac_offmanifold {
        let _ = writeln!(out, "- fraction of predictions with penalty > {d}: {}", num(*f));
    }
    out.push('\n');

    for (title, reports) in [("Baseline regime", base), ("Shock regime", shock)] {
        let _ = writeln!(out, "## {title}\n");
        metrics_table(&mut out, reports, gfi);
        out.push('\n');
    }

    out.push_str("## Ghost component of step PnL\n\n| Policy | Baseline | Shock |\n|---|---|---|\n");
    for b in base {
        let s = shock.iter().find(|s| s.policy_id == b.policy_id).map_or(f64::NAN, |s| s.mean_ghost);
        let _ = writeln!(out, "| {} | {} | {} |", b.policy_id, num(b.mean_ghost), num(s));
    }
    out.push('\n');

    out.push_str("## Pareto frontier (baseline regime)\n\n| Policy | λ | Mean Law Pen | GFI | Mean PnL | VaR5 | CVaR5 | On frontier | Dominated by baselines |\n|---|---|---|---|---|---|---|---|---|\n");
    let baselines: Vec<FrontierPoint> = points
        .iter()
        .filter(|p| p.policy_id == ZERO_HEDGE || p.policy_id == VOL_TREND)
        .cloned()
        .collect();
    for p in points {
        let c = &p.coords;
        let by = dominators(&baselines, c).join(", ");
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            p.policy_id,
            p.lambda.map_or("".into(), |l| l.to_string()),
            num(c.mean_law_pen),
            num(c.gfi),
            num(c.mean_pnl),
            num(c.var5),
            num(c.cvar5),
            !p.dominated,
            by
        );
    }
    out.push('\n');

    if let Some(sw) = sweep {
        out.push_str("## Law-strength sweep\n\n| λ | Mean Law Pen | GFI | Mean PnL | Sharpe | VaR5 | CVaR5 |\n|---|---|---|---|---|---|---|\n");
        for r in &sw.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} |",
                r.lambda,
                num(r.mean_law_pen),
                num(r.gfi),
                num(r.mean_pnl),
                num(r.sharpe),
                num(r.var5),
                num(r.cvar5)
            );
        }
        if sw.violations.is_empty() {
            out.push_str("\nNo monotonicity violations.\n");
        } else {
            out.push_str("\nMonotonicity violations:\n\n");
            for v in &sw.violations {
                let _ = writeln!(out, "- {:?} rose from λ={} to λ={}", v.metric, v.lambda_lo, v.lambda_hi);
            }
        }
    }
    out
}
