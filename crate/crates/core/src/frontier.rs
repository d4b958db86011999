//! Pareto dominance in the five-coordinate order (penalty ↓, GFI ↓, PnL ↑,
//! VaR ↑, CVaR ↑), penalty banding, and the law-strength sweep table.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coords {
    pub mean_law_pen: f64,
    pub gfi: f64,
    pub mean_pnl: f64,
    pub var5: f64,
    pub cvar5: f64,
}

impl Coords {
    pub fn from_report(r: &MetricsReport, gfi: f64) -> Self {
        Self {
            mean_law_pen: r.mean_law_pen,
            gfi,
            mean_pnl: r.mean_pnl,
            var5: r.var5,
            cvar5: r.cvar5,
        }
    }

    /// All coordinates oriented so that larger is better.
    fn oriented(&self) -> [f64; 5] {
        [-self.mean_law_pen, -self.gfi, self.mean_pnl, self.var5, self.cvar5]
    }

    /// Weakly better everywhere and strictly better somewhere.
    pub fn dominates(&self, other: &Coords) -> bool {
        let (a, b) = (self.oriented(), other.oriented());
        a.iter().zip(&b).all(|(x, y)| x >= y) && a.iter().zip(&b).any(|(x, y)| x > y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub policy_id: String,
    pub lambda: Option<f64>,
    pub coords: Coords,
    pub dominated: bool,
}

impl FrontierPoint {
    pub fn new(policy_id: impl Into<String>, lambda: Option<f64>, coords: Coords) -> Self {
        Self {
            policy_id: policy_id.into(),
            lambda,
            coords,
            dominated: false,
        }
    }
}

/// Marks every point dominated by another. Identical points never dominate each other.
pub fn pareto_frontier(points: &[FrontierPoint]) -> Result<Vec<FrontierPoint>> {
    if points.iter().any(|p| p.coords.oriented().iter().any(|x| !x.is_finite())) {
        return Err(Error::InvalidParameter("frontier coordinates must be finite".into()));
    }
    Ok(points
        .iter()
        .map(|p| FrontierPoint {
            dominated: points.iter().any(|q| q.coords.dominates(&p.coords)),
            ..p.clone()
        })
        .collect())
}

/// Ids of the points that dominate `target`.
pub fn dominators<'a>(points: &'a [FrontierPoint], target: &Coords) -> Vec<&'a str> {
    points
        .iter()
        .filter(|q| q.coords.dominates(target))
        .map(|q| q.policy_id.as_str())
        .collect()
}

/// `policy,lambda,mean_law_pen,gfi,mean_pnl,var5,cvar5,on_frontier`.
pub fn write_frontier_csv<W: Write>(out: W, points: &[FrontierPoint]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["policy", "lambda", "mean_law_pen", "gfi", "mean_pnl", "var5", "cvar5", "on_frontier"])?;
    for p in points {
        let c = &p.coords;
        wtr.write_record([
            p.policy_id.clone(),
            p.lambda.map_or(String::new(), |l| l.to_string()),
            c.mean_law_pen.to_string(),
            c.gfi.to_string(),
            c.mean_pnl.to_string(),
            c.var5.to_string(),
            c.cvar5.to_string(),
            (!p.dominated).to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<frontier csv>", e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Baseline,
    Learned,
}

/// One hand-entered policy row: `policy,family,lambda,mean_pnl,sharpe,mean_law_pen,gfi,var5,cvar5`.
/// `lambda` may be empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRow {
    pub policy: String,
    pub family: Family,
    pub lambda: Option<f64>,
    pub mean_pnl: f64,
    pub sharpe: f64,
    pub mean_law_pen: f64,
    pub gfi: f64,
    pub var5: f64,
    pub cvar5: f64,
}

impl FixtureRow {
    pub fn coords(&self) -> Coords {
        Coords {
            mean_law_pen: self.mean_law_pen,
            gfi: self.gfi,
            mean_pnl: self.mean_pnl,
            var5: self.var5,
            cvar5: self.cvar5,
        }
    }
}

pub fn read_fixture<R: Read>(input: R) -> Result<Vec<FixtureRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(input);
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<FixtureRow>, _>>()?;
    if rows.is_empty() {
        return Err(Error::EmptyInput("fixture rows"));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureBand {
    pub lo: f64,
    pub hi: f64,
    pub baselines: Vec<FixtureRow>,
    pub learned: Vec<FixtureRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureVerdict {
    pub points: Vec<FrontierPoint>,
    pub undominated_baselines: Vec<String>,
    pub undominated_learned: Vec<String>,
    pub band: Option<FixtureBand>,
}

/// Dominance verdicts over fixture rows, plus the rows of each family whose
/// penalty falls in `[band.0, band.1)`.
pub fn fixture_verdict(rows: &[FixtureRow], band: Option<(f64, f64)>) -> Result<FixtureVerdict> {
    let points: Vec<FrontierPoint> = rows
        .iter()
        .map(|r| FrontierPoint::new(&r.policy, r.lambda, r.coords()))
        .collect();
    let points = pareto_frontier(&points)?;
    let undominated = |family: Family| -> Vec<String> {
        rows.iter()
            .zip(&points)
            .filter(|(r, p)| r.family == family && !p.dominated)
            .map(|(r, _)| r.policy.clone())
            .collect()
    };
    let band = match band {
        Some((lo, hi)) if lo < hi => {
            let pick = |family: Family| -> Vec<FixtureRow> {
                rows.iter()
                    .filter(|r| r.family == family && lo <= r.mean_law_pen && r.mean_law_pen < hi)
                    .cloned()
                    .collect()
            };
            Some(FixtureBand {
                lo,
                hi,
                baselines: pick(Family::Baseline),
                learned: pick(Family::Learned),
            })
        }
        Some((lo, hi)) => {
            return Err(Error::InvalidParameter(format!("band [{lo}, {hi}) is empty")));
        }
        None => None,
    };
    Ok(FixtureVerdict {
        undominated_baselines: undominated(Family::Baseline),
        undominated_learned: undominated(Family::Learned),
        points,
        band,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub policy_id: String,
    pub mean_law_pen: f64,
    pub sharpe: f64,
    pub gfi: f64,
    pub var5: f64,
    pub cvar5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
    pub rows: Vec<BandRow>,
}

/// Groups policies into the half-open bands `[edges[k], edges[k+1])` by mean penalty.
pub fn penalty_bands(entries: &[(&MetricsReport, f64)], edges: &[f64]) -> Result<Vec<Band>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter(
            "band edges must have at least two strictly increasing values".into(),
        ));
    }
    Ok(edges
        .windows(2)
        .map(|w| Band {
            lo: w[0],
            hi: w[1],
            rows: entries
                .iter()
                .filter(|(r, _)| w[0] <= r.mean_law_pen && r.mean_law_pen < w[1])
                .map(|(r, gfi)| BandRow {
                    policy_id: r.policy_id.clone(),
                    mean_law_pen: r.mean_law_pen,
                    sharpe: r.sharpe,
                    gfi: *gfi,
                    var5: r.var5,
                    cvar5: r.cvar5,
                })
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub mean_law_pen: f64,
    pub gfi: f64,
    pub mean_pnl: f64,
    pub sharpe: f64,
    pub var5: f64,
    pub cvar5: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    Penalty,
    Pnl,
}

/// A pair `λ_lo < λ_hi` whose metric rose with λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub metric: Monotonicity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub violations: Vec<Violation>,
}

/// Sorts by λ and lists every pair breaking weak decrease of penalty or PnL in λ.
pub fn lambda_sweep_table(results: &[(f64, &MetricsReport, f64)]) -> Result<SweepTable> {
    if results.len() < 2 {
        return Err(Error::InsufficientData("a sweep needs at least two λ values".into()));
    }
    let mut rows: Vec<SweepRow> = results
        .iter()
        .map(|&(lambda, r, gfi)| SweepRow {
            lambda,
            mean_law_pen: r.mean_law_pen,
            gfi,
            mean_pnl: r.mean_pnl,
            sharpe: r.sharpe,
            var5: r.var5,
            cvar5: r.cvar5,
        })
        .collect();
    rows.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let mut violations = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let (lo, hi) = (&rows[i], &rows[j]);
            if lo.lambda == hi.lambda {
                continue;
            }
            if hi.mean_law_pen > lo.mean_law_pen {
                violations.push(Violation {
                    lambda_lo: lo.lambda,
                    lambda_hi: hi.lambda,
                    metric: Monotonicity::Penalty,
                });
            }
            if hi.mean_pnl > lo.mean_pnl {
                violations.push(Violation {
                    lambda_lo: lo.lambda,
                    lambda_hi: hi.lambda,
                    metric: Monotonicity::Pnl,
                });
            }
        }
    }
    Ok(SweepTable { rows, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::Regime;
    use crate::metrics::PenaltyKind;

    fn c(v: [f64; 5]) -> Coords {
        Coords {
            mean_law_pen: v[0],
            gfi: v[1],
            mean_pnl: v[2],
            var5: v[3],
            cvar5: v[4],
        }
    }

    fn report(pen: f64, pnl: f64) -> MetricsReport {
        MetricsReport {
            policy_id: format!("p{pen}"),
            regime: Regime::Baseline,
            mean_pnl: pnl,
            std_pnl: 0.0,
            sharpe: 0.0,
            mean_law_pen: pen,
            max_law_pen: pen,
            law_adj_return: pnl - pen,
            coverage: vec![],
            var5: 0.0,
            cvar5: 0.0,
            mean_ghost: 0.0,
            n_steps: 1,
            penalty_kind: PenaltyKind::Exact,
        }
    }

    #[test]
    fn dominance_examples() {
        let a = FrontierPoint::new("zh", None, c([0.005, 0.0, 0.019, 0.014, 0.014]));
        let b = FrontierPoint::new("naive", Some(0.0), c([0.007, 1.27, -0.002, -0.023, -0.026]));
        let out = pareto_frontier(&[a.clone(), b]).unwrap();
        assert!(!out[0].dominated && out[1].dominated);
        assert!(!pareto_frontier(&[a.clone()]).unwrap()[0].dominated);
        let twins = pareto_frontier(&[a.clone(), a]).unwrap();
        assert!(twins.iter().all(|p| !p.dominated));
    }

    #[test]
    fn band_membership() {
        let (inside, edge) = (report(0.0055, 0.0), report(0.0057, 0.0));
        let bands = penalty_bands(&[(&inside, 0.0), (&edge, 0.0)], &[0.0053, 0.0057]).unwrap();
        assert_eq!(bands.len(), 1);
        assert_eq!(bands[0].rows.len(), 1);
        assert_eq!(bands[0].rows[0].mean_law_pen, 0.0055);
        let empty = penalty_bands(&[(&inside, 0.0)], &[0.1, 0.2]).unwrap();
        assert!(empty[0].rows.is_empty());
        assert!(penalty_bands(&[], &[0.2, 0.1]).is_err());
    }

    #[test]
    fn sweep_monotonicity() {
        let same = report(0.004, 0.01);
        let t = lambda_sweep_table(&[(0.0, &same, 0.0), (5.0, &same, 0.0), (10.0, &same, 0.0)]).unwrap();
        assert!(t.violations.is_empty());

        let (l5, l10) = (report(0.00647, -0.0202), report(0.00371, -0.0175));
        let t = lambda_sweep_table(&[(10.0, &l10, 0.0), (5.0, &l5, 0.0)]).unwrap();
        assert_eq!(t.rows[0].lambda, 5.0);
        assert!(!t.violations.iter().any(|v| v.metric == Monotonicity::Penalty));

        let l20 = report(0.00396, -0.0204);
        let t = lambda_sweep_table(&[(10.0, &l10, 0.0), (20.0, &l20, 0.0)]).unwrap();
        assert_eq!(
            t.violations,
            vec![Violation {
                lambda_lo: 10.0,
                lambda_hi: 20.0,
                metric: Monotonicity::Penalty
            }]
        );
        assert!(lambda_sweep_table(&[(0.0, &same, 0.0)]).is_err());
    }

    #[test]
    fn fixture_parsing_and_verdict() {
        let text = "policy,family,lambda,mean_pnl,sharpe,mean_law_pen,gfi,var5,cvar5\n\
                    # comment lines are skipped\n\
                    zh, baseline, , 0.02, 3.0, 0.0055, 0.0, 0.014, 0.014\n\
                    rl, learned, 5, -0.02, -1.7, 0.0056, 2.0, -0.04, -0.043\n\
                    cheap, learned, 10, -0.02, -1.4, 0.0037, 2.8, -0.035, -0.039\n";
        let rows = read_fixture(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].lambda, None);
        assert_eq!(rows[1].family, Family::Learned);
        let v = fixture_verdict(&rows, Some((0.0053, 0.0057))).unwrap();
        assert_eq!(v.undominated_baselines, vec!["zh"]);
        assert_eq!(v.undominated_learned, vec!["cheap"]);
        let band = v.band.unwrap();
        assert_eq!(band.baselines.len(), 1);
        assert_eq!(band.learned[0].policy, "rl");
        assert!(fixture_verdict(&rows, Some((0.1, 0.1))).is_err());
        assert!(read_fixture("policy,family\n".as_bytes()).is_err());
    }

    #[test]
    fn frontier_csv_layout() {
        let p = FrontierPoint::new("ppo_l5", Some(5.0), c([0.1, 0.2, 0.3, 0.4, 0.5]));
        let mut buf = Vec::new();
        write_frontier_csv(&mut buf, &pareto_frontier(&[p]).unwrap()).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "policy,lambda,mean_law_pen,gfi,mean_pnl,var5,cvar5,on_frontier\nppo_l5,5,0.1,0.2,0.3,0.4,0.5,true\n"
        );
    }
}
