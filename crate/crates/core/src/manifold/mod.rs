//! The no-arbitrage law manifold: a polyhedron of total-variance surfaces cut
//! out by discrete butterfly (convexity in log-moneyness) and calendar
//! (monotonicity in maturity) inequalities plus a box.
//!
//! Every constraint row is stored as `a·w <= rhs`:
//!
//! * butterfly, one per interior strike per maturity: `(−1, +2, −1)` at
//!   `(i−1, j), (i, j), (i+1, j)`, i.e. the discrete second difference is
//!   nonnegative;
//! * calendar, one per strike per adjacent maturity pair: `(+1, −1)` at
//!   `(i, j), (i, j+1)`, i.e. total variance is nondecreasing in maturity.
//!
//! The butterfly stencil assumes equally spaced log-moneyness, which
//! [`LawManifold::build`] checks.

mod projection;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SurfaceGrid, TotalVarianceSurface};
use projection::{project_dual_active_set, ConstraintSet};

/// Default feasibility tolerance.
pub const TOL_FEAS: f64 = 1e-8;
/// Default optimality (KKT residual) tolerance of the projection.
pub const TOL_OPT: f64 = 1e-9;
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;
pub const DEFAULT_W_MIN: f64 = 1e-6;
pub const DEFAULT_W_MAX: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Butterfly,
    Calendar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub kind: RowKind,
    pub indices: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub rhs: f64,
}

impl ConstraintRow {
    pub fn eval(&self, w: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.coefficients)
            .map(|(&i, &a)| a * w[i])
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.coefficients.iter().map(|a| a * a).sum()
    }
}

/// Which constraint is violated, for [`FeasibilityReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstraintRef {
    Row { row: usize, kind: RowKind },
    LowerBound { index: usize },
    UpperBound { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: ConstraintRef,
    /// Left-hand side: `a·w` for rows, `w_i` for bounds.
    pub value: f64,
    /// Amount by which the inequality is exceeded (positive means violated).
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// The constraint with the largest excess, if any constraint exists.
    pub worst: Option<Violation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSettings {
    pub tol_feas: f64,
    pub tol_opt: f64,
    pub max_iterations: usize,
}

impl Default for ProjectionSettings {
    fn default() -> Self {
        Self {
            tol_feas: TOL_FEAS,
            tol_opt: TOL_OPT,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub projected: TotalVarianceSurface,
    /// Euclidean distance between the input and its projection.
    pub distance: f64,
    /// `½ distance²`.
    pub penalty: f64,
    /// Constraints binding at the projection, box bounds included.
    pub n_active: usize,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

impl ProjectionResult {
    /// Converts a non-converged projection into [`Error::MaxIterationsExceeded`].
    pub fn into_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::MaxIterationsExceeded {
                iterations: self.iterations,
                residual: self.kkt_residual,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct LawManifold {
    grid: Arc<SurfaceGrid>,
    rows: Vec<ConstraintRow>,
    w_min: f64,
    w_max: f64,
    n_butterfly: usize,
    n_calendar: usize,
    settings: ProjectionSettings,
    // Every constraint in `nᵀz >= b` form for the projection: rows first,
    // then lower bounds, then upper bounds.
    normals: Vec<Vec<(usize, f64)>>,
    bounds: Vec<f64>,
    norms: Vec<f64>,
}

impl LawManifold {
    /// Assembles the butterfly and calendar rows and the `[w_min, w_max]` box.
    pub fn build(grid: Arc<SurfaceGrid>, w_min: f64, w_max: f64) -> Result<Self> {
        Self::build_with(grid, w_min, w_max, ProjectionSettings::default())
    }

    pub fn build_with(
        grid: Arc<SurfaceGrid>,
        w_min: f64,
        w_max: f64,
        settings: ProjectionSettings,
    ) -> Result<Self> {
        if !(w_min.is_finite() && w_max.is_finite()) || w_min < 0.0 || w_min >= w_max {
            return Err(Error::InvalidBounds { w_min, w_max });
        }
        if !grid.has_uniform_strikes(1e-9) {
            return Err(Error::InvalidGrid(
                "butterfly stencil requires equally spaced log-moneyness".into(),
            ));
        }
        let (n_t, n_k) = (grid.n_t(), grid.n_k());
        let mut rows = Vec::with_capacity(n_t * n_k.saturating_sub(2) + n_k * (n_t - 1));
        for j in 0..n_t {
            for i in 1..n_k.saturating_sub(1) {
                rows.push(ConstraintRow {
                    kind: RowKind::Butterfly,
                    indices: vec![grid.index(i - 1, j), grid.index(i, j), grid.index(i + 1, j)],
                    coefficients: vec![-1.0, 2.0, -1.0],
                    rhs: 0.0,
                });
            }
        }
        let n_butterfly = rows.len();
        for j in 0..n_t - 1 {
            for i in 0..n_k {
                rows.push(ConstraintRow {
                    kind: RowKind::Calendar,
                    indices: vec![grid.index(i, j), grid.index(i, j + 1)],
                    coefficients: vec![1.0, -1.0],
                    rhs: 0.0,
                });
            }
        }
        let n_calendar = rows.len() - n_butterfly;

        let d = grid.d();
        let mut normals = Vec::with_capacity(rows.len() + 2 * d);
        let mut bounds = Vec::with_capacity(rows.len() + 2 * d);
        for row in &rows {
            normals.push(
                row.indices
                    .iter()
                    .zip(&row.coefficients)
                    .map(|(&i, &a)| (i, -a))
                    .collect(),
            );
            bounds.push(-row.rhs);
        }
        for i in 0..d {
            normals.push(vec![(i, 1.0)]);
            bounds.push(w_min);
        }
        for i in 0..d {
            normals.push(vec![(i, -1.0)]);
            bounds.push(-w_max);
        }
        let norms = normals
            .iter()
            .map(|nv: &Vec<(usize, f64)>| nv.iter().map(|(_, v)| v * v).sum::<f64>().sqrt())
            .collect();

        let manifold = Self {
            grid,
            rows,
            w_min,
            w_max,
            n_butterfly,
            n_calendar,
            settings,
            normals,
            bounds,
            norms,
        };
        let witness = TotalVarianceSurface::constant(manifold.grid.clone(), 0.5 * (w_min + w_max));
        let report = manifold.is_feasible(&witness, 0.0)?;
        if !report.feasible {
            return Err(Error::InvalidGrid(format!(
                "midpoint surface infeasible: {:?}",
                report.worst
            )));
        }
        Ok(manifold)
    }

    /// Manifold with the default box `[1e-6, 4.0]`.
    pub fn with_default_box(grid: Arc<SurfaceGrid>) -> Result<Self> {
        Self::build(grid, DEFAULT_W_MIN, DEFAULT_W_MAX)
    }

    pub fn grid(&self) -> &Arc<SurfaceGrid> {
        &self.grid
    }

    pub fn rows(&self) -> &[ConstraintRow] {
        &self.rows
    }

    pub fn w_min(&self) -> f64 {
        self.w_min
    }

    pub fn w_max(&self) -> f64 {
        self.w_max
    }

    pub fn n_butterfly(&self) -> usize {
        self.n_butterfly
    }

    pub fn n_calendar(&self) -> usize {
        self.n_calendar
    }

    pub fn settings(&self) -> &ProjectionSettings {
        &self.settings
    }

    fn check_grid(&self, w: &TotalVarianceSurface) -> Result<()> {
        if !Arc::ptr_eq(w.grid(), &self.grid) && **w.grid() != *self.grid {
            return Err(Error::GridMismatch {
                expected: self.grid.d(),
                actual: w.grid().d(),
            });
        }
        Ok(())
    }

    /// Checks every row and bound within `tol`, naming the worst offender.
    pub fn is_feasible(&self, w: &TotalVarianceSurface, tol: f64) -> Result<FeasibilityReport> {
        self.check_grid(w)?;
        let v = w.values();
        let mut worst: Option<Violation> = None;
        let mut consider = |cand: Violation| {
            if worst.is_none_or(|cur| cand.excess > cur.excess) {
                worst = Some(cand);
            }
        };
        for (row_idx, row) in self.rows.iter().enumerate() {
            let value = row.eval(v);
            consider(Violation {
                constraint: ConstraintRef::Row {
                    row: row_idx,
                    kind: row.kind,
                },
                value,
                excess: value - row.rhs,
            });
        }
        for (index, &wi) in v.iter().enumerate() {
            consider(Violation {
                constraint: ConstraintRef::LowerBound { index },
                value: wi,
                excess: self.w_min - wi,
            });
            consider(Violation {
                constraint: ConstraintRef::UpperBound { index },
                value: wi,
                excess: wi - self.w_max,
            });
        }
        let feasible = worst.is_none_or(|v| v.excess <= tol);
        Ok(FeasibilityReport { feasible, worst })
    }

    /// Unique Euclidean projection onto the manifold.
    ///
    /// A run that hits `max_iterations` returns its last iterate with
    /// `converged = false`; see [`ProjectionResult::into_converged`].
    pub fn project(&self, w: &TotalVarianceSurface) -> Result<ProjectionResult> {
        self.check_grid(w)?;
        let out = project_dual_active_set(self, w.values(), self.settings.max_iterations);
        let distance = w
            .values()
            .iter()
            .zip(&out.z)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        Ok(ProjectionResult {
            projected: w.with_values(out.z)?,
            distance,
            penalty: 0.5 * distance * distance,
            n_active: out.active.len(),
            iterations: out.iterations,
            converged: out.converged,
            kkt_residual: out.kkt_residual,
        })
    }

    /// Exact law penalty `½ dist(w, M)²`.
    pub fn law_penalty(&self, w: &TotalVarianceSurface) -> Result<f64> {
        Ok(self.project(w)?.into_converged()?.penalty)
    }

    /// Sum of squared hinge violations, each scaled to the squared distance
    /// to its own halfspace: `Σ max(0, a·w − rhs)² / (2‖a‖²)` plus the box
    /// terms `½ max(0, w_min − w_i)² + ½ max(0, w_i − w_max)²`.
    pub fn surrogate_penalty(&self, w: &TotalVarianceSurface) -> Result<f64> {
        self.check_grid(w)?;
        let v = w.values();
        let rows: f64 = self
            .rows
            .iter()
            .map(|row| {
                let e = (row.eval(v) - row.rhs).max(0.0);
                e * e / (2.0 * row.norm_sq())
            })
            .sum();
        let boxes: f64 = v
            .iter()
            .map(|&x| {
                let lo = (self.w_min - x).max(0.0);
                let hi = (x - self.w_max).max(0.0);
                0.5 * (lo * lo + hi * hi)
            })
            .sum();
        Ok(rows + boxes)
    }

    pub fn to_dump(&self) -> ConstraintDump {
        ConstraintDump {
            maturities: self.grid.maturities().to_vec(),
            log_moneyness: self.grid.log_moneyness().to_vec(),
            w_min: self.w_min,
            w_max: self.w_max,
            rows: self
                .rows
                .iter()
                .map(|r| DumpRow {
                    kind: r.kind,
                    indices: r.indices.clone(),
                    coefficients: r.coefficients.clone(),
                    rhs: r.rhs,
                })
                .collect(),
        }
    }
}

impl ConstraintSet for LawManifold {
    fn dim(&self) -> usize {
        self.grid.d()
    }
    fn len(&self) -> usize {
        self.normals.len()
    }
    fn normal(&self, i: usize) -> &[(usize, f64)] {
        &self.normals[i]
    }
    fn bound(&self, i: usize) -> f64 {
        self.bounds[i]
    }
    fn normal_norm(&self, i: usize) -> f64 {
        self.norms[i]
    }
}

/// JSON dump of the constraint system (`a·w <= rhs` rows plus the box).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintDump {
    pub maturities: Vec<f64>,
    pub log_moneyness: Vec<f64>,
    pub w_min: f64,
    pub w_max: f64,
    pub rows: Vec<DumpRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpRow {
    pub kind: RowKind,
    pub indices: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub rhs: f64,
}

/// Fraction of `penalties` strictly below `threshold`.
pub fn law_coverage(penalties: &[f64], threshold: f64) -> Result<f64> {
    if penalties.is_empty() {
        return Err(Error::EmptyInput("law_coverage needs at least one penalty"));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "coverage threshold must be positive, got {threshold}"
        )));
    }
    let below = penalties.iter().filter(|p| **p < threshold).count();
    Ok(below as f64 / penalties.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridPreset;
    use approx::assert_relative_eq;

    fn strip(w: &[f64]) -> TotalVarianceSurface {
        let g = SurfaceGrid::new(vec![1.0], vec![-0.1, 0.0, 0.1]).unwrap();
        TotalVarianceSurface::new(Arc::new(g), w.to_vec()).unwrap()
    }

    fn column(w: &[f64]) -> TotalVarianceSurface {
        let g = SurfaceGrid::new(vec![0.5, 1.0], vec![0.0]).unwrap();
        TotalVarianceSurface::new(Arc::new(g), w.to_vec()).unwrap()
    }

    fn manifold_for(s: &TotalVarianceSurface) -> LawManifold {
        LawManifold::with_default_box(s.grid().clone()).unwrap()
    }

    #[test]
    fn row_counts() {
        let tiny = LawManifold::with_default_box(Arc::new(SurfaceGrid::preset(GridPreset::Tiny)))
            .unwrap();
        assert_eq!((tiny.n_butterfly(), tiny.n_calendar()), (2, 3));
        let def =
            LawManifold::with_default_box(Arc::new(SurfaceGrid::preset(GridPreset::Default)))
                .unwrap();
        assert_eq!((def.n_butterfly(), def.n_calendar()), (72, 77));
        for row in def.rows() {
            match row.kind {
                RowKind::Butterfly => {
                    assert_eq!(row.coefficients, vec![-1.0, 2.0, -1.0]);
                    assert_eq!(row.indices[1] - row.indices[0], 1);
                    assert_eq!(row.indices[2] - row.indices[1], 1);
                }
                RowKind::Calendar => {
                    assert_eq!(row.coefficients, vec![1.0, -1.0]);
                    assert_eq!(row.indices[1] - row.indices[0], 11);
                }
            }
            assert_eq!(row.rhs, 0.0);
        }
    }

    #[test]
    fn invalid_bounds_rejected() {
        let g = Arc::new(SurfaceGrid::preset(GridPreset::Tiny));
        assert!(matches!(
            LawManifold::build(g.clone(), 0.1, 0.05),
            Err(Error::InvalidBounds { .. })
        ));
        assert!(matches!(
            LawManifold::build(g.clone(), -0.1, 1.0),
            Err(Error::InvalidBounds { .. })
        ));
        assert!(LawManifold::build(g, 0.2, 0.2).is_err());
    }

    #[test]
    fn nonuniform_strikes_rejected() {
        let g = SurfaceGrid::new(vec![1.0], vec![-0.3, 0.0, 0.1]).unwrap();
        assert!(matches!(
            LawManifold::with_default_box(Arc::new(g)),
            Err(Error::InvalidGrid(_))
        ));
    }

    #[test]
    fn constant_surface_is_feasible() {
        let g = Arc::new(SurfaceGrid::preset(GridPreset::Default));
        let m = LawManifold::with_default_box(g.clone()).unwrap();
        let w = TotalVarianceSurface::constant(g, 0.04);
        let rep = m.is_feasible(&w, 0.0).unwrap();
        assert!(rep.feasible);
        for row in m.rows() {
            assert_eq!(row.eval(w.values()), 0.0);
        }
    }

    #[test]
    fn butterfly_violation_reported() {
        let w = strip(&[0.1, 0.2, 0.1]);
        let rep = manifold_for(&w).is_feasible(&w, TOL_FEAS).unwrap();
        assert!(!rep.feasible);
        let worst = rep.worst.unwrap();
        assert!(matches!(
            worst.constraint,
            ConstraintRef::Row {
                kind: RowKind::Butterfly,
                ..
            }
        ));
        // a·w = 0.2, i.e. the second difference 0.1 − 0.4 + 0.1 = −0.2.
        assert_relative_eq!(worst.value, 0.2, epsilon = 1e-15);
        assert_relative_eq!(worst.excess, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn calendar_violation_reported() {
        let w = column(&[0.3, 0.2]);
        let rep = manifold_for(&w).is_feasible(&w, TOL_FEAS).unwrap();
        assert!(!rep.feasible);
        let worst = rep.worst.unwrap();
        assert!(matches!(
            worst.constraint,
            ConstraintRef::Row {
                kind: RowKind::Calendar,
                ..
            }
        ));
        assert_relative_eq!(worst.value, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn grid_mismatch_detected() {
        let m = LawManifold::with_default_box(Arc::new(SurfaceGrid::preset(GridPreset::Tiny)))
            .unwrap();
        let w = strip(&[0.1, 0.1, 0.1]);
        assert!(matches!(m.is_feasible(&w, 0.0), Err(Error::GridMismatch { .. })));
        assert!(matches!(m.project(&w), Err(Error::GridMismatch { .. })));
        assert!(matches!(m.surrogate_penalty(&w), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn projection_of_feasible_point_is_identity() {
        let g = Arc::new(SurfaceGrid::preset(GridPreset::Default));
        let m = LawManifold::with_default_box(g.clone()).unwrap();
        let w = TotalVarianceSurface::constant(g, 0.04);
        let p = m.project(&w).unwrap();
        assert_eq!(p.projected.values(), w.values());
        assert_eq!(p.distance, 0.0);
        assert_eq!(m.law_penalty(&w).unwrap(), 0.0);
        assert_eq!(m.surrogate_penalty(&w).unwrap(), 0.0);
    }

    #[test]
    fn butterfly_halfspace_projection() {
        let w = strip(&[0.1, 0.2, 0.1]);
        let m = manifold_for(&w);
        let p = m.project(&w).unwrap();
        assert!(p.converged);
        for v in p.projected.values() {
            assert_relative_eq!(*v, 0.4 / 3.0, epsilon = 1e-14);
        }
        assert_relative_eq!(p.distance * p.distance, 0.04 / 6.0, epsilon = 1e-14);
        assert_relative_eq!(m.law_penalty(&w).unwrap(), 0.5 * 0.04 / 6.0, epsilon = 1e-14);
        // Single active row: the surrogate equals the exact penalty.
        assert_relative_eq!(
            m.surrogate_penalty(&w).unwrap(),
            m.law_penalty(&w).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn calendar_halfspace_projection() {
        let w = column(&[0.3, 0.2]);
        let m = manifold_for(&w);
        let p = m.project(&w).unwrap();
        assert_relative_eq!(p.projected.values()[0], 0.25, epsilon = 1e-14);
        assert_relative_eq!(p.projected.values()[1], 0.25, epsilon = 1e-14);
        assert_relative_eq!(p.distance * p.distance, 0.005, epsilon = 1e-14);
        assert_relative_eq!(m.law_penalty(&w).unwrap(), 0.0025, epsilon = 1e-14);
        assert_relative_eq!(m.surrogate_penalty(&w).unwrap(), 0.0025, epsilon = 1e-14);
    }

    #[test]
    fn concave_strip_surrogate_can_undershoot_exact() {
        // Two butterfly rows with obtuse normals, both violated by 1: the
        // surrogate is 2/12 while the best convex fit (a constant 0.5) gives 1/2.
        let g = SurfaceGrid::new(vec![1.0], vec![0.0, 0.1, 0.2, 0.3]).unwrap();
        let w = TotalVarianceSurface::new(Arc::new(g), vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let m = LawManifold::build(w.grid().clone(), 0.0, 4.0).unwrap();
        assert_relative_eq!(m.surrogate_penalty(&w).unwrap(), 1.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(m.law_penalty(&w).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn box_projection_clips() {
        let w = column(&[-0.5, 5.0]);
        let m = manifold_for(&w);
        let p = m.project(&w).unwrap();
        assert_relative_eq!(p.projected.values()[0], DEFAULT_W_MIN, epsilon = 1e-15);
        assert_relative_eq!(p.projected.values()[1], DEFAULT_W_MAX, epsilon = 1e-15);
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(law_coverage(&[0.0, 0.0, 0.0], 0.003).unwrap(), 1.0);
        assert_relative_eq!(law_coverage(&[0.001, 0.004, 0.007], 0.006).unwrap(), 2.0 / 3.0);
        assert_eq!(law_coverage(&[0.007], 0.003).unwrap(), 0.0);
        assert!(matches!(law_coverage(&[], 0.003), Err(Error::EmptyInput(_))));
        assert!(law_coverage(&[0.1], 0.0).is_err());
    }

    #[test]
    fn dump_roundtrips_through_json() {
        let m = LawManifold::with_default_box(Arc::new(SurfaceGrid::preset(GridPreset::Tiny)))
            .unwrap();
        let json = serde_json::to_string(&m.to_dump()).unwrap();
        let back: ConstraintDump = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m.to_dump());
        assert_eq!(back.rows.len(), 5);
    }
}
