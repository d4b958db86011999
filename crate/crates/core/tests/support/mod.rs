//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use std::sync::Arc;

use axiovol::manifold::ConstraintDump;
use axiovol::{SurfaceGrid, TotalVarianceSurface};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense constraint system `g·z <= h` rebuilt from the JSON dump, with the box
/// expanded into explicit rows.
pub struct DenseSystem {
    pub d: usize,
    pub g: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    /// For each row, the coordinate if it is a box row and its partner row.
    pub box_coord: Vec<Option<usize>>,
}

impl DenseSystem {
    pub fn from_dump_json(json: &str) -> Self {
        let dump: ConstraintDump = serde_json::from_str(json).expect("valid dump");
        let d = dump.maturities.len() * dump.log_moneyness.len();
        let mut g = Vec::new();
        let mut h = Vec::new();
        let mut box_coord = Vec::new();
        for row in &dump.rows {
            let mut dense = vec![0.0; d];
            for (i, a) in row.indices.iter().zip(&row.coefficients) {
                dense[*i] += a;
            }
            g.push(dense);
            h.push(row.rhs);
            box_coord.push(None);
        }
        for i in 0..d {
            let mut lo = vec![0.0; d];
            lo[i] = -1.0;
            g.push(lo);
            h.push(-dump.w_min);
            box_coord.push(Some(i));
            let mut hi = vec![0.0; d];
            hi[i] = 1.0;
            g.push(hi);
            h.push(dump.w_max);
            box_coord.push(Some(i));
        }
        Self { d, g, h, box_coord }
    }

    pub fn max_violation(&self, z: &[f64]) -> f64 {
        self.g
            .iter()
            .zip(&self.h)
            .map(|(row, h)| dot(row, z) - h)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting; `None` if
/// the matrix is numerically singular.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Exhaustive active-set oracle: for every subset of at most `d` constraints
/// (never both bounds of one coordinate), solve the equality-constrained
/// least-squares problem and keep the closest feasible solution.
pub fn enumerate_projection(sys: &DenseSystem, w: &[f64]) -> Vec<f64> {
    let m = sys.g.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    if sys.max_violation(w) <= 1e-12 {
        return w.to_vec();
    }
    let mut subset: Vec<usize> = Vec::new();
    fn recurse(
        sys: &DenseSystem,
        w: &[f64],
        start: usize,
        m: usize,
        subset: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<f64>)>,
    ) {
        if !subset.is_empty() {
            evaluate(sys, w, subset, best);
        }
        if subset.len() == sys.d {
            return;
        }
        for i in start..m {
            if let Some(c) = sys.box_coord[i] {
                if subset.iter().any(|&j| sys.box_coord[j] == Some(c)) {
                    continue;
                }
            }
            subset.push(i);
            recurse(sys, w, i + 1, m, subset, best);
            subset.pop();
        }
    }
    recurse(sys, w, 0, m, &mut subset, &mut best);
    best.expect("nonempty polyhedron has a projection").1
}

fn evaluate(sys: &DenseSystem, w: &[f64], subset: &[usize], best: &mut Option<(f64, Vec<f64>)>) {
    // z = w − G_Sᵀ μ with (G_S G_Sᵀ) μ = G_S w − h_S.
    let k = subset.len();
    let mut gram = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for (a, &i) in subset.iter().enumerate() {
        for (b, &j) in subset.iter().enumerate() {
            gram[a][b] = dot(&sys.g[i], &sys.g[j]);
        }
        rhs[a] = dot(&sys.g[i], w) - sys.h[i];
    }
    let Some(mu) = solve_dense(gram, rhs) else {
        return;
    };
    let mut z = w.to_vec();
    for (a, &i) in subset.iter().enumerate() {
        for (zc, gc) in z.iter_mut().zip(&sys.g[i]) {
            *zc -= mu[a] * gc;
        }
    }
    if sys.max_violation(&z) > 1e-10 {
        return;
    }
    let dist: f64 = z.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum();
    if best.as_ref().is_none_or(|(bd, _)| dist < *bd) {
        *best = Some((dist, z));
    }
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Plausible-looking but noisy surface: flat term structure with a smile plus
/// iid Gaussian-ish noise of size `noise`.
pub fn noisy_surface(grid: &Arc<SurfaceGrid>, rng: &mut ChaCha8Rng, noise: f64) -> TotalVarianceSurface {
    let level = rng.random_range(0.01..0.09);
    let smile = rng.random_range(0.0..0.6);
    let w = (0..grid.d())
        .map(|idx| {
            let (i, j) = grid.coords(idx);
            let t = grid.maturities()[j];
            let k = grid.log_moneyness()[i];
            let e: f64 = rng.random_range(-1.0..1.0) + rng.random_range(-1.0..1.0);
            level * t + smile * k * k * t.sqrt() + noise * e
        })
        .collect();
    TotalVarianceSurface::new(grid.clone(), w).unwrap()
}

pub fn uniform_surface(grid: &Arc<SurfaceGrid>, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> TotalVarianceSurface {
    let w = (0..grid.d()).map(|_| rng.random_range(lo..hi)).collect();
    TotalVarianceSurface::new(grid.clone(), w).unwrap()
}
