//! Euclidean projection onto `{z : G z >= h}` by the Goldfarb–Idnani dual
//! active-set method.
//!
//! With an identity Hessian the unconstrained minimizer of `½‖z − w‖²` is `w`
//! itself and the initial factor `J = L⁻ᵀ` is the identity, so the method
//! reduces to maintaining an orthogonal `J` and an upper-triangular `R` with
//! `J₁ᵀ N = R` for the active normals `N`. Constraints are added one at a time
//! (most violated first) and dropped when their multipliers would turn
//! negative; each full step strictly increases the dual objective, so the
//! active set never cycles and the result is exact up to rounding.

/// A constraint `nᵀ z >= b` with a sparse normal.
pub(crate) trait ConstraintSet {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    /// Sparse normal `n_i` as `(index, coefficient)` pairs.
    fn normal(&self, i: usize) -> &[(usize, f64)];
    fn bound(&self, i: usize) -> f64;
    fn normal_norm(&self, i: usize) -> f64;
}

#[derive(Debug, Clone)]
pub(crate) struct DualActiveSetOutcome {
    pub z: Vec<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

/// Relative violation below which a constraint is treated as satisfied.
const ADD_TOL: f64 = 1e-13;

pub(crate) fn project_dual_active_set<C: ConstraintSet>(
    cons: &C,
    w: &[f64],
    max_iterations: usize,
) -> DualActiveSetOutcome {
    let n = cons.dim();
    debug_assert_eq!(w.len(), n);
    let m = cons.len();
    let scale = 1.0 + w.iter().fold(0.0f64, |a, x| a.max(x.abs()));

    let mut x = w.to_vec();
    let mut j_mat = vec![0.0; n * n];
    for c in 0..n {
        j_mat[c * n + c] = 1.0;
    }
    let mut r_mat = vec![0.0; n * n];
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut is_active = vec![false; m];
    let mut iterations = 0usize;

    let mut d = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut r = vec![0.0; n];

    'outer: loop {
        // Step 1: most violated inactive constraint, normalized by ‖n‖.
        let mut p = None;
        let mut worst = -ADD_TOL * scale;
        for i in 0..m {
            if is_active[i] {
                continue;
            }
            let s = slack(cons, i, &x) / cons.normal_norm(i);
            if s < worst {
                worst = s;
                p = Some(i);
            }
        }
        let Some(p) = p else {
            break 'outer;
        };
        let mut u_plus = 0.0;

        // Step 2: move along the primal/dual directions until p is satisfied.
        loop {
            if iterations >= max_iterations {
                let residual = kkt_residual(cons, w, &x, &active, &u);
                return DualActiveSetOutcome {
                    z: x,
                    active,
                    iterations,
                    converged: false,
                    kkt_residual: residual,
                };
            }
            iterations += 1;
            let q = active.len();
            let np = cons.normal(p);

            for c in 0..n {
                let col = &j_mat[c * n..(c + 1) * n];
                d[c] = np.iter().map(|&(i, v)| v * col[i]).sum();
            }
            z.iter_mut().for_each(|v| *v = 0.0);
            for c in q..n {
                let dc = d[c];
                if dc != 0.0 {
                    let col = &j_mat[c * n..(c + 1) * n];
                    for (zi, ji) in z.iter_mut().zip(col) {
                        *zi += dc * ji;
                    }
                }
            }
            // r = R⁻¹ d₁ (back substitution on the leading q×q block).
            for row in (0..q).rev() {
                let mut acc = d[row];
                for col in row + 1..q {
                    acc -= r_mat[col * n + row] * r[col];
                }
                r[row] = acc / r_mat[row * n + row];
            }

            // Partial (dual) step length.
            let mut t1 = f64::INFINITY;
            let mut drop_pos = None;
            for jpos in 0..q {
                if r[jpos] > 0.0 {
                    let ratio = u[jpos] / r[jpos];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_pos = Some(jpos);
                    }
                }
            }
            // Full (primal) step length; nᵀz = ‖d₂‖².
            let d2sq: f64 = d[q..n].iter().map(|v| v * v).sum();
            let nn = cons.normal_norm(p);
            let t2 = if d2sq <= (1e-12 * nn).powi(2) {
                f64::INFINITY
            } else {
                -slack(cons, p, &x) / d2sq
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                // Infeasible subproblem; cannot happen for a nonempty polyhedron
                // except through rounding. Report the current iterate.
                let residual = kkt_residual(cons, w, &x, &active, &u);
                return DualActiveSetOutcome {
                    z: x,
                    active,
                    iterations,
                    converged: false,
                    kkt_residual: residual,
                };
            }

            if t2.is_infinite() {
                for jpos in 0..q {
                    u[jpos] -= t * r[jpos];
                }
                u_plus += t;
                let k = drop_pos.expect("finite t1 has an index");
                drop_constraint(k, n, &mut j_mat, &mut r_mat, &mut active, &mut u, &mut is_active);
                continue;
            }

            for (xi, zi) in x.iter_mut().zip(&z) {
                *xi += t * zi;
            }
            for jpos in 0..q {
                u[jpos] -= t * r[jpos];
            }
            u_plus += t;

            if t2 <= t1 {
                add_constraint(q, n, &mut d, &mut j_mat, &mut r_mat);
                active.push(p);
                u.push(u_plus);
                is_active[p] = true;
                continue 'outer;
            }
            let k = drop_pos.expect("finite t1 has an index");
            drop_constraint(k, n, &mut j_mat, &mut r_mat, &mut active, &mut u, &mut is_active);
        }
    }

    let residual = kkt_residual(cons, w, &x, &active, &u);
    DualActiveSetOutcome {
        z: x,
        active,
        iterations,
        converged: true,
        kkt_residual: residual,
    }
}

#[inline]
fn slack<C: ConstraintSet>(cons: &C, i: usize, x: &[f64]) -> f64 {
    cons.normal(i).iter().map(|&(k, v)| v * x[k]).sum::<f64>() - cons.bound(i)
}

/// Zeroes `d[q+1..]` with Givens rotations applied to the columns of `J`,
/// then stores `d[..=q]` as the new column of `R`.
fn add_constraint(q: usize, n: usize, d: &mut [f64], j_mat: &mut [f64], r_mat: &mut [f64]) {
    for i in (q + 1..n).rev() {
        let (a, b) = (d[i - 1], d[i]);
        if b == 0.0 {
            continue;
        }
        let h = a.hypot(b);
        let (cs, sn) = (a / h, b / h);
        d[i - 1] = h;
        d[i] = 0.0;
        let (left, right) = j_mat.split_at_mut(i * n);
        let left = &mut left[(i - 1) * n..];
        for (l, rr) in left.iter_mut().zip(right[..n].iter_mut()) {
            let (jl, jr) = (*l, *rr);
            *l = cs * jl + sn * jr;
            *rr = -sn * jl + cs * jr;
        }
    }
    for row in 0..=q {
        r_mat[q * n + row] = d[row];
    }
}

fn drop_constraint(
    k: usize,
    n: usize,
    j_mat: &mut [f64],
    r_mat: &mut [f64],
    active: &mut Vec<usize>,
    u: &mut Vec<f64>,
    is_active: &mut [bool],
) {
    let q = active.len();
    // Remove column k, shifting later columns left.
    for col in k..q - 1 {
        for row in 0..=col + 1 {
            r_mat[col * n + row] = r_mat[(col + 1) * n + row];
        }
    }
    for row in 0..n {
        r_mat[(q - 1) * n + row] = 0.0;
    }
    // Restore triangularity: rotate rows (c, c+1) to kill the subdiagonal.
    for c in k..q - 1 {
        let (a, b) = (r_mat[c * n + c], r_mat[c * n + c + 1]);
        if b == 0.0 {
            continue;
        }
        let h = a.hypot(b);
        let (cs, sn) = (a / h, b / h);
        for col in c..q - 1 {
            let (top, bot) = (r_mat[col * n + c], r_mat[col * n + c + 1]);
            r_mat[col * n + c] = cs * top + sn * bot;
            r_mat[col * n + c + 1] = -sn * top + cs * bot;
        }
        r_mat[c * n + c + 1] = 0.0;
        let (left, right) = j_mat.split_at_mut((c + 1) * n);
        let left = &mut left[c * n..];
        for (l, rr) in left.iter_mut().zip(right[..n].iter_mut()) {
            let (jl, jr) = (*l, *rr);
            *l = cs * jl + sn * jr;
            *rr = -sn * jl + cs * jr;
        }
    }
    is_active[active[k]] = false;
    active.remove(k);
    u.remove(k);
}

/// Max of stationarity, primal infeasibility, dual infeasibility and
/// complementarity residuals.
pub(crate) fn kkt_residual<C: ConstraintSet>(
    cons: &C,
    w: &[f64],
    x: &[f64],
    active: &[usize],
    u: &[f64],
) -> f64 {
    let mut grad: Vec<f64> = x.iter().zip(w).map(|(a, b)| a - b).collect();
    let mut res = 0.0f64;
    for (&i, &ui) in active.iter().zip(u) {
        for &(k, v) in cons.normal(i) {
            grad[k] -= ui * v;
        }
        res = res.max((-ui).max(0.0));
        res = res.max((ui * slack(cons, i, x)).abs());
    }
    res = grad.iter().fold(res, |a, g| a.max(g.abs()));
    for i in 0..cons.len() {
        res = res.max((-slack(cons, i, x)).max(0.0));
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Dense {
        n: usize,
        rows: Vec<Vec<(usize, f64)>>,
        b: Vec<f64>,
        norms: Vec<f64>,
    }

    impl Dense {
        fn new(n: usize, rows: Vec<Vec<(usize, f64)>>, b: Vec<f64>) -> Self {
            let norms = rows
                .iter()
                .map(|r| r.iter().map(|(_, v)| v * v).sum::<f64>().sqrt())
                .collect();
            Self { n, rows, b, norms }
        }
    }

    impl ConstraintSet for Dense {
        fn dim(&self) -> usize {
            self.n
        }
        fn len(&self) -> usize {
            self.rows.len()
        }
        fn normal(&self, i: usize) -> &[(usize, f64)] {
            &self.rows[i]
        }
        fn bound(&self, i: usize) -> f64 {
            self.b[i]
        }
        fn normal_norm(&self, i: usize) -> f64 {
            self.norms[i]
        }
    }

    #[test]
    fn halfspace_projection_closed_form() {
        // x + 2y >= 1 from the origin: z = n/‖n‖² = (0.2, 0.4).
        let c = Dense::new(2, vec![vec![(0, 1.0), (1, 2.0)]], vec![1.0]);
        let out = project_dual_active_set(&c, &[0.0, 0.0], 100);
        assert!(out.converged);
        assert!((out.z[0] - 0.2).abs() < 1e-15 && (out.z[1] - 0.4).abs() < 1e-15);
        assert!(out.kkt_residual < 1e-14);
        assert_eq!(out.active, vec![0]);
    }

    #[test]
    fn handles_dependent_constraints() {
        // Duplicate and opposite-facing rows: x >= 1 twice, x + y >= 2, y >= 1.
        let c = Dense::new(
            2,
            vec![
                vec![(0, 1.0)],
                vec![(0, 1.0)],
                vec![(0, 1.0), (1, 1.0)],
                vec![(1, 1.0)],
            ],
            vec![1.0, 1.0, 2.0, 1.0],
        );
        let out = project_dual_active_set(&c, &[0.0, 0.0], 100);
        assert!(out.converged);
        assert!((out.z[0] - 1.0).abs() < 1e-12 && (out.z[1] - 1.0).abs() < 1e-12);
        assert!(out.kkt_residual < 1e-12);
    }

    #[test]
    fn reports_non_convergence() {
        let c = Dense::new(2, vec![vec![(0, 1.0)], vec![(1, 1.0)]], vec![1.0, 1.0]);
        let out = project_dual_active_set(&c, &[0.0, 0.0], 1);
        assert!(!out.converged);
        assert_eq!(out.iterations, 1);
    }
}
