//! Single-layer gated recurrent encoder with a dense decoder, batched.
//!
//! Gate convention (reset, update, candidate):
//! `r = σ(W_ir x + b_ir + W_hr h + b_hr)`, `z = σ(W_iz x + b_iz + W_hz h + b_hz)`,
//! `n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))`, `h' = (1 − z) ⊙ n + z ⊙ h`.
//! Output `y = W_out h_L + b_out`. All parameters live in one flat vector.

use ndarray::{linalg::general_mat_mul, s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct GruShape {
    pub d_in: usize,
    pub hidden: usize,
    pub d_out: usize,
}

impl GruShape {
    fn offsets(&self) -> [usize; 7] {
        let (d, h, o) = (self.d_in, self.hidden, self.d_out);
        let w_ih = 0;
        let w_hh = w_ih + 3 * h * d;
        let b_ih = w_hh + 3 * h * h;
        let b_hh = b_ih + 3 * h;
        let w_out = b_hh + 3 * h;
        let b_out = w_out + o * h;
        [w_ih, w_hh, b_ih, b_hh, w_out, b_out, b_out + o]
    }

    pub fn n_params(&self) -> usize {
        self.offsets()[6]
    }

    /// Uniform `±1/√hidden` for every parameter.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1.0 / (self.hidden as f64).sqrt();
        (0..self.n_params()).map(|_| rng.random_range(-k..k)).collect()
    }
}

struct Views<'a> {
    w_ih: ArrayView2<'a, f64>,
    w_hh: ArrayView2<'a, f64>,
    b_ih: ArrayView1<'a, f64>,
    b_hh: ArrayView1<'a, f64>,
    w_out: ArrayView2<'a, f64>,
    b_out: ArrayView1<'a, f64>,
}

struct ViewsMut<'a> {
    w_ih: ArrayViewMut2<'a, f64>,
    w_hh: ArrayViewMut2<'a, f64>,
    b_ih: ArrayViewMut1<'a, f64>,
    b_hh: ArrayViewMut1<'a, f64>,
    w_out: ArrayViewMut2<'a, f64>,
    b_out: ArrayViewMut1<'a, f64>,
}

fn views<'a>(shape: &GruShape, theta: &'a [f64]) -> Views<'a> {
    let o = shape.offsets();
    let (d, h, out) = (shape.d_in, shape.hidden, shape.d_out);
    let m2 = |a: usize, b: usize, r: usize, c: usize| ArrayView2::from_shape((r, c), &theta[o[a]..o[b]]).unwrap();
    let m1 = |a: usize, b: usize| ArrayView1::from(&theta[o[a]..o[b]]);
    Views {
        w_ih: m2(0, 1, 3 * h, d),
        w_hh: m2(1, 2, 3 * h, h),
        b_ih: m1(2, 3),
        b_hh: m1(3, 4),
        w_out: m2(4, 5, out, h),
        b_out: m1(5, 6),
    }
}

fn views_mut<'a>(shape: &GruShape, g: &'a mut [f64]) -> ViewsMut<'a> {
    let o = shape.offsets();
    let (d, h, out) = (shape.d_in, shape.hidden, shape.d_out);
    let (w_ih, rest) = g.split_at_mut(o[1]);
    let (w_hh, rest) = rest.split_at_mut(o[2] - o[1]);
    let (b_ih, rest) = rest.split_at_mut(o[3] - o[2]);
    let (b_hh, rest) = rest.split_at_mut(o[4] - o[3]);
    let (w_out, b_out) = rest.split_at_mut(o[5] - o[4]);
    ViewsMut {
        w_ih: ArrayViewMut2::from_shape((3 * h, d), w_ih).unwrap(),
        w_hh: ArrayViewMut2::from_shape((3 * h, h), w_hh).unwrap(),
        b_ih: ArrayViewMut1::from(b_ih),
        b_hh: ArrayViewMut1::from(b_hh),
        w_out: ArrayViewMut2::from_shape((out, h), w_out).unwrap(),
        b_out: ArrayViewMut1::from(b_out),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct StepCache {
    h_prev: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    gh_n: Array2<f64>,
}

/// `a · bᵀ + bias` broadcast over rows.
fn affine(a: &ArrayView2<f64>, w: &ArrayView2<f64>, bias: &ArrayView1<f64>) -> Array2<f64> {
    let mut out = Array2::from_shape_fn((a.nrows(), w.nrows()), |(_, j)| bias[j]);
    general_mat_mul(1.0, a, &w.t(), 1.0, &mut out);
    out
}

fn run(shape: &GruShape, theta: &[f64], xs: &[Array2<f64>], keep: bool) -> (Array2<f64>, Array2<f64>, Vec<StepCache>) {
    let v = views(shape, theta);
    let h_dim = shape.hidden;
    let batch = xs[0].nrows();
    let mut h = Array2::<f64>::zeros((batch, h_dim));
    let mut caches = Vec::with_capacity(if keep { xs.len() } else { 0 });
    for x in xs {
        let gi = affine(&x.view(), &v.w_ih, &v.b_ih);
        let gh = affine(&h.view(), &v.w_hh, &v.b_hh);
        let mut r = Array2::zeros((batch, h_dim));
        let mut z = Array2::zeros((batch, h_dim));
        let mut n = Array2::zeros((batch, h_dim));
        let mut h_new = Array2::zeros((batch, h_dim));
        for b in 0..batch {
            for j in 0..h_dim {
                let rv = sigmoid(gi[[b, j]] + gh[[b, j]]);
                let zv = sigmoid(gi[[b, h_dim + j]] + gh[[b, h_dim + j]]);
                let nv = (gi[[b, 2 * h_dim + j]] + rv * gh[[b, 2 * h_dim + j]]).tanh();
                r[[b, j]] = rv;
                z[[b, j]] = zv;
                n[[b, j]] = nv;
                h_new[[b, j]] = (1.0 - zv) * nv + zv * h[[b, j]];
            }
        }
        if keep {
            caches.push(StepCache {
                h_prev: h,
                r,
                z,
                n,
                gh_n: gh.slice(s![.., 2 * h_dim..]).to_owned(),
            });
        }
        h = h_new;
    }
    let y = affine(&h.view(), &v.w_out, &v.b_out);
    (y, h, caches)
}

/// Batched forward pass. `xs[t]` is the `(batch, d_in)` input at window position `t`.
pub(crate) fn forward(shape: &GruShape, theta: &[f64], xs: &[Array2<f64>]) -> Array2<f64> {
    run(shape, theta, xs, false).0
}

/// Mean squared error over all `batch × d_out` outputs and its gradient.
pub(crate) fn mse_and_grad(shape: &GruShape, theta: &[f64], xs: &[Array2<f64>], target: &Array2<f64>) -> (f64, Vec<f64>) {
    let (y, h_last, caches) = run(shape, theta, xs, true);
    let v = views(shape, theta);
    let h_dim = shape.hidden;
    let batch = target.nrows();
    let scale = 1.0 / (batch * shape.d_out) as f64;
    let diff = &y - target;
    let loss = diff.iter().map(|e| e * e).sum::<f64>() * scale;
    let dy = diff * (2.0 * scale);

    let mut grad = vec![0.0; shape.n_params()];
    let mut g = views_mut(shape, &mut grad);
    general_mat_mul(1.0, &dy.t(), &h_last, 0.0, &mut g.w_out);
    g.b_out.assign(&dy.sum_axis(Axis(0)));
    let mut dh = dy.dot(&v.w_out);

    for (x, c) in xs.iter().zip(&caches).rev() {
        let mut dgi = Array2::<f64>::zeros((batch, 3 * h_dim));
        let mut dgh = Array2::<f64>::zeros((batch, 3 * h_dim));
        let mut dh_prev = Array2::<f64>::zeros((batch, h_dim));
        for b in 0..batch {
            for j in 0..h_dim {
                let (r, z, n) = (c.r[[b, j]], c.z[[b, j]], c.n[[b, j]]);
                let dhv = dh[[b, j]];
                let dn = dhv * (1.0 - z);
                let dz = dhv * (c.h_prev[[b, j]] - n);
                dh_prev[[b, j]] = dhv * z;
                let dan = dn * (1.0 - n * n);
                let dar = dan * c.gh_n[[b, j]] * r * (1.0 - r);
                let daz = dz * z * (1.0 - z);
                dgi[[b, j]] = dar;
                dgi[[b, h_dim + j]] = daz;
                dgi[[b, 2 * h_dim + j]] = dan;
                dgh[[b, j]] = dar;
                dgh[[b, h_dim + j]] = daz;
                dgh[[b, 2 * h_dim + j]] = dan * r;
            }
        }
        general_mat_mul(1.0, &dgi.t(), x, 1.0, &mut g.w_ih);
        general_mat_mul(1.0, &dgh.t(), &c.h_prev, 1.0, &mut g.w_hh);
        g.b_ih += &dgi.sum_axis(Axis(0));
        g.b_hh += &dgh.sum_axis(Axis(0));
        general_mat_mul(1.0, &dgh, &v.w_hh, 1.0, &mut dh_prev);
        dh = dh_prev;
    }
    (loss, grad)
}

/// Copies `rows` (each of length `d`) into a `(rows.len(), d)` matrix.
pub(crate) fn stack_rows<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>, d: usize) -> Array2<f64> {
    let n = rows.len();
    let mut out = Array2::zeros((n, d));
    for (i, r) in rows.enumerate() {
        out.row_mut(i).assign(&ArrayView1::from(r));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (GruShape, Vec<f64>, Vec<Array2<f64>>, Array2<f64>) {
        let shape = GruShape {
            d_in: 6,
            hidden: 4,
            d_out: 6,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta: Vec<f64> = (0..shape.n_params()).map(|_| rng.random_range(-0.8..0.8)).collect();
        let xs: Vec<Array2<f64>> = (0..2)
            .map(|_| Array2::from_shape_fn((5, 6), |_| rng.random_range(-1.0..1.0)))
            .collect();
        let target = Array2::from_shape_fn((5, 6), |_| rng.random_range(-1.0..1.0));
        (shape, theta, xs, target)
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let (shape, theta, xs, target) = tiny();
        let (_, grad) = mse_and_grad(&shape, &theta, &xs, &target);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..theta.len() {
            let mut p = theta.clone();
            p[i] += h;
            let up = mse_and_grad(&shape, &p, &xs, &target).0;
            p[i] -= 2.0 * h;
            let down = mse_and_grad(&shape, &p, &xs, &target).0;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-4, "worst relative gradient error {worst:e}");
    }

    #[test]
    fn forward_matches_loss_path() {
        let (shape, theta, xs, target) = tiny();
        let y = forward(&shape, &theta, &xs);
        let loss = (&y - &target).mapv(|e| e * e).mean().unwrap();
        assert!((loss - mse_and_grad(&shape, &theta, &xs, &target).0).abs() < 1e-15);
    }

    #[test]
    fn batch_rows_are_independent() {
        let (shape, theta, xs, _) = tiny();
        let full = forward(&shape, &theta, &xs);
        let single: Vec<Array2<f64>> = xs.iter().map(|x| x.slice(s![2..3, ..]).to_owned()).collect();
        let one = forward(&shape, &theta, &single);
        for j in 0..6 {
            assert!((one[[0, j]] - full[[2, j]]).abs() < 1e-14);
        }
    }
}
