//! Actor-critic network: shared tanh encoder, linear mean and value heads,
//! state-independent log standard deviation. Parameters in one flat vector.

use ndarray::{linalg::general_mat_mul, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub n_in: usize,
    pub hidden: Vec<usize>,
    pub n_act: usize,
}

/// Offsets of `(weight, bias)` per dense layer: encoder layers, mean head, value head.
struct Layout {
    dense: Vec<(usize, usize, usize, usize)>,
    log_std: usize,
    total: usize,
}

impl MlpShape {
    fn dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.n_in;
        for &h in &self.hidden {
            dims.push((h, prev));
            prev = h;
        }
        dims.push((self.n_act, prev));
        dims.push((1, prev));
        dims
    }

    fn layout(&self) -> Layout {
        let mut off = 0;
        let dense = self
            .dims()
            .into_iter()
            .map(|(out, inp)| {
                let w = off;
                off += out * inp;
                let b = off;
                off += out;
                (w, b, out, inp)
            })
            .collect();
        Layout {
            dense,
            log_std: off,
            total: off + self.n_act,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().total
    }

    /// Uniform `±1/√fan_in` weights, zero biases, mean head scaled by 0.01.
    pub fn init(&self, seed: u64, log_std: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lay = self.layout();
        let mut theta = vec![0.0; lay.total];
        let n_dense = lay.dense.len();
        for (li, &(w, _, out, inp)) in lay.dense.iter().enumerate() {
            let k = 1.0 / (inp as f64).sqrt();
            let gain = if li == n_dense - 2 { 0.01 } else { 1.0 };
            for x in &mut theta[w..w + out * inp] {
                *x = gain * rng.random_range(-k..k);
            }
        }
        theta[lay.log_std..].iter_mut().for_each(|x| *x = log_std);
        theta
    }

    pub fn log_std<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.layout().log_std..]
    }
}

pub struct Forward {
    pub mean: Array2<f64>,
    pub value: Array1<f64>,
    /// Input followed by every hidden activation.
    acts: Vec<Array2<f64>>,
}

fn dense_view<'a>(theta: &'a [f64], l: (usize, usize, usize, usize)) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
    let (w, b, out, inp) = l;
    (
        ArrayView2::from_shape((out, inp), &theta[w..w + out * inp]).unwrap(),
        ArrayView1::from(&theta[b..b + out]),
    )
}

fn affine(x: &Array2<f64>, w: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Array2<f64> {
    let mut out = Array2::from_shape_fn((x.nrows(), w.nrows()), |(_, j)| b[j]);
    general_mat_mul(1.0, x, &w.t(), 1.0, &mut out);
    out
}

pub fn forward(shape: &MlpShape, theta: &[f64], x: &Array2<f64>) -> Forward {
    let lay = shape.layout();
    let n_hidden = shape.hidden.len();
    let mut acts = vec![x.clone()];
    for l in 0..n_hidden {
        let (w, b) = dense_view(theta, lay.dense[l]);
        let h = affine(acts.last().unwrap(), &w, &b).mapv_into(f64::tanh);
        acts.push(h);
    }
    let top = acts.last().unwrap();
    let (wm, bm) = dense_view(theta, lay.dense[n_hidden]);
    let (wv, bv) = dense_view(theta, lay.dense[n_hidden + 1]);
    let mean = affine(top, &wm, &bm);
    let value = affine(top, &wv, &bv).column(0).to_owned();
    Forward { mean, value, acts }
}

/// Gradient of a loss given its partials w.r.t. the mean head, the value head
/// and the log standard deviations.
pub fn backward(shape: &MlpShape, theta: &[f64], fwd: &Forward, d_mean: &Array2<f64>, d_value: &Array1<f64>, d_log_std: &[f64]) -> Vec<f64> {
    let lay = shape.layout();
    let n_hidden = shape.hidden.len();
    let mut grad = vec![0.0; lay.total];
    let top = fwd.acts.last().unwrap();

    let dv2 = d_value.view().insert_axis(Axis(1));
    let mut d_top;
    {
        let (wm, _) = dense_view(theta, lay.dense[n_hidden]);
        let (wv, _) = dense_view(theta, lay.dense[n_hidden + 1]);
        d_top = d_mean.dot(&wm);
        general_mat_mul(1.0, &dv2, &wv, 1.0, &mut d_top);
    }
    for (head, dout) in [(n_hidden, d_mean.view()), (n_hidden + 1, dv2)] {
        let (w, b, out, inp) = lay.dense[head];
        let mut gw = ArrayViewMut2::from_shape((out, inp), &mut grad[w..w + out * inp]).unwrap();
        general_mat_mul(1.0, &dout.t(), top, 0.0, &mut gw);
        ArrayViewMut1::from(&mut grad[b..b + out]).assign(&dout.sum_axis(Axis(0)));
    }
    for l in (0..n_hidden).rev() {
        let h = &fwd.acts[l + 1];
        let dz = &d_top * &h.mapv(|v| 1.0 - v * v);
        let (w, b, out, inp) = lay.dense[l];
        {
            let mut gw = ArrayViewMut2::from_shape((out, inp), &mut grad[w..w + out * inp]).unwrap();
            general_mat_mul(1.0, &dz.t(), &fwd.acts[l], 0.0, &mut gw);
            ArrayViewMut1::from(&mut grad[b..b + out]).assign(&dz.sum_axis(Axis(0)));
        }
        if l > 0 {
            let (wl, _) = dense_view(theta, lay.dense[l]);
            d_top = dz.dot(&wl);
        }
    }
    grad[lay.log_std..].copy_from_slice(d_log_std);
    grad
}
