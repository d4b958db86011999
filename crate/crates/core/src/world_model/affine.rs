//! Ridge-regularized affine map from the stacked window to the next surface.

use nalgebra::{DMatrix, DVector};
use ndarray::{linalg::general_mat_mul, Array2, ArrayView2};

use super::{batch_inputs, batch_targets, Sample};
use crate::error::{Error, Result};

fn design(xs: &[Array2<f64>]) -> Array2<f64> {
    let (n, d) = xs[0].dim();
    let p = d * xs.len() + 1;
    let mut phi = Array2::zeros((n, p));
    for (t, x) in xs.iter().enumerate() {
        phi.slice_mut(ndarray::s![.., t * d..(t + 1) * d]).assign(x);
    }
    phi.column_mut(p - 1).fill(1.0);
    phi
}

pub(super) fn forward(weights: &[f64], xs: &[Array2<f64>], d: usize) -> Array2<f64> {
    let phi = design(xs);
    let w = ArrayView2::from_shape((d, phi.ncols()), weights).expect("weights match the window shape");
    let mut y = Array2::zeros((phi.nrows(), d));
    general_mat_mul(1.0, &phi, &w.t(), 0.0, &mut y);
    y
}

/// Solves `(ΦᵀΦ/n + ridge·I') B = ΦᵀY/n`, with `I'` sparing the intercept.
pub(super) fn fit(seqs: &[Vec<Vec<f64>>], samples: &[Sample], l: usize, d: usize, ridge: f64) -> Result<Vec<f64>> {
    let phi = design(&batch_inputs(seqs, samples, l, d));
    let y = batch_targets(seqs, samples, l, d);
    let n = samples.len() as f64;
    let p = phi.ncols();
    let mut gram = phi.t().dot(&phi) / n;
    for i in 0..p - 1 {
        gram[[i, i]] += ridge;
    }
    let rhs = phi.t().dot(&y) / n;
    let g = DMatrix::from_fn(p, p, |i, j| gram[[i, j]]);
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::InsufficientData("affine design matrix is singular; raise the ridge".into()))?;
    let mut weights = vec![0.0; d * p];
    for j in 0..d {
        let b = chol.solve(&DVector::from_fn(p, |i, _| rhs[[i, j]]));
        weights[j * p..(j + 1) * p].copy_from_slice(b.as_slice());
    }
    Ok(weights)
}
