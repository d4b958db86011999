//! Maturity × log-moneyness lattice and the surfaces defined on it.
//!
//! Every surface is stored as a flat vector in maturity-major order: all
//! strikes of the first maturity, then all strikes of the second, and so on,
//! so `index(i_k, j_t) = j_t * n_k + i_k`. Calendar stencils are therefore
//! stride-`n_k` index pairs and butterfly stencils are contiguous triples.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named grid configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPreset {
    /// 8 maturities from one month to two years, 11 log-moneyness points
    /// spanning strikes 0.5× to 1.5× spot.
    Default,
    /// 2 maturities × 3 strikes, for tests and smoke runs.
    Tiny,
}

impl fmt::Display for GridPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridPreset::Default => f.write_str("default"),
            GridPreset::Tiny => f.write_str("tiny"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    maturities: Vec<f64>,
    log_moneyness: Vec<f64>,
}

impl SurfaceGrid {
    pub fn new(maturities: Vec<f64>, log_moneyness: Vec<f64>) -> Result<Self> {
        if maturities.is_empty() || log_moneyness.is_empty() {
            return Err(Error::InvalidGrid("grid axes must be nonempty".into()));
        }
        if maturities.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(Error::InvalidGrid("maturities must be finite and positive".into()));
        }
        if maturities.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidGrid("maturities must be strictly increasing".into()));
        }
        if log_moneyness.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidGrid("log-moneyness must be finite".into()));
        }
        if log_moneyness.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidGrid("log-moneyness must be strictly increasing".into()));
        }
        Ok(Self {
            maturities,
            log_moneyness,
        })
    }

    pub fn preset(preset: GridPreset) -> Self {
        match preset {
            GridPreset::Default => {
                let maturities = [1.0, 2.0, 3.0, 6.0, 9.0, 12.0, 18.0, 24.0]
                    .iter()
                    .map(|m| m / 12.0)
                    .collect();
                Self::new(maturities, linspace(0.5f64.ln(), 1.5f64.ln(), 11))
                    .expect("default grid is valid")
            }
            GridPreset::Tiny => Self::new(vec![0.25, 1.0], linspace(0.5f64.ln(), 1.5f64.ln(), 3))
                .expect("tiny grid is valid"),
        }
    }

    pub fn maturities(&self) -> &[f64] {
        &self.maturities
    }

    pub fn log_moneyness(&self) -> &[f64] {
        &self.log_moneyness
    }

    pub fn n_t(&self) -> usize {
        self.maturities.len()
    }

    pub fn n_k(&self) -> usize {
        self.log_moneyness.len()
    }

    /// Flattened dimension `n_t * n_k`.
    pub fn d(&self) -> usize {
        self.n_t() * self.n_k()
    }

    #[inline]
    pub fn index(&self, i_k: usize, j_t: usize) -> usize {
        debug_assert!(i_k < self.n_k() && j_t < self.n_t());
        j_t * self.n_k() + i_k
    }

    /// Inverse of [`SurfaceGrid::index`]: returns `(i_k, j_t)`.
    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.n_k(), index / self.n_k())
    }

    /// Whether the log-moneyness axis is equally spaced to relative tolerance `rtol`.
    pub fn has_uniform_strikes(&self, rtol: f64) -> bool {
        let k = &self.log_moneyness;
        if k.len() < 3 {
            return true;
        }
        let h = (k[k.len() - 1] - k[0]) / (k.len() - 1) as f64;
        k.windows(2).all(|p| ((p[1] - p[0]) - h).abs() <= rtol * h.abs())
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let h = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + h * i as f64 })
        .collect()
}

/// Total-variance surface `w = σ² T` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalVarianceSurface {
    grid: Arc<SurfaceGrid>,
    w: Vec<f64>,
}

impl TotalVarianceSurface {
    pub fn new(grid: Arc<SurfaceGrid>, w: Vec<f64>) -> Result<Self> {
        if w.len() != grid.d() {
            return Err(Error::GridMismatch {
                expected: grid.d(),
                actual: w.len(),
            });
        }
        if let Some(i) = w.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite total variance at index {i}"
            )));
        }
        Ok(Self { grid, w })
    }

    pub fn constant(grid: Arc<SurfaceGrid>, value: f64) -> Self {
        let w = vec![value; grid.d()];
        Self { grid, w }
    }

    pub fn grid(&self) -> &Arc<SurfaceGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn into_values(self) -> Vec<f64> {
        self.w
    }

    pub fn get(&self, i_k: usize, j_t: usize) -> f64 {
        self.w[self.grid.index(i_k, j_t)]
    }

    pub fn mean(&self) -> f64 {
        self.w.iter().sum::<f64>() / self.w.len() as f64
    }

    /// Same grid, new values. Values must have the grid's dimension.
    pub fn with_values(&self, w: Vec<f64>) -> Result<Self> {
        Self::new(self.grid.clone(), w)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["maturity", "log_moneyness", "total_variance"])?;
        for (idx, w) in self.w.iter().enumerate() {
            let (i_k, j_t) = self.grid.coords(idx);
            wtr.write_record([
                self.grid.maturities[j_t].to_string(),
                self.grid.log_moneyness[i_k].to_string(),
                w.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a surface CSV, reconstructing and validating the grid from its rows.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let rows = read_rows(input)?;
        let mut maturities: Vec<f64> = Vec::new();
        for (t, _, _) in &rows {
            if maturities.last() != Some(t) {
                maturities.push(*t);
            }
        }
        let n_t = maturities.len();
        if n_t == 0 || rows.len() % n_t != 0 {
            return Err(malformed("rows do not form a rectangular grid"));
        }
        let n_k = rows.len() / n_t;
        let log_moneyness: Vec<f64> = rows[..n_k].iter().map(|r| r.1).collect();
        let grid = SurfaceGrid::new(maturities, log_moneyness)?;
        Self::from_rows(Arc::new(grid), &rows)
    }

    /// Reads a surface CSV and checks that it lies on `grid`.
    pub fn read_csv_on<R: Read>(input: R, grid: Arc<SurfaceGrid>) -> Result<Self> {
        let rows = read_rows(input)?;
        Self::from_rows(grid, &rows)
    }

    pub fn load_csv(path: &Path, grid: Arc<SurfaceGrid>) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv_on(std::io::BufReader::new(file), grid).map_err(|e| match e {
            Error::Malformed { reason, .. } => Error::Malformed {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    fn from_rows(grid: Arc<SurfaceGrid>, rows: &[(f64, f64, f64)]) -> Result<Self> {
        if rows.len() != grid.d() {
            return Err(Error::GridMismatch {
                expected: grid.d(),
                actual: rows.len(),
            });
        }
        for (idx, (t, k, _)) in rows.iter().enumerate() {
            let (i_k, j_t) = grid.coords(idx);
            if *t != grid.maturities[j_t] || *k != grid.log_moneyness[i_k] {
                return Err(malformed(&format!(
                    "row {idx} at (T={t}, k={k}) does not match grid point (T={}, k={})",
                    grid.maturities[j_t], grid.log_moneyness[i_k]
                )));
            }
        }
        Self::new(grid, rows.iter().map(|r| r.2).collect())
    }
}

fn malformed(reason: &str) -> Error {
    Error::Malformed {
        path: "<surface csv>".into(),
        reason: reason.to_string(),
    }
}

fn read_rows<R: Read>(input: R) -> Result<Vec<(f64, f64, f64)>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["maturity", "log_moneyness", "total_variance"] {
        return Err(malformed("expected header maturity,log_moneyness,total_variance"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| malformed("unparseable numeric field"))
        };
        rows.push((parse(0)?, parse(1)?, parse(2)?));
    }
    Ok(rows)
}

/// Annualized implied volatility surface.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpliedVolSurface {
    grid: Arc<SurfaceGrid>,
    sigma: Vec<f64>,
}

impl ImpliedVolSurface {
    pub fn new(grid: Arc<SurfaceGrid>, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != grid.d() {
            return Err(Error::GridMismatch {
                expected: grid.d(),
                actual: sigma.len(),
            });
        }
        if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidParameter(
                "implied volatilities must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { grid, sigma })
    }

    pub fn grid(&self) -> &Arc<SurfaceGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.sigma
    }
}

/// `w = σ² T` at every grid point.
pub fn vol_to_total_variance(iv: &ImpliedVolSurface) -> TotalVarianceSurface {
    let grid = iv.grid.clone();
    let w = iv
        .sigma
        .iter()
        .enumerate()
        .map(|(idx, s)| s * s * grid.maturities[grid.coords(idx).1])
        .collect();
    TotalVarianceSurface { grid, w }
}

/// `σ = sqrt(w / T)`; fails on negative total variance.
pub fn total_variance_to_vol(tv: &TotalVarianceSurface) -> Result<ImpliedVolSurface> {
    if let Some((index, &value)) = tv.w.iter().enumerate().find(|(_, w)| **w < 0.0) {
        return Err(Error::NegativeVariance { index, value });
    }
    let grid = tv.grid.clone();
    let sigma = tv
        .w
        .iter()
        .enumerate()
        .map(|(idx, w)| (w / grid.maturities[grid.coords(idx).1]).sqrt())
        .collect();
    Ok(ImpliedVolSurface { grid, sigma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn single(t: f64) -> Arc<SurfaceGrid> {
        Arc::new(SurfaceGrid::new(vec![t], vec![0.0]).unwrap())
    }

    #[test]
    fn presets_have_expected_shape() {
        let g = SurfaceGrid::preset(GridPreset::Default);
        assert_eq!((g.n_t(), g.n_k(), g.d()), (8, 11, 88));
        assert_relative_eq!(g.maturities()[0], 1.0 / 12.0);
        assert_relative_eq!(g.maturities()[7], 2.0);
        assert_relative_eq!(g.log_moneyness()[0], 0.5f64.ln());
        assert_relative_eq!(g.log_moneyness()[10], 1.5f64.ln());
        assert!(g.has_uniform_strikes(1e-12));

        let t = SurfaceGrid::preset(GridPreset::Tiny);
        assert_eq!((t.n_t(), t.n_k(), t.d()), (2, 3, 6));
    }

    #[test]
    fn flattening_is_a_bijection() {
        let g = SurfaceGrid::preset(GridPreset::Default);
        let mut seen = vec![false; g.d()];
        for j in 0..g.n_t() {
            for i in 0..g.n_k() {
                let idx = g.index(i, j);
                assert_eq!(idx, j * g.n_k() + i);
                assert!(!seen[idx]);
                seen[idx] = true;
                assert_eq!(g.coords(idx), (i, j));
            }
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(SurfaceGrid::new(vec![0.5, 0.5], vec![0.0]).is_err());
        assert!(SurfaceGrid::new(vec![0.0, 0.5], vec![0.0]).is_err());
        assert!(SurfaceGrid::new(vec![0.5], vec![0.1, -0.1]).is_err());
        assert!(SurfaceGrid::new(vec![], vec![0.0]).is_err());
    }

    #[test]
    fn vol_to_variance_examples() {
        let g = single(1.0);
        let w = vol_to_total_variance(&ImpliedVolSurface::new(g.clone(), vec![0.2]).unwrap());
        assert_relative_eq!(w.values()[0], 0.04, epsilon = 1e-15);

        let g = single(0.25);
        let w = vol_to_total_variance(&ImpliedVolSurface::new(g, vec![0.2]).unwrap());
        assert_relative_eq!(w.values()[0], 0.01, epsilon = 1e-15);

        let g = Arc::new(SurfaceGrid::preset(GridPreset::Tiny));
        let w = vol_to_total_variance(&ImpliedVolSurface::new(g, vec![0.0; 6]).unwrap());
        assert!(w.values().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn variance_to_vol_examples() {
        let g = single(1.0);
        let iv = total_variance_to_vol(&TotalVarianceSurface::new(g.clone(), vec![0.04]).unwrap())
            .unwrap();
        assert_relative_eq!(iv.values()[0], 0.2, epsilon = 1e-15);
        let iv = total_variance_to_vol(&TotalVarianceSurface::new(g.clone(), vec![0.0]).unwrap())
            .unwrap();
        assert_eq!(iv.values()[0], 0.0);
        let err = total_variance_to_vol(&TotalVarianceSurface::new(g, vec![-0.01]).unwrap());
        assert!(matches!(err, Err(Error::NegativeVariance { index: 0, .. })));
    }

    #[test]
    fn csv_roundtrip_and_validation() {
        let g = Arc::new(SurfaceGrid::preset(GridPreset::Tiny));
        let s = TotalVarianceSurface::new(g.clone(), vec![0.01, 0.02, 0.03, 0.04, 0.05, 0.06])
            .unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("maturity,log_moneyness,total_variance\n"));
        assert_eq!(text.lines().count(), 7);

        let back = TotalVarianceSurface::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values(), s.values());
        assert_eq!(**back.grid(), *g);

        let other = Arc::new(SurfaceGrid::preset(GridPreset::Default));
        assert!(TotalVarianceSurface::read_csv_on(buf.as_slice(), other).is_err());
    }

    proptest! {
        #[test]
        fn vol_variance_roundtrip(sig in proptest::collection::vec(0.0f64..3.0, 88)) {
            let g = Arc::new(SurfaceGrid::preset(GridPreset::Default));
            let iv = ImpliedVolSurface::new(g, sig.clone()).unwrap();
            let back = total_variance_to_vol(&vol_to_total_variance(&iv)).unwrap();
            for (a, b) in sig.iter().zip(back.values()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
            }
        }
    }
}
