//! The feature-matrix oracle.
//!
//! Everything the GP needs from the `k x N` feature matrix `F` is expressed
//! through four queries: `F v`, `F^T u`, `F D F^T` for diagonal `D` and
//! `diag(F^T A F)`. Each decomposes over column blocks `F = [F_1, .., F_p]`
//! as a sum (first and third) or a concatenation (second and fourth), which
//! is what the local thread pool and the networked backend exploit.

mod layout;
mod local;
mod shard;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub use layout::ShardLayout;
pub use local::LocalOracle;
pub use shard::{mirror_upper, FeatureShard, ShardView};
pub(crate) use shard::dot;

/// Absolute asymmetry tolerated in the argument of `diag_quadratic`,
/// relative to the largest entry when that exceeds one.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// The four queries over a feature matrix with `k` rows and `N` columns.
///
/// All `_into` methods write into caller-provided buffers.
pub trait FeatureOracle: Send + Sync {
    /// N
    fn n_instances(&self) -> usize;

    /// k
    fn n_features(&self) -> usize;

    /// `out = F v`.
    fn mat_vec_into(&self, v: &[f64], out: &mut [f64]) -> Result<()>;

    /// `out = F^T u`.
    fn mat_t_vec_into(&self, u: &[f64], out: &mut [f64]) -> Result<()>;

    /// `out = F diag(d) F^T`, exactly symmetric.
    fn weighted_gram_into(&self, d: &[f64], out: &mut DMatrix<f64>) -> Result<()>;

    /// `out = diag(F^T A F)`.
    fn diag_quadratic_into(&self, a: &DMatrix<f64>, out: &mut [f64]) -> Result<()>;

    fn mat_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_features()];
        self.mat_vec_into(v, &mut out)?;
        Ok(out)
    }

    fn mat_t_vec(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_instances()];
        self.mat_t_vec_into(u, &mut out)?;
        Ok(out)
    }

    fn weighted_gram(&self, d: &[f64]) -> Result<DMatrix<f64>> {
        let k = self.n_features();
        let mut out = DMatrix::zeros(k, k);
        self.weighted_gram_into(d, &mut out)?;
        Ok(out)
    }

    fn diag_quadratic(&self, a: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_instances()];
        self.diag_quadratic_into(a, &mut out)?;
        Ok(out)
    }
}

impl<T: FeatureOracle + ?Sized> FeatureOracle for &T {
    fn n_instances(&self) -> usize {
        (**self).n_instances()
    }
    fn n_features(&self) -> usize {
        (**self).n_features()
    }
    fn mat_vec_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).mat_vec_into(v, out)
    }
    fn mat_t_vec_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).mat_t_vec_into(u, out)
    }
    fn weighted_gram_into(&self, d: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        (**self).weighted_gram_into(d, out)
    }
    fn diag_quadratic_into(&self, a: &DMatrix<f64>, out: &mut [f64]) -> Result<()> {
        (**self).diag_quadratic_into(a, out)
    }
}

impl<T: FeatureOracle + ?Sized> FeatureOracle for Box<T> {
    fn n_instances(&self) -> usize {
        (**self).n_instances()
    }
    fn n_features(&self) -> usize {
        (**self).n_features()
    }
    fn mat_vec_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).mat_vec_into(v, out)
    }
    fn mat_t_vec_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        (**self).mat_t_vec_into(u, out)
    }
    fn weighted_gram_into(&self, d: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        (**self).weighted_gram_into(d, out)
    }
    fn diag_quadratic_into(&self, a: &DMatrix<f64>, out: &mut [f64]) -> Result<()> {
        (**self).diag_quadratic_into(a, out)
    }
}

pub(crate) fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Dimension(format!(
            "{what} has length {got}, expected {expected}"
        )));
    }
    Ok(())
}

pub(crate) fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("{what}[{i}] = {}", v[i])));
    }
    Ok(())
}

pub(crate) fn check_positive(what: &str, d: &[f64]) -> Result<()> {
    if let Some(i) = d.iter().position(|&x| !(x.is_finite() && x > 0.0)) {
        return Err(Error::Domain(format!(
            "{what}[{i}] = {}; entries must be positive",
            d[i]
        )));
    }
    Ok(())
}

/// Validates a square symmetric matrix stored row-major.
pub(crate) fn check_symmetric(a: &[f64], k: usize) -> Result<()> {
    check_len("matrix", a.len(), k * k)?;
    check_finite("matrix", a)?;
    let scale = a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    for r in 0..k {
        for c in r + 1..k {
            let diff = (a[r * k + c] - a[c * k + r]).abs();
            if diff > SYMMETRY_TOL * scale {
                return Err(Error::Domain(format!(
                    "matrix is not symmetric: |A[{r},{c}] - A[{c},{r}]| = {diff:e}"
                )));
            }
        }
    }
    Ok(())
}

/// Row-major copy of a square nalgebra matrix.
pub(crate) fn to_row_major(a: &DMatrix<f64>) -> Vec<f64> {
    let k = a.nrows();
    let mut out = vec![0.0; k * k];
    for r in 0..k {
        for c in 0..a.ncols() {
            out[r * k + c] = a[(r, c)];
        }
    }
    out
}

/// Sums per-shard partial vectors in shard order.
pub(crate) fn reduce_sum<'a>(mut partials: impl Iterator<Item = &'a [f64]>, out: &mut [f64]) {
    match partials.next() {
        Some(first) => out.copy_from_slice(first),
        None => out.fill(0.0),
    }
    for p in partials {
        for (o, &x) in out.iter_mut().zip(p) {
            *o += x;
        }
    }
}

/// Sums the upper triangles of row-major partial Gram matrices in shard
/// order and writes the mirrored result.
pub(crate) fn reduce_gram<'a>(
    partials: impl Iterator<Item = &'a [f64]>,
    k: usize,
    out: &mut DMatrix<f64>,
) {
    let mut first = true;
    for p in partials {
        for r in 0..k {
            for c in r..k {
                let x = p[r * k + c];
                if first {
                    out[(r, c)] = x;
                } else {
                    out[(r, c)] += x;
                }
            }
        }
        first = false;
    }
    if first {
        out.fill(0.0);
    }
    for r in 0..k {
        for c in 0..r {
            out[(r, c)] = out[(c, r)];
        }
    }
}
