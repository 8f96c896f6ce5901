use crate::error::{Error, Result};

/// A contiguous block of feature columns `F_i`, stored instance-major: the
/// `k` features of one instance are adjacent in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureShard {
    data: Vec<f64>,
    k: usize,
    col_offset: usize,
}

impl FeatureShard {
    pub fn new(data: Vec<f64>, k: usize, col_offset: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::DataFormat("feature dimension must be positive".into()));
        }
        if data.len() % k != 0 {
            return Err(Error::DataFormat(format!(
                "{} values do not form whole instances of dimension {k}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "feature {} of instance {} is {}",
                pos % k,
                col_offset + pos / k,
                data[pos]
            )));
        }
        Ok(Self {
            data,
            k,
            col_offset,
        })
    }

    /// Builds a shard from per-instance feature vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::DataFormat("instances have differing dimension".into()));
        }
        Self::new(rows.concat(), k, 0)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_cols(&self) -> usize {
        self.data.len() / self.k
    }

    pub fn col_offset(&self) -> usize {
        self.col_offset
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Features of local instance `i`.
    pub fn instance(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn view(&self) -> ShardView<'_> {
        ShardView {
            data: &self.data,
            k: self.k,
        }
    }

    /// Borrowed sub-block covering local instances `start..end`.
    pub fn columns(&self, start: usize, end: usize) -> ShardView<'_> {
        ShardView {
            data: &self.data[start * self.k..end * self.k],
            k: self.k,
        }
    }

    /// Copies instances `start..end` into a new shard whose offset is
    /// relative to the owning layout.
    pub fn slice(&self, start: usize, end: usize) -> FeatureShard {
        FeatureShard {
            data: self.data[start * self.k..end * self.k].to_vec(),
            k: self.k,
            col_offset: self.col_offset + start,
        }
    }

    /// Copies the selected instances into a new shard.
    pub fn select(&self, rows: &[usize]) -> FeatureShard {
        let mut data = Vec::with_capacity(rows.len() * self.k);
        for &i in rows {
            data.extend_from_slice(self.instance(i));
        }
        FeatureShard {
            data,
            k: self.k,
            col_offset: 0,
        }
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// The per-block kernels behind the four oracle queries. Local and remote
/// backends both run exactly these loops, so equal layouts give equal bits.
#[derive(Debug, Clone, Copy)]
pub struct ShardView<'a> {
    data: &'a [f64],
    k: usize,
}

impl<'a> ShardView<'a> {
    pub fn n_cols(&self) -> usize {
        self.data.len() / self.k
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn rows(&self) -> std::slice::ChunksExact<'a, f64> {
        self.data.chunks_exact(self.k)
    }

    /// `out = F_i v_i`.
    pub fn mat_vec(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n_cols());
        debug_assert_eq!(out.len(), self.k);
        out.fill(0.0);
        for (phi, &vi) in self.rows().zip(v) {
            for (o, &p) in out.iter_mut().zip(phi) {
                *o += vi * p;
            }
        }
    }

    /// `out = F_i^T u`.
    pub fn mat_t_vec(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.k);
        debug_assert_eq!(out.len(), self.n_cols());
        for (o, phi) in out.iter_mut().zip(self.rows()) {
            *o = dot(phi, u);
        }
    }

    /// Upper triangle of `F_i D_i F_i^T` into the row-major `k x k` buffer
    /// `out`. The strict lower triangle is left untouched.
    pub fn gram_upper(&self, d: &[f64], out: &mut [f64]) {
        let k = self.k;
        debug_assert_eq!(d.len(), self.n_cols());
        debug_assert_eq!(out.len(), k * k);
        for r in 0..k {
            out[r * k + r..(r + 1) * k].fill(0.0);
        }
        for (phi, &di) in self.rows().zip(d) {
            for r in 0..k {
                let s = di * phi[r];
                if s == 0.0 {
                    continue;
                }
                let row = &mut out[r * k + r..(r + 1) * k];
                for (o, &p) in row.iter_mut().zip(&phi[r..]) {
                    *o += s * p;
                }
            }
        }
    }

    /// `out[i] = phi_i^T A phi_i`, reading only the upper triangle of the
    /// row-major symmetric matrix `a`.
    pub fn diag_quadratic(&self, a: &[f64], out: &mut [f64]) {
        let k = self.k;
        debug_assert_eq!(a.len(), k * k);
        debug_assert_eq!(out.len(), self.n_cols());
        for (o, phi) in out.iter_mut().zip(self.rows()) {
            let mut acc = 0.0;
            for r in 0..k {
                let row = &a[r * k + r..(r + 1) * k];
                let off = dot(&row[1..], &phi[r + 1..]);
                acc += phi[r] * (row[0] * phi[r] + 2.0 * off);
            }
            *o = acc;
        }
    }
}

/// Copies the upper triangle of a row-major square matrix into its lower
/// triangle.
pub fn mirror_upper(a: &mut [f64], k: usize) {
    for r in 0..k {
        for c in 0..r {
            a[r * k + c] = a[c * k + r];
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_ragged() {
        assert!(matches!(
            FeatureShard::new(vec![1.0, f64::INFINITY], 2, 0),
            Err(Error::Numeric(_))
        ));
        assert!(matches!(
            FeatureShard::new(vec![1.0, 2.0, 3.0], 2, 0),
            Err(Error::DataFormat(_))
        ));
        assert!(FeatureShard::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn slice_keeps_global_offsets() {
        let f = FeatureShard::new((0..12).map(f64::from).collect(), 2, 0).unwrap();
        let s = f.slice(2, 5);
        assert_eq!(s.col_offset(), 2);
        assert_eq!(s.n_cols(), 3);
        assert_eq!(s.instance(0), &[4.0, 5.0]);
    }

    #[test]
    fn empty_shard_contributes_nothing() {
        let f = FeatureShard::new(vec![], 3, 7).unwrap();
        let v = f.view();
        let mut out = vec![1.0; 3];
        v.mat_vec(&[], &mut out);
        assert_eq!(out, vec![0.0; 3]);
        let mut g = vec![0.0; 9];
        v.gram_upper(&[], &mut g);
        assert!(g.iter().all(|&x| x == 0.0));
    }
}
