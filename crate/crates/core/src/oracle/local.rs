use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{
    check_finite, check_len, check_positive, check_symmetric, reduce_gram, reduce_sum,
    to_row_major, FeatureOracle, FeatureShard, ShardLayout,
};
use crate::error::{Error, Result};

/// In-memory oracle. Shards are processed on the rayon pool and their
/// partial results reduced in shard order, so results are deterministic for
/// a fixed layout.
#[derive(Debug, Clone)]
pub struct LocalOracle {
    features: FeatureShard,
    layout: ShardLayout,
}

impl LocalOracle {
    /// One shard per rayon thread.
    pub fn new(features: FeatureShard) -> Self {
        let p = rayon::current_num_threads().max(1);
        Self::with_shards(features, p)
    }

    pub fn with_shards(features: FeatureShard, p: usize) -> Self {
        let layout = ShardLayout::even(features.n_cols(), p.max(1))
            .expect("p >= 1 always gives a valid layout");
        Self { features, layout }
    }

    pub fn with_layout(features: FeatureShard, layout: ShardLayout) -> Result<Self> {
        if layout.n_instances() != features.n_cols() {
            return Err(Error::Dimension(format!(
                "layout covers {} instances, features have {}",
                layout.n_instances(),
                features.n_cols()
            )));
        }
        Ok(Self { features, layout })
    }

    pub fn features(&self) -> &FeatureShard {
        &self.features
    }

    pub fn layout(&self) -> &ShardLayout {
        &self.layout
    }

    pub fn into_features(self) -> FeatureShard {
        self.features
    }
}

impl FeatureOracle for LocalOracle {
    fn n_instances(&self) -> usize {
        self.features.n_cols()
    }

    fn n_features(&self) -> usize {
        self.features.k()
    }

    fn mat_vec_into(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        let k = self.n_features();
        check_len("v", v.len(), self.n_instances())?;
        check_len("output", out.len(), k)?;
        check_finite("v", v)?;
        if self.layout.n_shards() == 1 {
            self.features.view().mat_vec(v, out);
            return Ok(());
        }
        let partials: Vec<Vec<f64>> = self
            .layout
            .ranges()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|r| {
                let mut part = vec![0.0; k];
                self.features
                    .columns(r.start, r.end)
                    .mat_vec(&v[r.clone()], &mut part);
                part
            })
            .collect();
        reduce_sum(partials.iter().map(Vec::as_slice), out);
        Ok(())
    }

    fn mat_t_vec_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        check_len("u", u.len(), self.n_features())?;
        check_len("output", out.len(), self.n_instances())?;
        check_finite("u", u)?;
        let mut chunks = Vec::with_capacity(self.layout.n_shards());
        let mut rest = out;
        for r in self.layout.ranges() {
            let (head, tail) = rest.split_at_mut(r.len());
            chunks.push((r, head));
            rest = tail;
        }
        chunks.into_par_iter().for_each(|(r, chunk)| {
            self.features.columns(r.start, r.end).mat_t_vec(u, chunk);
        });
        Ok(())
    }

    fn weighted_gram_into(&self, d: &[f64], out: &mut DMatrix<f64>) -> Result<()> {
        let k = self.n_features();
        check_len("d", d.len(), self.n_instances())?;
        check_positive("d", d)?;
        if out.shape() != (k, k) {
            return Err(Error::Dimension(format!(
                "output is {:?}, expected ({k}, {k})",
                out.shape()
            )));
        }
        let partials: Vec<Vec<f64>> = self
            .layout
            .ranges()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|r| {
                let mut part = vec![0.0; k * k];
                self.features
                    .columns(r.start, r.end)
                    .gram_upper(&d[r.clone()], &mut part);
                part
            })
            .collect();
        reduce_gram(partials.iter().map(Vec::as_slice), k, out);
        Ok(())
    }

    fn diag_quadratic_into(&self, a: &DMatrix<f64>, out: &mut [f64]) -> Result<()> {
        let k = self.n_features();
        if a.shape() != (k, k) {
            return Err(Error::Dimension(format!(
                "matrix is {:?}, expected ({k}, {k})",
                a.shape()
            )));
        }
        check_len("output", out.len(), self.n_instances())?;
        let a = to_row_major(a);
        check_symmetric(&a, k)?;
        let mut chunks = Vec::with_capacity(self.layout.n_shards());
        let mut rest = out;
        for r in self.layout.ranges() {
            let (head, tail) = rest.split_at_mut(r.len());
            chunks.push((r, head));
            rest = tail;
        }
        chunks.into_par_iter().for_each(|(r, chunk)| {
            self.features
                .columns(r.start, r.end)
                .diag_quadratic(&a, chunk);
        });
        Ok(())
    }
}
