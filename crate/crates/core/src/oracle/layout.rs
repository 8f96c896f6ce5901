use std::ops::Range;

use crate::error::{Error, Result};

/// Partition of the instance range `[0, N)` into `p` contiguous shards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardLayout {
    boundaries: Vec<usize>,
}

impl ShardLayout {
    /// Splits `n` instances into `p` shards whose sizes differ by at most
    /// one; the first `n mod p` shards get the extra instance.
    pub fn even(n: usize, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::Domain("need at least one shard".into()));
        }
        let base = n / p;
        let extra = n % p;
        let mut boundaries = Vec::with_capacity(p + 1);
        boundaries.push(0);
        for i in 0..p {
            let size = base + usize::from(i < extra);
            boundaries.push(boundaries[i] + size);
        }
        Ok(Self { boundaries })
    }

    pub fn from_boundaries(boundaries: Vec<usize>) -> Result<Self> {
        if boundaries.len() < 2 || boundaries[0] != 0 {
            return Err(Error::Domain(
                "boundaries must start at 0 and describe at least one shard".into(),
            ));
        }
        if boundaries.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Domain("boundaries must be non-decreasing".into()));
        }
        Ok(Self { boundaries })
    }

    pub fn n_shards(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn n_instances(&self) -> usize {
        *self.boundaries.last().unwrap()
    }

    pub fn range(&self, shard: usize) -> Range<usize> {
        self.boundaries[shard]..self.boundaries[shard + 1]
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.boundaries.windows(2).map(|w| w[0]..w[1])
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn remainder_goes_to_first_shards() {
        let l = ShardLayout::even(7, 3).unwrap();
        assert_eq!(l.boundaries(), &[0, 3, 5, 7]);
        assert_eq!(l.range(1), 3..5);
        assert!(ShardLayout::even(4, 0).is_err());
    }

    #[test]
    fn more_shards_than_instances() {
        let l = ShardLayout::even(2, 4).unwrap();
        assert_eq!(l.boundaries(), &[0, 1, 2, 2, 2]);
    }

    proptest! {
        #[test]
        fn even_layout_is_balanced(n in 0usize..10_000, p in 1usize..64) {
            let l = ShardLayout::even(n, p).unwrap();
            prop_assert_eq!(l.n_shards(), p);
            prop_assert_eq!(l.n_instances(), n);
            let sizes: Vec<usize> = l.ranges().map(|r| r.len()).collect();
            let max = *sizes.iter().max().unwrap();
            let min = *sizes.iter().min().unwrap();
            prop_assert!(max - min <= 1);
        }
    }
}
