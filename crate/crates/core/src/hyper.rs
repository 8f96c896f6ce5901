//! Hyperparameters: per-group noise standard deviations and per-scale-group
//! feature standard deviations.

use crate::error::{Error, Result};

/// The hyperparameter vector `[eps, sigma]` together with the map from
/// feature index to scale group.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Noise standard deviation of each instance group.
    pub eps: Vec<f64>,
    /// Prior standard deviation of each feature scale group.
    pub sigma: Vec<f64>,
    /// Scale group of each feature, values in `[0, sigma.len())`.
    pub scale_group_of: Vec<usize>,
}

impl HyperParams {
    pub fn new(eps: Vec<f64>, sigma: Vec<f64>, scale_group_of: Vec<usize>) -> Result<Self> {
        let hp = Self {
            eps,
            sigma,
            scale_group_of,
        };
        hp.validate()?;
        Ok(hp)
    }

    /// Same value for every group and every scale group.
    pub fn uniform(n_groups: usize, eps: f64, scale_group_of: Vec<usize>, sigma: f64) -> Result<Self> {
        let n_scales = scale_group_count(&scale_group_of)?;
        Self::new(vec![eps; n_groups], vec![sigma; n_scales], scale_group_of)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps.is_empty() {
            return Err(Error::Domain("no noise groups".into()));
        }
        if self.sigma.is_empty() || self.scale_group_of.is_empty() {
            return Err(Error::Domain("no feature scales".into()));
        }
        for (name, values) in [("eps", &self.eps), ("sigma", &self.sigma)] {
            if let Some((i, v)) = values
                .iter()
                .enumerate()
                .find(|(_, &v)| !(v.is_finite() && v > 0.0))
            {
                return Err(Error::Domain(format!(
                    "{name}[{i}] = {v}; hyperparameters must be positive and finite"
                )));
            }
        }
        if let Some((j, &s)) = self
            .scale_group_of
            .iter()
            .enumerate()
            .find(|(_, &s)| s >= self.sigma.len())
        {
            return Err(Error::Dimension(format!(
                "feature {j} is in scale group {s}, but only {} scales are given",
                self.sigma.len()
            )));
        }
        Ok(())
    }

    pub fn n_groups(&self) -> usize {
        self.eps.len()
    }

    pub fn n_scales(&self) -> usize {
        self.sigma.len()
    }

    pub fn n_features(&self) -> usize {
        self.scale_group_of.len()
    }

    /// Number of free parameters, `G + S`.
    pub fn len(&self) -> usize {
        self.eps.len() + self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-feature prior variances `sigma_j^2`.
    pub fn feature_variances(&self) -> Vec<f64> {
        self.scale_group_of
            .iter()
            .map(|&s| self.sigma[s] * self.sigma[s])
            .collect()
    }

    /// Flattened `[eps, sigma]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.eps.iter().chain(&self.sigma).copied().collect()
    }

    /// Inverse of [`HyperParams::to_vec`], keeping the scale-group map.
    pub fn with_values(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.len() {
            return Err(Error::Dimension(format!(
                "expected {} hyperparameters, got {}",
                self.len(),
                theta.len()
            )));
        }
        let (eps, sigma) = theta.split_at(self.eps.len());
        Self::new(eps.to_vec(), sigma.to_vec(), self.scale_group_of.clone())
    }
}

/// Number of scale groups referenced by a dense scale-group map.
pub fn scale_group_count(scale_group_of: &[usize]) -> Result<usize> {
    let s = scale_group_of.iter().max().map_or(0, |&m| m + 1);
    let mut seen = vec![false; s];
    for &g in scale_group_of {
        seen[g] = true;
    }
    if let Some(g) = seen.iter().position(|&x| !x) {
        return Err(Error::DataFormat(format!("scale group {g} has no features")));
    }
    Ok(s)
}

/// Scale-group map from the starting feature index of each block.
/// Empty `starts` means a single scale group.
pub fn scale_groups_from_starts(starts: &[u32], k: usize) -> Result<Vec<usize>> {
    if starts.is_empty() {
        return Ok(vec![0; k]);
    }
    if starts[0] != 0 {
        return Err(Error::DataFormat(format!(
            "first scale-group boundary must be 0, found {}",
            starts[0]
        )));
    }
    if starts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::DataFormat(
            "scale-group boundaries must be strictly increasing".into(),
        ));
    }
    if *starts.last().unwrap() as usize >= k {
        return Err(Error::DataFormat(format!(
            "scale-group boundary {} is not below k = {k}",
            starts.last().unwrap()
        )));
    }
    let mut out = Vec::with_capacity(k);
    for (s, w) in starts.iter().enumerate() {
        let end = starts.get(s + 1).map_or(k, |&e| e as usize);
        out.extend(std::iter::repeat_n(s, end - *w as usize));
    }
    Ok(out)
}
