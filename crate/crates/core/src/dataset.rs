//! Grouped training data: labels, the instance-to-group map and instance weights.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Labels, group membership and weights of a training set.
///
/// Construction validates every invariant, so a `GroupedDataset` in hand
/// always has labels in {-1, +1}, dense non-empty groups and positive
/// weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    labels: Vec<f64>,
    group_of: Vec<usize>,
    weights: Vec<f64>,
    n_groups: usize,
}

impl GroupedDataset {
    /// Builds a dataset with unit weights.
    pub fn new(labels: Vec<f64>, group_of: Vec<usize>, n_groups: usize) -> Result<Self> {
        let n = labels.len();
        Self::with_weights(labels, group_of, n_groups, vec![1.0; n])
    }

    pub fn with_weights(
        labels: Vec<f64>,
        group_of: Vec<usize>,
        n_groups: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let n = labels.len();
        if group_of.len() != n {
            return Err(Error::DataFormat(format!(
                "{n} labels but {} group entries",
                group_of.len()
            )));
        }
        if weights.len() != n {
            return Err(Error::DataFormat(format!(
                "{n} labels but {} weights",
                weights.len()
            )));
        }
        if n == 0 {
            return Err(Error::DataFormat("dataset has no instances".into()));
        }
        if let Some((i, y)) = labels
            .iter()
            .enumerate()
            .find(|(_, &y)| y != 1.0 && y != -1.0)
        {
            return Err(Error::Label(format!("instance {i} has label {y}")));
        }
        let mut counts = vec![0usize; n_groups];
        for (i, &g) in group_of.iter().enumerate() {
            if g >= n_groups {
                return Err(Error::DataFormat(format!(
                    "instance {i} is in group {g}, but there are only {n_groups} groups"
                )));
            }
            counts[g] += 1;
        }
        if let Some(g) = counts.iter().position(|&c| c == 0) {
            return Err(Error::DataFormat(format!("group {g} has no instances")));
        }
        check_weights(&weights)?;
        Ok(Self {
            labels,
            group_of,
            weights,
            n_groups,
        })
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_instances(&self) -> usize {
        self.labels.len()
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    /// Number of instances in each group.
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_groups];
        for &g in &self.group_of {
            sizes[g] += 1;
        }
        sizes
    }

    /// True when any weight differs from one.
    pub fn is_reweighted(&self) -> bool {
        self.weights.iter().any(|&w| w != 1.0)
    }

    /// Replaces the weight vector, keeping labels and groups.
    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.labels.len() {
            return Err(Error::DataFormat(format!(
                "{} instances but {} weights",
                self.labels.len(),
                weights.len()
            )));
        }
        check_weights(&weights)?;
        self.weights = weights;
        Ok(())
    }

    /// Keeps only the instances whose group is selected and renumbers the
    /// surviving groups densely, preserving their relative order.
    pub fn restrict_to_groups(&self, keep: &[bool]) -> Result<(Self, Vec<usize>)> {
        if keep.len() != self.n_groups {
            return Err(Error::Dimension(format!(
                "selection has {} entries for {} groups",
                keep.len(),
                self.n_groups
            )));
        }
        let mut remap = vec![usize::MAX; self.n_groups];
        let mut next = 0;
        for (g, &k) in keep.iter().enumerate() {
            if k {
                remap[g] = next;
                next += 1;
            }
        }
        let rows: Vec<usize> = (0..self.n_instances())
            .filter(|&i| keep[self.group_of[i]])
            .collect();
        let ds = Self::with_weights(
            rows.iter().map(|&i| self.labels[i]).collect(),
            rows.iter().map(|&i| remap[self.group_of[i]]).collect(),
            next,
            rows.iter().map(|&i| self.weights[i]).collect(),
        )?;
        Ok((ds, rows))
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if let Some((i, w)) = weights
        .iter()
        .enumerate()
        .find(|(_, &w)| !(w.is_finite() && w > 0.0))
    {
        return Err(Error::Domain(format!(
            "weight of instance {i} is {w}; weights must be positive and finite"
        )));
    }
    Ok(())
}

/// Class-balancing weights: every instance of a class gets the same weight,
/// both classes carry half of the total mass and the weights sum to N.
pub fn balance_weights(dataset: &GroupedDataset) -> Result<Vec<f64>> {
    let n = dataset.n_instances();
    let n_pos = dataset.labels().iter().filter(|&&y| y > 0.0).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Balance(format!(
            "need both classes, found {n_pos} positive and {n_neg} negative instances"
        )));
    }
    let half = n as f64 / 2.0;
    let w_pos = half / n_pos as f64;
    let w_neg = half / n_neg as f64;
    Ok(dataset
        .labels()
        .iter()
        .map(|&y| if y > 0.0 { w_pos } else { w_neg })
        .collect())
}

/// Per-instance gather of the per-group values in `per_group`.
pub fn expand_noise(per_group: &[f64], dataset: &GroupedDataset) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dataset.n_instances()];
    expand_noise_into(per_group, dataset.group_of(), &mut out)?;
    Ok(out)
}

pub(crate) fn expand_noise_into(per_group: &[f64], group_of: &[usize], out: &mut [f64]) -> Result<()> {
    if out.len() != group_of.len() {
        return Err(Error::Dimension(format!(
            "output has {} entries for {} instances",
            out.len(),
            group_of.len()
        )));
    }
    for (o, &g) in out.iter_mut().zip(group_of) {
        *o = *per_group.get(g).ok_or_else(|| {
            Error::Dimension(format!("group {g} out of range for {} values", per_group.len()))
        })?;
    }
    Ok(())
}

/// Maps arbitrary group tokens (e.g. image file names) to dense indices in
/// order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupIndex {
    tokens: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl GroupIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds the index from a sequence of per-instance tokens and returns it
    /// with the dense index of every instance.
    pub fn from_tokens<I, S>(tokens: I) -> (Self, Vec<usize>)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut index = Self::new();
        let ids = tokens.into_iter().map(|t| index.intern(t.as_ref())).collect();
        (index, ids)
    }

    /// Returns the dense index for `token`, assigning the next free one if it
    /// is new.
    pub fn intern(&mut self, token: &str) -> usize {
        if let Some(&id) = self.lookup.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_owned());
        self.lookup.insert(token.to_owned(), id);
        id
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}
