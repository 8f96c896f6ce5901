//! The trained, oracle-free prediction model and its text file format.
//!
//! ```text
//! version = 1
//! k = 3
//! n = 100
//! G = 2
//! S = 1
//! beta = 1.0000000000000000e0 ...
//! eps = ...
//! sigma = ...
//! scale_group_of = 0 0 0
//! final_lml = -1.2345678901234567e1
//! ```
//!
//! Reals are written with 17 significant digits, which round-trips every
//! finite `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hyper::HyperParams;
use crate::oracle::dot;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    /// Prediction weights `Sigma F K^-1 y`; the posterior mean is `beta . phi`.
    pub beta: Vec<f64>,
    pub hyper: HyperParams,
    /// Per-group confidence, `-eps_g`. Only the induced ranking is meaningful.
    pub group_confidence: Vec<f64>,
    pub n_instances: usize,
    pub final_lml: f64,
}

impl TrainedModel {
    pub fn new(beta: Vec<f64>, hyper: HyperParams, n_instances: usize, final_lml: f64) -> Result<Self> {
        if beta.len() != hyper.n_features() {
            return Err(Error::Dimension(format!(
                "{} prediction weights for {} features",
                beta.len(),
                hyper.n_features()
            )));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numeric("prediction weights are not finite".into()));
        }
        let group_confidence = confidence_from_noise(&hyper.eps);
        Ok(Self {
            beta,
            hyper,
            group_confidence,
            n_instances,
            final_lml,
        })
    }

    pub fn k(&self) -> usize {
        self.beta.len()
    }

    pub fn n_groups(&self) -> usize {
        self.hyper.n_groups()
    }

    /// Posterior mean `beta . phi`.
    pub fn mean(&self, phi: &[f64]) -> Result<f64> {
        if phi.len() != self.k() {
            return Err(Error::Dimension(format!(
                "feature vector has {} entries, model expects {}",
                phi.len(),
                self.k()
            )));
        }
        Ok(dot(&self.beta, phi))
    }

    /// Sign of the posterior mean; an exact zero maps to `+1`.
    pub fn label(&self, phi: &[f64]) -> Result<f64> {
        Ok(sign_label(self.mean(phi)?))
    }

    /// Group indices ordered by descending confidence, ties by ascending
    /// index.
    pub fn confidence_ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.n_groups()).collect();
        order.sort_by(|&a, &b| {
            self.group_confidence[b]
                .total_cmp(&self.group_confidence[a])
                .then(a.cmp(&b))
        });
        order
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "version = {MODEL_VERSION}");
        let _ = writeln!(s, "k = {}", self.k());
        let _ = writeln!(s, "n = {}", self.n_instances);
        let _ = writeln!(s, "G = {}", self.n_groups());
        let _ = writeln!(s, "S = {}", self.hyper.n_scales());
        let _ = writeln!(s, "beta = {}", join_reals(&self.beta));
        let _ = writeln!(s, "eps = {}", join_reals(&self.hyper.eps));
        let _ = writeln!(s, "sigma = {}", join_reals(&self.hyper.sigma));
        let groups: Vec<String> = self.hyper.scale_group_of.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "scale_group_of = {}", groups.join(" "));
        let _ = writeln!(s, "final_lml = {}", fmt_real(self.final_lml));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::DataFormat(format!("model line {}: missing '='", no + 1)))?;
            fields.insert(key.trim().to_owned(), value.trim().to_owned());
        }
        let get = |key: &str| {
            fields
                .get(key)
                .map(String::as_str)
                .ok_or_else(|| Error::DataFormat(format!("model file lacks `{key}`")))
        };
        let version: u32 = parse_scalar(get("version")?, "version")?;
        if version != MODEL_VERSION {
            return Err(Error::DataFormat(format!("unsupported model version {version}")));
        }
        let k: usize = parse_scalar(get("k")?, "k")?;
        let g: usize = parse_scalar(get("G")?, "G")?;
        let s: usize = parse_scalar(get("S")?, "S")?;
        let n: usize = match fields.get("n") {
            Some(v) => parse_scalar(v, "n")?,
            None => 0,
        };
        let beta: Vec<f64> = parse_list(get("beta")?, "beta")?;
        let eps: Vec<f64> = parse_list(get("eps")?, "eps")?;
        let sigma: Vec<f64> = parse_list(get("sigma")?, "sigma")?;
        let scale_group_of: Vec<usize> = parse_list(get("scale_group_of")?, "scale_group_of")?;
        let final_lml: f64 = parse_scalar(get("final_lml")?, "final_lml")?;
        for (name, len, want) in [
            ("beta", beta.len(), k),
            ("eps", eps.len(), g),
            ("sigma", sigma.len(), s),
            ("scale_group_of", scale_group_of.len(), k),
        ] {
            if len != want {
                return Err(Error::DataFormat(format!(
                    "model field `{name}` has {len} entries, expected {want}"
                )));
            }
        }
        Self::new(beta, HyperParams::new(eps, sigma, scale_group_of)?, n, final_lml)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Confidence score of each group, `-eps_g`.
pub fn confidence_from_noise(eps: &[f64]) -> Vec<f64> {
    eps.iter().map(|e| -e).collect()
}

/// `+1` for non-negative values, `-1` otherwise.
pub fn sign_label(mean: f64) -> f64 {
    if mean < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn join_reals(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_real(x)).collect::<Vec<_>>().join(" ")
}

fn parse_scalar<T: std::str::FromStr>(s: &str, name: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::DataFormat(format!("model field `{name}`: cannot parse {s:?}")))
}

fn parse_list<T: std::str::FromStr>(s: &str, name: &str) -> Result<Vec<T>> {
    s.split_whitespace().map(|t| parse_scalar(t, name)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(beta: Vec<f64>, eps: Vec<f64>) -> TrainedModel {
        let k = beta.len();
        let hp = HyperParams::new(eps, vec![0.3], vec![0; k]).unwrap();
        TrainedModel::new(beta, hp, 10, -3.25).unwrap()
    }

    #[test]
    fn zero_mean_maps_to_positive() {
        let m = model(vec![0.0, 0.0], vec![1.0]);
        assert_eq!(m.label(&[1.0, 2.0]).unwrap(), 1.0);
        let m = model(vec![1.0, -1.0], vec![1.0]);
        assert_eq!(m.label(&[2.0, 1.0]).unwrap(), 1.0);
        assert_eq!(m.label(&[-2.0, -1.0]).unwrap(), -1.0);
        assert!(matches!(m.mean(&[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        let m = model(vec![1.0], vec![0.5, 0.2, 0.5, 0.1]);
        assert_eq!(m.confidence_ranking(), vec![3, 1, 0, 2]);
        assert!(m.group_confidence[3] > m.group_confidence[1]);
    }

    #[test]
    fn rejects_inconsistent_files() {
        let m = model(vec![1.0, 2.0], vec![1.0]);
        let bad = m.to_text().replace("k = 2", "k = 3");
        assert!(TrainedModel::from_text(&bad).is_err());
        let missing = m.to_text().replace("final_lml", "other");
        assert!(TrainedModel::from_text(&missing).is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip_is_bitwise(
            beta in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..8),
            eps in prop::collection::vec(1e-300f64..1e300, 1..6),
            lml in prop::num::f64::NORMAL,
        ) {
            let k = beta.len();
            let sigma = if k > 1 { vec![0.1, 7.5] } else { vec![0.1] };
            let groups = (0..k).map(|j| usize::from(k > 1 && j % 2 == 1)).collect();
            let hp = HyperParams::new(eps, sigma, groups).unwrap();
            let m = TrainedModel::new(beta, hp, 42, lml).unwrap();
            let back = TrainedModel::from_text(&m.to_text()).unwrap();
            prop_assert_eq!(back.beta.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                            m.beta.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.final_lml.to_bits(), m.final_lml.to_bits());
            prop_assert_eq!(back, m);
        }
    }
}
