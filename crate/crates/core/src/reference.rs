//! Dense `O(N^3)` GP used as ground truth at small sizes: builds
//! `K_E = E + F^T Sigma F` explicitly and works with its Cholesky factor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dataset::GroupedDataset;
use crate::error::{Error, Result};
use crate::gp::effective_noise_var;
use crate::hyper::HyperParams;
use crate::oracle::FeatureShard;

/// Largest N the dense reference accepts.
pub const MAX_DENSE_N: usize = 2000;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One coordinate of the hyperparameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    Noise(usize),
    Scale(usize),
}

pub struct DenseGp {
    /// `F` as an explicit `k x N` matrix.
    f: DMatrix<f64>,
    feature_var: Vec<f64>,
    noise_var: Vec<f64>,
    k_eps: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    y: DVector<f64>,
    alpha: DVector<f64>,
    hyper: HyperParams,
    group_of: Vec<usize>,
    weights: Vec<f64>,
}

impl DenseGp {
    pub fn new(features: &FeatureShard, dataset: &GroupedDataset, hyper: &HyperParams) -> Result<Self> {
        hyper.validate()?;
        let n = dataset.n_instances();
        if n > MAX_DENSE_N {
            return Err(Error::Size(format!("N = {n} exceeds {MAX_DENSE_N}")));
        }
        if features.n_cols() != n || features.k() != hyper.n_features() {
            return Err(Error::Dimension(format!(
                "features are {}x{}, expected {}x{n}",
                features.k(),
                features.n_cols(),
                hyper.n_features()
            )));
        }
        let k = features.k();
        let f = DMatrix::from_fn(k, n, |r, i| features.instance(i)[r]);
        let feature_var = hyper.feature_variances();
        let mut noise_var = Vec::new();
        effective_noise_var(hyper, dataset, &mut noise_var);

        let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&feature_var));
        let mut k_eps = f.transpose() * &sigma * &f;
        for (i, e) in noise_var.iter().enumerate() {
            k_eps[(i, i)] += e;
        }
        let chol = Cholesky::new(k_eps.clone())
            .ok_or_else(|| Error::Singularity("dense K_E is not positive definite".into()))?;
        let y = DVector::from_column_slice(dataset.labels());
        let alpha = chol.solve(&y);
        Ok(Self {
            f,
            feature_var,
            noise_var,
            k_eps,
            chol,
            y,
            alpha,
            hyper: hyper.clone(),
            group_of: dataset.group_of().to_vec(),
            weights: dataset.weights().to_vec(),
        })
    }

    pub fn k_eps(&self) -> &DMatrix<f64> {
        &self.k_eps
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn alpha(&self) -> &[f64] {
        self.alpha.as_slice()
    }

    pub fn inv_diag(&self) -> Vec<f64> {
        self.inverse().diagonal().iter().copied().collect()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn quad(&self) -> f64 {
        self.y.dot(&self.alpha)
    }

    pub fn lml(&self) -> f64 {
        -0.5 * (self.quad() + self.log_det() + self.y.len() as f64 * LN_2PI)
    }

    /// `lml` plus `1/2 sum_i [ln(w_i eps_i^2) - w_i ln eps_i^2]`.
    pub fn reweighted_lml(&self) -> f64 {
        let correction: f64 = self
            .group_of
            .iter()
            .zip(&self.weights)
            .map(|(&g, &w)| {
                let e2 = self.hyper.eps[g].powi(2);
                (w * e2).ln() - w * e2.ln()
            })
            .sum();
        self.lml() + 0.5 * correction
    }

    /// `kbar_i = phi_i^T Sigma x`.
    fn cross_cov(&self, x: &[f64]) -> DVector<f64> {
        let sx = DVector::from_iterator(x.len(), x.iter().zip(&self.feature_var).map(|(a, s)| a * s));
        self.f.transpose() * sx
    }

    pub fn posterior_mean(&self, x: &[f64]) -> f64 {
        self.cross_cov(x).dot(&self.alpha)
    }

    pub fn posterior_variance(&self, x: &[f64]) -> f64 {
        let kbar = self.cross_cov(x);
        let prior: f64 = x.iter().zip(&self.feature_var).map(|(a, s)| a * a * s).sum();
        prior - kbar.dot(&self.chol.solve(&kbar))
    }

    /// Derivative of [`DenseGp::reweighted_lml`] along one coordinate via the
    /// trace formula `1/2 tr((alpha alpha^T - K^-1) dK)` with an explicit
    /// `dK`.
    pub fn grad(&self, which: Coordinate) -> Result<f64> {
        let n = self.y.len();
        let inv = self.inverse();
        let outer = &self.alpha * self.alpha.transpose();
        let m = outer - inv;
        let mut dk = DMatrix::zeros(n, n);
        let mut correction = 0.0;
        match which {
            Coordinate::Noise(g) => {
                let eps = *self.hyper.eps.get(g).ok_or_else(|| {
                    Error::Dimension(format!("noise group {g} out of range"))
                })?;
                for i in 0..n {
                    if self.group_of[i] == g {
                        // d(eps^2 / w_i) / d eps
                        dk[(i, i)] = 2.0 * eps / self.weights[i];
                        correction += (1.0 - self.weights[i]) / eps;
                    }
                }
            }
            Coordinate::Scale(s) => {
                let sigma = *self.hyper.sigma.get(s).ok_or_else(|| {
                    Error::Dimension(format!("scale group {s} out of range"))
                })?;
                for (j, &sg) in self.hyper.scale_group_of.iter().enumerate() {
                    if sg == s {
                        let row = self.f.row(j);
                        dk += 2.0 * sigma * row.transpose() * row;
                    }
                }
            }
        }
        Ok(0.5 * (m.component_mul(&dk)).sum() + correction)
    }

    pub fn noise_var(&self) -> &[f64] {
        &self.noise_var
    }
}

/// `ln p(y | theta_w)` evaluated densely.
pub fn dense_lml(features: &FeatureShard, dataset: &GroupedDataset, hyper: &HyperParams) -> Result<f64> {
    Ok(DenseGp::new(features, dataset, hyper)?.lml())
}

/// One coordinate of the reweighted log-likelihood gradient, evaluated
/// densely.
pub fn dense_grad(
    features: &FeatureShard,
    dataset: &GroupedDataset,
    hyper: &HyperParams,
    which: Coordinate,
) -> Result<f64> {
    DenseGp::new(features, dataset, hyper)?.grad(which)
}

/// Capacitance matrix `Sigma^-1 + F E^-1 F^T` formed from the explicit `F`.
fn dense_capacitance(gp: &DenseGp) -> DMatrix<f64> {
    let e_inv = DVector::from_iterator(gp.noise_var.len(), gp.noise_var.iter().map(|e| 1.0 / e));
    let mut c = &gp.f * DMatrix::from_diagonal(&e_inv) * gp.f.transpose();
    for (j, s) in gp.feature_var.iter().enumerate() {
        c[(j, j)] += 1.0 / s;
    }
    c
}

/// Right-hand side of the Woodbury identity,
/// `E^-1 - E^-1 F^T C^-1 F E^-1`, built densely.
pub fn woodbury_inverse(gp: &DenseGp) -> Result<DMatrix<f64>> {
    let c = dense_capacitance(gp);
    let c_inv = c
        .try_inverse()
        .ok_or_else(|| Error::Singularity("capacitance matrix is singular".into()))?;
    let e_inv = DMatrix::from_diagonal(&DVector::from_iterator(
        gp.noise_var.len(),
        gp.noise_var.iter().map(|e| 1.0 / e),
    ));
    let ef = &e_inv * gp.f.transpose();
    Ok(&e_inv - &ef * c_inv * ef.transpose())
}

/// Right-hand side of the determinant lemma, `ln|E| + ln|Sigma| + ln|C|`.
pub fn lemma_log_det(gp: &DenseGp) -> Result<f64> {
    let c = dense_capacitance(gp);
    let ln_c = c
        .clone()
        .lu()
        .determinant()
        .ln();
    if !ln_c.is_finite() {
        return Err(Error::Singularity("capacitance determinant is not positive".into()));
    }
    let ln_e: f64 = gp.noise_var.iter().map(|e| e.ln()).sum();
    let ln_s: f64 = gp.feature_var.iter().map(|s| s.ln()).sum();
    Ok(ln_e + ln_s + ln_c)
}
