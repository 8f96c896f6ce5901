//! Exact GP inference for the linear covariance `k(x, x') = phi(x)^T Sigma phi(x')`
//! with per-instance noise, computed through the feature oracle only.
//!
//! With `E` the diagonal of effective noise variances and `Sigma` the diagonal
//! of feature variances, `K_E = E + F^T Sigma F`. The Woodbury identity and the
//! determinant lemma reduce everything to the `k x k` capacitance matrix
//! `C = Sigma^-1 + F E^-1 F^T`:
//!
//! * `K_E^-1 = E^-1 - E^-1 F^T C^-1 F E^-1`
//! * `ln|K_E| = ln|E| + ln|Sigma| + ln|C|`
//!
//! Instance weights enter through the effective noise variance
//! `eps_g^2 / w_i`, which is what duplicating instance `i` `w_i` times does
//! to the posterior.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dataset::GroupedDataset;
use crate::error::{Error, Result};
use crate::hyper::HyperParams;
use crate::oracle::FeatureOracle;
use crate::train::tie_gradients;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Every solved quantity for one hyperparameter setting.
#[derive(Debug, Clone)]
pub struct GpCache {
    hyper: HyperParams,
    weights: Vec<f64>,
    /// Effective noise variances, diagonal of `E`.
    noise_var: Vec<f64>,
    /// Diagonal of `Sigma`.
    feature_var: Vec<f64>,
    chol_c: Cholesky<f64, Dyn>,
    gram_inv_noise: DMatrix<f64>,
    y_tilde: Vec<f64>,
    f_y_tilde: Vec<f64>,
    alpha: Vec<f64>,
    f_alpha: Vec<f64>,
    inv_diag: Vec<f64>,
    fkf: DMatrix<f64>,
    log_det: f64,
    quad: f64,
    jittered: bool,
}

/// Posterior mean and variance at one test point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorPrediction {
    pub mean: f64,
    pub variance: f64,
}

/// Effective per-instance noise variance `eps_{g(i)}^2 / w_i` into `out`.
pub fn effective_noise_var(hyper: &HyperParams, dataset: &GroupedDataset, out: &mut Vec<f64>) {
    out.clear();
    out.extend(
        dataset
            .group_of()
            .iter()
            .zip(dataset.weights())
            .map(|(&g, &w)| hyper.eps[g] * hyper.eps[g] / w),
    );
}

/// Runs the Woodbury reduction for `hyper` and the dataset's weights.
pub fn build_cache<O: FeatureOracle + ?Sized>(
    oracle: &O,
    dataset: &GroupedDataset,
    hyper: &HyperParams,
) -> Result<GpCache> {
    check_shapes(oracle, dataset, hyper)?;
    let n = dataset.n_instances();
    let k = oracle.n_features();
    let mut noise_var = Vec::with_capacity(n);
    effective_noise_var(hyper, dataset, &mut noise_var);
    let mut cache = GpCache {
        hyper: hyper.clone(),
        weights: dataset.weights().to_vec(),
        noise_var,
        feature_var: hyper.feature_variances(),
        chol_c: Cholesky::new_unchecked(DMatrix::identity(k, k)),
        gram_inv_noise: DMatrix::zeros(k, k),
        y_tilde: vec![0.0; n],
        f_y_tilde: vec![0.0; k],
        alpha: vec![0.0; n],
        f_alpha: vec![0.0; k],
        inv_diag: vec![0.0; n],
        fkf: DMatrix::zeros(k, k),
        log_det: 0.0,
        quad: 0.0,
        jittered: false,
    };
    cache.solve(oracle, dataset)?;
    Ok(cache)
}

fn check_shapes<O: FeatureOracle + ?Sized>(
    oracle: &O,
    dataset: &GroupedDataset,
    hyper: &HyperParams,
) -> Result<()> {
    hyper.validate()?;
    if oracle.n_instances() != dataset.n_instances() {
        return Err(Error::Dimension(format!(
            "oracle serves {} instances, dataset has {}",
            oracle.n_instances(),
            dataset.n_instances()
        )));
    }
    if oracle.n_features() != hyper.n_features() {
        return Err(Error::Dimension(format!(
            "oracle serves {} features, hyperparameters cover {}",
            oracle.n_features(),
            hyper.n_features()
        )));
    }
    if hyper.n_groups() != dataset.n_groups() {
        return Err(Error::Dimension(format!(
            "{} noise parameters for {} groups",
            hyper.n_groups(),
            dataset.n_groups()
        )));
    }
    Ok(())
}

impl GpCache {
    /// Recomputes the cache for new hyperparameters, reusing its buffers.
    pub fn rebuild<O: FeatureOracle + ?Sized>(
        &mut self,
        oracle: &O,
        dataset: &GroupedDataset,
        hyper: &HyperParams,
    ) -> Result<()> {
        check_shapes(oracle, dataset, hyper)?;
        let n = dataset.n_instances();
        let k = oracle.n_features();
        self.hyper.clone_from(hyper);
        self.weights.clear();
        self.weights.extend_from_slice(dataset.weights());
        effective_noise_var(hyper, dataset, &mut self.noise_var);
        self.feature_var = hyper.feature_variances();
        for v in [&mut self.y_tilde, &mut self.alpha, &mut self.inv_diag] {
            v.resize(n, 0.0);
        }
        for v in [&mut self.f_y_tilde, &mut self.f_alpha] {
            v.resize(k, 0.0);
        }
        if self.gram_inv_noise.shape() != (k, k) {
            self.gram_inv_noise = DMatrix::zeros(k, k);
        }
        self.solve(oracle, dataset)
    }

    fn solve<O: FeatureOracle + ?Sized>(&mut self, oracle: &O, dataset: &GroupedDataset) -> Result<()> {
        let k = self.feature_var.len();
        let y = dataset.labels();

        // F E^-1 F^T, reusing inv_diag as scratch for the diagonal of E^-1.
        for (d, &e) in self.inv_diag.iter_mut().zip(&self.noise_var) {
            *d = 1.0 / e;
        }
        oracle.weighted_gram_into(&self.inv_diag, &mut self.gram_inv_noise)?;

        for ((yt, &yi), &e) in self.y_tilde.iter_mut().zip(y).zip(&self.noise_var) {
            *yt = yi / e;
        }
        oracle.mat_vec_into(&self.y_tilde, &mut self.f_y_tilde)?;

        let mut c = self.gram_inv_noise.clone();
        for j in 0..k {
            c[(j, j)] += 1.0 / self.feature_var[j];
        }
        let (chol, jittered) = factorize(c)?;
        self.chol_c = chol;
        self.jittered = jittered;

        // z = C^-1 F y~ equals beta = Sigma F alpha. The remaining quantities
        // are expressed through z so that no large terms cancel when some
        // noise variances are tiny.
        let fyt = DVector::from_column_slice(&self.f_y_tilde);
        let z = self.chol_c.solve(&fyt);

        let ln_c: f64 = self.chol_c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let ln_e: f64 = self.noise_var.iter().map(|e| e.ln()).sum();
        let ln_sigma: f64 = self.feature_var.iter().map(|s| s.ln()).sum();
        self.log_det = ln_e + ln_sigma + ln_c;

        // alpha = E^-1 (y - F^T z); F^T z lands in alpha first.
        oracle.mat_t_vec_into(z.as_slice(), &mut self.alpha)?;
        for ((a, &yi), &e) in self.alpha.iter_mut().zip(y).zip(&self.noise_var) {
            *a = (yi - *a) / e;
        }

        // F alpha = Sigma^-1 z.
        for ((fa, &zj), &s) in self.f_alpha.iter_mut().zip(z.iter()).zip(&self.feature_var) {
            *fa = zj / s;
        }

        // y^T K^-1 y = alpha^T E alpha + z^T Sigma^-1 z, a sum of
        // non-negative terms.
        let data_term: f64 = self
            .alpha
            .iter()
            .zip(&self.noise_var)
            .map(|(a, e)| a * a * e)
            .sum();
        let prior_term: f64 = z.iter().zip(&self.f_alpha).map(|(zj, fa)| zj * fa).sum();
        self.quad = data_term + prior_term;

        let mut c_inv = self.chol_c.inverse();
        symmetrize(&mut c_inv);

        // F K^-1 F^T = Sigma^-1 - Sigma^-1 C^-1 Sigma^-1.
        let mut fkf = c_inv.clone();
        for r in 0..k {
            for c in 0..k {
                fkf[(r, c)] = -c_inv[(r, c)] / (self.feature_var[r] * self.feature_var[c]);
            }
            fkf[(r, r)] += 1.0 / self.feature_var[r];
        }
        symmetrize(&mut fkf);
        self.fkf = fkf;

        // diag(K^-1) = diag(E^-1) - diag(F^T C^-1 F) . diag(E^-2)
        oracle.diag_quadratic_into(&c_inv, &mut self.inv_diag)?;
        for (d, &e) in self.inv_diag.iter_mut().zip(&self.noise_var) {
            *d = (1.0 - *d / e) / e;
        }

        if !(self.log_det.is_finite() && self.quad.is_finite()) {
            return Err(Error::Numeric(format!(
                "log-determinant {} or quadratic form {} is not finite",
                self.log_det, self.quad
            )));
        }
        Ok(())
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn n_instances(&self) -> usize {
        self.alpha.len()
    }

    pub fn n_features(&self) -> usize {
        self.f_alpha.len()
    }

    /// Lower-triangular Cholesky factor of the capacitance matrix.
    pub fn chol_c(&self) -> DMatrix<f64> {
        self.chol_c.l()
    }

    /// Whether factorizing `C` needed a diagonal jitter.
    pub fn jittered(&self) -> bool {
        self.jittered
    }

    /// `F E^-1 F^T`
    pub fn gram_inv_noise(&self) -> &DMatrix<f64> {
        &self.gram_inv_noise
    }

    /// Effective noise variances (diagonal of `E`).
    pub fn noise_var(&self) -> &[f64] {
        &self.noise_var
    }

    /// Feature variances (diagonal of `Sigma`).
    pub fn feature_var(&self) -> &[f64] {
        &self.feature_var
    }

    /// `E^-1 y`
    pub fn y_tilde(&self) -> &[f64] {
        &self.y_tilde
    }

    /// `F E^-1 y`
    pub fn f_y_tilde(&self) -> &[f64] {
        &self.f_y_tilde
    }

    /// `K_E^-1 y`
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// `F K_E^-1 y`
    pub fn f_alpha(&self) -> &[f64] {
        &self.f_alpha
    }

    /// `diag(K_E^-1)`
    pub fn inv_diag(&self) -> &[f64] {
        &self.inv_diag
    }

    /// `F K_E^-1 F^T`
    pub fn fkf(&self) -> &DMatrix<f64> {
        &self.fkf
    }

    /// `ln |K_E|`
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `y^T K_E^-1 y`
    pub fn quad(&self) -> f64 {
        self.quad
    }

    /// Prediction weights `beta = Sigma F K_E^-1 y`, so that the posterior
    /// mean at `phi` is `beta . phi`.
    pub fn beta(&self) -> Vec<f64> {
        self.f_alpha
            .iter()
            .zip(&self.feature_var)
            .map(|(f, s)| f * s)
            .collect()
    }

    fn ensure_fresh(&self, hyper: &HyperParams, dataset: &GroupedDataset) -> Result<()> {
        if &self.hyper != hyper || self.weights != dataset.weights() {
            return Err(Error::StaleCache);
        }
        Ok(())
    }

    fn check_test_point(&self, phi: &[f64]) -> Result<()> {
        if phi.len() != self.n_features() {
            return Err(Error::Dimension(format!(
                "test feature has {} entries, expected {}",
                phi.len(),
                self.n_features()
            )));
        }
        Ok(())
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for r in 0..n {
        for c in r + 1..n {
            let avg = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = avg;
            m[(c, r)] = avg;
        }
    }
}

/// Cholesky of `c`; on failure retries once with `1e-10 * trace / k` added
/// to the diagonal.
fn factorize(c: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, bool)> {
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singularity("capacitance matrix has non-finite entries".into()));
    }
    if let Some(chol) = Cholesky::new(c.clone()) {
        return Ok((chol, false));
    }
    let k = c.nrows();
    let jitter = 1e-10 * c.trace() / k as f64;
    let mut c = c;
    for j in 0..k {
        c[(j, j)] += jitter;
    }
    log::warn!("capacitance matrix not positive definite; retrying with jitter {jitter:e}");
    Cholesky::new(c)
        .map(|chol| (chol, true))
        .ok_or_else(|| Error::Singularity("capacitance matrix is not positive definite".into()))
}

/// `m(x) = phi^T Sigma F K_E^-1 y`.
pub fn posterior_mean(cache: &GpCache, phi: &[f64]) -> Result<f64> {
    cache.check_test_point(phi)?;
    Ok(phi
        .iter()
        .zip(&cache.feature_var)
        .zip(&cache.f_alpha)
        .map(|((p, s), f)| p * s * f)
        .sum())
}

/// Posterior variance before clamping at zero:
/// `phi^T Sigma phi - (Sigma phi)^T F K_E^-1 F^T (Sigma phi)`.
pub fn posterior_variance_unclamped(cache: &GpCache, phi: &[f64]) -> Result<f64> {
    cache.check_test_point(phi)?;
    let s_phi = DVector::from_iterator(
        phi.len(),
        phi.iter().zip(&cache.feature_var).map(|(p, s)| p * s),
    );
    let prior: f64 = phi.iter().zip(s_phi.iter()).map(|(p, sp)| p * sp).sum();
    let explained = s_phi.dot(&(&cache.fkf * &s_phi));
    Ok(prior - explained)
}

pub fn posterior_variance(cache: &GpCache, phi: &[f64]) -> Result<f64> {
    posterior_variance_unclamped(cache, phi).map(|v| v.max(0.0))
}

pub fn posterior(cache: &GpCache, phi: &[f64]) -> Result<PosteriorPrediction> {
    Ok(PosteriorPrediction {
        mean: posterior_mean(cache, phi)?,
        variance: posterior_variance(cache, phi)?,
    })
}

/// `ln p(y | theta_w) = -1/2 (y^T K^-1 y + ln|K| + N ln 2 pi)`.
pub fn log_marginal(cache: &GpCache) -> f64 {
    -0.5 * (cache.quad + cache.log_det + cache.n_instances() as f64 * LN_2PI)
}

/// Log marginal likelihood of the weighted data:
/// `ln p(y | theta_w) + 1/2 sum_i [ln(w_i eps_i^2) - w_i ln eps_i^2]`.
///
/// For integer weights this differs from the likelihood of the physically
/// duplicated data set by a term that depends on the weights only.
pub fn reweighted_log_marginal(cache: &GpCache, dataset: &GroupedDataset) -> Result<f64> {
    cache.ensure_fresh(&cache.hyper, dataset)?;
    let eps = &cache.hyper.eps;
    let correction: f64 = dataset
        .group_of()
        .iter()
        .zip(dataset.weights())
        .filter(|(_, &w)| w != 1.0)
        .map(|(&g, &w)| {
            let e2 = eps[g] * eps[g];
            (w * e2).ln() - w * e2.ln()
        })
        .sum();
    Ok(log_marginal(cache) + 0.5 * correction)
}

/// Gradient of [`reweighted_log_marginal`] with respect to the per-group
/// noise standard deviations.
///
/// Per instance: `(alpha_i^2 - [K^-1]_ii) eps_g / w_i + (1 - w_i) / eps_g`,
/// then summed over each group.
pub fn grad_noise(cache: &GpCache, hyper: &HyperParams, dataset: &GroupedDataset) -> Result<Vec<f64>> {
    cache.ensure_fresh(hyper, dataset)?;
    let eps = &hyper.eps;
    let per_instance: Vec<f64> = dataset
        .group_of()
        .iter()
        .zip(dataset.weights())
        .zip(cache.alpha.iter().zip(&cache.inv_diag))
        .map(|((&g, &w), (&a, &kd))| (a * a - kd) * eps[g] / w + (1.0 - w) / eps[g])
        .collect();
    tie_gradients(&per_instance, dataset.group_of(), dataset.n_groups())
}

/// Gradient of the log marginal likelihood with respect to the per-scale-group
/// feature standard deviations: `((F alpha)_j^2 - [F K^-1 F^T]_jj) sigma_j`
/// summed over each scale group.
pub fn grad_scales(cache: &GpCache, hyper: &HyperParams) -> Result<Vec<f64>> {
    if &cache.hyper != hyper {
        return Err(Error::StaleCache);
    }
    let per_feature: Vec<f64> = (0..cache.n_features())
        .map(|j| {
            let fa = cache.f_alpha[j];
            (fa * fa - cache.fkf[(j, j)]) * hyper.sigma[hyper.scale_group_of[j]]
        })
        .collect();
    tie_gradients(&per_feature, &hyper.scale_group_of, hyper.n_scales())
}
