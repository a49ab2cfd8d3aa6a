//! Gaussian-mixture data distributions with exact velocity fields.
//!
//! For data `X_0 ~ sum_k w_k N(mu_k, Sigma_k)` and independent noise
//! `X_1 ~ N(0, I)`, the path `X_t = (1 - t) X_0 + t X_1` has per-component
//! marginals `N((1 - t) mu_k, C_k)` with `C_k = (1 - t)^2 Sigma_k + t^2 I`.
//! The marginal velocity `E[X_1 - X_0 | X_t = x]` is then a responsibility
//! weighted sum of per-component Gaussian conditional expectations. All
//! `C_k^{-1}` products go through Cholesky triangular solves.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::flow::{Condition, VelocityField};
use crate::latent::Latent;
use crate::rng::Stream;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Latent>,
    covariances: Vec<DMatrix<f64>>,
    chol: Vec<Cholesky<f64, Dyn>>,
}

fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::numeric(None, format!("{what} is not positive definite")))
}

fn to_dvector(x: &Latent) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

/// Log density of `N(mean, L L^T)` at `x` given the Cholesky factor.
fn gaussian_logpdf(chol: &Cholesky<f64, Dyn>, diff: &DVector<f64>) -> f64 {
    let l = chol.l_dirty();
    let mut z = diff.clone();
    // lower-triangular solve only; upper part of l_dirty is garbage
    let solved = l.solve_lower_triangular_mut(&mut z);
    debug_assert!(solved);
    let log_det: f64 = (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    -0.5 * (diff.len() as f64 * LN_2PI + log_det + z.norm_squared())
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn normalize_log(log_w: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_w);
    log_w.iter().map(|v| (v - lse).exp()).collect()
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Latent>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        if weights.len() != means.len() || weights.len() != covariances.len() {
            return Err(Error::invalid(format!(
                "component count mismatch: {} weights, {} means, {} covariances",
                weights.len(),
                means.len(),
                covariances.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("mixture weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        let dim = means[0].dim();
        if dim == 0 {
            return Err(Error::invalid("latent dimension must be positive"));
        }
        let mut chol = Vec::with_capacity(covariances.len());
        for (k, (mean, cov)) in means.iter().zip(&covariances).enumerate() {
            mean.check_dim(dim)?;
            if !mean.is_finite() {
                return Err(Error::invalid(format!("mean {k} is not finite")));
            }
            if cov.nrows() != dim || cov.ncols() != dim {
                return Err(Error::invalid(format!(
                    "covariance {k} is {}x{}, expected {dim}x{dim}",
                    cov.nrows(),
                    cov.ncols()
                )));
            }
            let scale = cov.amax().max(f64::MIN_POSITIVE);
            if (cov - cov.transpose()).amax() > 1e-12 * scale {
                return Err(Error::invalid(format!("covariance {k} is not symmetric")));
            }
            chol.push(cholesky(cov.clone(), &format!("covariance {k}"))?);
        }
        Ok(GaussianMixture {
            dim,
            weights,
            means,
            covariances,
            chol,
        })
    }

    /// Like [`GaussianMixture::new`] but rescales positive weights to sum to one.
    pub fn from_unnormalized(
        weights: Vec<f64>,
        means: Vec<Latent>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::invalid("mixture weights must have a positive finite sum"));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Self::new(weights, means, covariances)
    }

    /// Single Gaussian `N(mean, scale * I)`.
    pub fn isotropic(mean: Latent, scale: f64) -> Result<Self> {
        let d = mean.dim();
        Self::new(vec![1.0], vec![mean], vec![DMatrix::identity(d, d) * scale])
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self::isotropic(Latent::zeros(dim), 1.0).expect("identity covariance is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Latent] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    /// Every component translated by `shift`.
    pub fn shifted(&self, shift: &Latent) -> Result<Self> {
        shift.check_dim(self.dim)?;
        Self::new(
            self.weights.clone(),
            self.means.iter().map(|m| m + shift).collect(),
            self.covariances.clone(),
        )
    }

    /// Per-component log densities `log w_k + log N(x; (1-t) mu_k, C_k)`.
    fn weighted_log_densities(&self, x: &Latent, t: f64) -> Result<Vec<f64>> {
        let xv = to_dvector(x);
        let a = 1.0 - t;
        let mut out = Vec::with_capacity(self.len());
        for k in 0..self.len() {
            let diff = &xv - to_dvector(&self.means[k]) * a;
            let lp = if t == 0.0 {
                gaussian_logpdf(&self.chol[k], &diff)
            } else {
                let c = self.noised_cov(k, t);
                gaussian_logpdf(&cholesky(c, "noised covariance")?, &diff)
            };
            out.push(self.weights[k].ln() + lp);
        }
        Ok(out)
    }

    fn noised_cov(&self, k: usize, t: f64) -> DMatrix<f64> {
        let a = 1.0 - t;
        &self.covariances[k] * (a * a) + DMatrix::identity(self.dim, self.dim) * (t * t)
    }

    /// `log sum_k w_k N(x; mu_k, Sigma_k)`
    pub fn logpdf(&self, x: &Latent) -> Result<f64> {
        x.check_dim(self.dim)?;
        Ok(log_sum_exp(&self.weighted_log_densities(x, 0.0)?))
    }

    /// Draws a component by weight, then `mu_k + L_k z`.
    pub fn sample(&self, stream: &mut Stream) -> Latent {
        let k = stream.categorical(&self.weights);
        let z = DVector::from_iterator(self.dim, (0..self.dim).map(|_| stream.normal()));
        let l = self.chol[k].l();
        let x = to_dvector(&self.means[k]) + l * z;
        Latent::new(x.as_slice().to_vec())
    }

    pub fn sample_n(&self, n: usize, stream: &mut Stream) -> Vec<Latent> {
        (0..n).map(|_| self.sample(stream)).collect()
    }

    /// Posterior over components given a state at noise level `t`.
    pub fn responsibilities(&self, x: &Latent, t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        x.check_dim(self.dim)?;
        if self.len() == 1 {
            return Ok(vec![1.0]);
        }
        if t == 1.0 {
            // every component marginal is N(0, I) under pure noise
            return Ok(self.weights.clone());
        }
        Ok(normalize_log(&self.weighted_log_densities(x, t)?))
    }

    /// Exact `E[X_1 - X_0 | X_t = x]` under the linear noising path.
    pub fn marginal_velocity(&self, x: &Latent, t: f64) -> Result<Latent> {
        check_time(t)?;
        x.check_dim(self.dim)?;
        let xv = to_dvector(x);
        let a = 1.0 - t;
        let mut log_w = Vec::with_capacity(self.len());
        let mut per_component = Vec::with_capacity(self.len());
        for k in 0..self.len() {
            let mu = to_dvector(&self.means[k]);
            let diff = &xv - &mu * a;
            let chol = if t == 0.0 {
                self.chol[k].clone()
            } else {
                cholesky(self.noised_cov(k, t), "noised covariance")?
            };
            log_w.push(self.weights[k].ln() + gaussian_logpdf(&chol, &diff));
            // y = C_k^{-1} (x - (1-t) mu_k)
            let y = chol.solve(&diff);
            let e_noise = &y * t;
            let e_data = &mu + &self.covariances[k] * &y * a;
            per_component.push(e_noise - e_data);
        }
        let gamma = if self.len() == 1 {
            vec![1.0]
        } else {
            normalize_log(&log_w)
        };
        let mut v = DVector::zeros(self.dim);
        for (g, vk) in gamma.iter().zip(&per_component) {
            v += vk * *g;
        }
        let v = Latent::new(v.as_slice().to_vec());
        if !v.is_finite() {
            return Err(Error::numeric(None, format!("non-finite marginal velocity at t = {t}")));
        }
        Ok(v)
    }
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::invalid(format!("t = {t} outside [0, 1]")))
    }
}

/// A source/target pair of mixtures with a component pairing.
///
/// The unconditional model is the equal-weight union of both mixtures.
/// `EditTask` is itself a [`VelocityField`]: the exact guided oracle.
#[derive(Debug, Clone)]
pub struct EditTask {
    source: GaussianMixture,
    target: GaussianMixture,
    pairing: Vec<usize>,
    union: GaussianMixture,
}

impl EditTask {
    /// `pairing[k]` is the target component paired with source component `k`.
    pub fn new(source: GaussianMixture, target: GaussianMixture, pairing: Vec<usize>) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::invalid(format!(
                "source has {} components, target has {}",
                source.len(),
                target.len()
            )));
        }
        if source.dim() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: source.dim(),
                got: target.dim(),
            });
        }
        let mut seen = vec![false; source.len()];
        if pairing.len() != source.len() {
            return Err(Error::invalid("pairing length must equal the component count"));
        }
        for &p in &pairing {
            if p >= seen.len() || seen[p] {
                return Err(Error::invalid("pairing must be a permutation"));
            }
            seen[p] = true;
        }
        let union = GaussianMixture::new(
            source
                .weights()
                .iter()
                .chain(target.weights())
                .map(|w| 0.5 * w)
                .collect(),
            source.means().iter().chain(target.means()).cloned().collect(),
            source
                .covariances()
                .iter()
                .chain(target.covariances())
                .cloned()
                .collect(),
        )?;
        Ok(EditTask {
            source,
            target,
            pairing,
            union,
        })
    }

    /// Source and target identical: every editor must return its input.
    pub fn identical(mixture: GaussianMixture) -> Result<Self> {
        let n = mixture.len();
        Self::new(mixture.clone(), mixture, (0..n).collect())
    }

    /// Source `1/2 N((-3,-1), 0.3 I) + 1/2 N((-3,1), 0.3 I)`; target is the
    /// same mixture shifted by `(+6, 0)`; component `k` pairs with `k`.
    pub fn paired_two_mode() -> Self {
        let cov = DMatrix::identity(2, 2) * 0.3;
        let source = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![Latent::from([-3.0, -1.0]), Latent::from([-3.0, 1.0])],
            vec![cov.clone(), cov],
        )
        .expect("preset source mixture is valid");
        let target = source
            .shifted(&Latent::from([6.0, 0.0]))
            .expect("preset shift is valid");
        EditTask::new(source, target, vec![0, 1]).expect("preset task is valid")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paired-two-mode" => Some(Self::paired_two_mode()),
            _ => None,
        }
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn source(&self) -> &GaussianMixture {
        &self.source
    }

    pub fn target(&self) -> &GaussianMixture {
        &self.target
    }

    pub fn union(&self) -> &GaussianMixture {
        &self.union
    }

    pub fn pairing(&self) -> &[usize] {
        &self.pairing
    }

    pub fn mixture(&self, cond: Condition) -> &GaussianMixture {
        match cond {
            Condition::Source => &self.source,
            Condition::Target => &self.target,
            Condition::Unconditional => &self.union,
        }
    }

    /// Classifier-free guided velocity `v_u + s (v_c - v_u)`.
    pub fn cfg_velocity(&self, x: &Latent, t: f64, cond: Condition, scale: f64) -> Result<Latent> {
        if cond == Condition::Unconditional || scale == 0.0 {
            return self.union.marginal_velocity(x, t);
        }
        let v_c = self.mixture(cond).marginal_velocity(x, t)?;
        if scale == 1.0 {
            return Ok(v_c);
        }
        let v_u = self.union.marginal_velocity(x, t)?;
        Ok(v_u.axpy(scale, &(&v_c - &v_u)))
    }
}

impl VelocityField for EditTask {
    fn dim(&self) -> usize {
        EditTask::dim(self)
    }

    fn velocity(&self, x: &Latent, t: f64, cond: Condition, scale: f64) -> Result<Latent> {
        self.cfg_velocity(x, t, cond, scale)
    }
}

#[derive(Debug, Clone)]
pub struct McEstimate {
    pub mean: Latent,
    /// Per-coordinate standard error of the self-normalized estimate.
    pub std_err: Latent,
    pub ess: f64,
}

pub const MIN_ORACLE_ESS: f64 = 50.0;

/// Brute-force estimate of `E[X_1 - X_0 | X_t = x]`.
///
/// Draws `X_0` from the mixture prior and importance-weights each draw by
/// the density of `X_t = x` given it, `N(x; (1-t) X_0, t^2 I)`; the paired
/// noise is then pinned to `X_1 = (x - (1-t) X_0) / t`.
pub fn mc_velocity_oracle(
    gmm: &GaussianMixture,
    x: &Latent,
    t: f64,
    n: usize,
    stream: &mut Stream,
) -> Result<McEstimate> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::invalid(format!("oracle needs 0 < t < 1, got {t}")));
    }
    if n < 1000 {
        return Err(Error::invalid(format!("oracle needs n >= 1000, got {n}")));
    }
    x.check_dim(gmm.dim())?;
    let d = gmm.dim();
    let a = 1.0 - t;
    let mut log_w = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let x0 = gmm.sample(stream);
        let resid = x.axpy(-a, &x0);
        log_w.push(-resid.norm_squared() / (2.0 * t * t));
        let x1 = resid.scale(1.0 / t);
        values.push(&x1 - &x0);
    }
    let w = normalize_log(&log_w);
    let sum_sq: f64 = w.iter().map(|v| v * v).sum();
    let ess = 1.0 / sum_sq;
    if ess < MIN_ORACLE_ESS {
        return Err(Error::OracleDegenerate {
            ess,
            min: MIN_ORACLE_ESS,
        });
    }
    let mut mean = Latent::zeros(d);
    for (wi, f) in w.iter().zip(&values) {
        mean = mean.axpy(*wi, f);
    }
    let mut var = vec![0.0; d];
    for (wi, f) in w.iter().zip(&values) {
        for j in 0..d {
            let e = f[j] - mean[j];
            var[j] += wi * wi * e * e;
        }
    }
    Ok(McEstimate {
        mean,
        std_err: Latent::new(var.into_iter().map(f64::sqrt).collect()),
        ess,
    })
}
