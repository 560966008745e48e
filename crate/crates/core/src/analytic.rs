//! Exact densities and scores for the distributions the laboratory uses.
//!
//! The forward process is variance-exploding: `x_t = x + sigma_t * nu` with
//! `nu` standard normal, so `q(x_t | x) = N(x; sigma_t^2 I)` and a diagonal
//! Gaussian mixture stays a diagonal Gaussian mixture after noising — every
//! marginal quantity below is closed form.
//!
//! Covariances are diagonal throughout; dimensions stay small (1-8).

use crate::error::{Error, Result};

/// Ordered noise levels of the forward process.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Strictly positive, strictly increasing sigmas.
    pub fn new(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::invalid("noise schedule must be non-empty"));
        }
        for (i, &s) in sigmas.iter().enumerate() {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid(format!("sigma[{i}] = {s} must be finite and > 0")));
            }
            if i > 0 && s <= sigmas[i - 1] {
                return Err(Error::invalid(format!(
                    "sigmas must be strictly increasing, got {} after {}",
                    s,
                    sigmas[i - 1]
                )));
            }
        }
        Ok(Self { sigmas })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }
}

/// Diagonal Gaussian in `d` dimensions, parameterized by mean and log std.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != log_std.len() {
            return Err(Error::dims(format!(
                "mean ({}) and log_std ({}) must have equal length >= 1",
                mean.len(),
                log_std.len()
            )));
        }
        if mean.iter().chain(log_std.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("mean and log_std entries must be finite"));
        }
        Ok(Self { mean, log_std })
    }

    /// Convenience constructor from mean and std (std must be > 0).
    pub fn from_mean_std(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("std entries must be > 0"));
        }
        let log_std = std.iter().map(|s| s.ln()).collect();
        Self::new(mean, log_std)
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            log_std: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    pub fn var(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| (2.0 * l).exp()).collect()
    }
}

/// Finite mixture of equal-dimension diagonal Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    components: Vec<DiagGaussian>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<DiagGaussian>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::invalid(format!(
                "got {} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::invalid("weights must be nonnegative and finite"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weights sum to {total}, expected 1 within 1e-12")));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::dims("all mixture components must share one dimension"));
        }
        Ok(Self { weights, components })
    }

    /// Single-component mixture wrapping one Gaussian.
    pub fn single(component: DiagGaussian) -> Self {
        Self {
            weights: vec![1.0],
            components: vec![component],
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[DiagGaussian] {
        &self.components
    }

    /// Per-component variances of the sigma_t-noised marginal.
    fn noised_vars(&self, sigma_t: f64) -> Vec<Vec<f64>> {
        let s2 = sigma_t * sigma_t;
        self.components
            .iter()
            .map(|c| c.var().iter().map(|v| v + s2).collect())
            .collect()
    }
}

/// Desk-scale encoder: `c = alpha * x + beta * eta`, `eta` standard normal.
///
/// Joint Gaussianity of (x, c) makes `p(x | c)` an exact Gaussian, which is
/// everything a conditional-input experiment needs.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyEncoderModel {
    alpha: f64,
    beta: f64,
    prior: DiagGaussian,
}

impl NoisyEncoderModel {
    pub fn new(alpha: f64, beta: f64, prior: DiagGaussian) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::invalid(format!("beta = {beta} must be finite and > 0")));
        }
        if !alpha.is_finite() {
            return Err(Error::invalid("alpha must be finite"));
        }
        Ok(Self { alpha, beta, prior })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn prior(&self) -> &DiagGaussian {
        &self.prior
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    /// Posterior mean and variance of one coordinate of x given that
    /// coordinate of c: `Var(x|c) = s0^2 b^2 / (a^2 s0^2 + b^2)`.
    pub fn posterior_moments_dim(&self, dim: usize, c: f64) -> (f64, f64) {
        let mu0 = self.prior.mean()[dim];
        let v0 = self.prior.var()[dim];
        let a = self.alpha;
        let b2 = self.beta * self.beta;
        let denom = a * a * v0 + b2;
        let gain = a * v0 / denom;
        let mean = mu0 + gain * (c - a * mu0);
        let var = v0 * b2 / denom;
        (mean, var)
    }
}

/// Exact conditional mean and variance of x given c for a scalar encoder.
pub fn posterior_moments(model: &NoisyEncoderModel, c: f64) -> Result<(f64, f64)> {
    if model.dim() != 1 {
        return Err(Error::unsupported(format!(
            "scalar posterior_moments requires a 1-d prior, got d = {}",
            model.dim()
        )));
    }
    Ok(model.posterior_moments_dim(0, c))
}

fn check_sigma(sigma_t: f64) -> Result<()> {
    if !(sigma_t > 0.0) || !sigma_t.is_finite() {
        return Err(Error::invalid(format!("sigma_t = {sigma_t} must be finite and > 0")));
    }
    Ok(())
}

/// One forward-process step: `x + sigma_t * noise`.
pub fn perturb(x: &[f64], sigma_t: f64, noise: &[f64]) -> Result<Vec<f64>> {
    check_sigma(sigma_t)?;
    if x.len() != noise.len() {
        return Err(Error::dims(format!("x has dim {}, noise has dim {}", x.len(), noise.len())));
    }
    Ok(x.iter().zip(noise).map(|(xi, ni)| xi + sigma_t * ni).collect())
}

/// Score of the forward kernel: `grad_{x_t} log q(x_t|x) = -(x_t - x) / sigma_t^2`.
pub fn conditional_score(x_t: &[f64], x: &[f64], sigma_t: f64) -> Result<Vec<f64>> {
    check_sigma(sigma_t)?;
    if x_t.len() != x.len() {
        return Err(Error::dims(format!("x_t has dim {}, x has dim {}", x_t.len(), x.len())));
    }
    let s2 = sigma_t * sigma_t;
    Ok(x_t.iter().zip(x).map(|(t, xi)| -(t - xi) / s2).collect())
}

fn check_point(dist: &GaussianMixture, x_t: &[f64], sigma_t: f64) -> Result<()> {
    check_sigma(sigma_t)?;
    if x_t.len() != dist.dim() {
        return Err(Error::dims(format!(
            "x_t has dim {}, mixture has dim {}",
            x_t.len(),
            dist.dim()
        )));
    }
    Ok(())
}

const LOG_2PI: f64 = 1.837_877_066_409_345_5; // ln(2*pi)

/// Per-component log densities of the noised marginal at x_t (including
/// mixture weights), used by both the density and the score.
fn noised_component_logps(dist: &GaussianMixture, x_t: &[f64], sigma_t: f64) -> Vec<f64> {
    let vars = dist.noised_vars(sigma_t);
    dist.components()
        .iter()
        .zip(vars.iter())
        .zip(dist.weights())
        .map(|((comp, var), &w)| {
            let mut lp = if w > 0.0 { w.ln() } else { f64::NEG_INFINITY };
            for ((&xt, &mu), &v) in x_t.iter().zip(comp.mean()).zip(var.iter()) {
                let diff = xt - mu;
                lp += -0.5 * (LOG_2PI + v.ln()) - 0.5 * diff * diff / v;
            }
            lp
        })
        .collect()
}

fn log_sum_exp(logps: &[f64]) -> f64 {
    let m = logps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + logps.iter().map(|lp| (lp - m).exp()).sum::<f64>().ln()
}

/// Log density of the noised marginal `q(x_t) = sum_k w_k N(x_t; mu_k, s_k^2 + sigma_t^2)`.
pub fn marginal_log_density(dist: &GaussianMixture, x_t: &[f64], sigma_t: f64) -> Result<f64> {
    check_point(dist, x_t, sigma_t)?;
    Ok(log_sum_exp(&noised_component_logps(dist, x_t, sigma_t)))
}

/// Posterior component responsibilities at x_t under the noised marginal.
fn responsibilities(logps: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logps);
    logps.iter().map(|lp| (lp - lse).exp()).collect()
}

/// Score of the noised marginal, exact for mixtures:
/// responsibility-weighted sum of per-component Gaussian scores.
pub fn marginal_score(dist: &GaussianMixture, x_t: &[f64], sigma_t: f64) -> Result<Vec<f64>> {
    check_point(dist, x_t, sigma_t)?;
    let logps = noised_component_logps(dist, x_t, sigma_t);
    let gammas = responsibilities(&logps);
    let vars = dist.noised_vars(sigma_t);
    let d = dist.dim();
    let mut score = vec![0.0; d];
    for ((comp, var), &g) in dist.components().iter().zip(vars.iter()).zip(gammas.iter()) {
        for i in 0..d {
            score[i] += g * (-(x_t[i] - comp.mean()[i]) / var[i]);
        }
    }
    Ok(score)
}

/// Vector-Jacobian product of the marginal score: `u^T (d score / d x_t)`.
///
/// For a mixture, the score Jacobian (the log-density Hessian) is
/// `H = sum_k gamma_k (g_k g_k^T - V_k^{-1}) - score score^T`
/// with `g_k` the per-component Gaussian scores, all diagonal-covariance.
pub fn marginal_score_vjp(
    dist: &GaussianMixture,
    x_t: &[f64],
    sigma_t: f64,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    check_point(dist, x_t, sigma_t)?;
    if upstream.len() != dist.dim() {
        return Err(Error::dims("upstream must have the mixture dimension"));
    }
    let logps = noised_component_logps(dist, x_t, sigma_t);
    let gammas = responsibilities(&logps);
    let vars = dist.noised_vars(sigma_t);
    let d = dist.dim();

    let mut score = vec![0.0; d];
    let mut comp_scores = Vec::with_capacity(dist.components().len());
    for ((comp, var), &g) in dist.components().iter().zip(vars.iter()).zip(gammas.iter()) {
        let gk: Vec<f64> = (0..d).map(|i| -(x_t[i] - comp.mean()[i]) / var[i]).collect();
        for i in 0..d {
            score[i] += g * gk[i];
        }
        comp_scores.push(gk);
    }

    // u^T H = sum_k gamma_k [ (u . g_k) g_k^T - u^T V_k^{-1} ] - (u . score) score^T
    let mut out = vec![0.0; d];
    for ((gk, var), &g) in comp_scores.iter().zip(vars.iter()).zip(gammas.iter()) {
        let dot: f64 = upstream.iter().zip(gk.iter()).map(|(u, s)| u * s).sum();
        for i in 0..d {
            out[i] += g * (dot * gk[i] - upstream[i] / var[i]);
        }
    }
    let dot_s: f64 = upstream.iter().zip(score.iter()).map(|(u, s)| u * s).sum();
    for i in 0..d {
        out[i] -= dot_s * score[i];
    }
    Ok(out)
}

/// Closed-form `E[1/2 ||grad log q(x_t|c)||^2]` when p(x|c) is the given
/// diagonal Gaussian: `sum_i 1 / (2 (s_i^2 + sigma_t^2))`.
pub fn c2_closed_form(dist: &DiagGaussian, sigma_t: f64) -> Result<f64> {
    check_sigma(sigma_t)?;
    let s2 = sigma_t * sigma_t;
    Ok(dist.var().iter().map(|v| 1.0 / (2.0 * (v + s2))).sum())
}

/// Closed-form `E[1/2 ||grad log q(x_t|x)||^2] = d / (2 sigma_t^2)`.
pub fn c3_closed_form(d: usize, sigma_t: f64) -> Result<f64> {
    check_sigma(sigma_t)?;
    if d == 0 {
        return Err(Error::invalid("dimension must be >= 1"));
    }
    Ok(d as f64 / (2.0 * sigma_t * sigma_t))
}
