//! Monte-Carlo estimators for every term of the loss decomposition.
//!
//! All stochastic values are carried as [`MCEstimate`]s (mean, standard
//! error, sample count). Estimators that are compared against each other run
//! on a shared [`SampleBatch`] so paired differences cancel common noise;
//! the draw-consumption order inside a batch is fixed and documented on
//! [`SampleBatch::generate`].

mod closed_form;
mod gradients;

pub use closed_form::*;
pub use gradients::*;

use crate::analytic::{conditional_score, marginal_score, GaussianMixture};
use crate::error::{Error, Result};
use crate::families::PathwiseGaussian;
use crate::models::ScoreModel;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

/// A Monte-Carlo value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MCEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n: usize,
}

impl MCEstimate {
    /// Mean and standard error (sample std / sqrt(n)) of the samples.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::invalid("standard error needs at least 2 samples"));
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n as f64 - 1.0);
        Ok(Self {
            value: mean,
            std_error: (var / n as f64).sqrt(),
            n,
        })
    }

    /// |value - target| <= k * std_error + floor.
    pub fn consistent_with(&self, target: f64, k: f64, floor: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error + floor
    }
}

/// Paired difference a - b of two per-sample vectors from one batch.
pub fn paired_difference(a: &[f64], b: &[f64]) -> Result<MCEstimate> {
    if a.len() != b.len() {
        return Err(Error::dims("paired samples must have equal length"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    MCEstimate::from_samples(&diffs)
}

/// Common random numbers for one batch of estimator evaluations.
///
/// Stores the primitive draws, not the derived samples, so any estimator can
/// rebuild its own quantities pathwise from the shared randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    seed: u64,
    n: usize,
    dim: usize,
    /// n uniforms in [0,1) selecting mixture components.
    comp_u: Vec<f64>,
    /// n*dim standard normals: x = mean + scale * eps.
    eps_x: Vec<f64>,
    /// n*dim standard normals: x_t = x + sigma_t * nu.
    nu: Vec<f64>,
    /// n*dim standard normals for encoder noise: c = alpha x + beta eta.
    eta: Vec<f64>,
}

impl SampleBatch {
    /// Draws, in order: component uniforms, x epsilons, forward noise nu,
    /// encoder noise eta. The order is part of the reproducibility contract.
    pub fn generate(seed: u64, n: usize, dim: usize) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::invalid("batch needs n >= 1 and dim >= 1"));
        }
        let mut rng = crate::rng::master(seed);
        let comp_u = (0..n).map(|_| rng.gen::<f64>()).collect();
        let eps_x = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
        let nu = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
        let eta = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
        Ok(Self { seed, n, dim, comp_u, eps_x, nu, eta })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eps_row(&self, i: usize) -> &[f64] {
        &self.eps_x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn nu_row(&self, i: usize) -> &[f64] {
        &self.nu[i * self.dim..(i + 1) * self.dim]
    }

    pub fn eta_row(&self, i: usize) -> &[f64] {
        &self.eta[i * self.dim..(i + 1) * self.dim]
    }

    pub fn comp_u(&self, i: usize) -> f64 {
        self.comp_u[i]
    }

    /// Component index for sample i under the mixture weights.
    pub fn component(&self, dist: &GaussianMixture, i: usize) -> usize {
        let u = self.comp_u[i];
        let mut acc = 0.0;
        for (k, w) in dist.weights().iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        dist.weights().len() - 1
    }
}

/// Realized draws (x, nu, x_t) for one batch against one source.
#[derive(Debug, Clone)]
pub struct DrawnBatch {
    pub n: usize,
    pub dim: usize,
    x: Vec<f64>,
    nu: Vec<f64>,
    x_t: Vec<f64>,
}

impl DrawnBatch {
    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn nu_row(&self, i: usize) -> &[f64] {
        &self.nu[i * self.dim..(i + 1) * self.dim]
    }

    pub fn xt_row(&self, i: usize) -> &[f64] {
        &self.x_t[i * self.dim..(i + 1) * self.dim]
    }
}

fn check_batch(dist: &GaussianMixture, sigma_t: f64, batch: &SampleBatch) -> Result<()> {
    if batch.dim() != dist.dim() {
        return Err(Error::dims(format!(
            "batch dim {} vs distribution dim {}",
            batch.dim(),
            dist.dim()
        )));
    }
    if !(sigma_t > 0.0) {
        return Err(Error::invalid("sigma_t must be > 0"));
    }
    Ok(())
}

/// Realize x ~ dist (component by uniform, then reparameterized normal) and
/// x_t = x + sigma_t * nu for every sample.
pub fn draw_from_mixture(dist: &GaussianMixture, sigma_t: f64, batch: &SampleBatch) -> Result<DrawnBatch> {
    check_batch(dist, sigma_t, batch)?;
    let (n, d) = (batch.len(), batch.dim());
    let means: Vec<&[f64]> = dist.components().iter().map(|c| c.mean()).collect();
    let stds: Vec<Vec<f64>> = dist.components().iter().map(|c| c.std()).collect();
    let mut x = vec![0.0; n * d];
    let mut x_t = vec![0.0; n * d];
    for i in 0..n {
        let k = batch.component(dist, i);
        let eps = batch.eps_row(i);
        let nu = batch.nu_row(i);
        for j in 0..d {
            let xi = means[k][j] + stds[k][j] * eps[j];
            x[i * d + j] = xi;
            x_t[i * d + j] = xi + sigma_t * nu[j];
        }
    }
    Ok(DrawnBatch { n, dim: d, x, nu: batch.nu.clone(), x_t })
}

/// Realize draws from a reparameterized Gaussian (component uniforms unused).
pub fn draw_from_pathwise(pw: &PathwiseGaussian, sigma_t: f64, batch: &SampleBatch) -> Result<DrawnBatch> {
    let d = pw.mean.len();
    if batch.dim() != d {
        return Err(Error::dims("batch dim vs family dim"));
    }
    if !(sigma_t > 0.0) {
        return Err(Error::invalid("sigma_t must be > 0"));
    }
    let n = batch.len();
    let mut x = vec![0.0; n * d];
    let mut x_t = vec![0.0; n * d];
    for i in 0..n {
        let eps = batch.eps_row(i);
        let nu = batch.nu_row(i);
        for j in 0..d {
            let xi = pw.mean[j] + pw.scale[j] * eps[j];
            x[i * d + j] = xi;
            x_t[i * d + j] = xi + sigma_t * nu[j];
        }
    }
    Ok(DrawnBatch { n, dim: d, x, nu: batch.nu.clone(), x_t })
}

fn half_sq_norm(v: &[f64]) -> f64 {
    0.5 * v.iter().map(|x| x * x).sum::<f64>()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-sample denoising loss `1/2 || s(x_t) - grad log q(x_t|x) ||^2`.
pub fn dsm_loss_samples(
    model: &dyn ScoreModel,
    dist: &GaussianMixture,
    sigma_t: f64,
    c: &[f64],
    batch: &SampleBatch,
) -> Result<Vec<f64>> {
    let draws = draw_from_mixture(dist, sigma_t, batch)?;
    let mut out = Vec::with_capacity(draws.n);
    for i in 0..draws.n {
        let x_t = draws.xt_row(i);
        let target = conditional_score(x_t, draws.x_row(i), sigma_t)?;
        let s = model.eval(x_t, sigma_t, c)?;
        let diff: Vec<f64> = s.iter().zip(&target).map(|(a, b)| a - b).collect();
        out.push(half_sq_norm(&diff));
    }
    Ok(out)
}

pub fn dsm_loss(
    model: &dyn ScoreModel,
    dist: &GaussianMixture,
    sigma_t: f64,
    c: &[f64],
    batch: &SampleBatch,
) -> Result<MCEstimate> {
    MCEstimate::from_samples(&dsm_loss_samples(model, dist, sigma_t, c, batch)?)
}

/// Per-sample explicit loss `1/2 || s(x_t) - grad log q(x_t) ||^2`, exact
/// marginal score target.
pub fn esm_loss_samples(
    model: &dyn ScoreModel,
    dist: &GaussianMixture,
    sigma_t: f64,
    c: &[f64],
    batch: &SampleBatch,
) -> Result<Vec<f64>> {
    let draws = draw_from_mixture(dist, sigma_t, batch)?;
    let mut out = Vec::with_capacity(draws.n);
    for i in 0..draws.n {
        let x_t = draws.xt_row(i);
        let target = marginal_score(dist, x_t, sigma_t)?;
        let s = model.eval(x_t, sigma_t, c)?;
        let diff: Vec<f64> = s.iter().zip(&target).map(|(a, b)| a - b).collect();
        out.push(half_sq_norm(&diff));
    }
    Ok(out)
}

pub fn esm_loss(
    model: &dyn ScoreModel,
    dist: &GaussianMixture,
    sigma_t: f64,
    c: &[f64],
    batch: &SampleBatch,
) -> Result<MCEstimate> {
    MCEstimate::from_samples(&esm_loss_samples(model, dist, sigma_t, c, batch)?)
}

/// Per-sample `1/2 || grad log q(x_t) ||^2` under the noised source.
pub fn c2_term_samples(dist: &GaussianMixture, sigma_t: f64, batch: &SampleBatch) -> Result<Vec<f64>> {
    let draws = draw_from_mixture(dist, sigma_t, batch)?;
    let mut out = Vec::with_capacity(draws.n);
    for i in 0..draws.n {
        let score = marginal_score(dist, draws.xt_row(i), sigma_t)?;
        out.push(half_sq_norm(&score));
    }
    Ok(out)
}

pub fn c2_term(dist: &GaussianMixture, sigma_t: f64, batch: &SampleBatch) -> Result<MCEstimate> {
    MCEstimate::from_samples(&c2_term_samples(dist, sigma_t, batch)?)
}

/// Per-sample `1/2 || grad log q(x_t|x) ||^2 = ||nu||^2 / (2 sigma_t^2)`.
///
/// The integrand consumes only the forward noise: x_t - x - c is a Markov
/// chain, so no condition or source parameter can enter.
pub fn c3_term_samples(d: usize, sigma_t: f64, batch: &SampleBatch) -> Result<Vec<f64>> {
    if d == 0 || d != batch.dim() {
        return Err(Error::dims("dimension must match the batch"));
    }
    if !(sigma_t > 0.0) {
        return Err(Error::invalid("sigma_t must be > 0"));
    }
    let s2 = sigma_t * sigma_t;
    Ok((0..batch.len())
        .map(|i| half_sq_norm(batch.nu_row(i)) / s2)
        .collect())
}

pub fn c3_term(d: usize, sigma_t: f64, batch: &SampleBatch) -> Result<MCEstimate> {
    MCEstimate::from_samples(&c3_term_samples(d, sigma_t, batch)?)
}

/// The pathwise gradient of the C3 integrand with respect to c: identically
/// zero, because c never enters the integrand's computational graph.
pub fn c3_condition_gradient(cond_dim: usize) -> Vec<f64> {
    vec![0.0; cond_dim]
}

/// Per-sample marginal-form cross term `s(x_t)^T grad log q(x_t)`.
pub fn cross_term_marginal_samples(
    model: &dyn ScoreModel,
    dist: &GaussianMixture,
    sigma_t: f64,
    c: &[f64],
    batch: &SampleBatch,
) -> Result<Vec<f64>> {
    let draws = draw_from_mixture(dist, sigma_t, batch)?;
    let mut out = Vec::with_capacity(draws.n);
    for i in 0..draws.n {
        let x_t = draws.xt_row(i);
        let score = marginal_score(dist, x_t, sigma_t)?;
        out.push(dot(&model.eval(x_t, sigma_t, c)?, &score));
    }
    Ok(out)
}

pub fn cross_term_marginal(
    model: &dyn ScoreModel,
    dist: &GaussianMixture,
    sigma_t: f64,
    c: &[f64],
    batch: &SampleBatch,
) -> Result<MCEstimate> {
    MCEstimate::from_samples(&cross_term_marginal_samples(model, dist, sigma_t, c, batch)?)
}

/// Per-sample conditional-form cross term `s(x_t)^T grad log q(x_t|x)`.
pub fn cross_term_conditional_samples(
    model: &dyn ScoreModel,
    dist: &GaussianMixture,
    sigma_t: f64,
    c: &[f64],
    batch: &SampleBatch,
) -> Result<Vec<f64>> {
    let draws = draw_from_mixture(dist, sigma_t, batch)?;
    let mut out = Vec::with_capacity(draws.n);
    for i in 0..draws.n {
        let x_t = draws.xt_row(i);
        let target = conditional_score(x_t, draws.x_row(i), sigma_t)?;
        out.push(dot(&model.eval(x_t, sigma_t, c)?, &target));
    }
    Ok(out)
}

pub fn cross_term_conditional(
    model: &dyn ScoreModel,
    dist: &GaussianMixture,
    sigma_t: f64,
    c: &[f64],
    batch: &SampleBatch,
) -> Result<MCEstimate> {
    MCEstimate::from_samples(&cross_term_conditional_samples(model, dist, sigma_t, c, batch)?)
}

/// Per-sample residual of `L_DSM - L_ESM + C2 - C3` on shared draws; the
/// paired mean is an unbiased estimate of 0 with properly coupled noise.
pub fn decomposition_residual_samples(
    model: &dyn ScoreModel,
    dist: &GaussianMixture,
    sigma_t: f64,
    c: &[f64],
    batch: &SampleBatch,
) -> Result<Vec<f64>> {
    let dsm = dsm_loss_samples(model, dist, sigma_t, c, batch)?;
    let esm = esm_loss_samples(model, dist, sigma_t, c, batch)?;
    let c2 = c2_term_samples(dist, sigma_t, batch)?;
    let c3 = c3_term_samples(dist.dim(), sigma_t, batch)?;
    Ok((0..dsm.len()).map(|i| dsm[i] - esm[i] + c2[i] - c3[i]).collect())
}

pub fn decomposition_residual(
    model: &dyn ScoreModel,
    dist: &GaussianMixture,
    sigma_t: f64,
    c: &[f64],
    batch: &SampleBatch,
) -> Result<MCEstimate> {
    MCEstimate::from_samples(&decomposition_residual_samples(model, dist, sigma_t, c, batch)?)
}
