//! Per-noise-level affine score model.
//!
//! Each schedule entry owns an independent (a, b, w) triple with
//! `s(x_t, sigma_l, c)_i = a_i * x_t_i + b_i + w_i * c`, so every loss in the
//! decomposition has a one-line closed form. The condition is scalar
//! (`cond_dim` 0 or 1); richer conditioning belongs to the MLP.

use crate::analytic::DiagGaussian;
use crate::error::{Error, Result};
use crate::models::{check_eval_dims, ScoreModel};
use crate::params::{ParamVector, Segment};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearScoreModel {
    sigmas: Vec<f64>,
    dim: usize,
    cond_dim: usize,
    params: ParamVector,
}

impl LinearScoreModel {
    /// All-zero parameters, one (a, b[, w]) triple per schedule entry.
    pub fn zeros(sigmas: &[f64], dim: usize, cond_dim: usize) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::invalid("at least one noise level required"));
        }
        if dim == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        if cond_dim > 1 {
            return Err(Error::unsupported("linear model supports scalar condition only"));
        }
        let mut layout = Vec::new();
        let mut cursor = 0;
        for l in 0..sigmas.len() {
            for name in ["a", "b", "w"] {
                if name == "w" && cond_dim == 0 {
                    continue;
                }
                layout.push(Segment {
                    name: format!("{name}{l}"),
                    start: cursor,
                    len: dim,
                });
                cursor += dim;
            }
        }
        let params = ParamVector::new(vec![0.0; cursor], layout)?;
        Ok(Self {
            sigmas: sigmas.to_vec(),
            dim,
            cond_dim,
            params,
        })
    }

    /// Unconditional single-level model with the given slope and offset.
    pub fn single_level(sigma: f64, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() || a.is_empty() {
            return Err(Error::dims("a and b must have equal nonzero length"));
        }
        let mut model = Self::zeros(&[sigma], a.len(), 0)?;
        model.set_level(0, &a, &b, None)?;
        Ok(model)
    }

    /// Overwrite one level's parameters.
    pub fn set_level(&mut self, level: usize, a: &[f64], b: &[f64], w: Option<&[f64]>) -> Result<()> {
        if level >= self.sigmas.len() {
            return Err(Error::invalid(format!("level {level} out of range")));
        }
        if a.len() != self.dim || b.len() != self.dim {
            return Err(Error::dims("level parameters must have the model dimension"));
        }
        self.params.segment_mut(&format!("a{level}")).unwrap().copy_from_slice(a);
        self.params.segment_mut(&format!("b{level}")).unwrap().copy_from_slice(b);
        match (self.cond_dim, w) {
            (1, Some(w)) => {
                if w.len() != self.dim {
                    return Err(Error::dims("w must have the model dimension"));
                }
                self.params.segment_mut(&format!("w{level}")).unwrap().copy_from_slice(w);
            }
            (1, None) => {}
            (0, Some(_)) => return Err(Error::invalid("model has no condition coupling")),
            _ => {}
        }
        Ok(())
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn level_params(&self, level: usize) -> (&[f64], &[f64], Option<&[f64]>) {
        (
            self.params.segment(&format!("a{level}")).unwrap(),
            self.params.segment(&format!("b{level}")).unwrap(),
            self.params.segment(&format!("w{level}")),
        )
    }

    fn level_of(&self, sigma_t: f64) -> Result<usize> {
        self.sigmas
            .iter()
            .position(|&s| (s - sigma_t).abs() <= 1e-12 * s.abs().max(1.0))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "sigma_t = {sigma_t} is not a schedule entry of this model"
                ))
            })
    }
}

impl ScoreModel for LinearScoreModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    fn eval(&self, x_t: &[f64], sigma_t: f64, c: &[f64]) -> Result<Vec<f64>> {
        check_eval_dims(self, x_t, c)?;
        let level = self.level_of(sigma_t)?;
        let (a, b, w) = self.level_params(level);
        let cv = if self.cond_dim == 1 { c[0] } else { 0.0 };
        Ok((0..self.dim)
            .map(|i| a[i] * x_t[i] + b[i] + w.map_or(0.0, |w| w[i] * cv))
            .collect())
    }

    fn grad_params(&self, x_t: &[f64], sigma_t: f64, c: &[f64], upstream: &[f64]) -> Result<ParamVector> {
        check_eval_dims(self, x_t, c)?;
        if upstream.len() != self.dim {
            return Err(Error::dims("upstream must have the model dimension"));
        }
        let level = self.level_of(sigma_t)?;
        let mut grad = self.params.zeros_like();
        let cv = if self.cond_dim == 1 { c[0] } else { 0.0 };
        let ga = grad.segment_mut(&format!("a{level}")).unwrap();
        for i in 0..self.dim {
            ga[i] = upstream[i] * x_t[i];
        }
        let gb = grad.segment_mut(&format!("b{level}")).unwrap();
        gb.copy_from_slice(upstream);
        if self.cond_dim == 1 {
            let gw = grad.segment_mut(&format!("w{level}")).unwrap();
            for i in 0..self.dim {
                gw[i] = upstream[i] * cv;
            }
        }
        Ok(grad)
    }

    fn grad_condition(&self, x_t: &[f64], sigma_t: f64, c: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        check_eval_dims(self, x_t, c)?;
        if upstream.len() != self.dim {
            return Err(Error::dims("upstream must have the model dimension"));
        }
        if self.cond_dim == 0 {
            return Ok(vec![]);
        }
        let level = self.level_of(sigma_t)?;
        let (_, _, w) = self.level_params(level);
        let w = w.unwrap();
        Ok(vec![upstream.iter().zip(w).map(|(u, wi)| u * wi).sum()])
    }

    fn grad_input(&self, x_t: &[f64], sigma_t: f64, c: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        check_eval_dims(self, x_t, c)?;
        if upstream.len() != self.dim {
            return Err(Error::dims("upstream must have the model dimension"));
        }
        let level = self.level_of(sigma_t)?;
        let (a, _, _) = self.level_params(level);
        Ok(upstream.iter().zip(a).map(|(u, ai)| u * ai).collect())
    }

    fn params(&self) -> ParamVector {
        self.params.clone()
    }

    fn set_params(&mut self, params: &ParamVector) -> Result<()> {
        if params.layout() != self.params.layout() {
            return Err(Error::dims("parameter layout mismatch"));
        }
        self.params = params.clone();
        Ok(())
    }
}

/// Minimizer of the explicit objective for a diagonal Gaussian source:
/// `a_i = -1 / (s_i^2 + sigma_t^2)`, `b_i = mu_i / (s_i^2 + sigma_t^2)`.
/// At these values the model equals the noised marginal score everywhere,
/// so the explicit loss is exactly zero.
pub fn optimal_linear_params(dist: &DiagGaussian, sigma_t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(sigma_t > 0.0) {
        return Err(Error::invalid("sigma_t must be > 0"));
    }
    let s2 = sigma_t * sigma_t;
    let mut a = Vec::with_capacity(dist.dim());
    let mut b = Vec::with_capacity(dist.dim());
    for (&mu, &v) in dist.mean().iter().zip(dist.var().iter()) {
        let denom = v + s2;
        a.push(-1.0 / denom);
        b.push(mu / denom);
    }
    Ok((a, b))
}
