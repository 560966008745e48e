//! Conditional source families `p(x | c)` used by the condition- and
//! distribution-optimization experiments.
//!
//! Every family can produce its conditional as a `GaussianMixture`, which
//! gives exact noised-marginal scores for free. Families whose sampling is
//! reparameterizable additionally expose mean/scale and their Jacobians in
//! c, enabling pathwise gradients; a family that cannot (the mixture-weight
//! family) returns `None` from `pathwise_at` and is driven through the
//! deterministic quadrature path instead.

use crate::analytic::{DiagGaussian, GaussianMixture, NoisyEncoderModel};
use crate::error::{Error, Result};

/// Reparameterization data at a fixed condition: `x = mean + scale * eps`.
#[derive(Debug, Clone)]
pub struct PathwiseGaussian {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// d x cond_dim Jacobian of the mean.
    pub dmean_dc: Vec<Vec<f64>>,
    /// d x cond_dim Jacobian of the scale.
    pub dscale_dc: Vec<Vec<f64>>,
}

pub trait ConditionalFamily {
    fn dim(&self) -> usize;

    fn cond_dim(&self) -> usize;

    /// The conditional `p(x | c)` as an exact mixture.
    fn conditional(&self, c: &[f64]) -> Result<GaussianMixture>;

    /// Reparameterization data, or `None` when sampling is not pathwise
    /// differentiable in c.
    fn pathwise_at(&self, c: &[f64]) -> Option<PathwiseGaussian>;
}

fn check_cond(family: &dyn ConditionalFamily, c: &[f64]) -> Result<()> {
    if c.len() != family.cond_dim() {
        return Err(Error::dims(format!(
            "condition has dim {}, family expects {}",
            c.len(),
            family.cond_dim()
        )));
    }
    Ok(())
}

/// 1-d Gaussian conditional `p(x|c) = N(c_0, exp(c_1)^2)`.
#[derive(Debug, Clone, Default)]
pub struct GaussianMeanLogScale;

impl ConditionalFamily for GaussianMeanLogScale {
    fn dim(&self) -> usize {
        1
    }

    fn cond_dim(&self) -> usize {
        2
    }

    fn conditional(&self, c: &[f64]) -> Result<GaussianMixture> {
        check_cond(self, c)?;
        Ok(GaussianMixture::single(DiagGaussian::new(vec![c[0]], vec![c[1]])?))
    }

    fn pathwise_at(&self, c: &[f64]) -> Option<PathwiseGaussian> {
        let s = c[1].exp();
        Some(PathwiseGaussian {
            mean: vec![c[0]],
            scale: vec![s],
            dmean_dc: vec![vec![1.0, 0.0]],
            dscale_dc: vec![vec![0.0, s]],
        })
    }
}

/// Gaussian posterior of a noisy linear encoder: `p(x|c) = N(m(c), v)` with
/// `m(c)` affine in c and v independent of c.
#[derive(Debug, Clone)]
pub struct EncoderPosterior {
    encoder: NoisyEncoderModel,
}

impl EncoderPosterior {
    pub fn new(encoder: NoisyEncoderModel) -> Result<Self> {
        if encoder.dim() != 1 {
            return Err(Error::unsupported("encoder posterior family is 1-d"));
        }
        Ok(Self { encoder })
    }

    pub fn encoder(&self) -> &NoisyEncoderModel {
        &self.encoder
    }

    /// Slope of the posterior mean in c.
    pub fn mean_gain(&self) -> f64 {
        let a = self.encoder.alpha();
        let v0 = self.encoder.prior().var()[0];
        let b2 = self.encoder.beta() * self.encoder.beta();
        a * v0 / (a * a * v0 + b2)
    }
}

impl ConditionalFamily for EncoderPosterior {
    fn dim(&self) -> usize {
        1
    }

    fn cond_dim(&self) -> usize {
        1
    }

    fn conditional(&self, c: &[f64]) -> Result<GaussianMixture> {
        check_cond(self, c)?;
        let (mean, var) = self.encoder.posterior_moments_dim(0, c[0]);
        Ok(GaussianMixture::single(DiagGaussian::from_mean_std(
            vec![mean],
            vec![var.sqrt()],
        )?))
    }

    fn pathwise_at(&self, c: &[f64]) -> Option<PathwiseGaussian> {
        let (mean, var) = self.encoder.posterior_moments_dim(0, c[0]);
        Some(PathwiseGaussian {
            mean: vec![mean],
            scale: vec![var.sqrt()],
            dmean_dc: vec![vec![self.mean_gain()]],
            dscale_dc: vec![vec![0.0]],
        })
    }
}

/// Two-component 1-d mixture whose weight is `sigmoid(c)`; component
/// locations and scale are fixed. Component choice is discrete, so the
/// family has no pathwise gradient.
#[derive(Debug, Clone)]
pub struct WeightLogitMixture {
    pub mu: [f64; 2],
    pub std: f64,
}

impl WeightLogitMixture {
    pub fn new(mu: [f64; 2], std: f64) -> Result<Self> {
        if !(std > 0.0) {
            return Err(Error::invalid("component std must be > 0"));
        }
        Ok(Self { mu, std })
    }

    pub fn weight(&self, logit: f64) -> f64 {
        1.0 / (1.0 + (-logit).exp())
    }
}

impl ConditionalFamily for WeightLogitMixture {
    fn dim(&self) -> usize {
        1
    }

    fn cond_dim(&self) -> usize {
        1
    }

    fn conditional(&self, c: &[f64]) -> Result<GaussianMixture> {
        check_cond(self, c)?;
        let w = self.weight(c[0]);
        GaussianMixture::new(
            vec![w, 1.0 - w],
            vec![
                DiagGaussian::from_mean_std(vec![self.mu[0]], vec![self.std])?,
                DiagGaussian::from_mean_std(vec![self.mu[1]], vec![self.std])?,
            ],
        )
    }

    fn pathwise_at(&self, _c: &[f64]) -> Option<PathwiseGaussian> {
        None
    }
}

/// Diagonal Gaussian viewed as a conditional on its own parameters
/// `c = [m_0..m_{d-1}, log u_0..log u_{d-1}]`. This is what distribution
/// optimization differentiates through.
#[derive(Debug, Clone)]
pub struct DistParams {
    dim: usize,
}

impl DistParams {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        Ok(Self { dim })
    }

    pub fn pack(dist: &DiagGaussian) -> Vec<f64> {
        let mut c = dist.mean().to_vec();
        c.extend_from_slice(dist.log_std());
        c
    }

    pub fn unpack(&self, c: &[f64]) -> Result<DiagGaussian> {
        if c.len() != 2 * self.dim {
            return Err(Error::dims("expected [means..., log stds...]"));
        }
        DiagGaussian::new(c[..self.dim].to_vec(), c[self.dim..].to_vec())
    }
}

impl ConditionalFamily for DistParams {
    fn dim(&self) -> usize {
        self.dim
    }

    fn cond_dim(&self) -> usize {
        2 * self.dim
    }

    fn conditional(&self, c: &[f64]) -> Result<GaussianMixture> {
        Ok(GaussianMixture::single(self.unpack(c)?))
    }

    fn pathwise_at(&self, c: &[f64]) -> Option<PathwiseGaussian> {
        let d = self.dim;
        let mut dmean = vec![vec![0.0; 2 * d]; d];
        let mut dscale = vec![vec![0.0; 2 * d]; d];
        let mut scale = vec![0.0; d];
        for i in 0..d {
            scale[i] = c[d + i].exp();
            dmean[i][i] = 1.0;
            dscale[i][d + i] = scale[i];
        }
        Some(PathwiseGaussian {
            mean: c[..d].to_vec(),
            scale,
            dmean_dc: dmean,
            dscale_dc: dscale,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_log_scale_family_shape() {
        let f = GaussianMeanLogScale;
        let cond = f.conditional(&[0.7, -0.3]).unwrap();
        assert_eq!(cond.dim(), 1);
        assert!((cond.components()[0].mean()[0] - 0.7).abs() < 1e-15);
        assert!((cond.components()[0].std()[0] - (-0.3f64).exp()).abs() < 1e-15);
        let pw = f.pathwise_at(&[0.7, -0.3]).unwrap();
        assert_eq!(pw.dmean_dc[0], vec![1.0, 0.0]);
        assert!((pw.dscale_dc[0][1] - (-0.3f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn encoder_posterior_matches_moments() {
        let enc = NoisyEncoderModel::new(1.0, 1.0, DiagGaussian::standard(1)).unwrap();
        let f = EncoderPosterior::new(enc).unwrap();
        let cond = f.conditional(&[2.0]).unwrap();
        assert!((cond.components()[0].mean()[0] - 1.0).abs() < 1e-15);
        assert!((cond.components()[0].var()[0] - 0.5).abs() < 1e-14);
        assert!((f.mean_gain() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weight_logit_family_is_not_pathwise() {
        let f = WeightLogitMixture::new([-2.0, 2.0], 0.5).unwrap();
        assert!(f.pathwise_at(&[0.0]).is_none());
        let cond = f.conditional(&[0.0]).unwrap();
        assert!((cond.weights()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dist_params_pack_unpack() {
        let f = DistParams::new(2).unwrap();
        let g = DiagGaussian::new(vec![0.3, -0.7], vec![0.1, -0.5]).unwrap();
        let c = DistParams::pack(&g);
        assert_eq!(f.unpack(&c).unwrap(), g);
        let pw = f.pathwise_at(&c).unwrap();
        assert_eq!(pw.mean, vec![0.3, -0.7]);
        assert!((pw.scale[1] - (-0.5f64).exp()).abs() < 1e-15);
    }
}
