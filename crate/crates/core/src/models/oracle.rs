//! Parameter-free model wrapping the exact noised-marginal score of a
//! mixture. Used as the frozen "pre-trained" network in distribution
//! optimization and as a perfect-score reference in identity checks.

use crate::analytic::{marginal_score, marginal_score_vjp, GaussianMixture};
use crate::error::{Error, Result};
use crate::models::ScoreModel;
use crate::params::ParamVector;

#[derive(Debug, Clone)]
pub struct OracleScoreModel {
    mixture: GaussianMixture,
}

impl OracleScoreModel {
    pub fn new(mixture: GaussianMixture) -> Self {
        Self { mixture }
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }
}

impl ScoreModel for OracleScoreModel {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn cond_dim(&self) -> usize {
        0
    }

    fn eval(&self, x_t: &[f64], sigma_t: f64, c: &[f64]) -> Result<Vec<f64>> {
        if !c.is_empty() {
            return Err(Error::dims("oracle model takes no condition"));
        }
        marginal_score(&self.mixture, x_t, sigma_t)
    }

    fn grad_params(&self, _x_t: &[f64], _sigma_t: f64, _c: &[f64], _upstream: &[f64]) -> Result<ParamVector> {
        Ok(ParamVector::new(vec![], vec![])?)
    }

    fn grad_condition(&self, _x_t: &[f64], _sigma_t: f64, _c: &[f64], _upstream: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![])
    }

    fn grad_input(&self, x_t: &[f64], sigma_t: f64, c: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        if !c.is_empty() {
            return Err(Error::dims("oracle model takes no condition"));
        }
        marginal_score_vjp(&self.mixture, x_t, sigma_t, upstream)
    }

    fn params(&self) -> ParamVector {
        ParamVector::new(vec![], vec![]).unwrap()
    }

    fn set_params(&mut self, params: &ParamVector) -> Result<()> {
        if !params.is_empty() {
            return Err(Error::invalid("oracle model has no parameters"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::DiagGaussian;

    #[test]
    fn oracle_evaluates_marginal_score() {
        let mix = GaussianMixture::single(DiagGaussian::standard(1));
        let m = OracleScoreModel::new(mix.clone());
        let got = m.eval(&[2.0], 1.0, &[]).unwrap();
        assert!((got[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn oracle_input_gradient_matches_finite_differences() {
        let mix = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![
                DiagGaussian::from_mean_std(vec![-2.0], vec![0.5]).unwrap(),
                DiagGaussian::from_mean_std(vec![2.0], vec![0.5]).unwrap(),
            ],
        )
        .unwrap();
        let m = OracleScoreModel::new(mix);
        let h = 1e-5;
        for &x in &[-2.5, -0.8, 0.0, 1.3, 2.9] {
            let g = m.grad_input(&[x], 0.7, &[], &[1.0]).unwrap()[0];
            let fp = m.eval(&[x + h], 0.7, &[]).unwrap()[0];
            let fm = m.eval(&[x - h], 0.7, &[]).unwrap()[0];
            let fd = (fp - fm) / (2.0 * h);
            assert!((g - fd).abs() < 1e-6, "at {x}: vjp {g} vs fd {fd}");
        }
    }
}
