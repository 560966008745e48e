//! Pathwise (reparameterized) Monte-Carlo gradients.
//!
//! Parameter gradients backpropagate the loss upstream through the model.
//! Condition and distribution gradients additionally flow through the
//! sampling path `x = mean(c) + scale(c) * eps`, `x_t = x + sigma_t * nu`,
//! which needs the model's input gradient and, for the explicit objectives,
//! the analytic dependence of the conditional marginal score on c.

use crate::analytic::{conditional_score, marginal_score, DiagGaussian, GaussianMixture};
use crate::error::{Error, Result};
use crate::families::{ConditionalFamily, DistParams};
use crate::models::ScoreModel;
use crate::objectives::{draw_from_mixture, draw_from_pathwise, SampleBatch};
use crate::params::ParamVector;

/// Objectives whose theta gradient is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaObjective {
    Dsm,
    Esm,
}

/// Objectives whose condition / distribution gradient is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasObjective {
    Dsm,
    Esm,
    C2,
}

/// Pathwise MC gradient of the chosen objective with respect to theta,
/// averaged over the batch.
pub fn grad_theta(
    objective: ThetaObjective,
    model: &dyn ScoreModel,
    dist: &GaussianMixture,
    sigma_t: f64,
    c: &[f64],
    batch: &SampleBatch,
) -> Result<ParamVector> {
    let draws = draw_from_mixture(dist, sigma_t, batch)?;
    let mut acc = model.params().zeros_like();
    for i in 0..draws.n {
        let x_t = draws.xt_row(i);
        let s = model.eval(x_t, sigma_t, c)?;
        let target = match objective {
            ThetaObjective::Dsm => conditional_score(x_t, draws.x_row(i), sigma_t)?,
            ThetaObjective::Esm => marginal_score(dist, x_t, sigma_t)?,
        };
        let upstream: Vec<f64> = s.iter().zip(&target).map(|(a, b)| a - b).collect();
        let g = model.grad_params(x_t, sigma_t, c, &upstream)?;
        acc.axpy(1.0, &g)?;
    }
    let scale = 1.0 / draws.n as f64;
    for v in acc.values_mut() {
        *v *= scale;
    }
    Ok(acc)
}

/// Per-sample flat gradients of `dsm_i - esm_i` with respect to theta.
///
/// The difference of the two upstreams collapses to a single VJP with
/// upstream `marginal score + shift + nu / sigma`, so the pairing is exact
/// by construction. `esm_target_shift` corrupts the explicit target and is
/// the negative-control knob; it is 0 in every honest run.
pub fn theta_grad_difference_samples(
    model: &dyn ScoreModel,
    dist: &GaussianMixture,
    sigma_t: f64,
    c: &[f64],
    batch: &SampleBatch,
    esm_target_shift: f64,
) -> Result<Vec<Vec<f64>>> {
    let draws = draw_from_mixture(dist, sigma_t, batch)?;
    let mut out = Vec::with_capacity(draws.n);
    for i in 0..draws.n {
        let x_t = draws.xt_row(i);
        let esm_target = marginal_score(dist, x_t, sigma_t)?;
        let dsm_target = conditional_score(x_t, draws.x_row(i), sigma_t)?;
        let upstream: Vec<f64> = esm_target
            .iter()
            .zip(&dsm_target)
            .map(|(e, d)| e + esm_target_shift - d)
            .collect();
        out.push(model.grad_params(x_t, sigma_t, c, &upstream)?.values().to_vec());
    }
    Ok(out)
}

/// What the model sees as its condition input when a family drives sampling.
fn model_condition<'a>(model: &dyn ScoreModel, family_cond: &'a [f64]) -> Result<&'a [f64]> {
    if model.cond_dim() == family_cond.len() {
        Ok(family_cond)
    } else if model.cond_dim() == 0 {
        Ok(&[])
    } else {
        Err(Error::dims(format!(
            "model condition dim {} matches neither the family's {} nor 0",
            model.cond_dim(),
            family_cond.len()
        )))
    }
}

/// Per-sample total c-gradient of the chosen objective, flowing through the
/// model inputs and the reparameterized sampling path.
pub fn grad_condition_samples(
    objective: BiasObjective,
    model: &dyn ScoreModel,
    family: &dyn ConditionalFamily,
    c: &[f64],
    sigma_t: f64,
    batch: &SampleBatch,
) -> Result<Vec<Vec<f64>>> {
    if c.len() != family.cond_dim() {
        return Err(Error::dims("condition length must match the family"));
    }
    let pw = family
        .pathwise_at(c)
        .ok_or_else(|| Error::unsupported("family has no pathwise-differentiable sampling"))?;
    let d = family.dim();
    let dc = family.cond_dim();
    let model_c = model_condition(model, c)?;
    let draws = draw_from_pathwise(&pw, sigma_t, batch)?;
    let s2 = sigma_t * sigma_t;
    // Variance of the conditional noised marginal, per dimension.
    let v: Vec<f64> = pw.scale.iter().map(|s| s * s + s2).collect();

    let mut out = Vec::with_capacity(draws.n);
    for i in 0..draws.n {
        let x_t = draws.xt_row(i);
        let eps = batch.eps_row(i);
        // dx_t/dc_j per dimension.
        let dxt = |dim: usize, j: usize| pw.dmean_dc[dim][j] + pw.dscale_dc[dim][j] * eps[dim];
        // Conditional marginal score m(x_t, c) and its total c-derivative.
        let m: Vec<f64> = (0..d).map(|k| -(x_t[k] - pw.mean[k]) / v[k]).collect();
        let dm = |dim: usize, j: usize| {
            let dv = 2.0 * pw.scale[dim] * pw.dscale_dc[dim][j];
            -dxt(dim, j) / v[dim]
                + pw.dmean_dc[dim][j] / v[dim]
                + (x_t[dim] - pw.mean[dim]) / (v[dim] * v[dim]) * dv
        };

        let mut grad = vec![0.0; dc];
        match objective {
            BiasObjective::Dsm => {
                let s = model.eval(x_t, sigma_t, model_c)?;
                let target = conditional_score(x_t, draws.x_row(i), sigma_t)?;
                let upstream: Vec<f64> = s.iter().zip(&target).map(|(a, b)| a - b).collect();
                let gx = model.grad_input(x_t, sigma_t, model_c, &upstream)?;
                let gc = model.grad_condition(x_t, sigma_t, model_c, &upstream)?;
                for j in 0..dc {
                    for k in 0..d {
                        grad[j] += gx[k] * dxt(k, j);
                    }
                    if !gc.is_empty() {
                        grad[j] += gc[j];
                    }
                }
            }
            BiasObjective::Esm => {
                let s = model.eval(x_t, sigma_t, model_c)?;
                let upstream: Vec<f64> = s.iter().zip(&m).map(|(a, b)| a - b).collect();
                let gx = model.grad_input(x_t, sigma_t, model_c, &upstream)?;
                let gc = model.grad_condition(x_t, sigma_t, model_c, &upstream)?;
                for j in 0..dc {
                    for k in 0..d {
                        grad[j] += gx[k] * dxt(k, j) - upstream[k] * dm(k, j);
                    }
                    if !gc.is_empty() {
                        grad[j] += gc[j];
                    }
                }
            }
            BiasObjective::C2 => {
                for j in 0..dc {
                    for k in 0..d {
                        grad[j] += m[k] * dm(k, j);
                    }
                }
            }
        }
        out.push(grad);
    }
    Ok(out)
}

fn mean_rows(samples: &[Vec<f64>]) -> Vec<f64> {
    let dc = samples.first().map_or(0, |s| s.len());
    let mut mean = vec![0.0; dc];
    for row in samples {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= samples.len() as f64;
    }
    mean
}

/// MC total gradient with respect to c of the chosen objective; for C2 this
/// is the bias-term gradient of the condition-bias theorem.
pub fn grad_condition_total(
    objective: BiasObjective,
    model: &dyn ScoreModel,
    family: &dyn ConditionalFamily,
    c: &[f64],
    sigma_t: f64,
    batch: &SampleBatch,
) -> Result<Vec<f64>> {
    Ok(mean_rows(&grad_condition_samples(objective, model, family, c, sigma_t, batch)?))
}

/// Per-sample pathwise gradient with respect to `[means..., log stds...]` of
/// a diagonal Gaussian source under a frozen model.
pub fn grad_distribution_samples(
    objective: BiasObjective,
    frozen_model: &dyn ScoreModel,
    p: &DiagGaussian,
    sigma_t: f64,
    batch: &SampleBatch,
) -> Result<Vec<Vec<f64>>> {
    if frozen_model.cond_dim() != 0 {
        return Err(Error::unsupported("the frozen model must be unconditional"));
    }
    let family = DistParams::new(p.dim())?;
    let c = DistParams::pack(p);
    grad_condition_samples(objective, frozen_model, &family, &c, sigma_t, batch)
}

/// MC gradient with respect to `[means..., log stds...]`; for the explicit
/// objective the marginal score of the current p enters analytically.
pub fn grad_distribution(
    objective: BiasObjective,
    frozen_model: &dyn ScoreModel,
    p: &DiagGaussian,
    sigma_t: f64,
    batch: &SampleBatch,
) -> Result<Vec<f64>> {
    Ok(mean_rows(&grad_distribution_samples(objective, frozen_model, p, sigma_t, batch)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{GaussianMeanLogScale, WeightLogitMixture};
    use crate::models::{LinearScoreModel, MlpScoreModel, OracleScoreModel, ScoreModel};
    use crate::objectives::{dsm_loss, esm_loss, paired_difference, MCEstimate};

    #[test]
    fn grad_theta_matches_finite_difference_of_loss() {
        let dist = GaussianMixture::single(DiagGaussian::from_mean_std(vec![0.5], vec![0.9]).unwrap());
        let mut model = MlpScoreModel::new(1, 0, &[8, 8], 3).unwrap();
        let batch = SampleBatch::generate(17, 512, 1).unwrap();
        for objective in [ThetaObjective::Dsm, ThetaObjective::Esm] {
            let g = grad_theta(objective, &model, &dist, 0.8, &[], &batch).unwrap();
            let base = model.params();
            let h = 1e-5;
            // Check a handful of coordinates against loss finite differences
            // on the same fixed batch.
            for idx in [0usize, 3, 10, base.len() - 1] {
                let mut plus = base.clone();
                plus.values_mut()[idx] += h;
                model.set_params(&plus).unwrap();
                let fp = match objective {
                    ThetaObjective::Dsm => dsm_loss(&model, &dist, 0.8, &[], &batch).unwrap().value,
                    ThetaObjective::Esm => esm_loss(&model, &dist, 0.8, &[], &batch).unwrap().value,
                };
                let mut minus = base.clone();
                minus.values_mut()[idx] -= h;
                model.set_params(&minus).unwrap();
                let fm = match objective {
                    ThetaObjective::Dsm => dsm_loss(&model, &dist, 0.8, &[], &batch).unwrap().value,
                    ThetaObjective::Esm => esm_loss(&model, &dist, 0.8, &[], &batch).unwrap().value,
                };
                model.set_params(&base).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let a = g.values()[idx];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-4, "{objective:?} coord {idx}: analytic {a} vs fd {fd}");
            }
        }
    }

    #[test]
    fn theta_gradients_agree_between_objectives_mlp() {
        let mix = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![
                DiagGaussian::from_mean_std(vec![-2.0], vec![0.5]).unwrap(),
                DiagGaussian::from_mean_std(vec![2.0], vec![0.5]).unwrap(),
            ],
        )
        .unwrap();
        let model = MlpScoreModel::new(1, 0, &[8, 8], 5).unwrap();
        let batch = SampleBatch::generate(19, 4096, 1).unwrap();
        let diffs = theta_grad_difference_samples(&model, &mix, 1.0, &[], &batch, 0.0).unwrap();
        let p = diffs[0].len();
        for coord in 0..p {
            let col: Vec<f64> = diffs.iter().map(|r| r[coord]).collect();
            let est = MCEstimate::from_samples(&col).unwrap();
            assert!(
                est.consistent_with(0.0, 3.5, 1e-8),
                "coordinate {coord}: {est:?}"
            );
        }
    }

    #[test]
    fn corrupted_esm_target_breaks_theta_equivalence() {
        let dist = GaussianMixture::single(DiagGaussian::standard(1));
        let model = MlpScoreModel::new(1, 0, &[8], 7).unwrap();
        let batch = SampleBatch::generate(23, 4096, 1).unwrap();
        let diffs = theta_grad_difference_samples(&model, &dist, 1.0, &[], &batch, 0.1).unwrap();
        let p = diffs[0].len();
        let broken = (0..p).any(|coord| {
            let col: Vec<f64> = diffs.iter().map(|r| r[coord]).collect();
            let est = MCEstimate::from_samples(&col).unwrap();
            !est.consistent_with(0.0, 3.0, 1e-8)
        });
        assert!(broken, "a shifted explicit target must be detected");
    }

    #[test]
    fn c2_condition_gradient_matches_closed_form() {
        // p(x|c) = N(c0, exp(c1)^2): dC2/dc0 = 0 per sample, and
        // dC2/dc1 = -s^2/(s^2+sigma^2)^2 = -0.25 at s = sigma = 1.
        let family = GaussianMeanLogScale;
        let model = LinearScoreModel::single_level(1.0, vec![0.0], vec![0.0]).unwrap();
        let batch = SampleBatch::generate(29, 40_000, 1).unwrap();
        let samples = grad_condition_samples(BiasObjective::C2, &model, &family, &[0.3, 0.0], 1.0, &batch).unwrap();
        for row in &samples {
            assert_eq!(row[0], 0.0, "mean gradient of C2 must vanish per sample");
        }
        let col: Vec<f64> = samples.iter().map(|r| r[1]).collect();
        let est = MCEstimate::from_samples(&col).unwrap();
        assert!(est.consistent_with(-0.25, 3.0, 0.0), "{est:?}");
    }

    #[test]
    fn c2_condition_gradient_matches_finite_difference_of_closed_form() {
        use crate::analytic::c2_closed_form;
        let family = GaussianMeanLogScale;
        let model = LinearScoreModel::single_level(0.7, vec![0.0], vec![0.0]).unwrap();
        let batch = SampleBatch::generate(31, 60_000, 1).unwrap();
        let c = [0.1, -0.4];
        let grad = grad_condition_total(BiasObjective::C2, &model, &family, &c, 0.7, &batch).unwrap();
        let h = 1e-5;
        let c2_at = |logs: f64| {
            let g = DiagGaussian::new(vec![c[0]], vec![logs]).unwrap();
            c2_closed_form(&g, 0.7).unwrap()
        };
        let fd = (c2_at(c[1] + h) - c2_at(c[1] - h)) / (2.0 * h);
        let col: Vec<f64> = grad_condition_samples(BiasObjective::C2, &model, &family, &c, 0.7, &batch)
            .unwrap()
            .iter()
            .map(|r| r[1])
            .collect();
        let est = MCEstimate::from_samples(&col).unwrap();
        assert!((grad[1] - est.value).abs() < 1e-15);
        assert!(est.consistent_with(fd, 3.0, 1e-8), "{est:?} vs fd {fd}");
    }

    #[test]
    fn condition_bias_identity_holds_per_coordinate() {
        // grad_c DSM - grad_c ESM + grad_c C2 = 0 in expectation, for any
        // fixed model.
        let family = GaussianMeanLogScale;
        let model = MlpScoreModel::new(1, 2, &[8, 8], 11).unwrap();
        let mut rng = crate::rng::master(37);
        use rand::Rng;
        for trial in 0..5 {
            let c = [rng.gen_range(-1.0..1.0), rng.gen_range(-0.7..0.4)];
            let batch = SampleBatch::generate(500 + trial, 30_000, 1).unwrap();
            let dsm = grad_condition_samples(BiasObjective::Dsm, &model, &family, &c, 0.9, &batch).unwrap();
            let esm = grad_condition_samples(BiasObjective::Esm, &model, &family, &c, 0.9, &batch).unwrap();
            let c2 = grad_condition_samples(BiasObjective::C2, &model, &family, &c, 0.9, &batch).unwrap();
            for j in 0..2 {
                let res: Vec<f64> = (0..dsm.len()).map(|i| dsm[i][j] - esm[i][j] + c2[i][j]).collect();
                let est = MCEstimate::from_samples(&res).unwrap();
                assert!(
                    est.consistent_with(0.0, 3.5, 1e-8),
                    "trial {trial} coord {j}: {est:?}"
                );
            }
        }
    }

    #[test]
    fn weight_family_is_unsupported_for_pathwise_gradients() {
        let family = WeightLogitMixture::new([-2.0, 2.0], 0.5).unwrap();
        let model = LinearScoreModel::single_level(1.0, vec![0.0], vec![0.0]).unwrap();
        let batch = SampleBatch::generate(3, 64, 1).unwrap();
        let err = grad_condition_total(BiasObjective::Dsm, &model, &family, &[0.0], 1.0, &batch);
        assert!(matches!(err, Err(Error::Unsupported(_))));
    }

    #[test]
    fn distribution_gradients_at_the_teacher_fixed_point() {
        // Frozen exact score of N(0,1); p initialized at the teacher. The
        // explicit gradient is exactly zero per sample; the denoising
        // gradient pushes log u down (positive loss slope) by C2's slope
        // s^2/(s^2+sigma^2)^2 = 0.25 at s = sigma = 1.
        let teacher = GaussianMixture::single(DiagGaussian::standard(1));
        let frozen = OracleScoreModel::new(teacher);
        let p = DiagGaussian::standard(1);
        let batch = SampleBatch::generate(41, 60_000, 1).unwrap();

        let esm = grad_distribution_samples(BiasObjective::Esm, &frozen, &p, 1.0, &batch).unwrap();
        for row in &esm {
            assert_eq!(row[0], 0.0);
            assert_eq!(row[1], 0.0);
        }

        let dsm = grad_distribution_samples(BiasObjective::Dsm, &frozen, &p, 1.0, &batch).unwrap();
        let m_col: Vec<f64> = dsm.iter().map(|r| r[0]).collect();
        let u_col: Vec<f64> = dsm.iter().map(|r| r[1]).collect();
        let m_est = MCEstimate::from_samples(&m_col).unwrap();
        let u_est = MCEstimate::from_samples(&u_col).unwrap();
        assert!(m_est.consistent_with(0.0, 3.0, 1e-8), "symmetric point: {m_est:?}");
        assert!(u_est.consistent_with(0.25, 3.0, 0.0), "{u_est:?}");
        assert!(
            u_est.value - 3.0 * u_est.std_error > 0.0,
            "shrink pressure must be significant: {u_est:?}"
        );
    }

    #[test]
    fn corollary_identity_for_distribution_gradients() {
        let teacher = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![
                DiagGaussian::from_mean_std(vec![-2.0], vec![0.5]).unwrap(),
                DiagGaussian::from_mean_std(vec![2.0], vec![0.5]).unwrap(),
            ],
        )
        .unwrap();
        let frozen = OracleScoreModel::new(teacher);
        let mut rng = crate::rng::master(43);
        use rand::Rng;
        for trial in 0..5 {
            let p = DiagGaussian::new(
                vec![rng.gen_range(-2.0..2.0)],
                vec![rng.gen_range(-1.0..0.5)],
            )
            .unwrap();
            let batch = SampleBatch::generate(700 + trial, 30_000, 1).unwrap();
            let dsm = grad_distribution_samples(BiasObjective::Dsm, &frozen, &p, 0.6, &batch).unwrap();
            let esm = grad_distribution_samples(BiasObjective::Esm, &frozen, &p, 0.6, &batch).unwrap();
            let c2 = grad_distribution_samples(BiasObjective::C2, &frozen, &p, 0.6, &batch).unwrap();
            for j in 0..2 {
                let res: Vec<f64> = (0..dsm.len()).map(|i| dsm[i][j] - esm[i][j] + c2[i][j]).collect();
                let est = MCEstimate::from_samples(&res).unwrap();
                assert!(
                    est.consistent_with(0.0, 3.5, 1e-8),
                    "trial {trial} coord {j}: {est:?}"
                );
            }
        }
    }

    #[test]
    fn dsm_condition_gradient_matches_loss_finite_difference() {
        // End-to-end pathwise check: FD of the MC DSM loss in c on frozen
        // common random numbers.
        let family = GaussianMeanLogScale;
        let model = MlpScoreModel::new(1, 2, &[8], 13).unwrap();
        let batch = SampleBatch::generate(47, 20_000, 1).unwrap();
        let c = [0.4, -0.2];
        let grad = grad_condition_total(BiasObjective::Dsm, &model, &family, &c, 0.8, &batch).unwrap();
        let h = 1e-5;
        let loss_at = |cv: &[f64]| {
            let cond = family.conditional(cv).unwrap();
            dsm_loss(&model, &cond, 0.8, cv, &batch).unwrap().value
        };
        for j in 0..2 {
            let mut cp = c.to_vec();
            let mut cm = c.to_vec();
            cp[j] += h;
            cm[j] -= h;
            let fd = (loss_at(&cp) - loss_at(&cm)) / (2.0 * h);
            let rel = (grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "coord {j}: pathwise {} vs fd {fd}", grad[j]);
        }
    }

    #[test]
    fn esm_condition_gradient_matches_loss_finite_difference() {
        let family = GaussianMeanLogScale;
        let model = MlpScoreModel::new(1, 2, &[8], 17).unwrap();
        let batch = SampleBatch::generate(53, 20_000, 1).unwrap();
        let c = [-0.3, 0.1];
        let grad = grad_condition_total(BiasObjective::Esm, &model, &family, &c, 1.1, &batch).unwrap();
        let h = 1e-5;
        let loss_at = |cv: &[f64]| {
            let cond = family.conditional(cv).unwrap();
            esm_loss(&model, &cond, 1.1, cv, &batch).unwrap().value
        };
        for j in 0..2 {
            let mut cp = c.to_vec();
            let mut cm = c.to_vec();
            cp[j] += h;
            cm[j] -= h;
            let fd = (loss_at(&cp) - loss_at(&cm)) / (2.0 * h);
            let rel = (grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "coord {j}: pathwise {} vs fd {fd}", grad[j]);
        }
    }

    #[test]
    fn paired_theta_difference_reduces_variance() {
        let dist = GaussianMixture::single(DiagGaussian::standard(1));
        let model = MlpScoreModel::new(1, 0, &[8], 19).unwrap();
        let batch = SampleBatch::generate(59, 2048, 1).unwrap();
        // Paired difference via a single VJP versus the difference of two
        // independly estimated gradients on different batches.
        let diffs = theta_grad_difference_samples(&model, &dist, 1.0, &[], &batch, 0.0).unwrap();
        let col: Vec<f64> = diffs.iter().map(|r| r[0]).collect();
        let paired = MCEstimate::from_samples(&col).unwrap();
        let other = SampleBatch::generate(61, 2048, 1).unwrap();
        let g1 = grad_theta(ThetaObjective::Dsm, &model, &dist, 1.0, &[], &batch).unwrap();
        let g2 = grad_theta(ThetaObjective::Esm, &model, &dist, 1.0, &[], &other).unwrap();
        let unpaired_diff = g1.values()[0] - g2.values()[0];
        // Not a strict inequality test on one draw; just sanity that the
        // paired SE is small relative to the unpaired fluctuation scale.
        assert!(paired.std_error < unpaired_diff.abs() + 0.05);
        let _ = paired_difference(&col, &col).unwrap();
    }
}
