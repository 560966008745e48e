//! Parametric score approximators with exact gradients.
//!
//! Every model evaluates `s(x_t, sigma_t, c)` and exposes vector-Jacobian
//! products with respect to its parameters, the condition input, and the
//! noisy sample itself. The unconditional case is `cond_dim() == 0`.

mod linear;
mod mlp;
mod oracle;

pub use linear::{optimal_linear_params, LinearScoreModel};
pub use mlp::MlpScoreModel;
pub use oracle::OracleScoreModel;

use crate::error::{Error, Result};
use crate::params::ParamVector;

pub trait ScoreModel {
    fn dim(&self) -> usize;

    fn cond_dim(&self) -> usize;

    /// Score estimate at (x_t, sigma_t, c). Deterministic.
    fn eval(&self, x_t: &[f64], sigma_t: f64, c: &[f64]) -> Result<Vec<f64>>;

    /// Gradient of `<upstream, eval(x_t, sigma_t, c)>` with respect to all
    /// parameters.
    fn grad_params(&self, x_t: &[f64], sigma_t: f64, c: &[f64], upstream: &[f64]) -> Result<ParamVector>;

    /// Gradient of `<upstream, eval(...)>` with respect to the condition
    /// input c (empty when `cond_dim() == 0`).
    fn grad_condition(&self, x_t: &[f64], sigma_t: f64, c: &[f64], upstream: &[f64]) -> Result<Vec<f64>>;

    /// Gradient of `<upstream, eval(...)>` with respect to x_t; this is what
    /// lets pathwise estimators differentiate through the sampling path.
    fn grad_input(&self, x_t: &[f64], sigma_t: f64, c: &[f64], upstream: &[f64]) -> Result<Vec<f64>>;

    /// Snapshot of the parameters (empty for parameter-free oracles).
    fn params(&self) -> ParamVector;

    fn set_params(&mut self, params: &ParamVector) -> Result<()>;
}

pub(crate) fn check_eval_dims(model: &dyn ScoreModel, x_t: &[f64], c: &[f64]) -> Result<()> {
    if x_t.len() != model.dim() {
        return Err(Error::dims(format!(
            "x_t has dim {}, model expects {}",
            x_t.len(),
            model.dim()
        )));
    }
    if c.len() != model.cond_dim() {
        return Err(Error::dims(format!(
            "condition has dim {}, model expects {}",
            c.len(),
            model.cond_dim()
        )));
    }
    Ok(())
}

/// Point at which gradients are checked.
#[derive(Debug, Clone)]
pub struct EvalPoint {
    pub x_t: Vec<f64>,
    pub sigma_t: f64,
    pub c: Vec<f64>,
    pub upstream: Vec<f64>,
}

/// Outcome of a finite-difference sweep over parameters and condition inputs.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_coordinate: String,
    pub tolerance: f64,
    pub pass: bool,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare analytic gradients of `<upstream, eval>` against central finite
/// differences over every parameter and every condition coordinate.
pub fn fd_gradient_check<M: ScoreModel + Clone>(
    model: &M,
    point: &EvalPoint,
    tolerance: f64,
) -> Result<FdReport> {
    if !(tolerance > 0.0) {
        return Err(Error::invalid("tolerance must be > 0"));
    }
    let h = 1e-5;
    let objective = |m: &M, c: &[f64]| -> Result<f64> {
        let out = m.eval(&point.x_t, point.sigma_t, c)?;
        Ok(out.iter().zip(&point.upstream).map(|(o, u)| o * u).sum())
    };

    let mut max_err = 0.0f64;
    let mut worst = String::from("none");

    let analytic = model.grad_params(&point.x_t, point.sigma_t, &point.c, &point.upstream)?;
    let base = model.params();
    let mut scratch = model.clone();
    for (idx, seg) in base.layout().iter().enumerate() {
        let _ = idx;
        for k in 0..seg.len {
            let flat = seg.start + k;
            let mut plus = base.clone();
            plus.values_mut()[flat] += h;
            scratch.set_params(&plus)?;
            let fp = objective(&scratch, &point.c)?;
            let mut minus = base.clone();
            minus.values_mut()[flat] -= h;
            scratch.set_params(&minus)?;
            let fm = objective(&scratch, &point.c)?;
            let fd = (fp - fm) / (2.0 * h);
            let err = rel_err(analytic.values()[flat], fd);
            if err > max_err {
                max_err = err;
                worst = format!("{}[{}]", seg.name, k);
            }
        }
    }

    let analytic_c = model.grad_condition(&point.x_t, point.sigma_t, &point.c, &point.upstream)?;
    for j in 0..point.c.len() {
        let mut cp = point.c.clone();
        let mut cm = point.c.clone();
        cp[j] += h;
        cm[j] -= h;
        let fd = (objective(model, &cp)? - objective(model, &cm)?) / (2.0 * h);
        let err = rel_err(analytic_c[j], fd);
        if err > max_err {
            max_err = err;
            worst = format!("c[{j}]");
        }
    }

    Ok(FdReport {
        max_rel_error: max_err,
        worst_coordinate: worst,
        tolerance,
        pass: max_err <= tolerance,
    })
}

/// Plain-text checkpoint serialization; field names are part of the
/// on-disk contract and documented in `docs/formats.md`.
pub mod checkpoint {
    use super::*;
    use std::collections::BTreeMap;

    fn fmt_floats(vals: &[f64]) -> String {
        vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }

    fn parse_floats(s: &str) -> Result<Vec<f64>> {
        if s.trim().is_empty() {
            return Ok(vec![]);
        }
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Checkpoint(format!("bad float {t:?}: {e}"))))
            .collect()
    }

    fn parse_usizes(s: &str) -> Result<Vec<usize>> {
        if s.trim().is_empty() {
            return Ok(vec![]);
        }
        s.split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|e| Error::Checkpoint(format!("bad integer {t:?}: {e}"))))
            .collect()
    }

    fn layout_string(p: &ParamVector) -> String {
        p.layout()
            .iter()
            .map(|s| format!("{}:{}:{}", s.name, s.start, s.len))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn save_linear(model: &LinearScoreModel) -> String {
        let p = model.params();
        format!(
            "format=scorelab-checkpoint-v1\nkind=linear\ndim={}\ncond_dim={}\nsigmas={}\nsegments={}\nvalues={}\n",
            model.dim(),
            model.cond_dim(),
            fmt_floats(model.sigmas()),
            layout_string(&p),
            fmt_floats(p.values())
        )
    }

    pub fn save_mlp(model: &MlpScoreModel) -> String {
        let p = model.params();
        format!(
            "format=scorelab-checkpoint-v1\nkind=mlp\ndim={}\ncond_dim={}\nhidden={}\nsegments={}\nvalues={}\n",
            model.dim(),
            model.cond_dim(),
            model
                .hidden_widths()
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
            layout_string(&p),
            fmt_floats(p.values())
        )
    }

    fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
        let mut map = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("expected key=value, got {line:?}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(map)
    }

    fn field<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
        map.get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing field {key}")))
    }

    /// Parsed checkpoint, either model kind.
    pub enum Checkpoint {
        Linear(LinearScoreModel),
        Mlp(MlpScoreModel),
    }

    pub fn load(text: &str) -> Result<Checkpoint> {
        let map = parse_kv(text)?;
        if field(&map, "format")? != "scorelab-checkpoint-v1" {
            return Err(Error::Checkpoint("unknown format".into()));
        }
        let dim: usize = field(&map, "dim")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad dim".into()))?;
        let cond_dim: usize = field(&map, "cond_dim")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad cond_dim".into()))?;
        let values = parse_floats(field(&map, "values")?)?;
        match field(&map, "kind")? {
            "linear" => {
                let sigmas = parse_floats(field(&map, "sigmas")?)?;
                let mut model = LinearScoreModel::zeros(&sigmas, dim, cond_dim)?;
                let mut p = model.params();
                if p.len() != values.len() {
                    return Err(Error::Checkpoint(format!(
                        "expected {} values, got {}",
                        p.len(),
                        values.len()
                    )));
                }
                p.values_mut().copy_from_slice(&values);
                model.set_params(&p)?;
                Ok(Checkpoint::Linear(model))
            }
            "mlp" => {
                let hidden = parse_usizes(field(&map, "hidden")?)?;
                let mut model = MlpScoreModel::new(dim, cond_dim, &hidden, 0)?;
                let mut p = model.params();
                if p.len() != values.len() {
                    return Err(Error::Checkpoint(format!(
                        "expected {} values, got {}",
                        p.len(),
                        values.len()
                    )));
                }
                p.values_mut().copy_from_slice(&values);
                model.set_params(&p)?;
                Ok(Checkpoint::Mlp(model))
            }
            other => Err(Error::Checkpoint(format!("unknown kind {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_roundtrip_linear() {
        let mut m = LinearScoreModel::zeros(&[0.5, 1.0], 2, 1).unwrap();
        let mut p = m.params();
        for (i, v) in p.values_mut().iter_mut().enumerate() {
            *v = 0.1 * i as f64 - 0.3;
        }
        m.set_params(&p).unwrap();
        let text = checkpoint::save_linear(&m);
        match checkpoint::load(&text).unwrap() {
            checkpoint::Checkpoint::Linear(l) => {
                assert_eq!(l.params().values(), m.params().values());
                assert_eq!(l.sigmas(), m.sigmas());
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn checkpoint_roundtrip_mlp() {
        let m = MlpScoreModel::new(2, 1, &[8, 8], 42).unwrap();
        let text = checkpoint::save_mlp(&m);
        match checkpoint::load(&text).unwrap() {
            checkpoint::Checkpoint::Mlp(l) => {
                assert_eq!(l.params().values(), m.params().values());
                // exact round-trip through decimal text
                let out_a = l.eval(&[0.3, -0.7], 0.9, &[0.2]).unwrap();
                let out_b = m.eval(&[0.3, -0.7], 0.9, &[0.2]).unwrap();
                assert_eq!(out_a, out_b);
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(checkpoint::load("format=nope").is_err());
        assert!(checkpoint::load("format=scorelab-checkpoint-v1\nkind=linear\ndim=1").is_err());
    }
}
