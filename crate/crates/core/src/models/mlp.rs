//! Small fully-connected score model with tanh hidden layers.
//!
//! Input layout: `[x_t (d), ln sigma_t (1), c (cond_dim)]`; output is the
//! d-dimensional score estimate. Backward passes are hand-written
//! vector-Jacobian products over a cached forward trace.

use crate::error::{Error, Result};
use crate::models::{check_eval_dims, ScoreModel};
use crate::params::{ParamVector, Segment};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpScoreModel {
    dim: usize,
    cond_dim: usize,
    /// Layer widths including input and output: [d + 1 + cond_dim, hidden..., d].
    widths: Vec<usize>,
    params: ParamVector,
}

struct ForwardTrace {
    /// Activations per layer, activations[0] is the input.
    activations: Vec<Vec<f64>>,
}

impl MlpScoreModel {
    /// Fresh model with `hidden` layer widths, weights drawn uniform in
    /// `(-1, 1) / sqrt(fan_in)` from the given seed, biases zero.
    pub fn new(dim: usize, cond_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        if hidden.iter().any(|&w| w == 0) {
            return Err(Error::invalid("hidden widths must be >= 1"));
        }
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(dim + 1 + cond_dim);
        widths.extend_from_slice(hidden);
        widths.push(dim);

        let mut layout = Vec::new();
        let mut cursor = 0;
        for l in 0..widths.len() - 1 {
            layout.push(Segment {
                name: format!("layer{l}.weight"),
                start: cursor,
                len: widths[l + 1] * widths[l],
            });
            cursor += widths[l + 1] * widths[l];
            layout.push(Segment {
                name: format!("layer{l}.bias"),
                start: cursor,
                len: widths[l + 1],
            });
            cursor += widths[l + 1];
        }
        let mut values = vec![0.0; cursor];
        let mut rng = crate::rng::master(seed);
        let mut offset = 0;
        for l in 0..widths.len() - 1 {
            let fan_in = widths[l] as f64;
            let scale = 1.0 / fan_in.sqrt();
            for v in &mut values[offset..offset + widths[l + 1] * widths[l]] {
                *v = rng.gen_range(-1.0..1.0) * scale;
            }
            offset += widths[l + 1] * widths[l] + widths[l + 1];
        }
        let params = ParamVector::new(values, layout)?;
        Ok(Self { dim, cond_dim, widths, params })
    }

    pub fn hidden_widths(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn weight(&self, l: usize) -> &[f64] {
        self.params.segment(&format!("layer{l}.weight")).unwrap()
    }

    fn bias(&self, l: usize) -> &[f64] {
        self.params.segment(&format!("layer{l}.bias")).unwrap()
    }

    fn input_vector(&self, x_t: &[f64], sigma_t: f64, c: &[f64]) -> Result<Vec<f64>> {
        if !(sigma_t > 0.0) {
            return Err(Error::invalid("sigma_t must be > 0"));
        }
        let mut z = Vec::with_capacity(self.widths[0]);
        z.extend_from_slice(x_t);
        z.push(sigma_t.ln());
        z.extend_from_slice(c);
        Ok(z)
    }

    fn forward(&self, input: Vec<f64>) -> ForwardTrace {
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        activations.push(input);
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let w = self.weight(l);
            let b = self.bias(l);
            let prev = &activations[l];
            let mut out = vec![0.0; n_out];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = b[o];
                for (x, wi) in prev.iter().zip(row) {
                    acc += x * wi;
                }
                out[o] = if l < self.num_layers() - 1 { acc.tanh() } else { acc };
            }
            activations.push(out);
        }
        ForwardTrace { activations }
    }

    /// Backward pass: returns (input gradient, parameter gradient).
    fn backward(&self, trace: &ForwardTrace, upstream: &[f64]) -> (Vec<f64>, ParamVector) {
        let mut grad = self.params.zeros_like();
        let mut delta = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            // Hidden layers apply tanh; fold its derivative into delta.
            if l < self.num_layers() - 1 {
                let act = &trace.activations[l + 1];
                for (d, a) in delta.iter_mut().zip(act) {
                    *d *= 1.0 - a * a;
                }
            }
            let prev = trace.activations[l].clone();
            {
                let gw = grad.segment_mut(&format!("layer{l}.weight")).unwrap();
                for o in 0..n_out {
                    for i in 0..n_in {
                        gw[o * n_in + i] = delta[o] * prev[i];
                    }
                }
                let gb = grad.segment_mut(&format!("layer{l}.bias")).unwrap();
                gb.copy_from_slice(&delta);
            }
            let w = self.weight(l);
            let mut next_delta = vec![0.0; n_in];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    next_delta[i] += delta[o] * row[i];
                }
            }
            delta = next_delta;
        }
        (delta, grad)
    }
}

impl ScoreModel for MlpScoreModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    fn eval(&self, x_t: &[f64], sigma_t: f64, c: &[f64]) -> Result<Vec<f64>> {
        check_eval_dims(self, x_t, c)?;
        let trace = self.forward(self.input_vector(x_t, sigma_t, c)?);
        Ok(trace.activations.last().unwrap().clone())
    }

    fn grad_params(&self, x_t: &[f64], sigma_t: f64, c: &[f64], upstream: &[f64]) -> Result<ParamVector> {
        check_eval_dims(self, x_t, c)?;
        if upstream.len() != self.dim {
            return Err(Error::dims("upstream must have the model dimension"));
        }
        let trace = self.forward(self.input_vector(x_t, sigma_t, c)?);
        Ok(self.backward(&trace, upstream).1)
    }

    fn grad_condition(&self, x_t: &[f64], sigma_t: f64, c: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        check_eval_dims(self, x_t, c)?;
        if upstream.len() != self.dim {
            return Err(Error::dims("upstream must have the model dimension"));
        }
        let trace = self.forward(self.input_vector(x_t, sigma_t, c)?);
        let (input_grad, _) = self.backward(&trace, upstream);
        Ok(input_grad[self.dim + 1..].to_vec())
    }

    fn grad_input(&self, x_t: &[f64], sigma_t: f64, c: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        check_eval_dims(self, x_t, c)?;
        if upstream.len() != self.dim {
            return Err(Error::dims("upstream must have the model dimension"));
        }
        let trace = self.forward(self.input_vector(x_t, sigma_t, c)?);
        let (input_grad, _) = self.backward(&trace, upstream);
        Ok(input_grad[..self.dim].to_vec())
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
