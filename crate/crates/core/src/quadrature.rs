//! Gauss-Hermite quadrature, the deterministic 1-d expectation oracle.
//!
//! Nodes are the roots of the orthonormal Hermite polynomial (weight
//! `exp(-t^2)`), located by interlacing brackets and bisection, then polished
//! with Newton. Weights come from the Christoffel identity
//! `w_j = 1 / sum_{k<n} p_k(x_j)^2`, which is stable at every order used
//! here. Expectations under a diagonal Gaussian follow from the change of
//! variables `x = mean + sqrt(2) * std * t`.

use crate::analytic::GaussianMixture;
use crate::error::{Error, Result};

/// Nodes and weights for `int f(t) exp(-t^2) dt ~= sum w_j f(t_j)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Value of the orthonormal Hermite polynomials p_n and p_{n-1} at x.
fn hermite_pair(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0f64;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    for k in 0..n {
        let next = x * (2.0 / (k as f64 + 1.0)).sqrt() * cur
            - (k as f64 / (k as f64 + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

fn bisect_root(n: usize, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = hermite_pair(n, lo).0;
    debug_assert!(flo * hermite_pair(n, hi).0 <= 0.0, "bracket must straddle a root");
    for _ in 0..70 {
        let mid = 0.5 * (lo + hi);
        let fmid = hermite_pair(n, mid).0;
        if flo * fmid <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fmid;
        }
    }
    // Newton polish; p_n'(x) = sqrt(2n) p_{n-1}(x).
    let mut x = 0.5 * (lo + hi);
    for _ in 0..3 {
        let (pn, pnm1) = hermite_pair(n, x);
        let dpn = (2.0 * n as f64).sqrt() * pnm1;
        if dpn != 0.0 {
            x -= pn / dpn;
        }
    }
    x
}

impl GaussHermite {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("node count must be >= 1"));
        }
        // Roots of successive orders interlace; build them up from order 1.
        let mut roots = vec![0.0f64];
        for k in 2..=n {
            let bound = (2.0 * k as f64 + 2.0).sqrt();
            let mut brackets = Vec::with_capacity(k + 1);
            brackets.push(-bound);
            brackets.extend_from_slice(&roots);
            brackets.push(bound);
            let mut next = Vec::with_capacity(k);
            for w in brackets.windows(2) {
                next.push(bisect_root(k, w[0], w[1]));
            }
            roots = next;
        }
        let weights = roots
            .iter()
            .map(|&x| {
                let mut prev = 0.0f64;
                let mut cur = std::f64::consts::PI.powf(-0.25);
                let mut sum_sq = cur * cur;
                for k in 0..n - 1 {
                    let nxt = x * (2.0 / (k as f64 + 1.0)).sqrt() * cur
                        - (k as f64 / (k as f64 + 1.0)).sqrt() * prev;
                    prev = cur;
                    cur = nxt;
                    sum_sq += cur * cur;
                }
                1.0 / sum_sq
            })
            .collect();
        Ok(Self { nodes: roots, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E_{N(mean, std^2)}[f]`.
    pub fn expect_normal(&self, mean: f64, std: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        let scale = std::f64::consts::SQRT_2 * std;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(mean + scale * t))
            .sum::<f64>()
            * inv_sqrt_pi
    }

    /// `E_{mixture}[f]` for a 1-d mixture.
    pub fn expect_mixture(&self, dist: &GaussianMixture, mut f: impl FnMut(f64) -> f64) -> Result<f64> {
        if dist.dim() != 1 {
            return Err(Error::unsupported("quadrature expectations are 1-d only"));
        }
        let mut total = 0.0;
        for (comp, &w) in dist.components().iter().zip(dist.weights()) {
            total += w * self.expect_normal(comp.mean()[0], comp.std()[0], &mut f);
        }
        Ok(total)
    }
}

/// Expectation of a smooth scalar function under a 1-d mixture.
pub fn quadrature_expectation(
    f: impl FnMut(f64) -> f64,
    dist: &GaussianMixture,
    nodes: usize,
) -> Result<f64> {
    if dist.dim() != 1 {
        return Err(Error::unsupported("quadrature expectations are 1-d only"));
    }
    if nodes < 16 {
        return Err(Error::invalid("at least 16 nodes are required"));
    }
    GaussHermite::new(nodes)?.expect_mixture(dist, f)
}
