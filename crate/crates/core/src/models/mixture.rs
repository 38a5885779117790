use super::gaussian::{diagonal_parts, pair_index, GaussianEval};
use crate::error::Result;

/// Mixture of diagonal Gaussians, parameters `w_1..w_{K-1}` then for each
/// component its mean and per-axis standard deviations. `w_K = 1 − Σ w_k`.
#[derive(Debug, Clone)]
pub struct MixtureEval {
    d: usize,
    k: usize,
    weights: Vec<f64>,
    comps: Vec<GaussianEval>,
}

impl MixtureEval {
    pub fn new(theta: &[f64], k: usize, d: usize) -> Result<Self> {
        let mut weights: Vec<f64> = theta[..k - 1].to_vec();
        weights.push(1.0 - weights.iter().sum::<f64>());
        let mut comps = Vec::with_capacity(k);
        for c in 0..k {
            let off = k - 1 + c * 2 * d;
            comps.push(GaussianEval::new(&diagonal_parts(&theta[off..off + 2 * d], d))?);
        }
        Ok(Self { d, k, weights, comps })
    }

    pub fn n_params(&self) -> usize {
        self.k - 1 + self.k * 2 * self.d
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(&self.comps).map(|(w, c)| w * c.density(x)).sum()
    }

    pub fn interval_probability(&self, a: f64, b: f64) -> f64 {
        self.weights.iter().zip(&self.comps).map(|(w, c)| w * c.interval_probability(a, b)).sum()
    }

    fn offset(&self, c: usize) -> usize {
        self.k - 1 + c * 2 * self.d
    }

    /// Fills `grad` with `∇_θ f(x)`; returns `f(x)`.
    pub fn grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let m = 2 * self.d;
        let mut score = [0.0; 32];
        let mut phis = [0.0; 64];
        let mut f = 0.0;
        for (c, comp) in self.comps.iter().enumerate() {
            let phi = comp.score(x, &mut score[..m]);
            phis[c] = phi;
            f += self.weights[c] * phi;
            let off = self.offset(c);
            for i in 0..m {
                grad[off + i] = self.weights[c] * phi * score[i];
            }
        }
        for j in 0..self.k - 1 {
            grad[j] = phis[j] - phis[self.k - 1];
        }
        f
    }

    /// Fills `grad` and the packed upper triangle of `∇²_θ f(x)`; returns `f(x)`.
    pub fn grad_hess(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let q = self.n_params();
        let m = 2 * self.d;
        hess[..q * (q + 1) / 2].iter_mut().for_each(|h| *h = 0.0);
        let mut score = [0.0; 32];
        let mut lh = [0.0; 32 * 33 / 2];
        let mut phis = [0.0; 64];
        let mut f = 0.0;
        let last = self.k - 1;
        for (c, comp) in self.comps.iter().enumerate() {
            let phi = comp.score_and_log_hessian(x, &mut score[..m], &mut lh[..m * (m + 1) / 2]);
            phis[c] = phi;
            let w = self.weights[c];
            f += w * phi;
            let off = self.offset(c);
            for i in 0..m {
                let dphi = phi * score[i];
                grad[off + i] = w * dphi;
                for l in i..m {
                    let d2 = phi * (score[i] * score[l] + lh[pair_index(i, l, m)]);
                    hess[pair_index(off + i, off + l, q)] = w * d2;
                }
                // cross terms with the free weights
                if c < last {
                    hess[pair_index(c, off + i, q)] += dphi;
                } else {
                    for j in 0..last {
                        hess[pair_index(j, off + i, q)] -= dphi;
                    }
                }
            }
        }
        for j in 0..last {
            grad[j] = phis[j] - phis[last];
        }
        f
    }
}
