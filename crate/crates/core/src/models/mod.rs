//! Parametric density families: evaluation of `f_θ`, its first and second
//! θ-derivatives, sampling, Fisher information, and parameter bounds.

mod gaussian;
mod mixture;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use gaussian::GaussianEval;
pub(crate) use gaussian::pair_index;
use gaussian::{bivariate_parts, cholesky_parts, tril_positions, univariate_parts, GaussianParts};
pub use mixture::MixtureEval;

use crate::error::{GmspError, Result};
use crate::geometry::PointCloud;
use crate::rng::stream_rng;

/// Largest supported observation dimension.
pub const MAX_DIM: usize = 16;

/// Parameter vector `θ` in the layout of its family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// How a parameter is constrained; drives bounds checks and the optimizer's
/// map to unconstrained coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Real,
    Positive,
    Correlation,
    /// Mixture weight on the open simplex (remaining weight implied).
    Weight,
}

impl ParamKind {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            ParamKind::Real => (f64::NEG_INFINITY, f64::INFINITY),
            ParamKind::Positive => (0.0, f64::INFINITY),
            ParamKind::Correlation => (-1.0, 1.0),
            ParamKind::Weight => (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    /// `θ = (μ, σ)`.
    UnivariateNormal,
    /// `d = 2`: `θ = (μ₁, μ₂, σ₁, σ₂, ρ)`; otherwise mean plus the row-major
    /// lower triangle of the Cholesky factor of `Σ`.
    MvNormal { d: usize },
    /// `k` diagonal-covariance components in `d` dimensions.
    GaussianMixture { k: usize, d: usize },
}

impl ModelFamily {
    pub fn mvnormal(d: usize) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(GmspError::Domain(format!("mvnormal dimension must be in 1..={MAX_DIM}")));
        }
        Ok(Self::MvNormal { d })
    }

    pub fn mixture(k: usize, d: usize) -> Result<Self> {
        if !(1..=64).contains(&k) || d == 0 || 2 * d > 32 {
            return Err(GmspError::Domain("mixture needs 1..=64 components and dimension 1..=16".into()));
        }
        Ok(Self::GaussianMixture { k, d })
    }

    pub fn dim(&self) -> usize {
        match *self {
            Self::UnivariateNormal => 1,
            Self::MvNormal { d } | Self::GaussianMixture { d, .. } => d,
        }
    }

    pub fn n_params(&self) -> usize {
        match *self {
            Self::UnivariateNormal => 2,
            Self::MvNormal { d } => d + d * (d + 1) / 2,
            Self::GaussianMixture { k, d } => k - 1 + k * 2 * d,
        }
    }

    pub fn param_kinds(&self) -> Vec<ParamKind> {
        use ParamKind::*;
        match *self {
            Self::UnivariateNormal => vec![Real, Positive],
            Self::MvNormal { d: 2 } => vec![Real, Real, Positive, Positive, Correlation],
            Self::MvNormal { d } => {
                let mut v = vec![Real; d];
                v.extend(tril_positions(d).into_iter().map(|(i, j)| if i == j { Positive } else { Real }));
                v
            }
            Self::GaussianMixture { k, d } => {
                let mut v = vec![Weight; k - 1];
                for _ in 0..k {
                    v.extend(std::iter::repeat_n(Real, d));
                    v.extend(std::iter::repeat_n(Positive, d));
                }
                v
            }
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match *self {
            Self::UnivariateNormal => vec!["mu".into(), "sigma".into()],
            Self::MvNormal { d: 2 } => ["mu1", "mu2", "sigma1", "sigma2", "rho"].map(String::from).to_vec(),
            Self::MvNormal { d } => {
                let mut v: Vec<String> = (0..d).map(|i| format!("mu[{i}]")).collect();
                v.extend(tril_positions(d).into_iter().map(|(i, j)| format!("L[{i},{j}]")));
                v
            }
            Self::GaussianMixture { k, d } => {
                let mut v: Vec<String> = (0..k - 1).map(|c| format!("w[{c}]")).collect();
                for c in 0..k {
                    v.extend((0..d).map(|i| format!("mu[{c}][{i}]")));
                    v.extend((0..d).map(|i| format!("sigma[{c}][{i}]")));
                }
                v
            }
        }
    }

    fn check_len(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(GmspError::ParamCount { expected: self.n_params(), got: theta.len() });
        }
        Ok(())
    }

    /// Admissibility check. Mixture weights may sit on the closed simplex;
    /// every other parameter must lie strictly inside its interval.
    pub fn check_bounds(&self, theta: &ParamVector) -> Result<()> {
        self.check(theta, false)
    }

    /// Strict interior check, required wherever derivatives are taken.
    pub fn check_interior(&self, theta: &ParamVector) -> Result<()> {
        self.check(theta, true)
    }

    fn check(&self, theta: &ParamVector, strict_weights: bool) -> Result<()> {
        let t = theta.as_slice();
        self.check_len(t)?;
        let mut wsum = 0.0;
        for (index, (&value, kind)) in t.iter().zip(self.param_kinds()).enumerate() {
            let (lo, hi) = kind.bounds();
            let ok = if kind == ParamKind::Weight && !strict_weights {
                (lo..=hi).contains(&value)
            } else {
                value > lo && value < hi
            };
            if !ok || !value.is_finite() {
                return Err(GmspError::OutOfBounds { index, value, lo, hi });
            }
            if kind == ParamKind::Weight {
                wsum += value;
            }
        }
        if let Self::GaussianMixture { k, .. } = *self {
            let ok = if strict_weights { wsum < 1.0 } else { wsum <= 1.0 + 1e-12 };
            if k > 1 && !ok {
                return Err(GmspError::OutOfBounds { index: k - 2, value: wsum, lo: 0.0, hi: 1.0 });
            }
        }
        Ok(())
    }

    fn gaussian_parts(&self, t: &[f64]) -> Option<GaussianParts> {
        match *self {
            Self::UnivariateNormal => Some(univariate_parts(t[0], t[1])),
            Self::MvNormal { d: 2 } => Some(bivariate_parts(t)),
            Self::MvNormal { d } => Some(cholesky_parts(t, d)),
            Self::GaussianMixture { .. } => None,
        }
    }

    /// Precompute everything that depends only on θ.
    pub fn prepare(&self, theta: &ParamVector) -> Result<Prepared> {
        self.check_bounds(theta)?;
        let t = theta.as_slice();
        let eval = match (*self, self.gaussian_parts(t)) {
            (_, Some(parts)) => Eval::Gaussian(GaussianEval::new(&parts)?),
            (Self::GaussianMixture { k, d }, None) => Eval::Mixture(MixtureEval::new(t, k, d)?),
            _ => unreachable!(),
        };
        Ok(Prepared { d: self.dim(), q: self.n_params(), eval })
    }

    pub fn density(&self, theta: &ParamVector, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.prepare(theta)?.density(x))
    }

    pub fn grad_density(&self, theta: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        self.check_interior(theta)?;
        self.check_point(x)?;
        let mut g = vec![0.0; self.n_params()];
        self.prepare(theta)?.grad(x, &mut g);
        Ok(g)
    }

    /// Full `q × q` matrix of `∂²f_θ(x)/∂θ_j∂θ_l`.
    pub fn hess_density(&self, theta: &ParamVector, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_interior(theta)?;
        self.check_point(x)?;
        let q = self.n_params();
        let mut g = vec![0.0; q];
        let mut h = vec![0.0; q * (q + 1) / 2];
        self.prepare(theta)?.grad_hess(x, &mut g, &mut h);
        Ok(DMatrix::from_fn(q, q, |j, k| h[pair_index(j, k, q)]))
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(GmspError::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    /// Fisher information `Cov(∇f_θ(ξ)/f_θ(ξ))`. Closed form for the normal
    /// families; a Monte Carlo estimate over `mc_draws` draws for mixtures.
    pub fn fisher(&self, theta: &ParamVector, mc_draws: usize, seed: u64) -> Result<FisherInfo> {
        self.check_interior(theta)?;
        if let Some(parts) = self.gaussian_parts(theta.as_slice()) {
            return Ok(FisherInfo { matrix: GaussianEval::fisher(&parts)?, std_err: None });
        }
        self.fisher_monte_carlo(theta, mc_draws, seed)
    }

    /// Monte Carlo Fisher information with entrywise standard errors.
    pub fn fisher_monte_carlo(&self, theta: &ParamVector, draws: usize, seed: u64) -> Result<FisherInfo> {
        self.check_interior(theta)?;
        let q = self.n_params();
        let prepared = self.prepare(theta)?;
        let cloud = self.sample(theta, draws.max(2), seed)?;
        let mut sum = DMatrix::<f64>::zeros(q, q);
        let mut sum_sq = DMatrix::<f64>::zeros(q, q);
        let mut g = vec![0.0; q];
        for x in cloud.rows() {
            let f = prepared.grad(x, &mut g);
            for j in 0..q {
                for k in 0..q {
                    let v = g[j] * g[k] / (f * f);
                    sum[(j, k)] += v;
                    sum_sq[(j, k)] += v * v;
                }
            }
        }
        let n = cloud.n() as f64;
        let mean = &sum / n;
        let var = (&sum_sq / n - mean.component_mul(&mean)) * (n / (n - 1.0));
        let std_err = var.map(|v| (v.max(0.0) / n).sqrt());
        Ok(FisherInfo { matrix: mean, std_err: Some(std_err) })
    }

    /// `n` draws from `f_θ`, deterministic in `seed`.
    pub fn sample(&self, theta: &ParamVector, n: usize, seed: u64) -> Result<PointCloud> {
        self.check_bounds(theta)?;
        let mut rng = stream_rng(seed, 0);
        self.sample_with(theta, n, &mut rng)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, theta: &ParamVector, n: usize, rng: &mut R) -> Result<PointCloud> {
        if n < 2 {
            return Err(GmspError::TooFewPoints(n));
        }
        self.check_bounds(theta)?;
        let d = self.dim();
        let t = theta.as_slice();
        let mut data = Vec::with_capacity(n * d);
        match *self {
            Self::GaussianMixture { k, d } => {
                let mut w: Vec<f64> = t[..k - 1].to_vec();
                w.push((1.0 - w.iter().sum::<f64>()).max(0.0));
                for _ in 0..n {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut c = k - 1;
                    for (j, wj) in w.iter().enumerate() {
                        acc += wj;
                        if u < acc {
                            c = j;
                            break;
                        }
                    }
                    let off = k - 1 + c * 2 * d;
                    for i in 0..d {
                        let z: f64 = rng.sample(StandardNormal);
                        data.push(t[off + i] + t[off + d + i] * z);
                    }
                }
            }
            _ => {
                let parts = self.gaussian_parts(t).expect("gaussian family");
                let l = parts
                    .cov
                    .cholesky()
                    .ok_or_else(|| GmspError::Domain("covariance matrix is not positive definite".into()))?
                    .l();
                let mut z = vec![0.0; d];
                for _ in 0..n {
                    for zi in z.iter_mut() {
                        *zi = rng.sample(StandardNormal);
                    }
                    for i in 0..d {
                        let mut v = parts.mean[i];
                        for j in 0..=i {
                            v += l[(i, j)] * z[j];
                        }
                        data.push(v);
                    }
                }
            }
        }
        PointCloud::new(data, d)
    }

    /// Method-of-moments style starting value from the data.
    pub fn initial_guess(&self, cloud: &PointCloud) -> Result<ParamVector> {
        if cloud.dim() != self.dim() {
            return Err(GmspError::DimensionMismatch { expected: self.dim(), got: cloud.dim() });
        }
        let (mean, cov) = moments(cloud);
        let theta = match *self {
            Self::UnivariateNormal => vec![mean[0], cov[(0, 0)].sqrt().max(1e-8)],
            Self::MvNormal { d: 2 } => {
                let s1 = cov[(0, 0)].sqrt().max(1e-8);
                let s2 = cov[(1, 1)].sqrt().max(1e-8);
                let rho = (cov[(0, 1)] / (s1 * s2)).clamp(-0.95, 0.95);
                vec![mean[0], mean[1], s1, s2, rho]
            }
            Self::MvNormal { d } => {
                let reg = &cov + DMatrix::identity(d, d) * 1e-10;
                let l = reg
                    .cholesky()
                    .ok_or_else(|| GmspError::Domain("sample covariance is degenerate".into()))?
                    .l();
                let mut v = mean.clone();
                v.extend(tril_positions(d).into_iter().map(|(i, j)| l[(i, j)]));
                v
            }
            Self::GaussianMixture { k, d } => {
                // quantile groups along the first coordinate
                let mut order: Vec<usize> = (0..cloud.n()).collect();
                order.sort_by(|&a, &b| cloud.point(a)[0].total_cmp(&cloud.point(b)[0]));
                let mut v = vec![1.0 / k as f64; k - 1];
                let chunk = cloud.n().div_ceil(k);
                for c in 0..k {
                    let idx: Vec<usize> = order.iter().skip(c * chunk).take(chunk).copied().collect();
                    let (m, s) = if idx.len() >= 2 {
                        let sub = cloud.subset(&idx)?;
                        let (m, cv) = moments(&sub);
                        (m, (0..d).map(|i| cv[(i, i)].sqrt()).collect::<Vec<_>>())
                    } else {
                        (mean.clone(), (0..d).map(|i| cov[(i, i)].sqrt()).collect())
                    };
                    v.extend(m);
                    v.extend(s.into_iter().map(|x| x.max(1e-3)));
                }
                v
            }
        };
        Ok(ParamVector(theta))
    }

    /// Map θ to unconstrained optimizer coordinates.
    pub fn to_unconstrained(&self, theta: &ParamVector) -> Vec<f64> {
        let t = theta.as_slice();
        let kinds = self.param_kinds();
        let wsum: f64 = t.iter().zip(&kinds).filter(|(_, k)| **k == ParamKind::Weight).map(|(v, _)| v).sum();
        let w_last = (1.0 - wsum).max(1e-12);
        t.iter()
            .zip(&kinds)
            .map(|(&v, k)| match k {
                ParamKind::Real => v,
                ParamKind::Positive => v.max(1e-300).ln(),
                ParamKind::Correlation => v.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh(),
                ParamKind::Weight => (v.max(1e-12) / w_last).ln(),
            })
            .collect()
    }

    /// Inverse of [`Self::to_unconstrained`]; weights through a softmax with
    /// the last component as reference.
    pub fn from_unconstrained(&self, u: &[f64]) -> ParamVector {
        let kinds = self.param_kinds();
        let wmax = u
            .iter()
            .zip(&kinds)
            .filter(|(_, k)| **k == ParamKind::Weight)
            .map(|(v, _)| *v)
            .fold(0.0f64, f64::max);
        let denom: f64 = (-wmax).exp()
            + u.iter().zip(&kinds).filter(|(_, k)| **k == ParamKind::Weight).map(|(v, _)| (v - wmax).exp()).sum::<f64>();
        ParamVector(
            u.iter()
                .zip(&kinds)
                .map(|(&v, k)| match k {
                    ParamKind::Real => v,
                    ParamKind::Positive => v.exp(),
                    ParamKind::Correlation => v.tanh(),
                    ParamKind::Weight => (v - wmax).exp() / denom,
                })
                .collect(),
        )
    }
}

fn moments(cloud: &PointCloud) -> (Vec<f64>, DMatrix<f64>) {
    let d = cloud.dim();
    let n = cloud.n() as f64;
    let mut mean = vec![0.0; d];
    for x in cloud.rows() {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for x in cloud.rows() {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    (mean, cov)
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::UnivariateNormal => write!(f, "normal"),
            Self::MvNormal { d } => write!(f, "mvnormal:{d}"),
            Self::GaussianMixture { k, d: 1 } => write!(f, "mixture:{k}"),
            Self::GaussianMixture { k, d } => write!(f, "mixture:{k}:{d}"),
        }
    }
}

/// Accepts `normal`, `mvnormal` (d = 2), `mvnormal:<d>`, `mixture:<k>` (d = 1), `mixture:<k>:<d>`.
impl FromStr for ModelFamily {
    type Err = GmspError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || GmspError::Domain(format!("unknown model family `{s}`"));
        let num = |p: &str| p.parse::<usize>().map_err(|_| bad());
        match parts.as_slice() {
            ["normal"] | ["univariate-normal"] => Ok(Self::UnivariateNormal),
            ["mvnormal"] => Self::mvnormal(2),
            ["mvnormal", d] => Self::mvnormal(num(d)?),
            ["mixture"] | ["gaussian-mixture"] => Self::mixture(2, 1),
            ["mixture", k] | ["gaussian-mixture", k] => Self::mixture(num(k)?, 1),
            ["mixture", k, d] | ["gaussian-mixture", k, d] => Self::mixture(num(k)?, num(d)?),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherInfo {
    pub matrix: DMatrix<f64>,
    /// Entrywise Monte Carlo standard errors; `None` for closed forms.
    pub std_err: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
enum Eval {
    Gaussian(GaussianEval),
    Mixture(MixtureEval),
}

/// A family frozen at one θ, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Prepared {
    d: usize,
    q: usize,
    eval: Eval,
}

impl Prepared {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_params(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn density(&self, x: &[f64]) -> f64 {
        match &self.eval {
            Eval::Gaussian(g) => g.density(x),
            Eval::Mixture(m) => m.density(x),
        }
    }

    /// Fills `grad` with `∇_θ f(x)`; returns `f(x)`.
    #[inline]
    pub fn grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        match &self.eval {
            Eval::Gaussian(g) => {
                let f = g.score(x, grad);
                grad.iter_mut().for_each(|v| *v *= f);
                f
            }
            Eval::Mixture(m) => m.grad(x, grad),
        }
    }

    /// Fills `grad` and the packed upper triangle of `∇²_θ f(x)`; returns `f(x)`.
    pub fn grad_hess(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        match &self.eval {
            Eval::Gaussian(g) => {
                let f = g.score_and_log_hessian(x, grad, hess);
                let q = self.q;
                for j in 0..q {
                    for k in j..q {
                        let idx = pair_index(j, k, q);
                        hess[idx] = f * (grad[j] * grad[k] + hess[idx]);
                    }
                }
                grad.iter_mut().for_each(|v| *v *= f);
                f
            }
            Eval::Mixture(m) => m.grad_hess(x, grad, hess),
        }
    }

    /// Exact `P_θ([a, b])` in one dimension.
    pub fn interval_probability(&self, a: f64, b: f64) -> Option<f64> {
        if self.d != 1 {
            return None;
        }
        Some(match &self.eval {
            Eval::Gaussian(g) => g.interval_probability(a, b),
            Eval::Mixture(m) => m.interval_probability(a, b),
        })
    }
}
