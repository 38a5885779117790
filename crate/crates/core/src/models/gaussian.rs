//! Gaussian density with analytic first and second parameter derivatives.
//!
//! A parameterization supplies `μ(θ)`, `Σ(θ)`, `∂μ/∂θ_j`, `∂Σ/∂θ_j` and
//! `∂²Σ/∂θ_j∂θ_k` (the mean is linear in θ for every family here). With
//! `P = Σ⁻¹`, `r = x − μ` and `A_j = P Σ_j P`:
//!
//! ```text
//! ∂_j log f      = μ_jᵀ P r + ½ rᵀ A_j r − ½ tr(P Σ_j)
//! ∂_j∂_k log f   = ½ tr(P Σ_k P Σ_j) − ½ tr(P Σ_jk) − μ_jᵀ P μ_k
//!                  − (A_k μ_j + A_j μ_k)ᵀ r
//!                  + ½ rᵀ (P Σ_jk P − A_k Σ_j P − A_j Σ_k P) r
//! ```
//!
//! and `∇f = f ∇log f`, `∇²f = f (∇log f ∇log fᵀ + ∇² log f)`.

use nalgebra::DMatrix;
use libm::erfc;

use crate::error::{GmspError, Result};

/// Mean, covariance and their parameter derivatives at one θ.
#[derive(Debug, Clone)]
pub struct GaussianParts {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub dmean: Vec<Vec<f64>>,
    pub dcov: Vec<DMatrix<f64>>,
    /// `d2cov[j][k]`, symmetric in `(j, k)`.
    pub d2cov: Vec<Vec<DMatrix<f64>>>,
}

#[derive(Debug, Clone)]
pub struct GaussianEval {
    d: usize,
    q: usize,
    mean: Vec<f64>,
    prec: Vec<f64>,
    log_norm: f64,
    // gradient pieces
    pm: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    half_tr: Vec<f64>,
    // Hessian pieces, upper triangle packed
    c2: Vec<f64>,
    v2: Vec<Vec<f64>>,
    b2: Vec<Vec<f64>>,
    sd1: f64,
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[inline]
fn quad_form(m: &[f64], r: &[f64]) -> f64 {
    let d = r.len();
    let mut s = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            row += m[i * d + j] * r[j];
        }
        s += r[i] * row;
    }
    s
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn pair_index(j: usize, k: usize, q: usize) -> usize {
    let (j, k) = if j <= k { (j, k) } else { (k, j) };
    j * q - j * (j + 1) / 2 + k
}

/// `Φ(b) − Φ(a)` for standardized limits, accurate in both tails.
pub(crate) fn std_normal_interval(a: f64, b: f64) -> f64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    if a >= 0.0 {
        0.5 * (erfc(a * s) - erfc(b * s))
    } else if b <= 0.0 {
        0.5 * (erfc(-b * s) - erfc(-a * s))
    } else {
        1.0 - 0.5 * (erfc(-a * s) + erfc(b * s))
    }
}

impl GaussianEval {
    pub fn new(parts: &GaussianParts) -> Result<Self> {
        let d = parts.mean.len();
        let q = parts.dmean.len();
        let chol = parts
            .cov
            .clone()
            .cholesky()
            .ok_or_else(|| GmspError::Domain("covariance matrix is not positive definite".into()))?;
        let p = chol.inverse();
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);

        let mut pm = Vec::with_capacity(q);
        let mut a = Vec::with_capacity(q);
        let mut a_mats = Vec::with_capacity(q);
        let mut half_tr = Vec::with_capacity(q);
        let mut ps = Vec::with_capacity(q);
        for j in 0..q {
            let mj = nalgebra::DVector::from_column_slice(&parts.dmean[j]);
            pm.push((&p * &mj).iter().copied().collect());
            let psj = &p * &parts.dcov[j];
            let aj = &psj * &p;
            half_tr.push(0.5 * psj.trace());
            a.push(flat(&aj));
            a_mats.push(aj);
            ps.push(psj);
        }
        let npairs = q * (q + 1) / 2;
        let mut c2 = vec![0.0; npairs];
        let mut v2 = vec![Vec::new(); npairs];
        let mut b2 = vec![Vec::new(); npairs];
        for j in 0..q {
            let mj = nalgebra::DVector::from_column_slice(&parts.dmean[j]);
            for k in j..q {
                let mk = nalgebra::DVector::from_column_slice(&parts.dmean[k]);
                let sjk = &parts.d2cov[j][k];
                let idx = pair_index(j, k, q);
                c2[idx] = 0.5 * (&ps[k] * &ps[j]).trace() - 0.5 * (&p * sjk).trace() - mj.dot(&(&p * &mk));
                let v = -(&a_mats[k] * &mj + &a_mats[j] * &mk);
                v2[idx] = v.iter().copied().collect();
                let b = &p * sjk * &p - &a_mats[k] * &parts.dcov[j] * &p - &a_mats[j] * &parts.dcov[k] * &p;
                b2[idx] = flat(&b);
            }
        }
        Ok(Self {
            d,
            q,
            mean: parts.mean.clone(),
            prec: flat(&p),
            log_norm,
            pm,
            a,
            half_tr,
            c2,
            v2,
            b2,
            sd1: if d == 1 { parts.cov[(0, 0)].sqrt() } else { f64::NAN },
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_params(&self) -> usize {
        self.q
    }

    #[inline]
    fn residual(&self, x: &[f64], r: &mut [f64]) {
        for ((ri, xi), mi) in r.iter_mut().zip(x).zip(&self.mean) {
            *ri = xi - mi;
        }
    }

    #[inline]
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut buf = [0.0; 16];
        let r = &mut buf[..self.d];
        self.residual(x, r);
        self.log_norm - 0.5 * quad_form(&self.prec, r)
    }

    #[inline]
    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    /// Fills `score` with `∇_θ log f(x)`; returns `f(x)`.
    pub fn score(&self, x: &[f64], score: &mut [f64]) -> f64 {
        let mut buf = [0.0; 16];
        let r = &mut buf[..self.d];
        self.residual(x, r);
        let f = (self.log_norm - 0.5 * quad_form(&self.prec, r)).exp();
        for j in 0..self.q {
            score[j] = dot(&self.pm[j], r) + 0.5 * quad_form(&self.a[j], r) - self.half_tr[j];
        }
        f
    }

    /// Fills `score` and the packed upper triangle of `∇²_θ log f(x)`; returns `f(x)`.
    pub fn score_and_log_hessian(&self, x: &[f64], score: &mut [f64], hess_packed: &mut [f64]) -> f64 {
        let f = self.score(x, score);
        let mut buf = [0.0; 16];
        let r = &mut buf[..self.d];
        self.residual(x, r);
        for (idx, h) in hess_packed.iter_mut().enumerate().take(self.c2.len()) {
            *h = self.c2[idx] + dot(&self.v2[idx], r) + 0.5 * quad_form(&self.b2[idx], r);
        }
        f
    }

    /// `∫_a^b f`, one-dimensional only.
    pub fn interval_probability(&self, a: f64, b: f64) -> f64 {
        debug_assert_eq!(self.d, 1);
        let m = self.mean[0];
        std_normal_interval((a - m) / self.sd1, (b - m) / self.sd1)
    }

    /// Closed-form Fisher information `μ_jᵀ P μ_k + ½ tr(P Σ_j P Σ_k)`.
    pub fn fisher(parts: &GaussianParts) -> Result<DMatrix<f64>> {
        let q = parts.dmean.len();
        let p = parts
            .cov
            .clone()
            .try_inverse()
            .ok_or_else(|| GmspError::Domain("covariance matrix is singular".into()))?;
        let ps: Vec<DMatrix<f64>> = parts.dcov.iter().map(|s| &p * s).collect();
        let mut out = DMatrix::zeros(q, q);
        for j in 0..q {
            let mj = nalgebra::DVector::from_column_slice(&parts.dmean[j]);
            for k in j..q {
                let mk = nalgebra::DVector::from_column_slice(&parts.dmean[k]);
                let v = mj.dot(&(&p * &mk)) + 0.5 * (&ps[j] * &ps[k]).trace();
                out[(j, k)] = v;
                out[(k, j)] = v;
            }
        }
        Ok(out)
    }
}

/// `(μ, σ)` in one dimension.
pub fn univariate_parts(mu: f64, sigma: f64) -> GaussianParts {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    GaussianParts {
        mean: vec![mu],
        cov: m(sigma * sigma),
        dmean: vec![vec![1.0], vec![0.0]],
        dcov: vec![m(0.0), m(2.0 * sigma)],
        d2cov: vec![vec![m(0.0), m(0.0)], vec![m(0.0), m(2.0)]],
    }
}

/// `(μ₁, μ₂, σ₁, σ₂, ρ)` in two dimensions.
pub fn bivariate_parts(theta: &[f64]) -> GaussianParts {
    let (m1, m2, s1, s2, rho) = (theta[0], theta[1], theta[2], theta[3], theta[4]);
    let sym = |a: f64, b: f64, c: f64| DMatrix::from_row_slice(2, 2, &[a, b, b, c]);
    let z = || sym(0.0, 0.0, 0.0);
    let dcov = vec![z(), z(), sym(2.0 * s1, rho * s2, 0.0), sym(0.0, rho * s1, 2.0 * s2), sym(0.0, s1 * s2, 0.0)];
    let mut d2cov = vec![vec![z(); 5]; 5];
    let mut set = |j: usize, k: usize, m: DMatrix<f64>| {
        d2cov[j][k] = m.clone();
        d2cov[k][j] = m;
    };
    set(2, 2, sym(2.0, 0.0, 0.0));
    set(3, 3, sym(0.0, 0.0, 2.0));
    set(2, 3, sym(0.0, rho, 0.0));
    set(2, 4, sym(0.0, s2, 0.0));
    set(3, 4, sym(0.0, s1, 0.0));
    GaussianParts {
        mean: vec![m1, m2],
        cov: sym(s1 * s1, rho * s1 * s2, s2 * s2),
        dmean: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]],
        dcov,
        d2cov,
    }
}

/// Lower-triangular positions `(i, j)`, `j ≤ i`, in row-major order.
pub fn tril_positions(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|i| (0..=i).map(move |j| (i, j))).collect()
}

/// Mean followed by the row-major lower triangle of the Cholesky factor `L`, `Σ = L Lᵀ`.
pub fn cholesky_parts(theta: &[f64], d: usize) -> GaussianParts {
    let pos = tril_positions(d);
    let mut l = DMatrix::zeros(d, d);
    for (t, &(i, j)) in pos.iter().enumerate() {
        l[(i, j)] = theta[d + t];
    }
    let q = d + pos.len();
    let unit = |i: usize, j: usize| {
        let mut e = DMatrix::zeros(d, d);
        e[(i, j)] = 1.0;
        e
    };
    let mut dmean = Vec::with_capacity(q);
    let mut dcov = Vec::with_capacity(q);
    let mut elems = Vec::with_capacity(q);
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        dmean.push(e);
        dcov.push(DMatrix::zeros(d, d));
        elems.push(None);
    }
    for &(i, j) in &pos {
        dmean.push(vec![0.0; d]);
        let e = unit(i, j);
        dcov.push(&e * l.transpose() + &l * e.transpose());
        elems.push(Some(e));
    }
    let mut d2cov = vec![vec![DMatrix::zeros(d, d); q]; q];
    for a in 0..q {
        for b in 0..q {
            if let (Some(ea), Some(eb)) = (&elems[a], &elems[b]) {
                d2cov[a][b] = ea * eb.transpose() + eb * ea.transpose();
            }
        }
    }
    GaussianParts { mean: theta[..d].to_vec(), cov: &l * l.transpose(), dmean, dcov, d2cov }
}

/// Mean followed by per-axis standard deviations (diagonal covariance).
pub fn diagonal_parts(theta: &[f64], d: usize) -> GaussianParts {
    let q = 2 * d;
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..d {
        cov[(i, i)] = theta[d + i] * theta[d + i];
    }
    let mut dmean = Vec::with_capacity(q);
    let mut dcov = Vec::with_capacity(q);
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        dmean.push(e);
        dcov.push(DMatrix::zeros(d, d));
    }
    for i in 0..d {
        dmean.push(vec![0.0; d]);
        let mut m = DMatrix::zeros(d, d);
        m[(i, i)] = 2.0 * theta[d + i];
        dcov.push(m);
    }
    let mut d2cov = vec![vec![DMatrix::zeros(d, d); q]; q];
    for i in 0..d {
        d2cov[d + i][d + i][(i, i)] = 2.0;
    }
    GaussianParts { mean: theta[..d].to_vec(), cov, dmean, dcov, d2cov }
}
