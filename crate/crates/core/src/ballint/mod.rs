//! Integrals of `f_θ` and its θ-derivatives over nearest-neighbour balls.
//!
//! One frozen node set on the unit ball is shifted and scaled onto every
//! ball, so `S_n(θ)` is a smooth deterministic function of θ.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::divergence::DivergenceSpec;
use crate::error::{GmspError, Result};
use crate::geometry::{unit_ball_volume, NNTable, PointCloud};
use crate::models::{ModelFamily, ParamVector, Prepared};
use crate::qmc::Halton;
use crate::quad::gauss_legendre;
use crate::rng::stream_rng;

/// Ball probabilities below this are treated as underflow.
pub const UNDERFLOW: f64 = 1e-300;
pub const DEFAULT_NODES: usize = 512;
/// One-dimensional balls are intervals; Gauss–Legendre saturates long before this.
const MAX_NODES_1D: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct BallQuadrature {
    d: usize,
    seed: u64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl BallQuadrature {
    /// About `node_count` nodes on the unit `d`-ball.
    ///
    /// * `d = 1`: Gauss–Legendre on `[−1, 1]`.
    /// * `d = 2`: Gauss–Legendre in `u = ρ²` times equally spaced angles,
    ///   rotated by a seed-derived offset. The angular mean of a smooth
    ///   integrand is analytic in `ρ²`, so this converges geometrically.
    /// * `d ≥ 3`: Gauss–Legendre in `ρ` (weight `ρ^{d−1}`) times antithetic
    ///   directions from a shifted Halton sequence pushed through the
    ///   normal quantile.
    ///
    /// Weights sum to the unit-ball volume.
    pub fn new(d: usize, node_count: usize, seed: u64) -> Result<Self> {
        if d == 0 || d > crate::models::MAX_DIM {
            return Err(GmspError::Domain(format!("quadrature dimension {d} unsupported")));
        }
        if node_count < 2 {
            return Err(GmspError::Domain("need at least 2 quadrature nodes".into()));
        }
        if d == 1 {
            let (nodes, weights) = gauss_legendre(node_count.min(MAX_NODES_1D));
            return Ok(Self { d, seed, nodes, weights });
        }
        let mut rng = stream_rng(seed, 0);
        let vol = unit_ball_volume(d);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        if d == 2 {
            let n_rad = ((node_count as f64 / 2.0).sqrt().ceil() as usize).max(1);
            let n_ang = (node_count / n_rad).max(2);
            let (gx, gw) = gauss_legendre(n_rad);
            let offset: f64 = rng.random();
            for (x, w) in gx.iter().zip(&gw) {
                let rho = (0.5 * (x + 1.0)).sqrt();
                for a in 0..n_ang {
                    let (s, c) = (2.0 * std::f64::consts::PI * (a as f64 + offset) / n_ang as f64).sin_cos();
                    nodes.push(rho * c);
                    nodes.push(rho * s);
                    weights.push(0.5 * w * vol / n_ang as f64);
                }
            }
            return Ok(Self { d, seed, nodes, weights });
        }
        let n_rad = ((node_count as f64).powf(1.0 / d as f64).ceil() as usize).max(2);
        let n_dir = 2 * (node_count / n_rad / 2).max(1);
        let (gx, gw) = gauss_legendre(n_rad);
        let shift: Vec<f64> = (0..d).map(|_| rng.random()).collect();
        let halton = Halton::with_shift(d, shift);
        let std_normal = Normal::standard();
        let mut dirs = Vec::with_capacity(n_dir * d);
        let mut u = vec![0.0; d];
        for k in 0..n_dir / 2 {
            halton.point_into(k as u64 + 1, &mut u);
            let x: Vec<f64> = u.iter().map(|v| std_normal.inverse_cdf(v.clamp(1e-15, 1.0 - 1e-15))).collect();
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            dirs.extend(x.iter().map(|v| v / norm));
            dirs.extend(x.iter().map(|v| -v / norm));
        }
        // radial weights normalized so they sum exactly to 1/d = ∫₀¹ ρ^{d−1}dρ
        let radial: Vec<(f64, f64)> = gx.iter().zip(&gw).map(|(x, w)| {
            let rho = 0.5 * (x + 1.0);
            (rho, 0.5 * w * rho.powi(d as i32 - 1))
        }).collect();
        let rsum: f64 = radial.iter().map(|r| r.1).sum();
        for &(rho, w) in &radial {
            for k in 0..n_dir {
                nodes.extend(dirs[k * d..(k + 1) * d].iter().map(|v| rho * v));
                weights.push(w / rsum * vol / n_dir as f64);
            }
        }
        Ok(Self { d, seed, nodes, weights })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.d..(k + 1) * self.d]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫_{B(center, r)} g`.
    pub fn integrate<G: FnMut(&[f64]) -> f64>(&self, center: &[f64], r: f64, mut g: G) -> f64 {
        let d = self.d;
        let mut y = [0.0; 16];
        let mut s = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            let x = self.node(k);
            for i in 0..d {
                y[i] = center[i] + r * x[i];
            }
            s += w * g(&y[..d]);
        }
        s * r.powi(d as i32)
    }

    /// Ball integral of `f`, exact through the CDF in one dimension.
    pub fn probability(&self, p: &Prepared, center: &[f64], r: f64) -> f64 {
        if let Some(v) = p.interval_probability(center[0] - r, center[0] + r) {
            return v;
        }
        self.integrate(center, r, |y| p.density(y)).max(0.0)
    }

    /// Ball integrals of `f` and `∇f` (into `grad`, accumulated from zero).
    pub fn probability_and_grad(&self, p: &Prepared, center: &[f64], r: f64, grad: &mut [f64], buf: &mut [f64]) -> f64 {
        let d = self.d;
        let q = grad.len();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut y = [0.0; 16];
        let mut s = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            let x = self.node(k);
            for i in 0..d {
                y[i] = center[i] + r * x[i];
            }
            s += w * p.grad(&y[..d], &mut buf[..q]);
            for j in 0..q {
                grad[j] += w * buf[j];
            }
        }
        let vol = r.powi(d as i32);
        grad.iter_mut().for_each(|g| *g *= vol);
        match p.interval_probability(center[0] - r, center[0] + r) {
            Some(v) => v,
            None => (s * vol).max(0.0),
        }
    }

    /// Ball integrals of `f`, `∇f` and packed `∇²f`.
    pub fn probability_grad_hess(
        &self,
        p: &Prepared,
        center: &[f64],
        r: f64,
        grad: &mut [f64],
        hess: &mut [f64],
        gbuf: &mut [f64],
        hbuf: &mut [f64],
    ) -> f64 {
        let d = self.d;
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.iter_mut().for_each(|g| *g = 0.0);
        let mut y = [0.0; 16];
        let mut s = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            let x = self.node(k);
            for i in 0..d {
                y[i] = center[i] + r * x[i];
            }
            s += w * p.grad_hess(&y[..d], gbuf, hbuf);
            for (g, b) in grad.iter_mut().zip(gbuf.iter()) {
                *g += w * b;
            }
            for (h, b) in hess.iter_mut().zip(hbuf.iter()) {
                *h += w * b;
            }
        }
        let vol = r.powi(d as i32);
        grad.iter_mut().for_each(|g| *g *= vol);
        hess.iter_mut().for_each(|g| *g *= vol);
        match p.interval_probability(center[0] - r, center[0] + r) {
            Some(v) => v,
            None => (s * vol).max(0.0),
        }
    }
}

/// `∫_{B(center, r)} f_θ`.
pub fn prob_ball(family: &ModelFamily, theta: &ParamVector, center: &[f64], r: f64, quad: &BallQuadrature) -> Result<f64> {
    if !(r > 0.0) {
        return Err(GmspError::Domain(format!("ball radius must be positive, got {r}")));
    }
    check_dims(family, center.len(), quad)?;
    Ok(quad.probability(&family.prepare(theta)?, center, r))
}

fn check_dims(family: &ModelFamily, d: usize, quad: &BallQuadrature) -> Result<()> {
    if d != family.dim() {
        return Err(GmspError::DimensionMismatch { expected: family.dim(), got: d });
    }
    if quad.dim() != d {
        return Err(GmspError::DimensionMismatch { expected: d, got: quad.dim() });
    }
    Ok(())
}

/// Per-ball quantities at one θ.
#[derive(Debug, Clone)]
pub struct ZTable {
    pub theta: ParamVector,
    /// `z_i = n P_θ(B_i)`.
    pub z: Vec<f64>,
    /// `P_θ(B_i)`.
    pub prob: Vec<f64>,
    /// `n × q` row-major ball integrals of `∇f`.
    pub grad: Option<Vec<f64>>,
    /// `n × q(q+1)/2` packed ball integrals of `∇²f`.
    pub hess: Option<Vec<f64>>,
    /// Indices whose ball probability underflowed.
    pub dropped: Vec<usize>,
    pub n_params: usize,
}

impl ZTable {
    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn grad_row(&self, i: usize) -> Option<&[f64]> {
        let q = self.n_params;
        self.grad.as_ref().map(|g| &g[i * q..(i + 1) * q])
    }

    pub fn hess_row(&self, i: usize) -> Option<&[f64]> {
        let w = self.n_params * (self.n_params + 1) / 2;
        self.hess.as_ref().map(|h| &h[i * w..(i + 1) * w])
    }

    pub fn is_dropped(&self, i: usize) -> bool {
        self.dropped.binary_search(&i).is_ok()
    }
}

fn check_table_inputs(family: &ModelFamily, cloud: &PointCloud, nn: &NNTable, quad: &BallQuadrature) -> Result<()> {
    check_dims(family, cloud.dim(), quad)?;
    if nn.radii.len() != cloud.n() {
        return Err(GmspError::DimensionMismatch { expected: cloud.n(), got: nn.radii.len() });
    }
    Ok(())
}

/// Ball probabilities only, the inner loop of the optimizer.
pub fn ball_probabilities(p: &Prepared, cloud: &PointCloud, nn: &NNTable, quad: &BallQuadrature) -> Vec<f64> {
    (0..cloud.n())
        .into_par_iter()
        .with_min_len(64)
        .map(|i| if nn.radii[i] > 0.0 { quad.probability(p, cloud.point(i), nn.radii[i]) } else { 0.0 })
        .collect()
}

pub fn z_table(
    family: &ModelFamily,
    theta: &ParamVector,
    cloud: &PointCloud,
    nn: &NNTable,
    quad: &BallQuadrature,
    with_grad: bool,
    with_hess: bool,
) -> Result<ZTable> {
    check_table_inputs(family, cloud, nn, quad)?;
    let with_grad = with_grad || with_hess;
    if with_grad {
        family.check_interior(theta)?;
    }
    let p = family.prepare(theta)?;
    let n = cloud.n();
    let q = family.n_params();
    let w = q * (q + 1) / 2;
    let (prob, grad, hess) = if with_hess {
        let rows: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .with_min_len(16)
            .map_init(
                || (vec![0.0; q], vec![0.0; w]),
                |(gb, hb), i| {
                    let mut g = vec![0.0; q];
                    let mut h = vec![0.0; w];
                    let r = nn.radii[i];
                    let pr = if r > 0.0 { quad.probability_grad_hess(&p, cloud.point(i), r, &mut g, &mut h, gb, hb) } else { 0.0 };
                    (pr, g, h)
                },
            )
            .collect();
        let mut prob = Vec::with_capacity(n);
        let mut gall = Vec::with_capacity(n * q);
        let mut hall = Vec::with_capacity(n * w);
        for (pr, g, h) in rows {
            prob.push(pr);
            gall.extend(g);
            hall.extend(h);
        }
        (prob, Some(gall), Some(hall))
    } else if with_grad {
        let rows: Vec<(f64, Vec<f64>)> = (0..n)
            .into_par_iter()
            .with_min_len(16)
            .map_init(
                || vec![0.0; q],
                |buf, i| {
                    let mut g = vec![0.0; q];
                    let r = nn.radii[i];
                    let pr = if r > 0.0 { quad.probability_and_grad(&p, cloud.point(i), r, &mut g, buf) } else { 0.0 };
                    (pr, g)
                },
            )
            .collect();
        let mut prob = Vec::with_capacity(n);
        let mut gall = Vec::with_capacity(n * q);
        for (pr, g) in rows {
            prob.push(pr);
            gall.extend(g);
        }
        (prob, Some(gall), None)
    } else {
        (ball_probabilities(&p, cloud, nn, quad), None, None)
    };
    let dropped: Vec<usize> = prob.iter().enumerate().filter(|(_, &v)| !(v >= UNDERFLOW)).map(|(i, _)| i).collect();
    if !dropped.is_empty() {
        log::debug!("{} of {} ball probabilities underflowed", dropped.len(), n);
    }
    let z = prob.iter().map(|v| n as f64 * v).collect();
    Ok(ZTable { theta: theta.clone(), z, prob, grad, hess, dropped, n_params: q })
}

/// Rows `v(z_i) · ∫_B ∇f / ∫_B f` with underflowed balls removed.
#[derive(Debug, Clone)]
pub struct PsiTerms {
    /// `kept.len() × q`.
    pub rows: DMatrix<f64>,
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

impl PsiTerms {
    /// Column means, the natural estimate of `λ_n(θ)`.
    pub fn mean(&self) -> Vec<f64> {
        (0..self.rows.ncols()).map(|j| self.rows.column(j).mean()).collect()
    }
}

pub fn psi_terms(
    family: &ModelFamily,
    theta: &ParamVector,
    cloud: &PointCloud,
    nn: &NNTable,
    quad: &BallQuadrature,
    h: &DivergenceSpec,
) -> Result<PsiTerms> {
    let table = z_table(family, theta, cloud, nn, quad, true, false)?;
    Ok(psi_from_table(&table, h))
}

pub fn psi_from_table(table: &ZTable, h: &DivergenceSpec) -> PsiTerms {
    let q = table.n_params;
    let kept: Vec<usize> = (0..table.n()).filter(|&i| !table.is_dropped(i)).collect();
    let mut rows = DMatrix::zeros(kept.len(), q);
    for (r, &i) in kept.iter().enumerate() {
        let v = h.q(table.z[i]);
        let g = table.grad_row(i).expect("gradient integrals");
        for j in 0..q {
            rows[(r, j)] = v * g[j] / table.prob[i];
        }
    }
    PsiTerms { rows, kept, dropped: table.dropped.clone() }
}
