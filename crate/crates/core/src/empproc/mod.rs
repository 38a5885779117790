//! Monte Carlo study of the weighted indicator processes
//! `Z_n(t) = n^{−1/2} Σ I(z_i > t) u_N(ξ_i)` and of the score sum
//! `n^{−1/2} Σ q(z_i) ∇f_θ₀(ξ_i)/f_θ₀(ξ_i)`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymvar::{kernel_k, sigma_q2};
use crate::ballint::{ball_probabilities, BallQuadrature, UNDERFLOW};
use crate::divergence::DivergenceSpec;
use crate::error::{GmspError, Result};
use crate::geometry::{ball_volume, nn_table};
use crate::models::{ModelFamily, ParamVector};
use crate::rng::{derive_seed, stream_rng};
use crate::stats::{covariance, frobenius_relative};

pub const DEFAULT_T_GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
pub const DEFAULT_CALIBRATION: usize = 1_000_000;

/// Raw (untruncated) weight functions with mean zero under `θ₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RawWeight {
    Zero,
    /// `x_axis − μ_axis(θ₀)`.
    Coordinate { axis: usize },
    /// Component `j` of the score `∇f_θ₀(x)/f_θ₀(x)`.
    Score { component: usize },
}

impl RawWeight {
    fn evaluator(&self, family: &ModelFamily, theta0: &ParamVector) -> Result<Box<dyn Fn(&[f64]) -> f64 + Send + Sync>> {
        match *self {
            RawWeight::Zero => Ok(Box::new(|_| 0.0)),
            RawWeight::Coordinate { axis } => {
                if axis >= family.dim() {
                    return Err(GmspError::Domain(format!("axis {axis} out of range")));
                }
                family.check_bounds(theta0)?;
                let mean = population_mean(family, theta0, axis);
                Ok(Box::new(move |x| x[axis] - mean))
            }
            RawWeight::Score { component } => {
                if component >= family.n_params() {
                    return Err(GmspError::Domain(format!("score component {component} out of range")));
                }
                family.check_interior(theta0)?;
                let p = family.prepare(theta0)?;
                let q = family.n_params();
                Ok(Box::new(move |x| {
                    let mut g = [0.0; 64];
                    let f = p.grad(x, &mut g[..q]);
                    g[component] / f
                }))
            }
        }
    }
}

fn population_mean(family: &ModelFamily, theta0: &ParamVector, axis: usize) -> f64 {
    let t = theta0.as_slice();
    match *family {
        ModelFamily::UnivariateNormal | ModelFamily::MvNormal { .. } => t[axis],
        ModelFamily::GaussianMixture { k, d } => {
            let mut w: Vec<f64> = t[..k - 1].to_vec();
            w.push(1.0 - w.iter().sum::<f64>());
            (0..k).map(|c| w[c] * t[k - 1 + c * 2 * d + axis]).sum()
        }
    }
}

/// `u_N`: `u` where `−N* ≤ u ≤ N`, zero elsewhere, minus a small centring
/// constant that absorbs the discreteness of the calibration sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedWeight {
    pub upper: f64,
    pub lower: f64,
    pub centre: f64,
    /// `E u_N²` on the calibration sample.
    pub tau2: f64,
    /// Mean of the positive and of the negative truncated parts.
    pub positive_mass: f64,
    pub negative_mass: f64,
}

impl TruncatedWeight {
    #[inline]
    pub fn apply(&self, u: f64) -> f64 {
        let v = if u >= -self.lower && u <= self.upper { u } else { 0.0 };
        v - self.centre
    }
}

/// Find `N*` so that the truncated positive and negative parts of `u`
/// balance on the calibration values, then centre.
pub fn clamp_weight(values: &[f64], upper: f64) -> Result<TruncatedWeight> {
    if !(upper > 0.0) {
        return Err(GmspError::Domain("truncation level N must be positive".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(GmspError::DegenerateWeight("weight is not finite on the calibration sample".into()));
    }
    let first = values.first().copied().unwrap_or(0.0);
    if values.len() < 2 || values.iter().all(|&v| v == first) {
        return Err(GmspError::DegenerateWeight("weight is constant on the calibration sample".into()));
    }
    let m = values.len() as f64;
    let pos: f64 = values.iter().filter(|&&v| v > 0.0 && v <= upper).sum::<f64>() / m;
    let mut neg: Vec<f64> = values.iter().filter(|&&v| v < 0.0).map(|v| -v).collect();
    if neg.is_empty() || pos == 0.0 {
        return Err(GmspError::DegenerateWeight("weight does not take both signs within the truncation".into()));
    }
    neg.sort_by(f64::total_cmp);
    let mut cum = Vec::with_capacity(neg.len());
    let mut acc = 0.0;
    for v in &neg {
        acc += v / m;
        cum.push(acc);
    }
    // bisection on the nondecreasing step function N* ↦ mass of u⁻ ≤ N*
    let k = cum.partition_point(|&c| c < pos);
    let k = if k == cum.len() || (k > 0 && (pos - cum[k - 1]).abs() < (cum[k] - pos).abs()) {
        k - 1
    } else {
        k
    };
    let lower = neg[k];
    let mut w = TruncatedWeight { upper, lower, centre: 0.0, tau2: 0.0, positive_mass: pos, negative_mass: cum[k] };
    w.centre = values.iter().map(|&v| w.apply(v)).sum::<f64>() / m;
    let centred: Vec<f64> = values.iter().map(|&v| w.apply(v)).collect();
    w.tau2 = centred.iter().map(|v| v * v).sum::<f64>() / m;
    w.positive_mass = centred.iter().filter(|&&v| v > 0.0).sum::<f64>() / m;
    w.negative_mass = -centred.iter().filter(|&&v| v < 0.0).sum::<f64>() / m;
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessConfig {
    pub n: usize,
    pub replicates: usize,
    pub t_grid: Vec<f64>,
    pub weight: RawWeight,
    /// Upper truncation level `N`.
    pub truncation: f64,
    pub calibration: usize,
    pub quad_nodes: usize,
    pub quad_seed: u64,
    pub seed: u64,
}

impl Default for ProcessConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            replicates: 2000,
            t_grid: DEFAULT_T_GRID.to_vec(),
            weight: RawWeight::Coordinate { axis: 0 },
            truncation: 1.5,
            calibration: DEFAULT_CALIBRATION,
            quad_nodes: crate::ballint::DEFAULT_NODES,
            quad_seed: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessRun {
    pub t_grid: Vec<f64>,
    pub replicates: usize,
    pub n: usize,
    pub d: usize,
    pub weight: TruncatedWeight,
    /// `Z_n(t)` per replicate (rows) and grid point (columns); column 0 of
    /// the extended grid is `t = 0`.
    pub z_paths: Vec<Vec<f64>>,
    /// The `W`-based process, centred by replicate means.
    pub y_paths: Vec<Vec<f64>>,
    /// Mean over replicates of `|Z_n(t) − Y_n(t)|`, both centred.
    pub mean_abs_diff: Vec<f64>,
    pub dropped: usize,
}

impl ProcessRun {
    /// The grid with `t = 0` prepended, matching the path columns.
    pub fn full_grid(&self) -> Vec<f64> {
        let mut g = vec![0.0];
        g.extend(&self.t_grid);
        g
    }
}

/// Replicates of `Z_n` and `Y_n` on the grid `{0} ∪ t_grid`.
pub fn simulate_zn(family: &ModelFamily, theta0: &ParamVector, config: &ProcessConfig) -> Result<ProcessRun> {
    if config.replicates < 2 {
        return Err(GmspError::Precondition("need at least 2 replicates".into()));
    }
    if config.n < 2 {
        return Err(GmspError::TooFewPoints(config.n));
    }
    let mut grid = config.t_grid.clone();
    if grid.iter().any(|t| !(*t > 0.0)) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GmspError::Domain("t grid must be positive and strictly increasing".into()));
    }
    grid.insert(0, 0.0);
    let d = family.dim();
    let u = config.weight.evaluator(family, theta0)?;
    let weight = if config.weight == RawWeight::Zero {
        TruncatedWeight { upper: config.truncation, lower: 0.0, centre: 0.0, tau2: 0.0, positive_mass: 0.0, negative_mass: 0.0 }
    } else {
        let calib = family.sample(theta0, config.calibration.max(2), derive_seed(config.seed, "calibration"))?;
        let vals: Vec<f64> = calib.rows().map(&u).collect();
        clamp_weight(&vals, config.truncation)?
    };
    let quad = BallQuadrature::new(d, config.quad_nodes, config.quad_seed)?;
    let p = family.prepare(theta0)?;
    let n = config.n;
    let scale = 1.0 / (n as f64).sqrt();
    let base = derive_seed(config.seed, "replicates");
    let reps: Vec<(Vec<f64>, Vec<f64>, usize)> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(base, r as u64);
            let cloud = family.sample_with(theta0, n, &mut rng)?;
            let nn = nn_table(&cloud)?;
            let prob = ball_probabilities(&p, &cloud, &nn, &quad);
            let mut zp = vec![0.0; grid.len()];
            let mut yp = vec![0.0; grid.len()];
            let mut dropped = 0;
            for i in 0..n {
                let x = cloud.point(i);
                let w = weight.apply(u(x));
                if !(prob[i] >= UNDERFLOW) {
                    dropped += 1;
                }
                let z = n as f64 * prob[i];
                let wv = n as f64 * p.density(x) * ball_volume(nn.radii[i], d);
                for (k, &t) in grid.iter().enumerate() {
                    if z > t || t == 0.0 {
                        zp[k] += w;
                    }
                    if wv > t || t == 0.0 {
                        yp[k] += w;
                    }
                }
            }
            zp.iter_mut().for_each(|v| *v *= scale);
            yp.iter_mut().for_each(|v| *v *= scale);
            Ok((zp, yp, dropped))
        })
        .collect::<Result<_>>()?;
    let m = reps.len();
    let g = grid.len();
    let zbar: Vec<f64> = (0..g).map(|k| reps.iter().map(|r| r.0[k]).sum::<f64>() / m as f64).collect();
    let ybar: Vec<f64> = (0..g).map(|k| reps.iter().map(|r| r.1[k]).sum::<f64>() / m as f64).collect();
    let mut z_paths = Vec::with_capacity(m);
    let mut y_paths = Vec::with_capacity(m);
    let mut mean_abs_diff = vec![0.0; g];
    let mut dropped = 0;
    for (zp, yp, dr) in reps {
        let yc: Vec<f64> = (0..g).map(|k| yp[k] - ybar[k]).collect();
        for k in 0..g {
            mean_abs_diff[k] += ((zp[k] - zbar[k]) - yc[k]).abs() / m as f64;
        }
        z_paths.push(zp);
        y_paths.push(yc);
        dropped += dr;
    }
    Ok(ProcessRun {
        t_grid: config.t_grid.clone(),
        replicates: m,
        n,
        d,
        weight,
        z_paths,
        y_paths,
        mean_abs_diff,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceRow {
    pub s: f64,
    pub t: f64,
    pub empirical: f64,
    pub std_err: f64,
    /// `τ² k(s, t, d)`.
    pub analytic: f64,
    pub z_score: f64,
}

/// Empirical `Cov(Z_n(s), Z_n(t))` for `s ≤ t` on the run's grid (including
/// `t = 0`) against the kernel, with replicate standard errors.
pub fn covariance_table(run: &ProcessRun) -> Vec<CovarianceRow> {
    let grid = run.full_grid();
    let m = run.replicates as f64;
    let means: Vec<f64> = (0..grid.len()).map(|k| run.z_paths.iter().map(|p| p[k]).sum::<f64>() / m).collect();
    let mut out = Vec::new();
    for a in 0..grid.len() {
        for b in a..grid.len() {
            let prods: Vec<f64> = run.z_paths.iter().map(|p| (p[a] - means[a]) * (p[b] - means[b])).collect();
            let mean = prods.iter().sum::<f64>() / m;
            let empirical = mean * m / (m - 1.0);
            let var = prods.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
            let std_err = (var / m).sqrt();
            let analytic = run.weight.tau2 * kernel_k(grid[a], grid[b], run.d);
            out.push(CovarianceRow { s: grid[a], t: grid[b], empirical, std_err, analytic, z_score: (empirical - analytic) / std_err });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCheckConfig {
    pub n: usize,
    pub replicates: usize,
    pub quad_nodes: usize,
    pub quad_seed: u64,
    pub seed: u64,
}

impl Default for ScoreCheckConfig {
    fn default() -> Self {
        Self { n: 1000, replicates: 1000, quad_nodes: crate::ballint::DEFAULT_NODES, quad_seed: 0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCheck {
    pub h: String,
    pub n: usize,
    pub replicates: usize,
    pub sigma_q2: f64,
    pub empirical: DMatrix<f64>,
    pub theoretical: DMatrix<f64>,
    pub frobenius_relative: f64,
    pub mean: Vec<f64>,
    pub dropped: usize,
}

/// Replicate covariance of `n^{−1/2} Σ q(z_i) ∇f_θ₀(ξ_i)/f_θ₀(ξ_i)` against
/// `σ_q² I(θ₀)`.
pub fn score_covariance_check(
    family: &ModelFamily,
    theta0: &ParamVector,
    h: &DivergenceSpec,
    config: &ScoreCheckConfig,
) -> Result<ScoreCheck> {
    if config.replicates < 2 {
        return Err(GmspError::Precondition("need at least 2 replicates".into()));
    }
    family.check_interior(theta0)?;
    let q = family.n_params();
    let d = family.dim();
    let p = family.prepare(theta0)?;
    let quad = BallQuadrature::new(d, config.quad_nodes, config.quad_seed)?;
    let n = config.n;
    let base = derive_seed(config.seed, "score-check");
    let sums: Vec<(Vec<f64>, usize)> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(base, r as u64);
            let cloud = family.sample_with(theta0, n, &mut rng)?;
            let nn = nn_table(&cloud)?;
            let prob = ball_probabilities(&p, &cloud, &nn, &quad);
            let mut s = vec![0.0; q];
            let mut g = vec![0.0; q];
            let mut dropped = 0;
            for i in 0..n {
                if !(prob[i] >= UNDERFLOW) {
                    dropped += 1;
                    continue;
                }
                let v = h.q(n as f64 * prob[i]);
                let f = p.grad(cloud.point(i), &mut g);
                for j in 0..q {
                    s[j] += v * g[j] / f;
                }
            }
            let scale = 1.0 / (n as f64).sqrt();
            s.iter_mut().for_each(|v| *v *= scale);
            Ok((s, dropped))
        })
        .collect::<Result<_>>()?;
    let rows = DMatrix::from_fn(sums.len(), q, |i, j| sums[i].0[j]);
    let empirical = covariance(&rows);
    let mean: Vec<f64> = (0..q).map(|j| rows.column(j).mean()).collect();
    let s2 = sigma_q2(h, d)?.value;
    let fisher = family.fisher(theta0, 1_000_000, derive_seed(config.seed, "fisher"))?.matrix;
    let theoretical = fisher * s2;
    Ok(ScoreCheck {
        h: h.id(),
        n,
        replicates: config.replicates,
        sigma_q2: s2,
        frobenius_relative: frobenius_relative(&empirical, &theoretical),
        empirical,
        theoretical,
        mean,
        dropped: sums.iter().map(|s| s.1).sum(),
    })
}

#[cfg(test)]
mod tests;
