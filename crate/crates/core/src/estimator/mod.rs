//! The spacing objective `S_n(θ) = (1/n) Σ h(z_i(θ))`, its maximization and
//! the multi-divergence model check.

use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ballint::{ball_probabilities, BallQuadrature, UNDERFLOW, DEFAULT_NODES};
use crate::divergence::DivergenceSpec;
use crate::error::{GmspError, Result};
use crate::geometry::{nn_table, NNTable, PointCloud};
use crate::models::{ModelFamily, ParamKind, ParamVector};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::rng::{derive_seed, stream_rng};

/// Largest tolerated fraction of underflowed balls.
pub const MAX_DROP_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub starts: usize,
    /// Per-start evaluation budget; 0 means `400 · free parameters`.
    pub max_evals: usize,
    pub xtol: f64,
    pub ftol: f64,
    /// Spread of the perturbed starts, in unconstrained coordinates.
    pub perturbation: f64,
    pub seed: u64,
    pub quad_nodes: usize,
    pub quad_seed: u64,
    /// Slack in the near-maximizer definition; reported, not used to stop.
    pub c_n: f64,
    /// Starting value; the method-of-moments guess when absent.
    pub init: Option<ParamVector>,
    /// Which parameters are optimized; the rest stay at `init`.
    pub free: Option<Vec<bool>>,
    /// Extra divergences whose scores at `θ̂` are reported.
    pub diagnostics: Vec<DivergenceSpec>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            starts: 5,
            max_evals: 0,
            xtol: 1e-9,
            ftol: 1e-13,
            perturbation: 0.3,
            seed: 0,
            quad_nodes: DEFAULT_NODES,
            quad_seed: 0,
            c_n: 1e-6,
            init: None,
            free: None,
            diagnostics: ["h1", "h2", "h3", "h4"].iter().map(|s| s.parse().unwrap()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub score: f64,
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta_hat: ParamVector,
    pub param_names: Vec<String>,
    pub score: f64,
    pub h: String,
    pub iterations: usize,
    pub restarts_used: usize,
    pub converged_starts: usize,
    pub dropped_count: usize,
    pub c_n: f64,
    pub diagnostics: BTreeMap<String, Diagnostic>,
}

/// Ball probabilities at θ plus the indices that underflowed.
fn probabilities(
    family: &ModelFamily,
    theta: &ParamVector,
    cloud: &PointCloud,
    nn: &NNTable,
    quad: &BallQuadrature,
) -> Result<(Vec<f64>, usize)> {
    let p = family.prepare(theta)?;
    let prob = ball_probabilities(&p, cloud, nn, quad);
    let dropped = prob.iter().filter(|&&v| !(v >= UNDERFLOW)).count();
    Ok((prob, dropped))
}

fn mean_h(prob: &[f64], n: usize, h: &DivergenceSpec) -> f64 {
    let mut s = 0.0;
    let mut kept = 0usize;
    for &p in prob {
        if p >= UNDERFLOW {
            s += h.h(n as f64 * p);
            kept += 1;
        }
    }
    s / kept as f64
}

fn check_dropped(dropped: usize, n: usize) -> Result<()> {
    if dropped as f64 > MAX_DROP_FRACTION * n as f64 {
        return Err(GmspError::TooManyDropped { dropped, n });
    }
    Ok(())
}

/// `S_n(θ)`, the mean of `h(z_i)` over balls that did not underflow.
pub fn spacing_score(
    family: &ModelFamily,
    theta: &ParamVector,
    cloud: &PointCloud,
    nn: &NNTable,
    quad: &BallQuadrature,
    h: &DivergenceSpec,
) -> Result<f64> {
    if cloud.dim() != family.dim() || quad.dim() != family.dim() {
        return Err(GmspError::DimensionMismatch { expected: family.dim(), got: cloud.dim() });
    }
    let (prob, dropped) = probabilities(family, theta, cloud, nn, quad)?;
    check_dropped(dropped, cloud.n())?;
    Ok(mean_h(&prob, cloud.n(), h))
}

/// Maps the free coordinates of θ to unconstrained space and back.
struct Reparam<'a> {
    family: &'a ModelFamily,
    base: Vec<f64>,
    free: Vec<usize>,
}

impl Reparam<'_> {
    fn to_theta(&self, u: &[f64]) -> ParamVector {
        let mut full = self.base.clone();
        for (k, &j) in self.free.iter().enumerate() {
            full[j] = u[k];
        }
        self.family.from_unconstrained(&full)
    }

    fn free_coords(&self, theta: &ParamVector) -> Vec<f64> {
        let full = self.family.to_unconstrained(theta);
        self.free.iter().map(|&j| full[j]).collect()
    }
}

fn data_scale(cloud: &PointCloud) -> f64 {
    let d = cloud.dim();
    let n = cloud.n() as f64;
    let mut total = 0.0;
    for i in 0..d {
        let m = cloud.rows().map(|x| x[i]).sum::<f64>() / n;
        total += cloud.rows().map(|x| (x[i] - m).powi(2)).sum::<f64>() / (n - 1.0);
    }
    (total / d as f64).sqrt().max(1e-3)
}

/// Maximize `S_n(θ)` over the family by multi-start Nelder–Mead in
/// unconstrained coordinates.
pub fn gmsp_estimate(family: &ModelFamily, cloud: &PointCloud, h: &DivergenceSpec, config: &EstimatorConfig) -> Result<EstimationResult> {
    let nn = nn_table(cloud)?;
    gmsp_estimate_with(family, cloud, &nn, h, config)
}

pub fn gmsp_estimate_with(
    family: &ModelFamily,
    cloud: &PointCloud,
    nn: &NNTable,
    h: &DivergenceSpec,
    config: &EstimatorConfig,
) -> Result<EstimationResult> {
    let q = family.n_params();
    if cloud.dim() != family.dim() {
        return Err(GmspError::DimensionMismatch { expected: family.dim(), got: cloud.dim() });
    }
    if cloud.n() < q + 2 {
        return Err(GmspError::Precondition(format!("need n ≥ q + 2 = {} observations, got {}", q + 2, cloud.n())));
    }
    if config.starts == 0 {
        return Err(GmspError::Precondition("at least one start required".into()));
    }
    let quad = BallQuadrature::new(family.dim(), config.quad_nodes, config.quad_seed)?;
    let init = match &config.init {
        Some(t) => {
            family.check_bounds(t)?;
            t.clone()
        }
        None => family.initial_guess(cloud)?,
    };
    let free: Vec<usize> = match &config.free {
        Some(mask) if mask.len() != q => return Err(GmspError::ParamCount { expected: q, got: mask.len() }),
        Some(mask) => (0..q).filter(|&j| mask[j]).collect(),
        None => (0..q).collect(),
    };
    let n = cloud.n();
    let reparam = Reparam { family, base: family.to_unconstrained(&init), free: free.clone() };
    let kinds = family.param_kinds();
    let scale = data_scale(cloud);
    let steps: Vec<f64> = free
        .iter()
        .map(|&j| if kinds[j] == ParamKind::Real { 0.2 * scale } else { 0.2 })
        .collect();
    let objective = |u: &[f64]| -> f64 {
        let theta = reparam.to_theta(u);
        match probabilities(family, &theta, cloud, nn, &quad) {
            Ok((prob, dropped)) if dropped as f64 <= MAX_DROP_FRACTION * n as f64 => -mean_h(&prob, n, h),
            _ => f64::INFINITY,
        }
    };
    let u0 = reparam.free_coords(&init);
    let mut starts = vec![u0.clone()];
    for s in 1..config.starts {
        let mut rng = stream_rng(derive_seed(config.seed, "estimator-starts"), s as u64);
        starts.push(
            u0.iter()
                .zip(&steps)
                .map(|(u, st)| u + config.perturbation * (st / 0.2) * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect(),
        );
    }
    let opts = NelderMeadOptions {
        max_evals: if config.max_evals == 0 { 400 * free.len().max(1) } else { config.max_evals },
        xtol: config.xtol,
        ftol: config.ftol,
        restarts: 2,
    };
    let runs: Vec<_> = starts.par_iter().map(|u| nelder_mead(|x: &[f64]| objective(x), u, &steps, opts)).collect();
    let iterations: usize = runs.iter().map(|r| r.evals).sum();
    let converged_starts = runs.iter().filter(|r| r.converged && r.value.is_finite()).count();
    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.value.is_finite())
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value).then(a.0.cmp(&b.0)))
        .map(|(_, r)| r.clone());
    let Some(best) = best else {
        return Err(GmspError::NotConverged { starts: config.starts, best_score: f64::NEG_INFINITY, best_theta: init.0 });
    };
    let theta_hat = reparam.to_theta(&best.x);
    if converged_starts == 0 {
        return Err(GmspError::NotConverged { starts: config.starts, best_score: -best.value, best_theta: theta_hat.0 });
    }
    let (prob, dropped) = probabilities(family, &theta_hat, cloud, nn, &quad)?;
    check_dropped(dropped, n)?;
    let mut diagnostics = BTreeMap::new();
    let mut hs = vec![*h];
    hs.extend(config.diagnostics.iter().copied());
    for g in hs {
        diagnostics.insert(g.id(), Diagnostic { score: mean_h(&prob, n, &g), reference: g.expected_h_exp() });
    }
    Ok(EstimationResult {
        score: mean_h(&prob, n, h),
        theta_hat,
        param_names: family.param_names(),
        h: h.id(),
        iterations,
        restarts_used: config.starts - 1,
        converged_starts,
        dropped_count: dropped,
        c_n: config.c_n,
        diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckConfig {
    pub estimator: EstimatorConfig,
    pub subsamples: usize,
    /// Flag when the score falls more than `k` standard deviations short.
    pub k: f64,
}

impl Default for ModelCheckConfig {
    fn default() -> Self {
        Self { estimator: EstimatorConfig::default(), subsamples: 20, k: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckEntry {
    pub theta_hat: ParamVector,
    pub score: f64,
    pub reference: f64,
    pub sd: f64,
    pub threshold: f64,
    pub flagged: bool,
}

/// For each divergence: fit, then compare `S_n(θ̂)` with `E[h(Z)]`.
///
/// The standard deviation of `S_n` is estimated by half-sampling: the spread
/// of `S_{n/2}(θ̂)` over random half-size subsamples drawn without
/// replacement. For a sample mean this spread has variance
/// `σ²(2/n − 1/n) = σ²/n`, the variance of the full-sample statistic, so no
/// rescaling is applied.
pub fn model_check(
    family: &ModelFamily,
    cloud: &PointCloud,
    h_list: &[DivergenceSpec],
    config: &ModelCheckConfig,
) -> Result<BTreeMap<String, ModelCheckEntry>> {
    if config.subsamples < 2 {
        return Err(GmspError::Precondition("model check needs at least 2 subsamples".into()));
    }
    let nn = nn_table(cloud)?;
    let quad = BallQuadrature::new(family.dim(), config.estimator.quad_nodes, config.estimator.quad_seed)?;
    let n = cloud.n();
    let half = n / 2;
    let subs: Vec<(PointCloud, NNTable)> = (0..config.subsamples)
        .map(|s| {
            let mut rng = stream_rng(derive_seed(config.estimator.seed, "model-check"), s as u64);
            let mut idx = sample_indices(&mut rng, n, half).into_vec();
            idx.sort_unstable();
            let sub = cloud.subset(&idx)?;
            let nn = nn_table(&sub)?;
            Ok((sub, nn))
        })
        .collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    for h in h_list {
        let est = gmsp_estimate_with(family, cloud, &nn, h, &config.estimator)?;
        let scores: Vec<f64> = subs
            .iter()
            .map(|(sub, snn)| spacing_score(family, &est.theta_hat, sub, snn, &quad, h))
            .collect::<Result<_>>()?;
        let sd = crate::stats::variance(&scores).sqrt();
        let reference = h.expected_h_exp();
        let threshold = reference - config.k * sd;
        out.insert(
            h.id(),
            ModelCheckEntry { theta_hat: est.theta_hat, score: est.score, reference, sd, threshold, flagged: est.score < threshold },
        );
    }
    Ok(out)
}
