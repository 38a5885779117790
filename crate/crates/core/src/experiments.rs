//! Replicated studies: the `√n λ_n(θ₀)` scan and the sampling distribution
//! of the estimator.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymvar::sigma_q2;
use crate::ballint::{BallQuadrature, UNDERFLOW};
use crate::divergence::DivergenceSpec;
use crate::error::{GmspError, Result};
use crate::estimator::{gmsp_estimate, EstimatorConfig};
use crate::geometry::{nearest_neighbour_of, nn_table};
use crate::models::{ModelFamily, ParamVector};
use crate::rng::{derive_seed, stream_rng};
use crate::stats::{covariance, jarque_bera};

/// How many observations of each sample enter the `λ_n` average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerSample {
    /// One uniformly chosen observation per sample.
    One,
    /// Every observation; same expectation, far smaller variance.
    All,
}

impl std::str::FromStr for PerSample {
    type Err = GmspError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" => Ok(Self::One),
            "all" => Ok(Self::All),
            _ => Err(GmspError::Domain(format!("per-sample mode must be `one` or `all`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaScanConfig {
    pub family: String,
    pub theta0: ParamVector,
    pub h_list: Vec<DivergenceSpec>,
    pub sqrt_n: Vec<usize>,
    /// Samples per estimate.
    pub m: usize,
    pub repetitions: usize,
    /// θ component reported.
    pub component: usize,
    pub per_sample: PerSample,
    pub quad_nodes: usize,
    pub quad_seed: u64,
    pub seed: u64,
}

impl Default for LambdaScanConfig {
    fn default() -> Self {
        Self {
            family: "mvnormal".into(),
            theta0: ParamVector(vec![1.0, 2.0, 1.0, 1.0, 0.5]),
            h_list: ["h1", "h2", "h3"].iter().map(|s| s.parse().unwrap()).collect(),
            sqrt_n: vec![10, 30],
            m: 2000,
            repetitions: 5,
            component: 2,
            per_sample: PerSample::All,
            quad_nodes: crate::ballint::DEFAULT_NODES,
            quad_seed: 0,
            seed: 0,
        }
    }
}

impl LambdaScanConfig {
    pub fn validate(&self) -> Result<ModelFamily> {
        let family: ModelFamily = self.family.parse()?;
        family.check_interior(&self.theta0)?;
        if self.m < 100 {
            return Err(GmspError::Precondition("m must be at least 100".into()));
        }
        if self.repetitions < 1 {
            return Err(GmspError::Precondition("at least one repetition required".into()));
        }
        if self.sqrt_n.iter().any(|&s| s < 10) {
            return Err(GmspError::Precondition("√n values must be at least 10".into()));
        }
        if self.h_list.is_empty() {
            return Err(GmspError::Precondition("empty h list".into()));
        }
        if self.component >= family.n_params() {
            return Err(GmspError::OutOfBounds {
                index: self.component,
                value: self.component as f64,
                lo: 0.0,
                hi: family.n_params() as f64 - 1.0,
            });
        }
        Ok(family)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub sqrt_n: usize,
    pub n: usize,
    pub h: String,
    pub component: String,
    /// Mean over repetitions of `√n · λ̂_n`.
    pub estimate: f64,
    /// Standard error of that mean across repetitions (NaN for one repetition).
    pub std_err: f64,
    pub repetitions: Vec<f64>,
    pub dropped: usize,
}

/// `q(z_i) · ∫_B ∂_c f / ∫_B f` for the chosen observations of one sample.
fn sample_terms(
    family: &ModelFamily,
    prepared: &crate::models::Prepared,
    theta0: &ParamVector,
    n: usize,
    component: usize,
    per_sample: PerSample,
    quad: &BallQuadrature,
    rng: &mut impl Rng,
) -> Result<Vec<(f64, f64)>> {
    let cloud = family.sample_with(theta0, n, rng)?;
    let q = family.n_params();
    let mut g = vec![0.0; q];
    let mut buf = vec![0.0; q];
    let mut term = |i: usize, r: f64| {
        let p = quad.probability_and_grad(prepared, cloud.point(i), r, &mut g, &mut buf);
        (n as f64 * p, g[component] / p)
    };
    Ok(match per_sample {
        PerSample::One => {
            let i = rng.random_range(0..n);
            let (_, r) = nearest_neighbour_of(&cloud, i);
            vec![term(i, r)]
        }
        PerSample::All => {
            let nn = nn_table(&cloud)?;
            (0..n).map(|i| term(i, nn.radii[i])).collect()
        }
    })
}

/// Estimate `√n λ_n(θ₀)` for one component over a grid of sample sizes.
/// All divergences share the same simulated samples.
pub fn lambda_scan(config: &LambdaScanConfig) -> Result<Vec<LambdaRow>> {
    let family = config.validate()?;
    let prepared = family.prepare(&config.theta0)?;
    let quad = BallQuadrature::new(family.dim(), config.quad_nodes, config.quad_seed)?;
    let names = family.param_names();
    let mut rows = Vec::new();
    for &sn in &config.sqrt_n {
        let n = sn * sn;
        let hs = config.h_list.len();
        // per repetition: sums of terms for each h and a drop count
        let reps: Vec<(Vec<f64>, usize)> = (0..config.repetitions)
            .map(|r| {
                let base = derive_seed(config.seed, &format!("lambda/{sn}/{r}"));
                let per: Vec<(Vec<f64>, usize)> = (0..config.m)
                    .into_par_iter()
                    .map(|j| {
                        let mut rng = stream_rng(base, j as u64);
                        let terms = sample_terms(&family, &prepared, &config.theta0, n, config.component, config.per_sample, &quad, &mut rng)?;
                        let mut sums = vec![0.0; hs];
                        let mut kept = 0usize;
                        let mut dropped = 0usize;
                        for (z, ratio) in terms {
                            if !(z / n as f64 >= UNDERFLOW) {
                                dropped += 1;
                                continue;
                            }
                            kept += 1;
                            for (s, h) in sums.iter_mut().zip(&config.h_list) {
                                *s += h.q(z) * ratio;
                            }
                        }
                        sums.iter_mut().for_each(|s| *s /= kept.max(1) as f64);
                        Ok((sums, dropped))
                    })
                    .collect::<Result<_>>()?;
                let mut means = vec![0.0; hs];
                for (sums, _) in &per {
                    for k in 0..hs {
                        means[k] += sums[k];
                    }
                }
                let scale = (n as f64).sqrt() / config.m as f64;
                means.iter_mut().for_each(|v| *v *= scale);
                Ok((means, per.iter().map(|p| p.1).sum()))
            })
            .collect::<Result<_>>()?;
        for (k, h) in config.h_list.iter().enumerate() {
            let vals: Vec<f64> = reps.iter().map(|r| r.0[k]).collect();
            let estimate = crate::stats::mean(&vals);
            let std_err = if vals.len() > 1 { (crate::stats::variance(&vals) / vals.len() as f64).sqrt() } else { f64::NAN };
            rows.push(LambdaRow {
                sqrt_n: sn,
                n,
                h: h.id(),
                component: names[config.component].clone(),
                estimate,
                std_err,
                repetitions: vals,
                dropped: reps.iter().map(|r| r.1).sum(),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityConfig {
    pub family: String,
    pub theta0: ParamVector,
    pub h: DivergenceSpec,
    pub n: usize,
    pub replicates: usize,
    /// Free parameters by name; all when empty. The rest are held at `θ₀`.
    pub free: Vec<String>,
    pub estimator: EstimatorConfig,
    pub seed: u64,
}

impl Default for NormalityConfig {
    fn default() -> Self {
        Self {
            family: "normal".into(),
            theta0: ParamVector(vec![0.0, 1.0]),
            h: DivergenceSpec::h1(),
            n: 500,
            replicates: 500,
            free: vec!["mu".into()],
            estimator: EstimatorConfig { diagnostics: vec![], ..Default::default() },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTest {
    pub name: String,
    pub empirical_variance: f64,
    pub theoretical_variance: f64,
    pub variance_ratio: f64,
    pub mean: f64,
    pub jarque_bera: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalitySummary {
    pub family: String,
    pub h: String,
    pub n: usize,
    pub replicates: usize,
    pub failed: usize,
    pub d: usize,
    pub sigma_q2: f64,
    pub b_h: f64,
    pub constant: f64,
    pub free: Vec<String>,
    /// Covariance of `√n(θ̂ − θ₀)` over the free parameters.
    pub empirical_cov: DMatrix<f64>,
    /// `(σ_q²/b_h²) I_ff(θ₀)⁻¹`.
    pub theoretical_cov: DMatrix<f64>,
    pub components: Vec<ComponentTest>,
    /// Raw `√n(θ̂ − θ₀)` per replicate.
    pub scaled_errors: Vec<Vec<f64>>,
}

pub fn normality_study(config: &NormalityConfig) -> Result<NormalitySummary> {
    let family: ModelFamily = config.family.parse()?;
    if matches!(family, ModelFamily::GaussianMixture { .. }) {
        return Err(GmspError::Precondition("normality study needs a normal family (closed-form Fisher information)".into()));
    }
    if config.replicates < 2 {
        return Err(GmspError::Precondition("normality study needs at least 2 replicates".into()));
    }
    family.check_interior(&config.theta0)?;
    let names = family.param_names();
    let q = family.n_params();
    let free_idx: Vec<usize> = if config.free.is_empty() {
        (0..q).collect()
    } else {
        config
            .free
            .iter()
            .map(|f| names.iter().position(|n| n == f).ok_or_else(|| GmspError::Domain(format!("unknown parameter `{f}`"))))
            .collect::<Result<_>>()?
    };
    let mask: Vec<bool> = (0..q).map(|j| free_idx.contains(&j)).collect();
    let base = derive_seed(config.seed, "normality");
    let outcomes: Vec<Option<Vec<f64>>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(base, r as u64);
            let cloud = family.sample_with(&config.theta0, config.n, &mut rng)?;
            let guess = family.initial_guess(&cloud)?;
            let init: Vec<f64> = (0..q).map(|j| if mask[j] { guess.0[j] } else { config.theta0.0[j] }).collect();
            let est_cfg = EstimatorConfig {
                init: Some(ParamVector(init)),
                free: Some(mask.clone()),
                seed: derive_seed(config.seed, &format!("normality-start/{r}")),
                ..config.estimator.clone()
            };
            match gmsp_estimate(&family, &cloud, &config.h, &est_cfg) {
                Ok(e) => {
                    let s = (config.n as f64).sqrt();
                    Ok(Some(free_idx.iter().map(|&j| s * (e.theta_hat.0[j] - config.theta0.0[j])).collect()))
                }
                Err(GmspError::NotConverged { .. }) | Err(GmspError::TooManyDropped { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let failed = outcomes.iter().filter(|o| o.is_none()).count();
    let errs: Vec<Vec<f64>> = outcomes.into_iter().flatten().collect();
    if errs.len() < 2 {
        return Err(GmspError::Precondition("fewer than 2 replicates converged".into()));
    }
    let k = free_idx.len();
    let rows = DMatrix::from_fn(errs.len(), k, |i, j| errs[i][j]);
    let empirical_cov = covariance(&rows);
    let d = family.dim();
    let s2 = sigma_q2(&config.h, d)?.value;
    let b = config.h.b_h();
    let constant = s2 / (b * b);
    let fisher = family.fisher(&config.theta0, 0, 0)?.matrix;
    let sub = DMatrix::from_fn(k, k, |a, c| fisher[(free_idx[a], free_idx[c])]);
    let inv = sub.try_inverse().ok_or_else(|| GmspError::Domain("Fisher information is singular".into()))?;
    let theoretical_cov = inv * constant;
    let components = (0..k)
        .map(|a| {
            let col: Vec<f64> = errs.iter().map(|e| e[a]).collect();
            let (jb, p) = jarque_bera(&col);
            ComponentTest {
                name: names[free_idx[a]].clone(),
                empirical_variance: empirical_cov[(a, a)],
                theoretical_variance: theoretical_cov[(a, a)],
                variance_ratio: empirical_cov[(a, a)] / theoretical_cov[(a, a)],
                mean: crate::stats::mean(&col),
                jarque_bera: jb,
                p_value: p,
            }
        })
        .collect();
    Ok(NormalitySummary {
        family: family.to_string(),
        h: config.h.id(),
        n: config.n,
        replicates: config.replicates,
        failed,
        d,
        sigma_q2: s2,
        b_h: b,
        constant,
        free: free_idx.iter().map(|&j| names[j].clone()).collect(),
        empirical_cov,
        theoretical_cov,
        components,
        scaled_errors: errs,
    })
}
