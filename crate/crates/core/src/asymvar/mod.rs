//! The limiting covariance kernel `k(s, t)` of the weighted indicator
//! process, the variance functional `σ_q²`, and the constants `σ_q²/b_h²`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::DivergenceSpec;
use crate::error::{GmspError, Result};
use crate::geometry::{lens_volume, radius_from_volume, unit_ball_volume};
use crate::quad::{integrate, integrate_to_infinity, Tolerance};

/// Absolute tolerance of the radial shell integral inside `k`.
const SHELL_TOL: f64 = 1e-12;

/// `S_d ∫_{r₁}^{r₁+r₂} (e^{β(ρ)} − 1) ρ^{d−1} dρ` with `r₁ = r(t)`, `r₂ = r(s)`, `s ≤ t`.
pub fn shell_integral(s: f64, t: f64, d: usize) -> f64 {
    let (s, t) = if s <= t { (s, t) } else { (t, s) };
    if s <= 0.0 {
        return 0.0;
    }
    let r1 = radius_from_volume(t, d);
    let r2 = radius_from_volume(s, d);
    let surface = d as f64 * unit_ball_volume(d);
    let res = integrate(
        |rho| lens_volume(r1, r2, rho, d).exp_m1() * rho.powi(d as i32 - 1),
        r1,
        r1 + r2,
        Tolerance::new(SHELL_TOL, 1e-13),
    );
    surface * res.value
}

/// `k(s, t) = e^{−t} − t e^{−s−t} + e^{−s−t} · shell(s, t)` for `s ≤ t`,
/// extended symmetrically.
pub fn kernel_k(s: f64, t: f64, d: usize) -> f64 {
    let (s, t) = if s <= t { (s, t) } else { (t, s) };
    if s <= 0.0 {
        return (-t).exp() * (1.0 - t);
    }
    let e = (-s - t).exp();
    (-t).exp() - t * e + e * shell_integral(s, t, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymvarOptions {
    pub t_max: f64,
    /// Second truncation used only for the error estimate.
    pub t_max_check: f64,
    pub abs_tol: f64,
}

impl Default for AsymvarOptions {
    fn default() -> Self {
        Self { t_max: 40.0, t_max_check: 60.0, abs_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaQ2 {
    pub value: f64,
    /// Quadrature error estimate plus the truncation delta.
    pub error: f64,
    pub truncation_delta: f64,
}

/// Graded map `t = u^m` for a divergence; returns `(t, q'(t) dt/du)`.
fn graded(h: &DivergenceSpec, m: f64, u: f64) -> (f64, f64) {
    if m == 1.0 {
        return (u, h.dq(u));
    }
    let t = u.powf(m);
    (t, h.dq(t) * m * u.powf(m - 1.0))
}

/// Breakpoints in `t` where the integrand changes scale.
const T_BREAKS: [f64; 8] = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];

/// `q(0)² + ∬ k q′q′ + 2 q(0) ∫ k(0,t) q′(t) dt` over `[0, t_max]`.
fn sigma_q2_truncated(h: &DivergenceSpec, d: usize, t_max: f64, tol: f64) -> (f64, f64, bool) {
    let m = h.grading_exponent();
    let u_of = |t: f64| t.powf(1.0 / m);
    let mut edges: Vec<f64> = T_BREAKS.iter().copied().filter(|&t| t < t_max).map(u_of).collect();
    edges.push(u_of(t_max));
    let pieces = edges.len() - 1;
    let inner_tol = Tolerance { abs: 0.1 * tol / pieces as f64, rel: 1e-12, max_intervals: 400 };
    let outer_tol = Tolerance { abs: tol / pieces as f64, rel: 1e-12, max_intervals: 400 };
    let results: Vec<(f64, f64, bool)> = edges
        .par_windows(2)
        .map(|w| {
            let mut ok = true;
            let r = integrate(
                |u| {
                    let (t, wt) = graded(h, m, u);
                    if wt == 0.0 {
                        return 0.0;
                    }
                    let inner = integrate(
                        |v| {
                            let (s, ws) = graded(h, m, v);
                            ws * kernel_k(s, t, d)
                        },
                        0.0,
                        u,
                        inner_tol,
                    );
                    ok &= inner.converged;
                    wt * inner.value
                },
                w[0],
                w[1],
                outer_tol,
            );
            (r.value, r.abs_err, ok && r.converged)
        })
        .collect();
    let mut double = 0.0;
    let mut err = 0.0;
    let mut ok = true;
    for (v, e, c) in results {
        double += v;
        err += e;
        ok &= c;
    }
    let q0 = h.q0();
    let mut cross = 0.0;
    if q0 != 0.0 {
        let r = integrate(
            |u| {
                let (t, wt) = graded(h, m, u);
                wt * (-t).exp() * (1.0 - t)
            },
            0.0,
            u_of(t_max),
            Tolerance::new(1e-13, 1e-13),
        );
        cross = r.value;
        err += r.abs_err;
        ok &= r.converged;
    }
    (q0 * q0 + 2.0 * double + 2.0 * q0 * cross, 2.0 * err, ok)
}

/// Checks `|∫_1^∞ (t e^{−t})^{1/2} q′(t) dt| < ∞`.
fn integrability(h: &DivergenceSpec) -> Result<f64> {
    let r = integrate_to_infinity(|t| (t * (-t).exp()).sqrt() * h.dq(t), 1.0, Tolerance::new(1e-12, 1e-10));
    if !r.value.is_finite() || !r.converged {
        return Err(GmspError::Domain(format!("{h}: q violates the tail integrability condition")));
    }
    Ok(r.value)
}

pub fn sigma_q2(h: &DivergenceSpec, d: usize) -> Result<SigmaQ2> {
    sigma_q2_with(h, d, AsymvarOptions::default())
}

pub fn sigma_q2_with(h: &DivergenceSpec, d: usize, opts: AsymvarOptions) -> Result<SigmaQ2> {
    if d == 0 {
        return Err(GmspError::Domain("dimension must be at least 1".into()));
    }
    integrability(h)?;
    let (value, err, ok) = sigma_q2_truncated(h, d, opts.t_max, opts.abs_tol);
    let (check, err2, ok2) = sigma_q2_truncated(h, d, opts.t_max_check, opts.abs_tol);
    let truncation_delta = (check - value).abs();
    let error = err.max(err2) + truncation_delta;
    if !(ok && ok2) && error > 100.0 * opts.abs_tol {
        return Err(GmspError::Quadrature { value, achieved: error });
    }
    Ok(SigmaQ2 { value, error, truncation_delta })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub d: usize,
    pub h: String,
    pub sigma_q2: f64,
    pub b_h: f64,
    /// `σ_q² / b_h²`.
    pub ratio: f64,
    pub t_max: f64,
    pub t_max_check: f64,
    pub abs_tol: f64,
    /// Estimated absolute error of `ratio`.
    pub error: f64,
}

pub fn variance_constant(h: &DivergenceSpec, d: usize) -> Result<KernelReport> {
    variance_constant_with(h, d, AsymvarOptions::default())
}

pub fn variance_constant_with(h: &DivergenceSpec, d: usize, opts: AsymvarOptions) -> Result<KernelReport> {
    let s = sigma_q2_with(h, d, opts)?;
    let b = h.b_h();
    Ok(KernelReport {
        d,
        h: h.id(),
        sigma_q2: s.value,
        b_h: b,
        ratio: s.value / (b * b),
        t_max: opts.t_max,
        t_max_check: opts.t_max_check,
        abs_tol: opts.abs_tol,
        error: s.error / (b * b),
    })
}
