use statrs::function::beta::beta_reg;

use crate::error::{GmspError, Result};

/// Volume of the unit ball in `R^d`, via `V_d = 2π/d · V_{d-2}`.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / d as f64 * unit_ball_volume(d - 2),
    }
}

pub fn ball_volume(r: f64, d: usize) -> f64 {
    unit_ball_volume(d) * r.powi(d as i32)
}

/// Inverse of [`ball_volume`] in the radius.
pub fn radius_from_volume(v: f64, d: usize) -> f64 {
    let u = v / unit_ball_volume(d);
    match d {
        1 => u,
        2 => u.sqrt(),
        3 => u.cbrt(),
        _ => u.powf(1.0 / d as f64),
    }
}

/// Volume of the cap of height `h ∈ [0, 2r]` cut from a d-ball of radius `r`.
///
/// For `h ≤ r` this is `½ V_d(r) I_x((d+1)/2, ½)` with `x = (2rh - h²)/r²`.
pub fn cap_volume(r: f64, h: f64, d: usize) -> f64 {
    if h <= 0.0 {
        return 0.0;
    }
    if h >= 2.0 * r {
        return ball_volume(r, d);
    }
    if h > r {
        return ball_volume(r, d) - cap_volume(r, 2.0 * r - h, d);
    }
    let x = (h * (2.0 * r - h) / (r * r)).min(1.0);
    let frac = match d {
        1 => 1.0 - (1.0 - x).sqrt(),
        _ => beta_reg(0.5 * (d as f64 + 1.0), 0.5, x),
    };
    0.5 * ball_volume(r, d) * frac
}

/// Unchecked volume of `B(0, r1) ∩ B(x, r2)` with `|x| = rho`.
pub fn lens_volume(r1: f64, r2: f64, rho: f64, d: usize) -> f64 {
    if rho >= r1 + r2 {
        return 0.0;
    }
    if rho <= (r1 - r2).abs() {
        return ball_volume(r1.min(r2), d);
    }
    // cap heights, factored to avoid cancellation near tangency
    let h1 = (r1 + r2 - rho) * (r2 + rho - r1) / (2.0 * rho);
    let h2 = (r1 + r2 - rho) * (r1 + rho - r2) / (2.0 * rho);
    cap_volume(r1, h1, d) + cap_volume(r2, h2, d)
}

/// Lebesgue volume of `B(0, r1) ∩ B(x, r2)` where `|x| = rho`.
pub fn intersection_volume(r1: f64, r2: f64, rho: f64, d: usize) -> Result<f64> {
    if !(r1 > 0.0 && r2 > 0.0) || !(rho >= 0.0) || d == 0 {
        return Err(GmspError::Domain(format!(
            "intersection_volume needs r1, r2 > 0, rho >= 0, d >= 1 (got {r1}, {r2}, {rho}, {d})"
        )));
    }
    Ok(lens_volume(r1, r2, rho, d))
}
