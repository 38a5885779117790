//! Strictly concave information functions `h: (0, ∞) → (-∞, 0]` with maximum
//! `h(1) = 0`, and the scalar functionals built from them.
//!
//! For every member `q(t) = h'(t) t` is the function whose Stieltjes measure
//! enters the asymptotic variance, and `b_h = E[h''(Z) Z²]` with `Z ~ Exp(1)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use libm::tgamma as gamma;

use crate::error::{GmspError, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DivergenceKind {
    /// `ln x - x + 1`
    H1,
    /// `(1 - x) ln x`
    H2,
    /// `-(1 - √x)²`
    H3,
    /// `-(1 - x)²`
    H4,
    /// `sgn(1-α)(x^α - αx + α - 1)` with `α ∈ (0,1) ∪ (1,2]`
    H5 { alpha: f64 },
}

/// One member of the h-family. Construct through [`DivergenceSpec::new`] or
/// by parsing `"h1"`, `"h2"`, `"h3"`, `"h4"`, `"h5:<alpha>"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceSpec {
    kind: DivergenceKind,
}

impl DivergenceSpec {
    pub fn new(kind: DivergenceKind) -> Result<Self> {
        if let DivergenceKind::H5 { alpha } = kind {
            if !(alpha > 0.0 && alpha <= 2.0 && alpha != 1.0) {
                return Err(GmspError::InvalidDivergence(format!(
                    "h5 requires alpha in (0,1)U(1,2], got {alpha}"
                )));
            }
        }
        Ok(Self { kind })
    }

    pub fn h1() -> Self {
        Self { kind: DivergenceKind::H1 }
    }

    pub fn h5(alpha: f64) -> Result<Self> {
        Self::new(DivergenceKind::H5 { alpha })
    }

    pub fn kind(&self) -> DivergenceKind {
        self.kind
    }

    pub fn alpha(&self) -> Option<f64> {
        match self.kind {
            DivergenceKind::H5 { alpha } => Some(alpha),
            _ => None,
        }
    }

    /// `h(x)`; NaN outside `(0, ∞)`. See [`Self::h_eval`] for the checked form.
    #[inline]
    pub fn h(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NAN;
        }
        match self.kind {
            DivergenceKind::H1 => x.ln() - x + 1.0,
            DivergenceKind::H2 => (1.0 - x) * x.ln(),
            DivergenceKind::H3 => {
                let a = 1.0 - x.sqrt();
                -a * a
            }
            DivergenceKind::H4 => {
                let a = 1.0 - x;
                -a * a
            }
            DivergenceKind::H5 { alpha } => sgn(alpha) * (x.powf(alpha) - alpha * x + alpha - 1.0),
        }
    }

    pub fn h_eval(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(GmspError::Domain(format!("h is defined on (0, inf), got {x}")));
        }
        Ok(self.h(x))
    }

    #[inline]
    pub fn dh(&self, x: f64) -> f64 {
        match self.kind {
            DivergenceKind::H1 => 1.0 / x - 1.0,
            DivergenceKind::H2 => -x.ln() + (1.0 - x) / x,
            DivergenceKind::H3 => 1.0 / x.sqrt() - 1.0,
            DivergenceKind::H4 => 2.0 * (1.0 - x),
            DivergenceKind::H5 { alpha } => sgn(alpha) * alpha * (x.powf(alpha - 1.0) - 1.0),
        }
    }

    #[inline]
    pub fn d2h(&self, x: f64) -> f64 {
        match self.kind {
            DivergenceKind::H1 => -1.0 / (x * x),
            DivergenceKind::H2 => -1.0 / x - 1.0 / (x * x),
            DivergenceKind::H3 => -0.5 / (x * x.sqrt()),
            DivergenceKind::H4 => -2.0,
            DivergenceKind::H5 { alpha } => sgn(alpha) * alpha * (alpha - 1.0) * x.powf(alpha - 2.0),
        }
    }

    /// `q(t) = h'(t) t`, continuous on `[0, ∞)` with `q(0)` the right limit.
    /// Also written `v(z)` where it multiplies the score vector.
    #[inline]
    pub fn q(&self, t: f64) -> f64 {
        if t == 0.0 {
            return self.q0();
        }
        match self.kind {
            DivergenceKind::H1 => 1.0 - t,
            DivergenceKind::H2 => -t * t.ln() + 1.0 - t,
            DivergenceKind::H3 => t.sqrt() - t,
            DivergenceKind::H4 => 2.0 * (1.0 - t) * t,
            DivergenceKind::H5 { alpha } => sgn(alpha) * alpha * (t.powf(alpha) - t),
        }
    }

    pub fn q_eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(GmspError::Domain(format!("q is defined on [0, inf), got {t}")));
        }
        Ok(self.q(t))
    }

    pub fn q0(&self) -> f64 {
        match self.kind {
            DivergenceKind::H1 | DivergenceKind::H2 => 1.0,
            DivergenceKind::H3 | DivergenceKind::H4 | DivergenceKind::H5 { .. } => 0.0,
        }
    }

    /// `q'(t)` for `t > 0`; may diverge at `t → 0⁺` (H2, H3, H5 with α < 1).
    #[inline]
    pub fn dq(&self, t: f64) -> f64 {
        match self.kind {
            DivergenceKind::H1 => -1.0,
            DivergenceKind::H2 => -t.ln() - 2.0,
            DivergenceKind::H3 => 0.5 / t.sqrt() - 1.0,
            DivergenceKind::H4 => 2.0 - 4.0 * t,
            DivergenceKind::H5 { alpha } => sgn(alpha) * alpha * (alpha * t.powf(alpha - 1.0) - 1.0),
        }
    }

    /// Exponent `m` of the grading map `t = u^m` that makes `q'(t) dt` bounded near 0.
    pub fn grading_exponent(&self) -> f64 {
        match self.kind {
            DivergenceKind::H1 | DivergenceKind::H4 => 1.0,
            DivergenceKind::H2 | DivergenceKind::H3 => 2.0,
            DivergenceKind::H5 { alpha } if alpha < 1.0 => 1.0 / alpha,
            DivergenceKind::H5 { .. } => 1.0,
        }
    }

    /// `E[h''(Z) Z²]`, `Z ~ Exp(1)`.
    pub fn b_h(&self) -> f64 {
        match self.kind {
            DivergenceKind::H1 => -1.0,
            DivergenceKind::H2 => -2.0,
            // -1/2 E[Z^{1/2}] = -Γ(3/2)/2
            DivergenceKind::H3 => -0.25 * std::f64::consts::PI.sqrt(),
            DivergenceKind::H4 => -4.0,
            DivergenceKind::H5 { alpha } => sgn(alpha) * alpha * (alpha - 1.0) * gamma(alpha + 1.0),
        }
    }

    /// `E[h(Z)]`, `Z ~ Exp(1)`: the level `S_n(θ₀)` settles at under a correct model.
    pub fn expected_h_exp(&self) -> f64 {
        match self.kind {
            DivergenceKind::H1 => -EULER_GAMMA,
            DivergenceKind::H2 => -1.0,
            DivergenceKind::H3 => 2.0 * (0.5 * std::f64::consts::PI.sqrt() - 1.0),
            DivergenceKind::H4 => -1.0,
            DivergenceKind::H5 { alpha } => sgn(alpha) * (gamma(alpha + 1.0) - 1.0),
        }
    }

    pub fn id(&self) -> String {
        self.to_string()
    }
}

#[inline]
fn sgn(alpha: f64) -> f64 {
    if alpha < 1.0 {
        1.0
    } else {
        -1.0
    }
}

impl fmt::Display for DivergenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            DivergenceKind::H1 => write!(f, "h1"),
            DivergenceKind::H2 => write!(f, "h2"),
            DivergenceKind::H3 => write!(f, "h3"),
            DivergenceKind::H4 => write!(f, "h4"),
            DivergenceKind::H5 { alpha } => write!(f, "h5:{alpha}"),
        }
    }
}

impl FromStr for DivergenceSpec {
    type Err = GmspError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let kind = match s.as_str() {
            "h1" => DivergenceKind::H1,
            "h2" => DivergenceKind::H2,
            "h3" => DivergenceKind::H3,
            "h4" => DivergenceKind::H4,
            other => {
                let alpha = other
                    .strip_prefix("h5:")
                    .and_then(|a| a.parse::<f64>().ok())
                    .ok_or_else(|| GmspError::InvalidDivergence(s.clone()))?;
                DivergenceKind::H5 { alpha }
            }
        };
        Self::new(kind)
    }
}

impl Serialize for DivergenceSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DivergenceSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{integrate_to_infinity, Tolerance};

    fn all_specs() -> Vec<DivergenceSpec> {
        ["h1", "h2", "h3", "h4", "h5:0.1", "h5:0.5", "h5:0.9", "h5:1.5", "h5:2"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect()
    }

    fn log_grid() -> Vec<f64> {
        (0..=180).map(|k| 10f64.powf(-6.0 + 9.0 * k as f64 / 180.0)).collect()
    }

    #[test]
    fn examples() {
        let h1 = DivergenceSpec::h1();
        assert_eq!(h1.h_eval(1.0).unwrap(), 0.0);
        let h5 = DivergenceSpec::h5(2.0).unwrap();
        assert!((h5.h(3.0) + 4.0).abs() < 1e-14);
        let h3: DivergenceSpec = "h3".parse().unwrap();
        assert!((h3.h(4.0) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn q_examples() {
        let h1 = DivergenceSpec::h1();
        assert_eq!(h1.q0(), 1.0);
        for t in [0.0, 0.3, 2.0, 7.5] {
            assert!((h1.q(t) - (1.0 - t)).abs() < 1e-15);
        }
        let h2: DivergenceSpec = "h2".parse().unwrap();
        assert_eq!(h2.q_eval(0.0).unwrap(), 1.0);
        assert!((h2.q(1e-12) - 1.0).abs() < 1e-9);
        assert_eq!(DivergenceSpec::h5(0.5).unwrap().q(0.0), 0.0);
        assert!(h1.q_eval(-1.0).is_err());
    }

    #[test]
    fn domain_errors() {
        let h = DivergenceSpec::h1();
        assert!(matches!(h.h_eval(0.0), Err(GmspError::Domain(_))));
        assert!(h.h_eval(-2.0).is_err());
        for bad in ["h5:1", "h5:0", "h5:2.5", "h5:-0.3", "h6", "h5:x"] {
            assert!(bad.parse::<DivergenceSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn parse_roundtrip() {
        for spec in all_specs() {
            let back: DivergenceSpec = spec.to_string().parse().unwrap();
            assert_eq!(back, spec);
        }
    }

    #[test]
    fn nonpositive_with_unique_max() {
        for spec in all_specs() {
            for x in log_grid() {
                let v = spec.h(x);
                if (x - 1.0).abs() < 1e-12 {
                    assert!(v.abs() < 1e-12);
                } else {
                    assert!(v < 0.0, "{spec} at {x}: {v}");
                }
            }
            assert!(spec.h(1.0).abs() < 1e-12);
            assert!(spec.dh(1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for spec in all_specs() {
            for k in 0..=60 {
                let x = 10f64.powf(-2.0 + 4.0 * k as f64 / 60.0);
                let eps = 1e-4 * x;
                let d1 = (spec.h(x + eps) - spec.h(x - eps)) / (2.0 * eps);
                let dd1 = (spec.dh(x + eps) - spec.dh(x - eps)) / (2.0 * eps);
                let a1 = spec.dh(x);
                let a2 = spec.d2h(x);
                let scale1 = a1.abs().max(1e-2 * spec.d2h(x).abs() * x);
                assert!((d1 - a1).abs() <= 1e-6 * scale1.max(1e-8), "{spec} h' at {x}: {d1} vs {a1}");
                assert!((dd1 - a2).abs() <= 1e-6 * a2.abs(), "{spec} h'' at {x}: {dd1} vs {a2}");
                assert!(a2 < 0.0);
                let dq_fd = (spec.q(x + eps) - spec.q(x - eps)) / (2.0 * eps);
                assert!((dq_fd - spec.dq(x)).abs() <= 1e-6 * spec.dq(x).abs().max(1.0));
            }
        }
    }

    #[test]
    fn b_h_closed_forms() {
        assert_eq!(DivergenceSpec::h1().b_h(), -1.0);
        assert_eq!("h2".parse::<DivergenceSpec>().unwrap().b_h(), -2.0);
        assert!((DivergenceSpec::h5(2.0).unwrap().b_h() + 4.0).abs() < 1e-12);
        for spec in all_specs() {
            assert!(spec.b_h() < 0.0);
            let r = integrate_to_infinity(
                |z| spec.d2h(z) * z * z * (-z).exp(),
                0.0,
                Tolerance::new(1e-14, 1e-12),
            );
            let rel = (r.value - spec.b_h()).abs() / spec.b_h().abs();
            assert!(rel < 1e-8, "{spec}: quad {} vs closed {}", r.value, spec.b_h());
        }
    }

    #[test]
    fn expected_h_closed_forms() {
        assert!((DivergenceSpec::h1().expected_h_exp() + 0.577_215_66).abs() < 1e-8);
        assert_eq!("h2".parse::<DivergenceSpec>().unwrap().expected_h_exp(), -1.0);
        assert!((DivergenceSpec::h5(2.0).unwrap().expected_h_exp() + 1.0).abs() < 1e-12);
        for spec in all_specs() {
            let r = integrate_to_infinity(|z| spec.h(z) * (-z).exp(), 0.0, Tolerance::new(1e-13, 1e-12));
            assert!((r.value - spec.expected_h_exp()).abs() < 1e-8, "{spec}");
        }
    }

    #[test]
    fn p2_members_reduce_to_h5() {
        let h3: DivergenceSpec = "h3".parse().unwrap();
        let h4: DivergenceSpec = "h4".parse().unwrap();
        let h5a = DivergenceSpec::h5(0.5).unwrap();
        let h5b = DivergenceSpec::h5(2.0).unwrap();
        for x in log_grid() {
            let scale = h3.h(x).abs().max(1.0);
            assert!((h3.h(x) - 2.0 * h5a.h(x)).abs() <= 1e-14 * scale, "h3 at {x}");
            let scale = h4.h(x).abs().max(1.0);
            assert!((h4.h(x) - h5b.h(x)).abs() <= 1e-14 * scale, "h4 at {x}");
        }
        // b_h goes through Γ for h5, so only rounding-level agreement
        assert!((h3.b_h() - 2.0 * h5a.b_h()).abs() < 1e-12);
        assert!((h4.b_h() - h5b.b_h()).abs() < 1e-12);
    }
}
