//! Small sample-statistics helpers shared by the experiments.

use nalgebra::DMatrix;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Unbiased covariance of the rows of an `m × q` matrix.
pub fn covariance(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, q) = rows.shape();
    let means: Vec<f64> = (0..q).map(|j| rows.column(j).mean()).collect();
    DMatrix::from_fn(q, q, |j, k| {
        (0..m).map(|i| (rows[(i, j)] - means[j]) * (rows[(i, k)] - means[k])).sum::<f64>() / (m as f64 - 1.0)
    })
}

/// Kolmogorov–Smirnov distance between the empirical law of `x` and Exp(1).
pub fn ks_distance_exp1(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &z)| {
            let f = -(-z.max(0.0)).exp_m1();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Jarque–Bera statistic and its asymptotic χ²₂ p-value.
pub fn jarque_bera(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = mean(x);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let c = v - m;
        m2 += c * c / n;
        m3 += c * c * c / n;
        m4 += c * c * c * c / n;
    }
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2) - 3.0;
    let jb = n / 6.0 * (skew * skew + kurt * kurt / 4.0);
    (jb, (-jb / 2.0).exp())
}

/// Frobenius norm of `a − b` relative to that of `b`.
pub fn frobenius_relative(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_moments() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&x), 2.5);
        assert!((variance(&x) - 5.0 / 3.0).abs() < 1e-15);
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let c = covariance(&m);
        assert!((c[(0, 0)] - 1.0).abs() < 1e-15 && (c[(0, 1)] - 2.0).abs() < 1e-15 && (c[(1, 1)] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 1000;
        let q: Vec<f64> = (0..n).map(|i| -(1.0 - (i as f64 + 0.5) / n as f64).ln()).collect();
        assert!((ks_distance_exp1(&q) - 0.5 / n as f64).abs() < 1e-12);
        assert!(ks_distance_exp1(&[0.0, 0.0]) > 0.99);
    }

    #[test]
    fn jarque_bera_flags_skew() {
        let sym: Vec<f64> = (0..1000).map(|i| ((i as f64 + 0.5) / 1000.0 - 0.5) * 2.0).collect();
        let skewed: Vec<f64> = sym.iter().map(|v| (3.0 * v).exp()).collect();
        assert!(jarque_bera(&skewed).1 < 1e-6);
        // uniform is platykurtic, so even symmetric data fails at this size
        assert!(jarque_bera(&sym).0 > 50.0);
    }
}
