//! Nelder–Mead simplex minimization with dimension-adaptive coefficients.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Simplex size (∞-norm around the best vertex) below which we stop.
    pub xtol: f64,
    /// Relative spread of function values below which we stop.
    pub ftol: f64,
    /// Restarts from the converged point with a fresh simplex.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_evals: 2000, xtol: 1e-9, ftol: 1e-13, restarts: 2 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimize `f` from `x0` with initial simplex steps `steps`. Non-finite
/// values are treated as `+∞`, so infeasible points are simply rejected.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], steps: &[f64], opts: NelderMeadOptions) -> Minimum {
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };
    let mut x = x0.to_vec();
    let mut value = eval(&x);
    let mut evals = 1;
    let mut converged = false;
    for round in 0..=opts.restarts {
        let budget = opts.max_evals.saturating_sub(evals);
        if budget == 0 {
            break;
        }
        let scale = if round == 0 { 1.0 } else { 0.1 };
        let run = simplex_run(&mut eval, &x, value, steps, scale, budget, opts);
        evals += run.evals;
        let improved = value - run.value > opts.ftol * (1.0 + value.abs());
        let moved = x.iter().zip(&run.x).any(|(a, b)| (a - b).abs() > opts.xtol);
        if run.value <= value {
            x = run.x;
            value = run.value;
        }
        converged = run.converged;
        if round > 0 && !improved && !moved {
            break;
        }
    }
    Minimum { x, value, evals, converged }
}

fn simplex_run<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x0: &[f64],
    f0: f64,
    steps: &[f64],
    scale: f64,
    budget: usize,
    opts: NelderMeadOptions,
) -> Minimum {
    let n = x0.len();
    let nf = n as f64;
    // adaptive coefficients for higher dimensions
    let (alpha, gamma, rho, sigma) = if n <= 2 {
        (1.0, 2.0, 0.5, 0.5)
    } else {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf)
    };
    let mut evals = 0;
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    let mut vals = vec![f0];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += scale * steps[i];
        vals.push(f(&p));
        evals += 1;
        pts.push(p);
    }
    let mut order: Vec<usize> = (0..=n).collect();
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];
    let mut converged = false;
    while evals < budget {
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        let best = order[0];
        let worst = order[n];
        let second = order[n - 1];
        let size = pts
            .iter()
            .flat_map(|p| p.iter().zip(&pts[best]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let spread = vals[worst] - vals[best];
        if size <= opts.xtol && (spread <= opts.ftol * (1.0 + vals[best].abs()) || !spread.is_finite()) {
            converged = true;
            break;
        }
        if size <= opts.xtol * 1e-3 {
            // collapsed onto a point without flattening; nothing left to gain
            converged = vals[best].is_finite();
            break;
        }
        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &k in &order[..n] {
            for (c, v) in centroid.iter_mut().zip(&pts[k]) {
                *c += v / nf;
            }
        }
        for i in 0..n {
            trial[i] = centroid[i] + alpha * (centroid[i] - pts[worst][i]);
        }
        let fr = f(&trial);
        evals += 1;
        if fr < vals[best] {
            for i in 0..n {
                trial2[i] = centroid[i] + gamma * (trial[i] - centroid[i]);
            }
            let fe = f(&trial2);
            evals += 1;
            if fe < fr {
                pts[worst].copy_from_slice(&trial2);
                vals[worst] = fe;
            } else {
                pts[worst].copy_from_slice(&trial);
                vals[worst] = fr;
            }
            continue;
        }
        if fr < vals[second] {
            pts[worst].copy_from_slice(&trial);
            vals[worst] = fr;
            continue;
        }
        let outside = fr < vals[worst];
        for i in 0..n {
            trial2[i] = if outside {
                centroid[i] + rho * (trial[i] - centroid[i])
            } else {
                centroid[i] + rho * (pts[worst][i] - centroid[i])
            };
        }
        let fc = f(&trial2);
        evals += 1;
        if fc < if outside { fr } else { vals[worst] } {
            pts[worst].copy_from_slice(&trial2);
            vals[worst] = fc;
            continue;
        }
        let anchor = pts[best].clone();
        for &k in &order[1..] {
            for i in 0..n {
                pts[k][i] = anchor[i] + sigma * (pts[k][i] - anchor[i]);
            }
            vals[k] = f(&pts[k]);
            evals += 1;
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b))).unwrap();
    Minimum { x: pts[best].clone(), value: vals[best], evals, converged }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let rb = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(rb, &[-1.2, 1.0], &[0.5, 0.5], NelderMeadOptions { max_evals: 5000, ..Default::default() });
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{:?}", m.x);
    }

    #[test]
    fn minimizes_a_quadratic_in_six_dimensions() {
        let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * (v - 0.5 * i as f64).powi(2)).sum();
        let m = nelder_mead(f, &[0.0; 6], &[1.0; 6], NelderMeadOptions { max_evals: 20000, ..Default::default() });
        for (i, v) in m.x.iter().enumerate() {
            assert!((v - 0.5 * i as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_infeasible_points() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.1).powi(2) };
        let m = nelder_mead(f, &[1.0], &[2.0], NelderMeadOptions::default());
        assert!((m.x[0] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn honours_the_budget() {
        let mut count = 0;
        let m = nelder_mead(
            |x: &[f64]| {
                count += 1;
                x[0].sin() + x[1].cos()
            },
            &[0.0, 0.0],
            &[1.0, 1.0],
            NelderMeadOptions { max_evals: 30, ..Default::default() },
        );
        assert!(m.evals <= 32 && count == m.evals);
    }
}
