//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so the verdict lines always reach stdout.
//! Set `GMSP_ACCEPT` to a comma-separated list of criterion numbers to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use gmsp::asymvar::{kernel_k, variance_constant};
use gmsp::ballint::{z_table, BallQuadrature, DEFAULT_NODES};
use gmsp::empproc::{covariance_table, score_covariance_check, simulate_zn, ProcessConfig, RawWeight, ScoreCheckConfig};
use gmsp::estimator::{model_check, EstimatorConfig, ModelCheckConfig};
use gmsp::experiments::{lambda_scan, normality_study, LambdaScanConfig, NormalityConfig, PerSample};
use gmsp::geometry::{lens_volume, nn_table, nn_table_brute};
use gmsp::qmc::Halton;
use gmsp::quad::{integrate, integrate_to_infinity, Tolerance};
use gmsp::rng::stream_rng;
use gmsp::stats::ks_distance_exp1;
use gmsp::{DivergenceSpec, ModelFamily, ParamVector, PointCloud};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{Continuous, Normal as NormalDist};

const VARIANCE_CONSTANTS: [(&str, f64); 6] =
    [("h1", 1.8434), ("h2", 2.2130), ("h5:0.1", 1.9265), ("h5:0.5", 2.3421), ("h5:0.9", 2.7493), ("h5:2", 3.6546)];
const CONSTANTS_REL_TOL: f64 = 0.01;
const LAMBDA_H1_SQRT_N10: f64 = 0.3910;
const LAMBDA_ABS_TOL: f64 = 0.10;
const KS_LIMIT: f64 = 0.05;
const FROBENIUS_LIMIT: f64 = 0.15;
const KERNEL_Z_LIMIT: f64 = 3.0;
const VARIANCE_RATIO_TOL: f64 = 0.20;
const NORMALITY_P_MIN: f64 = 0.01;
const TRUE_MODEL_FLAG_MAX: f64 = 0.05;
const MISSPECIFIED_FLAG_MIN: f64 = 0.80;

type Check = fn() -> Result<(), String>;
type Criterion = (usize, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn parse_h(s: &str) -> DivergenceSpec {
    s.parse().unwrap()
}

fn mvnormal_theta0() -> ParamVector {
    ParamVector(vec![1.0, 2.0, 1.0, 1.0, 0.5])
}

fn variance_constants() -> Verdict {
    let mut best: Option<(usize, f64)> = None;
    let mut summary = Vec::new();
    for d in 1..=3 {
        let mut worst = 0.0f64;
        for (h, published) in VARIANCE_CONSTANTS {
            let r = variance_constant(&parse_h(h), d).unwrap();
            worst = worst.max((r.ratio - published).abs() / published);
        }
        summary.push(format!("d={d} max rel {worst:.2e}"));
        if best.is_none_or(|(_, w)| worst < w) {
            best = Some((d, worst));
        }
    }
    let (d, worst) = best.unwrap();
    verdict(worst < CONSTANTS_REL_TOL, format!("matching d={d} ({})", summary.join(", ")))
}

fn lambda_band() -> Verdict {
    let rows = lambda_scan(&LambdaScanConfig {
        h_list: vec![DivergenceSpec::h1()],
        sqrt_n: vec![10, 30],
        m: 2000,
        repetitions: 5,
        component: 2,
        per_sample: PerSample::All,
        ..Default::default()
    })
    .unwrap();
    // the one-observation-per-sample variant has the same mean but far larger
    // spread; it is reported for reference and not judged
    let single = lambda_scan(&LambdaScanConfig {
        h_list: vec![DivergenceSpec::h1()],
        sqrt_n: vec![10],
        per_sample: PerSample::One,
        ..Default::default()
    })
    .unwrap();
    let at10 = rows.iter().find(|r| r.sqrt_n == 10).unwrap();
    let at30 = rows.iter().find(|r| r.sqrt_n == 30).unwrap();
    let in_band = (at10.estimate - LAMBDA_H1_SQRT_N10).abs() <= LAMBDA_ABS_TOL;
    let decreasing = at30.estimate < at10.estimate;
    verdict(
        in_band && decreasing,
        format!(
            "sigma1 h1: sqrt(n)=10 {:.4} ± {:.4} (target {LAMBDA_H1_SQRT_N10} ± {LAMBDA_ABS_TOL}), sqrt(n)=30 {:.4} ± {:.4}; one observation per sample at sqrt(n)=10: {:.4} ± {:.4}",
            at10.estimate, at10.std_err, at30.estimate, at30.std_err, single[0].estimate, single[0].std_err
        ),
    )
}

fn exp_limit() -> Verdict {
    let family = ModelFamily::mvnormal(2).unwrap();
    let theta = mvnormal_theta0();
    let cloud = family.sample(&theta, 2000, 31).unwrap();
    let nn = nn_table(&cloud).unwrap();
    let quad = BallQuadrature::new(2, DEFAULT_NODES, 0).unwrap();
    let table = z_table(&family, &theta, &cloud, &nn, &quad, false, false).unwrap();
    let ks = ks_distance_exp1(&table.z);
    verdict(ks < KS_LIMIT, format!("n=2000 d=2 KS distance {ks:.4} (limit {KS_LIMIT})"))
}

fn score_covariance() -> Verdict {
    let family = ModelFamily::mvnormal(2).unwrap();
    let config = ScoreCheckConfig { n: 1000, replicates: 1000, seed: 41, ..Default::default() };
    let r = score_covariance_check(&family, &mvnormal_theta0(), &DivergenceSpec::h1(), &config).unwrap();
    verdict(
        r.frobenius_relative < FROBENIUS_LIMIT,
        format!("n=1000 M=1000 Frobenius-relative error {:.4} (limit {FROBENIUS_LIMIT})", r.frobenius_relative),
    )
}

fn kernel_covariance() -> Verdict {
    let family = ModelFamily::mvnormal(2).unwrap();
    let config = ProcessConfig {
        n: 1000,
        replicates: 2000,
        t_grid: vec![0.5, 1.0, 2.0],
        weight: RawWeight::Coordinate { axis: 0 },
        seed: 51,
        ..Default::default()
    };
    let run = simulate_zn(&family, &ParamVector(vec![0.0, 0.0, 1.0, 1.0, 0.5]), &config).unwrap();
    let rows = covariance_table(&run);
    let pairs: Vec<_> = rows.iter().filter(|r| r.s > 0.0 && r.t > 0.0).collect();
    let worst = pairs.iter().map(|r| r.z_score.abs()).fold(0.0, f64::max);
    verdict(
        pairs.len() == 6 && worst < KERNEL_Z_LIMIT,
        format!("{} grid pairs, max |z| {worst:.2} (limit {KERNEL_Z_LIMIT}), tau2 {:.4}", pairs.len(), run.weight.tau2),
    )
}

fn estimator_normality() -> Verdict {
    let s = normality_study(&NormalityConfig { seed: 61, ..Default::default() }).unwrap();
    let c = &s.components[0];
    let ratio_ok = (c.variance_ratio - 1.0).abs() <= VARIANCE_RATIO_TOL;
    let normal_ok = c.p_value > NORMALITY_P_MIN;
    verdict(
        ratio_ok && normal_ok && s.failed == 0,
        format!(
            "variance ratio {:.3} (constant {:.4}), Jarque-Bera p {:.3}, failed fits {}",
            c.variance_ratio, s.constant, c.p_value, s.failed
        ),
    )
}

fn fd_derivatives() -> Result<(), String> {
    let cases = [
        (ModelFamily::mvnormal(2).unwrap(), vec![0.3, -0.2, 1.2, 0.8, 0.4], vec![0.5, 0.1]),
        (ModelFamily::mixture(2, 1).unwrap(), vec![0.3, -1.0, 1.5, 0.7, 1.3], vec![0.2]),
        (ModelFamily::UnivariateNormal, vec![0.5, 1.5], vec![1.1]),
    ];
    for (family, theta, x) in cases {
        let theta = ParamVector(theta);
        let g = family.grad_density(&theta, &x).unwrap();
        let hess = family.hess_density(&theta, &x).unwrap();
        for j in 0..theta.0.len() {
            let eps = 1e-5 * theta.0[j].abs().max(1.0);
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up.0[j] += eps;
            dn.0[j] -= eps;
            let fd = (family.density(&up, &x).unwrap() - family.density(&dn, &x).unwrap()) / (2.0 * eps);
            if (fd - g[j]).abs() > 1e-5 * g[j].abs().max(1e-3) {
                return Err(format!("{family} gradient component {j}: {fd} vs {}", g[j]));
            }
            let gu = family.grad_density(&up, &x).unwrap();
            let gd = family.grad_density(&dn, &x).unwrap();
            for k in 0..theta.0.len() {
                let fd = (gu[k] - gd[k]) / (2.0 * eps);
                if (fd - hess[(j, k)]).abs() > 1e-5 * hess[(j, k)].abs().max(1e-3) {
                    return Err(format!("{family} Hessian ({j},{k}): {fd} vs {}", hess[(j, k)]));
                }
            }
        }
    }
    Ok(())
}

fn lens_oracle() -> Result<(), String> {
    let mut rng = stream_rng(71, 0);
    for d in 2..=4usize {
        for _ in 0..4 {
            let r1: f64 = rng.random_range(0.3..2.0);
            let r2: f64 = rng.random_range(0.3..2.0);
            let rho: f64 = rng.random_range(0.05..0.9) * (r1 + r2);
            let exact = lens_volume(r1, r2, rho, d);
            if exact <= 0.0 {
                continue;
            }
            let lo = (-r1).max(rho - r2);
            let hi = r1.min(rho + r2);
            let w = r1.min(r2);
            let halton = Halton::with_shift(d, (0..d).map(|_| rng.random::<f64>()).collect());
            let mut u = vec![0.0; d];
            let npts = 1_000_000u64;
            let mut inside = 0u64;
            for i in 1..=npts {
                halton.point_into(i, &mut u);
                let x0 = lo + (hi - lo) * u[0];
                let t2: f64 = u[1..].iter().map(|c| (w * (2.0 * c - 1.0)).powi(2)).sum();
                if x0 * x0 + t2 <= r1 * r1 && (x0 - rho).powi(2) + t2 <= r2 * r2 {
                    inside += 1;
                }
            }
            let est = (hi - lo) * (2.0 * w).powi(d as i32 - 1) * inside as f64 / npts as f64;
            if (est - exact).abs() > 2e-3 * exact {
                return Err(format!("d={d} r1={r1:.3} r2={r2:.3} rho={rho:.3}: qmc {est} vs {exact}"));
            }
        }
    }
    Ok(())
}

fn nn_equality() -> Result<(), String> {
    let mut rng = stream_rng(72, 0);
    for d in [1usize, 2, 3] {
        let data: Vec<f64> = (0..3000 * d).map(|_| rng.random::<f64>()).collect();
        let cloud = PointCloud::new(data, d).unwrap();
        let fast = nn_table(&cloud).unwrap();
        let slow = nn_table_brute(&cloud);
        if fast.radii != slow.radii {
            return Err(format!("d={d}: nearest-neighbour radii differ"));
        }
    }
    Ok(())
}

fn cdf_oracle() -> Result<(), String> {
    let family = ModelFamily::UnivariateNormal;
    let quad = BallQuadrature::new(1, DEFAULT_NODES, 0).unwrap();
    let mut rng = stream_rng(73, 0);
    for _ in 0..200 {
        let mu: f64 = rng.random_range(-2.0..2.0);
        let sigma: f64 = rng.random_range(0.3..3.0);
        let c: f64 = rng.random_range(-4.0..4.0);
        let r: f64 = 10f64.powf(rng.random_range(-4.0..0.0));
        let theta = ParamVector(vec![mu, sigma]);
        let p = gmsp::ballint::prob_ball(&family, &theta, &[c], r, &quad).unwrap();
        let dist = NormalDist::new(mu, sigma).unwrap();
        // adaptive quadrature keeps full relative accuracy in the far tails
        let want = integrate(|x| dist.pdf(x), c - r, c + r, Tolerance::new(0.0, 1e-13)).value;
        let by_nodes = quad.integrate(&[c], r, |x| family.density(&theta, x).unwrap());
        for (name, got) in [("probability", p), ("node rule", by_nodes)] {
            if (got - want).abs() > 1e-6 * want {
                return Err(format!("{name}: N({mu:.3},{sigma:.3}) ball({c:.3},{r:.2e}) {got} vs {want}"));
            }
        }
    }
    Ok(())
}

fn h_identities() -> Result<(), String> {
    let (h3, h4) = (parse_h("h3"), parse_h("h4"));
    let (h5_half, h5_two) = (parse_h("h5:0.5"), parse_h("h5:2"));
    for k in 0..=400 {
        let x = 10f64.powf(-3.0 + 6.0 * k as f64 / 400.0);
        let a = (h3.h(x), 2.0 * h5_half.h(x));
        let b = (h4.h(x), h5_two.h(x));
        for (l, r) in [a, b] {
            if (l - r).abs() > 4.0 * f64::EPSILON * (1.0 + x * x) {
                return Err(format!("x={x}: {l} vs {r}"));
            }
        }
    }
    Ok(())
}

fn b_h_quadrature() -> Result<(), String> {
    for h in ["h1", "h2", "h3", "h4", "h5:0.1", "h5:0.5", "h5:0.9", "h5:2", "h5:1.5"] {
        let spec = parse_h(h);
        let r = integrate_to_infinity(|z| spec.d2h(z) * z * z * (-z).exp(), 0.0, Tolerance::new(1e-14, 1e-12));
        if (r.value - spec.b_h()).abs() > 1e-8 * spec.b_h().abs() {
            return Err(format!("{h}: b_h quadrature {} vs {}", r.value, spec.b_h()));
        }
    }
    Ok(())
}

fn gram_psd() -> Result<(), String> {
    let pts: Vec<f64> = (0..12).map(|i| 0.05 * 1.5f64.powi(i)).collect();
    for d in 1..=3 {
        let g = DMatrix::from_fn(pts.len(), pts.len(), |i, j| kernel_k(pts[i], pts[j], d));
        let min = SymmetricEigen::new(g).eigenvalues.min();
        if min < -1e-10 {
            return Err(format!("d={d}: Gram matrix eigenvalue {min}"));
        }
    }
    Ok(())
}

fn replay_determinism() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().to_str().unwrap().to_string();
    let run = |args: &[&str]| gmsp::cli::run(["gmsp", "--out-dir", &out].iter().chain(args).map(|s| s.to_string()));
    if run(&["--seed", "3", "sample", "--theta", "0.5,1.5", "--n", "200"]) != 0 {
        return Err("sample failed".into());
    }
    let data = dir.path().join("sample.csv");
    if run(&["--seed", "3", "estimate", data.to_str().unwrap(), "--h", "h5:0.5"]) != 0 {
        return Err("estimate failed".into());
    }
    let manifest = dir.path().join("estimate.manifest.json");
    let into = dir.path().join("again");
    let code = gmsp::cli::run(["gmsp", "replay", manifest.to_str().unwrap(), "--into", into.to_str().unwrap()].map(String::from));
    if code != 0 {
        return Err(format!("replay exited with {code}"));
    }
    Ok(())
}

fn property_suites() -> Verdict {
    let checks: [(&str, Check); 8] = [
        ("finite differences", fd_derivatives),
        ("lens QMC oracle", lens_oracle),
        ("nn brute force", nn_equality),
        ("1-d CDF oracle", cdf_oracle),
        ("h identities", h_identities),
        ("b_h quadrature", b_h_quadrature),
        ("kernel Gram PSD", gram_psd),
        ("manifest replay", replay_determinism),
    ];
    let mut failures = Vec::new();
    for (name, f) in checks {
        if let Err(e) = f() {
            failures.push(format!("{name}: {e}"));
        }
    }
    let n = checks.len();
    if failures.is_empty() {
        verdict(true, format!("{n}/{n} checks hold"))
    } else {
        verdict(false, failures.join("; "))
    }
}

fn flag_rate(data: impl Fn(u64) -> PointCloud, replicates: u64) -> f64 {
    let config = ModelCheckConfig {
        estimator: EstimatorConfig { diagnostics: vec![], ..Default::default() },
        ..Default::default()
    };
    let flagged = (0..replicates)
        .filter(|&r| {
            let cloud = data(r);
            let cfg = ModelCheckConfig { estimator: EstimatorConfig { seed: r, ..config.estimator.clone() }, ..config.clone() };
            model_check(&ModelFamily::UnivariateNormal, &cloud, &[DivergenceSpec::h1()], &cfg).unwrap()["h1"].flagged
        })
        .count();
    flagged as f64 / replicates as f64
}

fn model_check_calibration() -> Verdict {
    let reps = 100;
    let truth = flag_rate(
        |r| ModelFamily::UnivariateNormal.sample(&ParamVector(vec![0.0, 1.0]), 1000, 8000 + r).unwrap(),
        reps,
    );
    let mixed = flag_rate(
        |r| {
            let mut rng = stream_rng(9000 + r, 0);
            let unit = Normal::new(0.0, 1.0).unwrap();
            let data: Vec<f64> =
                (0..1000).map(|_| unit.sample(&mut rng) + if rng.random::<bool>() { 3.0 } else { -3.0 }).collect();
            PointCloud::new(data, 1).unwrap()
        },
        reps,
    );
    verdict(
        truth <= TRUE_MODEL_FLAG_MAX && mixed >= MISSPECIFIED_FLAG_MIN,
        format!("flag rate true model {truth:.2} (max {TRUE_MODEL_FLAG_MAX}), mixture data {mixed:.2} (min {MISSPECIFIED_FLAG_MIN})"),
    )
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("GMSP_ACCEPT").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [Criterion; 8] = [
        (1, "variance constants table", variance_constants),
        (2, "score second moment scan", lambda_band),
        (3, "Exp(1) limit of z", exp_limit),
        (4, "score covariance", score_covariance),
        (5, "kernel covariance", kernel_covariance),
        (6, "estimator normality", estimator_normality),
        (7, "property suites", property_suites),
        (8, "model check calibration", model_check_calibration),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {id} {} {name}: {} [{secs:.1}s]", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criterion/criteria failed");
        std::process::exit(1);
    }
}
