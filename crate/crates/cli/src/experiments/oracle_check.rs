//! Cross-module property suites: identities, bounds and finite-difference
//! agreement on random probes.

use guidelab::counterexamples::{PerturbedClassifier, Regime, SharpnessClassifier};
use guidelab::estimators::{categorical_kl, ConditionalModel, Kl};
use guidelab::logistic::LogisticModel;
use guidelab::rng::derive_seed;
use guidelab::schedule::{kappa_bound, lambda_of, make_grid, sigma_sq_of, verify_grid};
use guidelab::{Error, LabeledPointCloud, SeededRng};

use super::RunError;
use crate::config::Config;
use crate::report::{Check, CsvTable, Report, Source};
use crate::row;

struct Settings {
    seed: u64,
    probes: usize,
    fd_probes: usize,
    grid_cases: usize,
    identity_tol: f64,
    vp_tol: f64,
    fd_tol: f64,
    fd2_tol: f64,
}

/// Worst value seen by a suite, with the probe count.
#[derive(Default)]
struct Tally {
    probes: usize,
    worst: f64,
}

impl Tally {
    fn see(&mut self, v: f64) {
        self.probes += 1;
        // NaN counts as the worst possible outcome.
        self.worst = if v.is_nan() { f64::INFINITY } else { self.worst.max(v) };
    }
}

fn uniform(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

/// 2–5 points, 2 labels (each present), `d ∈ {1, 2, 3}`, inside the unit-to-2 ball.
fn random_cloud(rng: &mut SeededRng) -> LabeledPointCloud {
    let dim = 1 + (rng.uniform() * 3.0) as usize;
    let n = 2 + (rng.uniform() * 4.0) as usize;
    let scale = uniform(rng, 0.5, 2.0);
    let points: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v = rng.normal_vec(dim);
            let r = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let len = scale * rng.uniform().max(0.05);
            v.into_iter().map(|x| x * len / r).collect()
        })
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|_| usize::from(rng.uniform() < 0.5)).collect();
    labels[0] = 0;
    labels[1] = 1;
    let raw: Vec<f64> = (0..n).map(|_| uniform(rng, 0.1, 1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.into_iter().map(|w| w / total).collect();
    LabeledPointCloud::new(points, labels, weights).expect("random cloud is valid")
}

/// A probe `(t, x)` around the cloud at a random time.
fn probe(cloud: &LabeledPointCloud, rng: &mut SeededRng) -> (f64, Vec<f64>) {
    let t = (uniform(rng, 0.05f64.ln(), 3.0f64.ln())).exp();
    let lambda = lambda_of(t).expect("t > 0");
    let sigma = sigma_sq_of(t).expect("t > 0").sqrt();
    let i = (rng.uniform() * cloud.points().len() as f64) as usize;
    let x = cloud.points()[i].iter().map(|p| lambda * p + 1.5 * sigma * rng.normal()).collect();
    (t, x)
}

fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(scale)
}

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], j: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[j] += h;
    xm[j] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

fn log_label_posterior(cloud: &LabeledPointCloud, t: f64, x: &[f64], y: usize) -> f64 {
    cloud.posterior(t, x).expect("valid probe").label_pmf[y].ln()
}

pub fn run_oracle_check(cfg: &mut Config) -> Result<Report, RunError> {
    let s = Settings {
        seed: cfg.required("seed")?,
        probes: cfg.positive("probes", 10_000usize)?,
        fd_probes: cfg.positive("fd_probes", 1_000usize)?,
        grid_cases: cfg.positive("grid_cases", 100usize)?,
        identity_tol: cfg.positive("identity_tol", 1e-10)?,
        vp_tol: cfg.positive("vp_tol", 1e-12)?,
        fd_tol: cfg.positive("fd_tol", 1e-6)?,
        fd2_tol: cfg.positive("fd2_tol", 1e-4)?,
    };
    cfg.finish()?;

    let mut table = CsvTable::new(&["suite", "probes", "worst", "tolerance"]);
    let mut checks = Vec::new();
    let mut emit = |name: &str, tally: Tally, tol: f64, source: Source| {
        table.push(row![name, tally.probes, tally.worst, tol]);
        checks.push(Check::at_most(name, tally.worst, tol, source));
    };

    // λ² + σ² = 1.
    let mut rng = SeededRng::new(derive_seed(s.seed, "oracle/vp"));
    let mut vp = Tally::default();
    for _ in 0..s.probes {
        let t = uniform(&mut rng, 1e-6f64.ln(), 50f64.ln()).exp();
        let l = lambda_of(t)?;
        vp.see((l * l + sigma_sq_of(t)? - 1.0).abs());
    }
    emit("ou.variance_preserving", vp, s.vp_tol, Source::Identity);

    // make_grid → verify_grid round trip.
    let mut rng = SeededRng::new(derive_seed(s.seed, "oracle/grid"));
    let mut grid = Tally::default();
    for _ in 0..s.grid_cases {
        let horizon = uniform(&mut rng, 1.0, 12.0);
        let delta = uniform(&mut rng, 1e-4f64.ln(), 0.9f64.ln()).exp();
        let steps = 1 + (rng.uniform() * 3000.0) as usize;
        let built = match make_grid(horizon, delta, steps) {
            Err(Error::InfeasibleGrid { min_steps, .. }) => make_grid(horizon, delta, min_steps),
            other => other,
        };
        let violation = match built {
            Ok(g) => {
                let bound = kappa_bound(horizon, delta, g.steps());
                let endpoints = g.times()[0] == 0.0 && *g.times().last().expect("non-empty") == horizon - delta;
                let ok = verify_grid(&g, bound).ok && g.kappa() <= bound && endpoints;
                f64::from(u8::from(!ok))
            }
            Err(_) => 1.0,
        };
        grid.see(violation);
    }
    emit("grid.round_trip_failures", grid, 0.0, Source::Identity);

    // Point-cloud oracle: decomposition identity and posterior bounds.
    let mut rng = SeededRng::new(derive_seed(s.seed, "oracle/cloud"));
    let mut decomposition = Tally::default();
    let mut guidance_bound = Tally::default();
    let mut trace_bound = Tally::default();
    for _ in 0..s.probes {
        let cloud = random_cloud(&mut rng);
        let (t, x) = probe(&cloud, &mut rng);
        let post = cloud.posterior(t, &x)?;
        let score = cloud.score(t, &x)?;
        let radius = cloud.radius();
        for y in 0..2 {
            let cond = cloud.conditional_score(t, &x, y)?;
            let g = cloud.guidance(t, &x, y)?;
            let scale = 1.0 + score.iter().map(|v| v * v).sum::<f64>().sqrt();
            let gap = cond
                .iter()
                .zip(&score)
                .zip(&g)
                .map(|((c, sc), gi)| (c - sc - gi).abs())
                .fold(0.0, f64::max);
            decomposition.see(gap / scale);
            let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            guidance_bound.see(g_norm / post.guidance_norm_bound(radius));
            trace_bound.see(post.hessian_trace(y).abs() / post.hessian_trace_bound(radius));
        }
    }
    emit("cloud.decomposition_identity", decomposition, s.identity_tol, Source::Identity);
    emit("cloud.guidance_norm_over_bound", guidance_bound, 1.0, Source::Identity);
    emit("cloud.hessian_trace_over_bound", trace_bound, 1.0, Source::Identity);

    // Finite differences of the cloud oracle.
    let mut rng = SeededRng::new(derive_seed(s.seed, "oracle/fd"));
    let mut score_fd = Tally::default();
    let mut guidance_fd = Tally::default();
    let mut trace_fd = Tally::default();
    for _ in 0..s.fd_probes {
        let cloud = random_cloud(&mut rng);
        let (t, x) = probe(&cloud, &mut rng);
        let sigma = sigma_sq_of(t)?.sqrt();
        let scale = 1.0 / (sigma * sigma);
        let h = 1e-5 * sigma;
        let score = cloud.score(t, &x)?;
        for (j, sj) in score.iter().enumerate() {
            let fd = central_diff(|z| cloud.log_density(t, z).expect("valid probe"), &x, j, h);
            score_fd.see(rel_err(*sj, fd, scale));
        }
        let y = usize::from(rng.uniform() < 0.5);
        let g = cloud.guidance(t, &x, y)?;
        for (j, gj) in g.iter().enumerate() {
            let fd = central_diff(|z| log_label_posterior(&cloud, t, z, y), &x, j, h);
            guidance_fd.see(rel_err(*gj, fd, scale));
        }
        let h2 = 1e-3 * sigma;
        let center = log_label_posterior(&cloud, t, &x, y);
        let laplacian: f64 = (0..x.len())
            .map(|j| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h2;
                xm[j] -= h2;
                (log_label_posterior(&cloud, t, &xp, y) - 2.0 * center + log_label_posterior(&cloud, t, &xm, y))
                    / (h2 * h2)
            })
            .sum();
        let trace = cloud.hessian_trace_log_label_posterior(t, &x, y)?;
        trace_fd.see(rel_err(trace, laplacian, scale * scale));
    }
    emit("cloud.score_vs_fd", score_fd, s.fd_tol, Source::Derived);
    emit("cloud.guidance_vs_fd", guidance_fd, s.fd_tol, Source::Derived);
    emit("cloud.hessian_trace_vs_fd", trace_fd, s.fd2_tol, Source::Derived);

    // Analytic classifier families.
    let mut rng = SeededRng::new(derive_seed(s.seed, "oracle/classifiers"));
    let mut family_fd = Tally::default();
    let mut sharp_bounds = Tally::default();
    let mut logistic_identity = Tally::default();
    let perturbed: Vec<PerturbedClassifier> = [(10, Regime::InvN), (90, Regime::InvN), (30, Regime::InvSqrtN), (990, Regime::InvSqrtN)]
        .into_iter()
        .map(|(n, r)| PerturbedClassifier::new(n, r))
        .collect::<Result<_, _>>()?;
    let sharp: Vec<SharpnessClassifier> = [0.2, 0.05, 0.01]
        .into_iter()
        .map(|e| SharpnessClassifier::new(e, 3.0, 2))
        .collect::<Result<_, _>>()?;
    for _ in 0..s.fd_probes {
        let x = vec![uniform(&mut rng, -2.0, 2.0), rng.normal()];
        let y = usize::from(rng.uniform() < 0.5);
        for c in &perturbed {
            let h = 1e-4 / f64::from(c.freq());
            let fd = central_diff(|z| c.prob(z, y).ln(), &x, 0, h);
            family_fd.see(rel_err(c.log_grad(&x, y)[0], fd, 1.0));
        }
        for c in &sharp {
            let h = 1e-4 * c.eps().sqrt();
            let fd = central_diff(|z| c.prob(z, y).ln(), &x, 0, h);
            family_fd.see(rel_err(c.log_grad(&x, y)[0], fd, c.eps().sqrt()));
            sharp_bounds.see((c.log_grad(&x, y)[0].abs() / 2.0).max(c.log_hessian_11(&x, y).abs() / 3.0));
        }
        let beta = rng.normal_vec(3);
        let z = rng.normal_vec(3);
        let m = LogisticModel::new(beta.clone())?;
        let (g1, g0) = (m.log_grad(&z, 1), m.log_grad(&z, 0));
        for j in 0..3 {
            logistic_identity.see(rel_err(g1[j] - g0[j], beta[j], 1e-300));
        }
    }
    emit("classifiers.log_grad_vs_fd", family_fd, s.fd_tol, Source::Derived);
    emit("sharpness.derivative_bounds_ratio", sharp_bounds, 1.0, Source::Identity);
    emit("logistic.label_gradient_difference", logistic_identity, 1e-15, Source::Identity);

    // categorical_kl ≥ 0, zero exactly when the pmfs agree.
    let mut rng = SeededRng::new(derive_seed(s.seed, "oracle/kl"));
    let mut kl_violations = Tally::default();
    for _ in 0..s.probes {
        let k = 2 + (rng.uniform() * 4.0) as usize;
        let draw = |rng: &mut SeededRng| {
            let w: Vec<f64> = (0..k).map(|_| uniform(rng, 0.01, 1.0)).collect();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|v| v / total).collect::<Vec<_>>()
        };
        let p = draw(&mut rng);
        let q = draw(&mut rng);
        let bad = match (categorical_kl(&p, &p), categorical_kl(&p, &q)) {
            (Kl::Finite(same), Kl::Finite(diff)) => same != 0.0 || !(diff > 0.0),
            _ => true,
        };
        kl_violations.see(f64::from(u8::from(bad)));
    }
    emit("kl.nonnegative_zero_iff_equal_failures", kl_violations, 0.0, Source::Identity);

    Ok(Report {
        tables: vec![("oracle_check.csv".into(), table)],
        files: Vec::new(),
        checks,
    })
}
