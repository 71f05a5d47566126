//! Sharpness sweep: `σ(2ε sin(x₁/√ε))` against labels independent of `x`,
//! with a quadrature oracle for every Monte Carlo value.

use guidelab::counterexamples::{IndependentLabels, SharpnessClassifier, UniformCubeWorld};
use guidelab::estimators::{
    categorical_kl, expected_label_kl_chunked, guidance_mse_chunked, loglog_slope_trimmed, median, quadrature_1d,
    Estimate,
};
use guidelab::rng::derive_seed;
use guidelab::SeededRng;

use super::{fit_table, invalid, push_fit, McSettings, RunError};
use crate::config::Config;
use crate::report::{Check, CsvTable, Report, Source};
use crate::row;

pub const DEFAULT_EPS: [f64; 5] = [0.2, 0.1, 0.05, 0.02, 0.01];
const QUADRATURE_NODES: usize = 64;

pub fn run_sharpness(cfg: &mut Config) -> Result<Report, RunError> {
    let mc = McSettings::read(cfg)?;
    let eps: Vec<f64> = cfg.positive_list("eps", &DEFAULT_EPS)?;
    let radius: f64 = cfg.scalar("radius", 3.0)?;
    let dim: usize = cfg.positive("dim", 1usize)?;
    let time: f64 = cfg.positive("time", 0.5)?;
    let slope_tol: f64 = cfg.positive("slope_tol", 0.15)?;
    let band_ratio: f64 = cfg.positive("kl_band_ratio", 3.0)?;
    let floor: f64 = cfg.positive("guidance_floor", 0.25)?;
    let oracle_k: f64 = cfg.positive("oracle_k_se", 3.0)?;
    cfg.finish()?;
    if eps.len() < 3 {
        return Err(invalid("eps", "need at least 3 values for a slope").into());
    }
    let world = UniformCubeWorld::new(radius, dim, time).map_err(|e| invalid("radius", e.to_string()))?;
    let classifiers = eps
        .iter()
        .map(|&e| SharpnessClassifier::new(e, radius, dim).map_err(|err| invalid("eps", err.to_string())))
        .collect::<Result<Vec<_>, _>>()?;

    let sampler = |rng: &mut SeededRng| world.sample(rng);
    let support = world.coordinate_support();
    let density = |x: f64| world.coordinate_density(x);
    let mut table = CsvTable::new(&[
        "eps",
        "kl_mean",
        "kl_se",
        "kl_oracle",
        "guidance_mean",
        "guidance_se",
        "guidance_oracle",
    ]);
    let mut kls = Vec::new();
    let mut guidance = Vec::new();
    let mut worst_z: f64 = 0.0;
    for (&e, clf) in eps.iter().zip(&classifiers) {
        let cell = format!("sharpness/{e}");
        let kl = expected_label_kl_chunked(
            &IndependentLabels,
            clf,
            &sampler,
            mc.n_mc,
            derive_seed(mc.seed, &format!("{cell}/kl")),
            mc.chunks,
        );
        let g = guidance_mse_chunked(
            &IndependentLabels,
            clf,
            &sampler,
            1,
            mc.n_mc,
            derive_seed(mc.seed, &format!("{cell}/guidance")),
            mc.chunks,
        );
        // The classifier depends on x₁ alone, so both expectations reduce to
        // one-dimensional integrals against the coordinate density.
        let kl_oracle = quadrature_1d(
            |x| {
                let q = clf.sharpness_prob(&[x], 1);
                categorical_kl(&[0.5, 0.5], &[1.0 - q, q]).finite().unwrap_or(f64::INFINITY)
            },
            density,
            support,
            QUADRATURE_NODES,
        )?;
        let g_oracle = quadrature_1d(
            |x| clf.sharpness_log_grad(&[x], 1)[0].powi(2),
            density,
            support,
            QUADRATURE_NODES,
        )?;
        worst_z = worst_z.max(z_score(&kl, kl_oracle)).max(z_score(&g, g_oracle));
        table.push(row![e, kl.mean, kl.std_error, kl_oracle, g.mean, g.std_error, g_oracle]);
        kls.push(kl);
        guidance.push(g);
    }

    let rejected: usize = kls.iter().chain(&guidance).map(|e| e.rejected).sum();
    let kl_means: Vec<f64> = kls.iter().map(|e| e.mean).collect();
    let g_means: Vec<f64> = guidance.iter().map(|e| e.mean).collect();
    let kl_scaled: Vec<f64> = kl_means.iter().zip(&eps).map(|(k, e)| k / (e * e)).collect();
    let g_scaled: Vec<f64> = g_means.iter().zip(&eps).map(|(g, e)| g / e).collect();
    let kl_band = kl_scaled.iter().cloned().fold(f64::MIN, f64::max) / kl_scaled.iter().cloned().fold(f64::MAX, f64::min);
    let g_floor = g_scaled.iter().cloned().fold(f64::MAX, f64::min) / median(&g_scaled)?;

    let kl_fit = loglog_slope_trimmed(&eps, &kl_means)?;
    let g_fit = loglog_slope_trimmed(&eps, &g_means)?;
    let mut fits = fit_table();
    push_fit(&mut fits, "kl", &kl_fit);
    push_fit(&mut fits, "guidance", &g_fit);

    let checks = vec![
        Check::at_most("rejected_draws", rejected as f64, 0.0, Source::Identity),
        Check::within(
            "kl_slope",
            kl_fit.slope,
            2.0,
            slope_tol,
            Source::Derived,
        ),
        Check::within(
            "guidance_slope",
            g_fit.slope,
            1.0,
            slope_tol,
            Source::Derived,
        ),
        Check::at_most("kl_over_eps2_max_min_ratio", kl_band, band_ratio, Source::Derived),
        Check::at_least("guidance_over_eps_min_over_median", g_floor, floor, Source::Derived),
        Check::at_most("max_oracle_z", worst_z, oracle_k, Source::Derived),
    ];
    Ok(Report {
        tables: vec![("sharpness.csv".into(), table), ("sharpness_fits.csv".into(), fits)],
        files: Vec::new(),
        checks,
    })
}

fn z_score(est: &Estimate, oracle: f64) -> f64 {
    let d = (est.mean - oracle).abs();
    if est.std_error > 0.0 {
        d / est.std_error
    } else if d == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}
