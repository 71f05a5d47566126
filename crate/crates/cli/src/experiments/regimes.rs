//! High-frequency perturbation sweep: KL and guidance error against the
//! frequency `n` for `δ_n = 1/n` and `δ_n = 1/√n`.

use guidelab::counterexamples::{PerturbedClassifier, Regime, TanhConditional};
use guidelab::estimators::{expected_label_kl_chunked, guidance_mse_chunked, loglog_slope_trimmed, Estimate, SlopeFit};
use guidelab::rng::derive_seed;
use guidelab::SeededRng;

use super::{fit_table, invalid, push_fit, McSettings, RunError};
use crate::config::Config;
use crate::report::{Check, CsvTable, Report, Source};
use crate::row;

const DIM: usize = 2;

pub fn default_frequencies() -> Vec<u32> {
    (10..=990).step_by(20).collect()
}

struct Thresholds {
    slope_tol: f64,
    flat_slope_tol: f64,
    plateau: (f64, f64),
}

fn standard_normal(rng: &mut SeededRng) -> Vec<f64> {
    rng.normal_vec(DIM)
}

pub fn run_regimes(cfg: &mut Config) -> Result<Report, RunError> {
    let mc = McSettings::read(cfg)?;
    let freqs: Vec<u32> = cfg.positive_list("frequencies", &default_frequencies())?;
    let gamma: f64 = cfg.scalar("gamma", guidelab::counterexamples::DEFAULT_GAMMA)?;
    let th = Thresholds {
        slope_tol: cfg.positive("slope_tol", 0.15)?,
        flat_slope_tol: cfg.positive("flat_slope_tol", 0.1)?,
        plateau: (cfg.scalar("plateau_lo", 0.30)?, cfg.scalar("plateau_hi", 0.50)?),
    };
    cfg.finish()?;
    if freqs.len() < 3 {
        return Err(invalid("frequencies", "need at least 3 values for a slope").into());
    }

    let mut table = CsvTable::new(&[
        "regime",
        "n",
        "delta_n",
        "kl_mean",
        "kl_se",
        "kl_rejected",
        "guidance_mean",
        "guidance_se",
    ]);
    let mut fits = fit_table();
    let mut checks = Vec::new();
    for regime in [Regime::InvN, Regime::InvSqrtN] {
        let mut kls: Vec<Estimate> = Vec::new();
        let mut guidance: Vec<Estimate> = Vec::new();
        for &n in &freqs {
            let approx = PerturbedClassifier::with_gamma(n, regime, gamma)
                .map_err(|e| invalid("frequencies", format!("{} at n = {n}: {e}", regime.name())))?;
            let cell = format!("regimes/{}/{n}", regime.name());
            let kl = expected_label_kl_chunked(
                &TanhConditional,
                &approx,
                &standard_normal,
                mc.n_mc,
                derive_seed(mc.seed, &format!("{cell}/kl")),
                mc.chunks,
            );
            let g = guidance_mse_chunked(
                &TanhConditional,
                &approx,
                &standard_normal,
                1,
                mc.n_mc,
                derive_seed(mc.seed, &format!("{cell}/guidance")),
                mc.chunks,
            );
            table.push(row![
                regime.name(),
                n,
                approx.amplitude(),
                kl.mean,
                kl.std_error,
                kl.rejected,
                g.mean,
                g.std_error
            ]);
            kls.push(kl);
            guidance.push(g);
        }
        let xs: Vec<f64> = freqs.iter().map(|&n| f64::from(n)).collect();
        let rejected: usize = kls.iter().map(|e| e.rejected).sum();
        checks.push(Check::at_most(
            format!("{}.kl_rejected_draws", regime.name()),
            rejected as f64,
            0.0,
            Source::Identity,
        ));
        let kl_fit = fit(&xs, &kls)?;
        let g_fit = fit(&xs, &guidance)?;
        push_fit(&mut fits, &format!("{}.kl", regime.name()), &kl_fit);
        push_fit(&mut fits, &format!("{}.guidance", regime.name()), &g_fit);
        let (kl_slope, g_slope) = (kl_fit.slope, g_fit.slope);
        match regime {
            Regime::InvN => {
                checks.push(Check::within("inv_n.kl_slope", kl_slope, -2.0, th.slope_tol, Source::Derived));
                checks.push(Check::within(
                    "inv_n.guidance_slope",
                    g_slope,
                    0.0,
                    th.flat_slope_tol,
                    Source::Derived,
                ));
                let plateau = guidance.iter().map(|e| e.mean).sum::<f64>() / guidance.len() as f64;
                checks.push(Check::in_range(
                    "inv_n.guidance_plateau",
                    plateau,
                    th.plateau.0,
                    th.plateau.1,
                    Source::Reported,
                ));
            }
            Regime::InvSqrtN => {
                checks.push(Check::within("inv_sqrt_n.kl_slope", kl_slope, -1.0, th.slope_tol, Source::Derived));
                checks.push(Check::within(
                    "inv_sqrt_n.guidance_slope",
                    g_slope,
                    1.0,
                    th.slope_tol,
                    Source::Derived,
                ));
            }
        }
    }
    Ok(Report {
        tables: vec![("regimes.csv".into(), table), ("regimes_fits.csv".into(), fits)],
        files: Vec::new(),
        checks,
    })
}

fn fit(xs: &[f64], ests: &[Estimate]) -> Result<SlopeFit, RunError> {
    let ys: Vec<f64> = ests.iter().map(|e| e.mean).collect();
    Ok(loglog_slope_trimmed(xs, &ys)?)
}
