//! Logistic sweep over noise level `v`, sample size `N` and independent trials.

use rayon::prelude::*;

use guidelab::estimators::{expected_label_kl_chunked, guidance_mse_chunked, median, RunningStats};
use guidelab::logistic::{default_beta_star, fit_mle, make_dataset, LogisticWorld};
use guidelab::rng::derive_seed;
use guidelab::SeededRng;

use super::{inversions, invalid, McSettings, RunError};
use crate::config::Config;
use crate::report::{Check, CsvTable, Report, Source};
use crate::row;

pub const DEFAULT_NOISE: [f64; 3] = [0.01, 0.1, 0.5];
pub const DEFAULT_SIZES: [usize; 5] = [100, 500, 2500, 12_500, 50_000];

struct Settings {
    mc: McSettings,
    noise: Vec<f64>,
    sizes: Vec<usize>,
    trials: usize,
    dim: usize,
    radius: f64,
    tol: f64,
    max_iter: usize,
    max_inversions: usize,
    band_k: f64,
    ratio_size: usize,
    ratio_low_v: f64,
    ratio_high_v: f64,
    max_fail_fraction: f64,
}

impl Settings {
    fn read(cfg: &mut Config) -> Result<Self, RunError> {
        let mc = McSettings::read(cfg)?;
        let noise = cfg.positive_list("noise_levels", &DEFAULT_NOISE)?;
        let sizes = cfg.positive_list("sample_sizes", &DEFAULT_SIZES)?;
        let s = Self {
            mc,
            trials: cfg.positive("trials", 20usize)?,
            dim: cfg.positive("dim", 5usize)?,
            radius: cfg.positive("radius", 3.0)?,
            tol: cfg.positive("fit_tol", 1e-10)?,
            max_iter: cfg.positive("fit_max_iter", 100usize)?,
            max_inversions: cfg.scalar("max_inversions", 1usize)?,
            band_k: cfg.positive("band_k_se", 3.0)?,
            ratio_size: cfg.positive("ratio_sample_size", 2500usize)?,
            ratio_low_v: cfg.positive("ratio_low_noise", 0.01)?,
            ratio_high_v: cfg.positive("ratio_high_noise", 0.5)?,
            max_fail_fraction: cfg.scalar("max_fit_failure_fraction", 0.05)?,
            noise,
            sizes,
        };
        cfg.finish()?;
        for w in s.sizes.windows(2) {
            if w[1] <= w[0] {
                return Err(invalid("sample_sizes", "must be strictly increasing").into());
            }
        }
        if let Some(&n) = s.sizes.iter().find(|&&n| n < s.dim + 1) {
            return Err(invalid("sample_sizes", format!("{n} is below d + 1")).into());
        }
        for (key, v) in [("ratio_low_noise", s.ratio_low_v), ("ratio_high_noise", s.ratio_high_v)] {
            if !s.noise.contains(&v) {
                return Err(invalid(key, format!("{v} is not among noise_levels")).into());
            }
        }
        if !s.sizes.contains(&s.ratio_size) {
            return Err(invalid("ratio_sample_size", "not among sample_sizes").into());
        }
        Ok(s)
    }
}

struct Trial {
    fitted: bool,
    iterations: usize,
    beta_error: f64,
    kl: (f64, f64),
    g0: (f64, f64),
    g1: (f64, f64),
}

fn run_trial(s: &Settings, world: &LogisticWorld, n: usize, trial: usize) -> Trial {
    let cell = format!("logistic/{}/{n}/{trial}", world.noise());
    let mut rng = SeededRng::new(derive_seed(s.mc.seed, &format!("{cell}/data")));
    let data = make_dataset(world, n, &mut rng);
    let Ok(fit) = fit_mle(&data, s.tol, s.max_iter) else {
        return Trial {
            fitted: false,
            iterations: 0,
            beta_error: f64::NAN,
            kl: (f64::NAN, f64::NAN),
            g0: (f64::NAN, f64::NAN),
            g1: (f64::NAN, f64::NAN),
        };
    };
    let truth = world.truth();
    let model = &fit.model;
    let kl = expected_label_kl_chunked(
        &truth,
        model,
        &world.marginal(),
        s.mc.n_mc,
        derive_seed(s.mc.seed, &format!("{cell}/kl")),
        s.mc.chunks,
    );
    let guidance = |y: usize| {
        let e = guidance_mse_chunked(
            &truth,
            model,
            &world.given_label(y),
            y,
            s.mc.n_mc,
            derive_seed(s.mc.seed, &format!("{cell}/guidance{y}")),
            s.mc.chunks,
        );
        (e.mean, e.std_error)
    };
    let beta_error = model
        .beta
        .iter()
        .zip(world.beta_star())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Trial {
        fitted: true,
        iterations: fit.iterations,
        beta_error,
        kl: (kl.mean, kl.std_error),
        g0: guidance(0),
        g1: guidance(1),
    }
}

struct CellSummary {
    failures: usize,
    median_kl: f64,
    median_g0: f64,
    median_g1: f64,
    median_g: f64,
    /// Across-trial mean and standard error.
    g0: (f64, f64),
    g1: (f64, f64),
}

fn summarize(trials: &[Trial]) -> Result<CellSummary, RunError> {
    let ok: Vec<&Trial> = trials.iter().filter(|t| t.fitted).collect();
    if ok.is_empty() {
        return Err(guidelab::Error::Domain("every fit in a cell failed".into()).into());
    }
    let pick = |f: fn(&Trial) -> f64| ok.iter().map(|t| f(t)).collect::<Vec<f64>>();
    let mean_se = |v: &[f64]| {
        let mut s = RunningStats::new();
        v.iter().for_each(|x| s.push(*x));
        let e = s.estimate();
        (e.mean, e.std_error)
    };
    let g0 = pick(|t| t.g0.0);
    let g1 = pick(|t| t.g1.0);
    Ok(CellSummary {
        failures: trials.len() - ok.len(),
        median_kl: median(&pick(|t| t.kl.0))?,
        median_g0: median(&g0)?,
        median_g1: median(&g1)?,
        median_g: median(&pick(|t| 0.5 * (t.g0.0 + t.g1.0)))?,
        g0: mean_se(&g0),
        g1: mean_se(&g1),
    })
}

pub fn run_logistic(cfg: &mut Config) -> Result<Report, RunError> {
    let s = Settings::read(cfg)?;
    let beta_star = default_beta_star(s.dim, s.radius);
    let worlds = s
        .noise
        .iter()
        .map(|&v| LogisticWorld::new(s.dim, s.radius, v, beta_star.clone()))
        .collect::<Result<Vec<_>, _>>()?;

    let cells: Vec<(usize, usize, usize)> = (0..worlds.len())
        .flat_map(|w| s.sizes.iter().flat_map(move |&n| (0..s.trials).map(move |t| (w, n, t))))
        .collect();
    let results: Vec<Trial> = cells
        .par_iter()
        .map(|&(w, n, t)| run_trial(&s, &worlds[w], n, t))
        .collect();

    let mut trials_table = CsvTable::new(&[
        "v",
        "n",
        "trial",
        "status",
        "iterations",
        "beta_error",
        "kl_mean",
        "kl_se",
        "guidance0_mean",
        "guidance0_se",
        "guidance1_mean",
        "guidance1_se",
    ]);
    for (&(w, n, t), r) in cells.iter().zip(&results) {
        trials_table.push(row![
            s.noise[w],
            n,
            t,
            if r.fitted { "ok" } else { "fit_failure" },
            r.iterations,
            r.beta_error,
            r.kl.0,
            r.kl.1,
            r.g0.0,
            r.g0.1,
            r.g1.0,
            r.g1.1
        ]);
    }

    let mut summary_table = CsvTable::new(&[
        "v",
        "n",
        "fit_failures",
        "median_kl",
        "median_guidance0",
        "median_guidance1",
        "mean_guidance0",
        "se_guidance0",
        "mean_guidance1",
        "se_guidance1",
    ]);
    let mut checks = Vec::new();
    let mut worst_fail: f64 = 0.0;
    let mut worst_band: f64 = 0.0;
    let mut ratios = Vec::new();
    for (w, &v) in s.noise.iter().enumerate() {
        let mut series_kl = Vec::new();
        let mut series_g0 = Vec::new();
        let mut series_g1 = Vec::new();
        for &n in &s.sizes {
            let start = cells.iter().position(|&c| c == (w, n, 0)).expect("cell exists");
            let cell = summarize(&results[start..start + s.trials])?;
            summary_table.push(row![
                v,
                n,
                cell.failures,
                cell.median_kl,
                cell.median_g0,
                cell.median_g1,
                cell.g0.0,
                cell.g0.1,
                cell.g1.0,
                cell.g1.1
            ]);
            worst_fail = worst_fail.max(cell.failures as f64 / s.trials as f64);
            let spread = cell.g0.1 + cell.g1.1;
            let gap = (cell.g0.0 - cell.g1.0).abs();
            worst_band = worst_band.max(if spread > 0.0 { gap / spread } else { 0.0 });
            if n == s.ratio_size {
                ratios.push((v, cell.median_g / cell.median_kl));
            }
            series_kl.push(cell.median_kl);
            series_g0.push(cell.median_g0);
            series_g1.push(cell.median_g1);
        }
        for (name, series) in [("kl", &series_kl), ("guidance0", &series_g0), ("guidance1", &series_g1)] {
            checks.push(Check::at_most(
                format!("v={v}.median_{name}_inversions"),
                inversions(series) as f64,
                s.max_inversions as f64,
                Source::Reported,
            ));
        }
    }
    let ratio = |v: f64| ratios.iter().find(|r| r.0 == v).map(|r| r.1).expect("ratio noise level present");
    checks.push(Check::at_most(
        "max_fit_failure_fraction",
        worst_fail,
        s.max_fail_fraction,
        Source::Derived,
    ));
    checks.push(Check::at_most(
        "per_label_guidance_gap_over_se_sum",
        worst_band,
        s.band_k,
        Source::Reported,
    ));
    checks.push(Check::greater_than(
        format!("n={}.ratio_v{}_minus_ratio_v{}", s.ratio_size, s.ratio_low_v, s.ratio_high_v),
        ratio(s.ratio_low_v) - ratio(s.ratio_high_v),
        0.0,
        Source::Reported,
    ));

    Ok(Report {
        tables: vec![
            ("logistic_trials.csv".into(), trials_table),
            ("logistic_summary.csv".into(), summary_table),
        ],
        files: Vec::new(),
        checks,
    })
}
