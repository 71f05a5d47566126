//! Guided sampling on a labeled point cloud with exact oracle fields,
//! compared against the analytic cluster weights at `t = δ`.

use guidelab::sampler::{
    cluster_proportions, demo_cloud, oracle_fields, run_reverse, total_variation, GuidedRun, Initialization,
    SampleBatch,
};
use guidelab::schedule::{lambda_of, make_grid};
use guidelab::rng::derive_seed;
use guidelab::{LabeledPointCloud, TimeGrid};

use super::{invalid, RunError};
use crate::config::Config;
use crate::report::{Check, CsvTable, Report, Source};
use crate::row;

struct Settings {
    seed: u64,
    cloud: LabeledPointCloud,
    cloud_id: String,
    grid: TimeGrid,
    n_paths: usize,
    gamma_c: f64,
    exact_init: bool,
    tv_tol: f64,
    aux_paths: usize,
    gamma_sweep: Vec<f64>,
    refine: bool,
    write_samples: bool,
}

impl Settings {
    fn read(cfg: &mut Config) -> Result<Self, RunError> {
        let seed = cfg.required("seed")?;
        let cloud_id: String = cfg.scalar("cloud", "demo".to_string())?;
        let horizon: f64 = cfg.positive("horizon", 6.0)?;
        let delta: f64 = cfg.positive("delta", 0.01)?;
        let steps: usize = cfg.positive("steps", 400usize)?;
        let n_paths = cfg.positive("n_paths", 50_000usize)?;
        let gamma_c: f64 = cfg.scalar("gamma_c", 1.0)?;
        let init: String = cfg.scalar("init", "standard_normal".to_string())?;
        let tv_tol = cfg.positive("tv_tol", 0.02)?;
        let aux_paths = cfg.positive("aux_paths", 5_000usize)?;
        let gamma_sweep: Vec<f64> = cfg.list("gamma_sweep", &[0.0, 1.0, 3.0])?;
        let refine: bool = cfg.scalar("refine", true)?;
        let write_samples: bool = cfg.scalar("write_samples", true)?;
        cfg.finish()?;

        let exact_init = match init.as_str() {
            "standard_normal" => false,
            "exact" => true,
            other => return Err(invalid("init", format!("expected standard_normal or exact, got {other}")).into()),
        };
        if !(gamma_c >= 0.0) || gamma_sweep.iter().any(|g| !(*g >= 0.0)) {
            return Err(invalid("gamma_c", "guidance scales must be non-negative").into());
        }
        if gamma_sweep.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("gamma_sweep", "must be strictly increasing").into());
        }
        let cloud = if cloud_id == "demo" {
            demo_cloud()
        } else {
            LabeledPointCloud::from_table_path(&cloud_id).map_err(|e| invalid("cloud", e.to_string()))?
        };
        let grid = make_grid(horizon, delta, steps).map_err(|e| invalid("steps", e.to_string()))?;
        Ok(Self {
            seed,
            cloud,
            cloud_id,
            grid,
            n_paths,
            gamma_c,
            exact_init,
            tv_tol,
            aux_paths,
            gamma_sweep,
            refine,
            write_samples,
        })
    }
}

struct Runner<'a> {
    s: &'a Settings,
    centers: Vec<Vec<f64>>,
}

impl Runner<'_> {
    /// Terminal samples guided toward `label` with scale `gamma`.
    fn run(&self, name: &str, label: usize, gamma: f64, paths: usize, grid: &TimeGrid) -> Result<SampleBatch, RunError> {
        let cloud = &self.s.cloud;
        let (score, guidance) = oracle_fields(cloud, label);
        let init = if self.s.exact_init {
            Initialization::Exact {
                cloud,
                label: (gamma > 0.0).then_some(label),
            }
        } else {
            Initialization::StandardNormal
        };
        let run = GuidedRun::new(grid.clone(), gamma, derive_seed(self.s.seed, name), paths, cloud.dim())?
            .with_init(init)
            .with_model_ids([format!("score:oracle:{}", self.s.cloud_id), format!("guidance:oracle:y={label}")]);
        Ok(run_reverse(&run, &score, &guidance)?)
    }

    fn proportions(&self, batch: &SampleBatch) -> Result<Vec<f64>, RunError> {
        Ok(cluster_proportions(batch, &self.centers)?)
    }

    /// Mass on centers carrying `label`.
    fn label_mass(&self, p: &[f64], label: usize) -> f64 {
        p.iter().zip(self.s.cloud.labels()).filter(|(_, &l)| l == label).map(|(v, _)| v).sum()
    }
}

/// Three standard errors of the difference of two empirical TV statistics.
fn tv_noise_band(p: &[f64], n: usize) -> f64 {
    let sd: f64 = p.iter().map(|q| (q * (1.0 - q) / n as f64).sqrt()).sum::<f64>() * 0.5;
    3.0 * std::f64::consts::SQRT_2 * sd
}

pub fn run_sample(cfg: &mut Config) -> Result<Report, RunError> {
    let s = Settings::read(cfg)?;
    let delta = s.grid.early_stop();
    let lambda = lambda_of(delta)?;
    let centers: Vec<Vec<f64>> = s.cloud.points().iter().map(|p| p.iter().map(|v| lambda * v).collect()).collect();
    let runner = Runner { s: &s, centers };
    let labels: Vec<usize> = (0..s.cloud.num_labels()).filter(|&y| s.cloud.label_prior(y) > 0.0).collect();

    let mut table = CsvTable::new(&["run", "label", "gamma_c", "n_paths", "steps", "center", "proportion", "target"]);
    let mut files = Vec::new();
    let mut checks = Vec::new();
    let mut record = |name: &str, label: Option<usize>, gamma: f64, batch: &SampleBatch, p: &[f64], target: &[f64]| {
        for (i, (pi, ti)) in p.iter().zip(target).enumerate() {
            table.push(row![
                name,
                label.map_or_else(|| "none".to_string(), |l| l.to_string()),
                gamma,
                batch.len(),
                batch.meta().steps.unwrap_or(0),
                i,
                *pi,
                *ti
            ]);
        }
    };

    for &y in &labels {
        let name = format!("guided_y{y}");
        let batch = runner.run(&name, y, s.gamma_c, s.n_paths, &s.grid)?;
        let p = runner.proportions(&batch)?;
        let target = s.cloud.conditional_weights(y)?;
        record(&name, Some(y), s.gamma_c, &batch, &p, &target);
        if (s.gamma_c - 1.0).abs() < f64::EPSILON {
            checks.push(Check::at_most(
                format!("{name}.tv_to_conditional_weights"),
                total_variation(&p, &target),
                s.tv_tol,
                Source::Derived,
            ));
        }
        if s.write_samples {
            files.push((format!("samples_{name}.txt"), batch.to_point_table()));
            files.push((format!("samples_{name}.meta"), batch.sidecar()));
        }
    }
    {
        let name = "unguided";
        let batch = runner.run(name, labels[0], 0.0, s.n_paths, &s.grid)?;
        let p = runner.proportions(&batch)?;
        record(name, None, 0.0, &batch, &p, s.cloud.weights());
        checks.push(Check::at_most(
            "unguided.tv_to_weights",
            total_variation(&p, s.cloud.weights()),
            s.tv_tol,
            Source::Derived,
        ));
        if s.write_samples {
            files.push((format!("samples_{name}.txt"), batch.to_point_table()));
            files.push((format!("samples_{name}.meta"), batch.sidecar()));
        }
    }

    if s.gamma_sweep.len() > 1 {
        for &y in &labels {
            let mut previous: Option<(f64, f64)> = None;
            for &g in &s.gamma_sweep {
                let name = format!("sweep_y{y}_g{g}");
                let batch = runner.run(&name, y, g, s.aux_paths, &s.grid)?;
                let p = runner.proportions(&batch)?;
                record(&name, Some(y), g, &batch, &p, &s.cloud.conditional_weights(y)?);
                let mass = runner.label_mass(&p, y);
                if let Some((g_prev, m_prev)) = previous {
                    let se = ((mass * (1.0 - mass) + m_prev * (1.0 - m_prev)) / s.aux_paths as f64).sqrt();
                    checks.push(Check::at_least(
                        format!("y{y}.mass_gamma{g}_minus_gamma{g_prev}_plus_2se"),
                        mass - m_prev + 2.0 * se,
                        0.0,
                        Source::Derived,
                    ));
                }
                previous = Some((g, mass));
            }
        }
    }

    if s.refine {
        let fine = make_grid(s.grid.horizon(), delta, 2 * s.grid.steps())?;
        for &y in &labels {
            let target = s.cloud.conditional_weights(y)?;
            let coarse_name = format!("refine_y{y}_n{}", s.grid.steps());
            let fine_name = format!("refine_y{y}_n{}", fine.steps());
            let coarse = runner.run(&coarse_name, y, 1.0, s.aux_paths, &s.grid)?;
            let refined = runner.run(&fine_name, y, 1.0, s.aux_paths, &fine)?;
            let pc = runner.proportions(&coarse)?;
            let pf = runner.proportions(&refined)?;
            record(&coarse_name, Some(y), 1.0, &coarse, &pc, &target);
            record(&fine_name, Some(y), 1.0, &refined, &pf, &target);
            checks.push(Check::at_most(
                format!("y{y}.tv_refined_minus_tv_coarse"),
                total_variation(&pf, &target) - total_variation(&pc, &target),
                tv_noise_band(&target, s.aux_paths),
                Source::Derived,
            ));
        }
    }

    Ok(Report {
        tables: vec![("sample.csv".into(), table)],
        files,
        checks,
    })
}
