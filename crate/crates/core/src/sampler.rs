//! Exponential-integrator classifier-guided reverse process.
//!
//! One step from `t_k` to `t_{k+1}` with `τ = t_{k+1} - t_k`, fields frozen at
//! the left endpoint and evaluated at forward time `s_k = T - t_k`:
//!
//! ```text
//! x' = e^τ x + 2(e^τ - 1)(score(s_k, x) + γ_c guidance(s_k, x)) + √(e^{2τ} - 1) Z
//! ```

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::pointcloud::LabeledPointCloud;
use crate::rng::SeededRng;
use crate::schedule::TimeGrid;
use crate::table::{format_f64, write_point_table};
use crate::norm_sq;

/// Largest fraction of paths allowed to abort before a run fails.
pub const MAX_ABORTED_FRACTION: f64 = 1e-3;

/// Provenance carried alongside a batch of samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchMeta {
    pub seed: u64,
    /// Forward time the samples represent.
    pub time: Option<f64>,
    pub label: Option<usize>,
    pub gamma_c: Option<f64>,
    pub horizon: Option<f64>,
    pub early_stop: Option<f64>,
    pub steps: Option<usize>,
    pub grid_hash: Option<u64>,
    pub model_ids: Vec<String>,
    pub aborted: usize,
}

/// `n × d` samples stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    samples: Vec<f64>,
    dim: usize,
    meta: BatchMeta,
}

impl SampleBatch {
    pub fn new(samples: Vec<f64>, dim: usize, meta: BatchMeta) -> Self {
        assert!(dim > 0 && samples.len().is_multiple_of(dim), "ragged sample buffer");
        Self { samples, dim, meta }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.samples.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.samples
    }

    pub fn meta(&self) -> &BatchMeta {
        &self.meta
    }

    /// Sample mean and unbiased covariance.
    pub fn mean_and_covariance(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.dim;
        let n = self.len() as f64;
        let mut mean = vec![0.0; d];
        for row in self.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = vec![vec![0.0; d]; d];
        for row in self.rows() {
            for i in 0..d {
                let di = row[i] - mean[i];
                for j in 0..d {
                    cov[i][j] += di * (row[j] - mean[j]);
                }
            }
        }
        let denom = (n - 1.0).max(1.0);
        cov.iter_mut().flatten().for_each(|c| *c /= denom);
        (mean, cov)
    }

    pub fn to_point_table(&self) -> String {
        write_point_table(self.dim, self.rows())
    }

    /// `key = value` lines describing the batch.
    pub fn sidecar(&self) -> String {
        let m = &self.meta;
        let mut out = String::new();
        let _ = writeln!(out, "seed = {}", m.seed);
        let _ = writeln!(out, "n = {}", self.len());
        let _ = writeln!(out, "dim = {}", self.dim);
        if let Some(t) = m.horizon {
            let _ = writeln!(out, "T = {}", format_f64(t));
        }
        if let Some(d) = m.early_stop {
            let _ = writeln!(out, "delta = {}", format_f64(d));
        }
        if let Some(n) = m.steps {
            let _ = writeln!(out, "N = {n}");
        }
        if let Some(g) = m.gamma_c {
            let _ = writeln!(out, "gamma_c = {}", format_f64(g));
        }
        if let Some(h) = m.grid_hash {
            let _ = writeln!(out, "grid_hash = {h:016x}");
        }
        if let Some(t) = m.time {
            let _ = writeln!(out, "time = {}", format_f64(t));
        }
        if let Some(y) = m.label {
            let _ = writeln!(out, "label = {y}");
        }
        if !m.model_ids.is_empty() {
            let _ = writeln!(out, "model_ids = {}", m.model_ids.join(","));
        }
        let _ = writeln!(out, "aborted = {}", m.aborted);
        out
    }
}

/// A time-dependent vector field `(s, x) ↦ v`, with `s` the forward time.
pub trait VectorField: Sync {
    fn eval(&self, s: f64, x: &[f64]) -> Result<Vec<f64>>;
}

impl<F> VectorField for F
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>> + Sync,
{
    fn eval(&self, s: f64, x: &[f64]) -> Result<Vec<f64>> {
        self(s, x)
    }
}

/// The field that is identically zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroField;

impl VectorField for ZeroField {
    fn eval(&self, _: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; x.len()])
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Initialization<'a> {
    /// `N(0, I)`, the stationary law.
    StandardNormal,
    /// Forward draws from the cloud at time `T`, conditioned on `label` if given.
    Exact {
        cloud: &'a LabeledPointCloud,
        label: Option<usize>,
    },
}

#[derive(Debug, Clone)]
pub struct GuidedRun<'a> {
    pub grid: TimeGrid,
    pub gamma_c: f64,
    pub init: Initialization<'a>,
    pub seed: u64,
    pub n_paths: usize,
    pub dim: usize,
    pub model_ids: Vec<String>,
}

impl<'a> GuidedRun<'a> {
    pub fn new(grid: TimeGrid, gamma_c: f64, seed: u64, n_paths: usize, dim: usize) -> Result<Self> {
        if !(gamma_c >= 0.0) || !gamma_c.is_finite() {
            return Err(domain(format!("γ_c must be finite and non-negative, got {gamma_c}")));
        }
        if n_paths == 0 || dim == 0 {
            return Err(domain("a run needs at least one path and one dimension"));
        }
        Ok(Self {
            grid,
            gamma_c,
            init: Initialization::StandardNormal,
            seed,
            n_paths,
            dim,
            model_ids: Vec::new(),
        })
    }

    pub fn with_init(mut self, init: Initialization<'a>) -> Self {
        self.init = init;
        self
    }

    pub fn with_model_ids(mut self, ids: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.model_ids = ids.into_iter().map(Into::into).collect();
        self
    }

    fn initial_state(&self, rng: &mut SeededRng) -> Result<Vec<f64>> {
        match self.init {
            Initialization::StandardNormal => Ok(rng.normal_vec(self.dim)),
            Initialization::Exact { cloud, label } => {
                if cloud.dim() != self.dim {
                    return Err(domain("initialization cloud has the wrong dimension"));
                }
                let batch = cloud.sample_forward(self.grid.horizon(), label, 1, rng)?;
                Ok(batch.as_flat().to_vec())
            }
        }
    }
}

/// One exponential-integrator step from `t_k` to `t_{k+1}`.
pub fn reverse_step(
    x: &[f64],
    k: usize,
    score: &impl VectorField,
    guidance: &impl VectorField,
    grid: &TimeGrid,
    gamma_c: f64,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    if k >= grid.steps() {
        return Err(domain(format!("step {k} outside a grid of {} steps", grid.steps())));
    }
    let s = grid.forward_time(k);
    let tau = grid.step_size(k);
    let step_err = || Error::Step {
        step: k,
        state: x.to_vec(),
    };
    let mut drift = score.eval(s, x).map_err(|_| step_err())?;
    if gamma_c != 0.0 {
        let g = guidance.eval(s, x).map_err(|_| step_err())?;
        for (d, gi) in drift.iter_mut().zip(&g) {
            *d += gamma_c * gi;
        }
    }
    if drift.len() != x.len() || drift.iter().any(|v| !v.is_finite()) {
        return Err(step_err());
    }
    let growth = tau.exp();
    let coef = 2.0 * tau.exp_m1();
    let noise = (2.0 * tau).exp_m1().sqrt();
    let next: Vec<f64> = x
        .iter()
        .zip(&drift)
        .map(|(xi, di)| growth * xi + coef * di + noise * rng.normal())
        .collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(step_err());
    }
    Ok(next)
}

fn run_path(
    run: &GuidedRun<'_>,
    score: &impl VectorField,
    guidance: &impl VectorField,
    path: usize,
) -> Result<Vec<f64>> {
    let mut rng = SeededRng::substream(run.seed, path as u64);
    let mut x = run.initial_state(&mut rng)?;
    for k in 0..run.grid.steps() {
        x = reverse_step(&x, k, score, guidance, &run.grid, run.gamma_c, &mut rng)?;
    }
    Ok(x)
}

/// Simulates `n_paths` independent trajectories and returns their states at
/// `t_N = T - δ`. Path `i` uses stream `i` of the run seed, so the result does
/// not depend on thread count.
pub fn run_reverse(run: &GuidedRun<'_>, score: &impl VectorField, guidance: &impl VectorField) -> Result<SampleBatch> {
    let results: Vec<Result<Vec<f64>>> = (0..run.n_paths)
        .into_par_iter()
        .map(|i| run_path(run, score, guidance, i))
        .collect();
    let mut samples = Vec::with_capacity(run.n_paths * run.dim);
    let mut aborted = 0;
    for r in results {
        match r {
            Ok(x) => samples.extend(x),
            Err(Error::Step { .. }) => aborted += 1,
            Err(e) => return Err(e),
        }
    }
    if aborted as f64 > MAX_ABORTED_FRACTION * run.n_paths as f64 {
        return Err(Error::AbortedPaths {
            aborted,
            total: run.n_paths,
            max_fraction: MAX_ABORTED_FRACTION,
        });
    }
    let meta = BatchMeta {
        seed: run.seed,
        time: Some(run.grid.early_stop()),
        label: match run.init {
            Initialization::Exact { label, .. } => label,
            Initialization::StandardNormal => None,
        },
        gamma_c: Some(run.gamma_c),
        horizon: Some(run.grid.horizon()),
        early_stop: Some(run.grid.early_stop()),
        steps: Some(run.grid.steps()),
        grid_hash: Some(run.grid.fingerprint()),
        model_ids: run.model_ids.clone(),
        aborted,
    };
    Ok(SampleBatch::new(samples, run.dim, meta))
}

/// Nearest-center histogram of a batch, normalized to a pmf.
pub fn cluster_proportions(batch: &SampleBatch, centers: &[Vec<f64>]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(domain("cluster proportions of an empty batch"));
    }
    if centers.is_empty() || centers.iter().any(|c| c.len() != batch.dim()) {
        return Err(domain("centers must be non-empty and match the batch dimension"));
    }
    for (i, a) in centers.iter().enumerate() {
        if centers[..i].iter().any(|b| b == a) {
            return Err(domain("centers must be distinct"));
        }
    }
    let mut counts = vec![0usize; centers.len()];
    for row in batch.rows() {
        let nearest = centers
            .iter()
            .map(|c| norm_sq(&row.iter().zip(c).map(|(a, b)| a - b).collect::<Vec<_>>()))
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .expect("non-empty centers");
        counts[nearest] += 1;
    }
    let n = batch.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// `½ Σ |p_i - q_i|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// The built-in two-label demo cloud in the plane, on the unit circle.
pub fn demo_cloud() -> LabeledPointCloud {
    LabeledPointCloud::new(
        vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]],
        vec![0, 0, 1, 1],
        vec![0.35, 0.15, 0.2, 0.3],
    )
    .expect("demo cloud is valid")
}

/// Exact score and guidance fields of a point cloud.
pub fn oracle_fields(
    cloud: &LabeledPointCloud,
    label: usize,
) -> (
    impl VectorField + '_,
    impl VectorField + '_,
) {
    let score = move |s: f64, x: &[f64]| cloud.score(s, x);
    let guidance = move |s: f64, x: &[f64]| cloud.guidance(s, x, label);
    (score, guidance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{make_grid, sigma_sq_of};

    fn batch_of(rows: &[[f64; 2]]) -> SampleBatch {
        SampleBatch::new(rows.iter().flatten().copied().collect(), 2, BatchMeta::default())
    }

    #[test]
    fn zero_gamma_ignores_guidance() {
        let grid = make_grid(2.0, 0.1, 40).unwrap();
        let score = |s: f64, x: &[f64]| Ok(x.iter().map(|v| -v / sigma_sq_of(s).unwrap()).collect());
        let wild = |_: f64, x: &[f64]| Ok(vec![1e3; x.len()]);
        let x = [0.3, -0.4];
        let a = reverse_step(&x, 5, &score, &ZeroField, &grid, 0.0, &mut SeededRng::new(1)).unwrap();
        let b = reverse_step(&x, 5, &score, &wild, &grid, 0.0, &mut SeededRng::new(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_step_is_near_identity() {
        let grid = TimeGrid::from_times(vec![0.0, 1e-9, 1.0], 2.0, 1.0).unwrap();
        let field = |_: f64, x: &[f64]| Ok(vec![1.0; x.len()]);
        let x = [0.5, 2.0];
        let y = reverse_step(&x, 0, &field, &ZeroField, &grid, 1.0, &mut SeededRng::new(2)).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn non_finite_field_is_a_step_error() {
        let grid = make_grid(2.0, 0.1, 40).unwrap();
        let bad = |_: f64, x: &[f64]| Ok(vec![f64::NAN; x.len()]);
        let r = reverse_step(&[0.0], 3, &bad, &ZeroField, &grid, 1.0, &mut SeededRng::new(0));
        assert!(matches!(r, Err(Error::Step { step: 3, .. })));
        assert!(reverse_step(&[0.0], 40, &ZeroField, &ZeroField, &grid, 1.0, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn point_mass_variance_follows_discrete_recursion() {
        // Target δ₀: exact score -x/σ_s². The linear update gives a closed-form
        // variance recursion v' = a² v + (e^{2τ} - 1).
        let grid = make_grid(6.0, 0.01, 400).unwrap();
        let score = |s: f64, x: &[f64]| {
            let v = sigma_sq_of(s)?;
            Ok(x.iter().map(|xi| -xi / v).collect())
        };
        let mut var = 1.0;
        for k in 0..grid.steps() {
            let tau = grid.step_size(k);
            let a = tau.exp() - 2.0 * tau.exp_m1() / sigma_sq_of(grid.forward_time(k)).unwrap();
            var = a * a * var + (2.0 * tau).exp_m1();
        }
        let sigma_delta_sq = sigma_sq_of(0.01).unwrap();
        assert!((var / sigma_delta_sq - 1.0).abs() < 0.1, "{var} vs {sigma_delta_sq}");

        let run = GuidedRun::new(grid, 1.0, 11, 20_000, 1).unwrap();
        let batch = run_reverse(&run, &score, &ZeroField).unwrap();
        let (mean, cov) = batch.mean_and_covariance();
        let se = (var / 20_000.0).sqrt();
        assert!(mean[0].abs() < 4.0 * se);
        // Var of a sample variance ≈ 2σ⁴/n.
        assert!((cov[0][0] - var).abs() < 4.0 * var * (2.0 / 20_000f64).sqrt());
    }

    #[test]
    fn runs_are_deterministic() {
        let cloud = demo_cloud();
        let (score, guidance) = oracle_fields(&cloud, 1);
        let grid = make_grid(4.0, 0.05, 120).unwrap();
        let run = GuidedRun::new(grid, 1.0, 99, 300, 2).unwrap();
        let a = run_reverse(&run, &score, &guidance).unwrap();
        let b = run_reverse(&run, &score, &guidance).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 300);
        assert_eq!(a.meta().gamma_c, Some(1.0));
    }

    #[test]
    fn aborted_paths_fail_the_run() {
        let grid = make_grid(2.0, 0.1, 40).unwrap();
        let bad = |_: f64, x: &[f64]| {
            if x[0] > 2.0 {
                Ok(vec![f64::INFINITY])
            } else {
                Ok(vec![0.0])
            }
        };
        let run = GuidedRun::new(grid, 1.0, 5, 2000, 1).unwrap();
        assert!(matches!(
            run_reverse(&run, &bad, &ZeroField),
            Err(Error::AbortedPaths { .. })
        ));
    }

    #[test]
    fn proportions_basic() {
        let centers = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let all_at_first = batch_of(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]);
        assert_eq!(cluster_proportions(&all_at_first, &centers).unwrap(), vec![1.0, 0.0]);
        let sym = batch_of(&[[0.9, 0.1], [-1.2, 0.0], [2.0, 0.0], [-0.3, 5.0]]);
        assert_eq!(cluster_proportions(&sym, &centers).unwrap(), vec![0.5, 0.5]);
        let empty = SampleBatch::new(vec![], 2, BatchMeta::default());
        assert!(cluster_proportions(&empty, &centers).is_err());
        assert!(cluster_proportions(&sym, &[vec![1.0, 0.0], vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn guidance_moves_mass_toward_label() {
        let cloud = demo_cloud();
        let lambda = (-0.01f64).exp();
        let centers: Vec<Vec<f64>> = cloud.points().iter().map(|p| p.iter().map(|v| lambda * v).collect()).collect();
        let grid = make_grid(6.0, 0.01, 400).unwrap();
        let (score, guidance) = oracle_fields(&cloud, 1);
        let mass_on_1 = |gamma: f64| {
            let run = GuidedRun::new(grid.clone(), gamma, 3, 3000, 2).unwrap();
            let p = cluster_proportions(&run_reverse(&run, &score, &guidance).unwrap(), &centers).unwrap();
            p[2] + p[3]
        };
        let unconditional = mass_on_1(0.0);
        let guided = mass_on_1(1.0);
        assert!((unconditional - 0.5).abs() < 0.05);
        assert!(guided > 0.95, "{guided}");
    }

    #[test]
    fn sidecar_lists_run_parameters() {
        let grid = make_grid(2.0, 0.1, 40).unwrap();
        let run = GuidedRun::new(grid, 0.5, 8, 4, 1).unwrap().with_model_ids(["score:zero"]);
        let batch = run_reverse(&run, &ZeroField, &ZeroField).unwrap();
        let side = batch.sidecar();
        for key in ["seed = 8", "N = 40", "gamma_c = ", "T = ", "delta = ", "model_ids = score:zero"] {
            assert!(side.contains(key), "{side}");
        }
        assert_eq!(batch.to_point_table().lines().count(), 5);
    }

    #[test]
    fn gamma_must_be_non_negative() {
        let grid = make_grid(2.0, 0.1, 40).unwrap();
        assert!(GuidedRun::new(grid, -1.0, 0, 1, 1).is_err());
    }
}
