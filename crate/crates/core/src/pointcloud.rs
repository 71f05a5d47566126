//! Exact conditional diffusion model for finite weighted labeled point sets.
//!
//! For `P_data = Σ_i w_i δ_{p_i}` the noised marginal at time `t` is a
//! Gaussian mixture with centers `λ_t p_i` and variance `σ_t² I`, so the
//! posterior over source points, the Tweedie score, the conditional scores and
//! the guidance vector are all closed-form.

use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};

use crate::error::{domain, Error, Result};
use crate::estimators::ConditionalModel;
use crate::rng::SeededRng;
use crate::sampler::{BatchMeta, SampleBatch};
use crate::schedule::{coefficients, lambda_of, sigma_sq_of};
use crate::{norm, norm_sq};

const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointCloud {
    points: Vec<Vec<f64>>,
    labels: Vec<usize>,
    weights: Vec<f64>,
    dim: usize,
    radius: f64,
    num_labels: usize,
}

impl LabeledPointCloud {
    /// Validates and builds a cloud. Labels are `0..num_labels`, every one of
    /// which must own at least one point. The support radius is the largest
    /// point norm.
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        let radius = points.iter().map(|p| norm(p)).fold(0.0, f64::max);
        Self::with_radius(points, labels, weights, radius)
    }

    /// As [`new`](Self::new) but with an explicit support radius `R`, which
    /// must bound every point norm.
    pub fn with_radius(
        points: Vec<Vec<f64>>,
        labels: Vec<usize>,
        weights: Vec<f64>,
        radius: f64,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Construction("point cloud is empty".into()));
        }
        if labels.len() != points.len() || weights.len() != points.len() {
            return Err(Error::Construction(format!(
                "{} points, {} labels, {} weights",
                points.len(),
                labels.len(),
                weights.len()
            )));
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::Construction("points must share a positive dimension".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Construction("point coordinates must be finite".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::Construction("weights must be strictly positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Construction(format!("weights sum to {total}, not 1")));
        }
        if let Some(p) = points.iter().find(|p| norm(p) > radius * (1.0 + 1e-12)) {
            return Err(Error::Construction(format!(
                "point with norm {} lies outside radius {radius}",
                norm(p)
            )));
        }
        let num_labels = labels.iter().max().unwrap() + 1;
        if let Some(missing) = (0..num_labels).find(|y| !labels.contains(y)) {
            return Err(Error::Construction(format!("label {missing} has no points")));
        }
        Ok(Self {
            points,
            labels,
            weights,
            dim,
            radius,
            num_labels,
        })
    }

    /// Reads the `label,w,x_1..x_d` table format.
    pub fn from_table_path(path: impl AsRef<Path>) -> Result<Self> {
        let rows = crate::table::read_labeled_table(std::fs::File::open(path)?, true)?;
        Self::from_rows(rows)
    }

    pub fn from_table_str(text: &str) -> Result<Self> {
        Self::from_rows(crate::table::read_labeled_table(text.as_bytes(), true)?)
    }

    fn from_rows(rows: Vec<crate::table::LabeledRow>) -> Result<Self> {
        let mut points = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        let mut weights = Vec::with_capacity(rows.len());
        for row in rows {
            labels.push(row.label);
            weights.push(row.weight.expect("weighted table"));
            points.push(row.coords);
        }
        Self::new(points, labels, weights)
    }

    pub fn to_table_string(&self) -> String {
        crate::table::write_cloud_table(self)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    /// Label prior `p_0(y)`.
    pub fn label_prior(&self, y: usize) -> f64 {
        self.labels
            .iter()
            .zip(&self.weights)
            .filter(|(l, _)| **l == y)
            .map(|(_, w)| w)
            .sum()
    }

    /// Point weights conditioned on label `y`, zero for other labels.
    pub fn conditional_weights(&self, y: usize) -> Result<Vec<f64>> {
        self.check_label(y)?;
        let prior = self.label_prior(y);
        Ok(self
            .labels
            .iter()
            .zip(&self.weights)
            .map(|(l, w)| if *l == y { w / prior } else { 0.0 })
            .collect())
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.num_labels {
            return Err(domain(format!("unknown label {y}")));
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(domain(format!("expected dimension {}, got {}", self.dim, x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(domain("non-finite query point"));
        }
        Ok(())
    }

    /// Unnormalized log posterior weights `log w_i - ‖x - λ p_i‖² / 2σ²`.
    fn log_weights(&self, lambda: f64, sigma_sq: f64, x: &[f64]) -> Vec<f64> {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| {
                let dist_sq: f64 = x.iter().zip(p).map(|(xi, pi)| (xi - lambda * pi).powi(2)).sum();
                w.ln() - dist_sq / (2.0 * sigma_sq)
            })
            .collect()
    }

    pub fn posterior(&self, t: f64, x: &[f64]) -> Result<PosteriorSummary> {
        let (lambda, sigma_sq) = coefficients(t)?;
        self.check_point(x)?;
        let logw = self.log_weights(lambda, sigma_sq, x);
        let total = log_sum_exp(logw.iter().copied());
        let resp: Vec<f64> = logw.iter().map(|l| (l - total).exp()).collect();
        let (mean, trace_cov) = self.moments(&resp, |_| true);

        let mut label_pmf = Vec::with_capacity(self.num_labels);
        let mut label_means = Vec::with_capacity(self.num_labels);
        let mut label_trace_cov = Vec::with_capacity(self.num_labels);
        for y in 0..self.num_labels {
            let lse_y = log_sum_exp(
                logw.iter()
                    .zip(&self.labels)
                    .filter(|(_, l)| **l == y)
                    .map(|(v, _)| *v),
            );
            label_pmf.push((lse_y - total).exp());
            let resp_y: Vec<f64> = logw
                .iter()
                .zip(&self.labels)
                .map(|(v, l)| if *l == y { (v - lse_y).exp() } else { 0.0 })
                .collect();
            let (m_y, tr_y) = self.moments(&resp_y, |i| self.labels[i] == y);
            label_means.push(m_y);
            label_trace_cov.push(tr_y);
        }
        Ok(PosteriorSummary {
            lambda,
            sigma_sq,
            resp,
            mean,
            label_means,
            label_pmf,
            trace_cov,
            label_trace_cov,
        })
    }

    /// Mean and covariance trace of the points under `resp`, restricted to `keep`.
    fn moments(&self, resp: &[f64], keep: impl Fn(usize) -> bool) -> (Vec<f64>, f64) {
        let mut mean = vec![0.0; self.dim];
        for (i, (p, r)) in self.points.iter().zip(resp).enumerate() {
            if keep(i) {
                for (m, pi) in mean.iter_mut().zip(p) {
                    *m += r * pi;
                }
            }
        }
        let trace = self
            .points
            .iter()
            .zip(resp)
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, (p, r))| r * p.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum();
        (mean, trace)
    }

    /// Log marginal density `log p_t(x)`.
    pub fn log_density(&self, t: f64, x: &[f64]) -> Result<f64> {
        let (lambda, sigma_sq) = coefficients(t)?;
        self.check_point(x)?;
        let lse = log_sum_exp(self.log_weights(lambda, sigma_sq, x).into_iter());
        Ok(lse - 0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI * sigma_sq).ln())
    }

    /// Tweedie score `-σ⁻² x + λ σ⁻² m_t(x)`.
    pub fn score(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let (lambda, sigma_sq) = coefficients(t)?;
        self.check_point(x)?;
        let logw = self.log_weights(lambda, sigma_sq, x);
        Ok(tweedie(lambda, sigma_sq, x, &self.weighted_mean(&logw, None)))
    }

    pub fn conditional_score(&self, t: f64, x: &[f64], y: usize) -> Result<Vec<f64>> {
        self.check_label(y)?;
        let (lambda, sigma_sq) = coefficients(t)?;
        self.check_point(x)?;
        let logw = self.log_weights(lambda, sigma_sq, x);
        Ok(tweedie(lambda, sigma_sq, x, &self.weighted_mean(&logw, Some(y))))
    }

    /// Exact guidance `∇ log p_t(y|x) = λ σ⁻² (m_t(x,y) - m_t(x))`.
    pub fn guidance(&self, t: f64, x: &[f64], y: usize) -> Result<Vec<f64>> {
        self.check_label(y)?;
        let (lambda, sigma_sq) = coefficients(t)?;
        self.check_point(x)?;
        let logw = self.log_weights(lambda, sigma_sq, x);
        let m = self.weighted_mean(&logw, None);
        let m_y = self.weighted_mean(&logw, Some(y));
        let scale = lambda / sigma_sq;
        Ok(m_y.iter().zip(&m).map(|(a, b)| scale * (a - b)).collect())
    }

    /// Posterior mean of the points from unnormalized log weights, restricted
    /// to one label when given. The sampler's hot path; skips the traces.
    fn weighted_mean(&self, logw: &[f64], label: Option<usize>) -> Vec<f64> {
        let keep = |i: usize| label.is_none_or(|y| self.labels[i] == y);
        let top = logw
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .fold(f64::NEG_INFINITY, |m, (_, v)| m.max(*v));
        let mut mean = vec![0.0; self.dim];
        let mut total = 0.0;
        for (i, (p, l)) in self.points.iter().zip(logw).enumerate() {
            if keep(i) {
                let w = (l - top).exp();
                total += w;
                for (m, pi) in mean.iter_mut().zip(p) {
                    *m += w * pi;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= total);
        mean
    }

    /// `Tr ∇² log p_t(y|x) = λ² σ⁻⁴ (Tr Σ_t(x,y) - Tr Σ_t(x))`.
    pub fn hessian_trace_log_label_posterior(&self, t: f64, x: &[f64], y: usize) -> Result<f64> {
        self.check_label(y)?;
        Ok(self.posterior(t, x)?.hessian_trace(y))
    }

    /// Forward draws `λ_t p_I + σ_t Z` with `I` drawn from the weights,
    /// restricted to label `y` when given.
    pub fn sample_forward(
        &self,
        t: f64,
        label: Option<usize>,
        n: usize,
        rng: &mut SeededRng,
    ) -> Result<SampleBatch> {
        if n == 0 {
            return Err(domain("sample_forward needs n >= 1"));
        }
        let lambda = lambda_of(t)?;
        let sigma = sigma_sq_of(t)?.sqrt();
        let weights = match label {
            Some(y) => self.conditional_weights(y)?,
            None => self.weights.clone(),
        };
        let index = WeightedIndex::new(&weights).map_err(|e| domain(e.to_string()))?;
        let mut samples = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            let p = &self.points[index.sample(rng)];
            for pi in p {
                samples.push(lambda * pi + sigma * rng.normal());
            }
        }
        let meta = BatchMeta {
            seed: rng.seed(),
            time: Some(t),
            label,
            ..BatchMeta::default()
        };
        Ok(SampleBatch::new(samples, self.dim, meta))
    }

    /// The oracle at a fixed time, viewed as a classifier.
    pub fn at_time(&self, t: f64) -> Result<CloudClassifier<'_>> {
        coefficients(t)?;
        Ok(CloudClassifier { cloud: self, t })
    }
}

fn tweedie(lambda: f64, sigma_sq: f64, x: &[f64], mean: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).map(|(xi, mi)| (lambda * mi - xi) / sigma_sq).collect()
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Posterior of the clean point given a noised observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub lambda: f64,
    pub sigma_sq: f64,
    /// Per-point responsibilities `ρ_i`.
    pub resp: Vec<f64>,
    /// `m_t(x)`.
    pub mean: Vec<f64>,
    /// `m_t(x, y)` per label.
    pub label_means: Vec<Vec<f64>>,
    /// `p_t(·|x)`.
    pub label_pmf: Vec<f64>,
    /// `Tr Σ_t(x)`.
    pub trace_cov: f64,
    /// `Tr Σ_t(x, y)` per label.
    pub label_trace_cov: Vec<f64>,
}

impl PosteriorSummary {
    pub fn guidance(&self, y: usize) -> Vec<f64> {
        let scale = self.lambda / self.sigma_sq;
        self.label_means[y]
            .iter()
            .zip(&self.mean)
            .map(|(my, m)| scale * (my - m))
            .collect()
    }

    pub fn hessian_trace(&self, y: usize) -> f64 {
        let scale = self.lambda * self.lambda / (self.sigma_sq * self.sigma_sq);
        scale * (self.label_trace_cov[y] - self.trace_cov)
    }

    pub fn guidance_norm_bound(&self, radius: f64) -> f64 {
        2.0 * self.lambda * radius / self.sigma_sq
    }

    pub fn hessian_trace_bound(&self, radius: f64) -> f64 {
        2.0 * self.lambda * self.lambda * radius * radius / (self.sigma_sq * self.sigma_sq)
    }

    pub fn mean_norm(&self) -> f64 {
        norm_sq(&self.mean).sqrt()
    }
}

/// Exact label posterior `p_t(y|x)` of a cloud at one diffusion time.
#[derive(Debug, Clone, Copy)]
pub struct CloudClassifier<'a> {
    cloud: &'a LabeledPointCloud,
    t: f64,
}

impl CloudClassifier<'_> {
    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn cloud(&self) -> &LabeledPointCloud {
        self.cloud
    }
}

impl ConditionalModel for CloudClassifier<'_> {
    fn num_labels(&self) -> usize {
        self.cloud.num_labels
    }

    fn prob(&self, x: &[f64], y: usize) -> f64 {
        self.pmf(x)[y]
    }

    fn pmf(&self, x: &[f64]) -> Vec<f64> {
        self.cloud.posterior(self.t, x).expect("valid query").label_pmf
    }

    fn log_grad(&self, x: &[f64], y: usize) -> Vec<f64> {
        self.cloud.guidance(self.t, x, y).expect("valid query")
    }
}
