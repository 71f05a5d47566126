//! Monte Carlo estimators for the two error functionals that matter for
//! guidance: the expected conditional label KL (the classifier's
//! cross-entropy risk) and the L² guidance-vector error.

mod quadrature;
mod slope;
mod stats;

use rayon::prelude::*;

pub use quadrature::{quadrature_1d, quadrature_piecewise, GaussLegendre, DOUBLING_RTOL, PANEL_ORDER};
pub use slope::{loglog_slope, loglog_slope_trimmed, SlopeFit, TRIM_R2_THRESHOLD};
pub use stats::{median, Estimate, RunningStats};

use crate::rng::SeededRng;

/// Default Monte Carlo sample count.
pub const DEFAULT_N_MC: usize = 10_000;

/// A probabilistic classifier: label pmf at `x` and `∇_x log p(y|x)`.
pub trait ConditionalModel: Sync {
    fn num_labels(&self) -> usize;

    fn prob(&self, x: &[f64], y: usize) -> f64;

    fn log_grad(&self, x: &[f64], y: usize) -> Vec<f64>;

    fn pmf(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_labels()).map(|y| self.prob(x, y)).collect()
    }
}

impl<M: ConditionalModel + ?Sized> ConditionalModel for &M {
    fn num_labels(&self) -> usize {
        (**self).num_labels()
    }

    fn prob(&self, x: &[f64], y: usize) -> f64 {
        (**self).prob(x, y)
    }

    fn log_grad(&self, x: &[f64], y: usize) -> Vec<f64> {
        (**self).log_grad(x, y)
    }

    fn pmf(&self, x: &[f64]) -> Vec<f64> {
        (**self).pmf(x)
    }
}

/// Draws covariates `x` from some distribution.
pub trait PointSampler: Sync {
    fn draw(&self, rng: &mut SeededRng) -> Vec<f64>;
}

impl<F> PointSampler for F
where
    F: Fn(&mut SeededRng) -> Vec<f64> + Sync,
{
    fn draw(&self, rng: &mut SeededRng) -> Vec<f64> {
        self(rng)
    }
}

/// KL value with an out-of-band marker for support violations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kl {
    Finite(f64),
    Infinite,
}

impl Kl {
    pub fn finite(self) -> Option<f64> {
        match self {
            Kl::Finite(v) => Some(v),
            Kl::Infinite => None,
        }
    }
}

/// `Σ_y p_y log(p_y / q_y)` in nats with `0 log 0 = 0`.
pub fn categorical_kl(p: &[f64], q: &[f64]) -> Kl {
    debug_assert_eq!(p.len(), q.len());
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Kl::Infinite;
        }
        total += pi * (pi / qi).ln();
    }
    // Rounding can push the sum a hair below zero for p ≈ q.
    Kl::Finite(total.max(0.0))
}

/// Runs `n` draws of `f` on one stream; `None` marks a rejected draw.
pub fn mc_estimate(n: usize, rng: &mut SeededRng, mut f: impl FnMut(&mut SeededRng) -> Option<f64>) -> Estimate {
    let mut stats = RunningStats::new();
    for _ in 0..n {
        match f(rng) {
            Some(v) if v.is_finite() => stats.push(v),
            _ => stats.reject(),
        }
    }
    stats.estimate()
}

/// Splits `n` draws across `chunks` substreams of `seed`, evaluates them in
/// parallel and merges in chunk order. The result depends only on
/// `(seed, chunks, n)`, never on thread scheduling.
pub fn mc_estimate_chunked(
    n: usize,
    seed: u64,
    chunks: usize,
    f: impl Fn(&mut SeededRng) -> Option<f64> + Sync,
) -> Estimate {
    let chunks = chunks.max(1);
    let partials: Vec<RunningStats> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let size = n / chunks + usize::from(c < n % chunks);
            let mut rng = SeededRng::substream(seed, c as u64);
            let mut stats = RunningStats::new();
            for _ in 0..size {
                match f(&mut rng) {
                    Some(v) if v.is_finite() => stats.push(v),
                    _ => stats.reject(),
                }
            }
            stats
        })
        .collect();
    let mut total = RunningStats::new();
    for p in &partials {
        total.merge(p);
    }
    total.estimate()
}

fn kl_at(truth: &impl ConditionalModel, approx: &impl ConditionalModel, x: &[f64]) -> Option<f64> {
    categorical_kl(&truth.pmf(x), &approx.pmf(x)).finite()
}

fn sq_grad_error(truth: &impl ConditionalModel, approx: &impl ConditionalModel, x: &[f64], y: usize) -> Option<f64> {
    let g = truth.log_grad(x, y);
    let h = approx.log_grad(x, y);
    let v: f64 = g.iter().zip(&h).map(|(a, b)| (a - b).powi(2)).sum();
    v.is_finite().then_some(v)
}

/// `E_x[KL(truth(·|x) ‖ approx(·|x))]` over `n` draws from `sampler`.
pub fn expected_label_kl(
    truth: &impl ConditionalModel,
    approx: &impl ConditionalModel,
    sampler: &impl PointSampler,
    n: usize,
    rng: &mut SeededRng,
) -> Estimate {
    mc_estimate(n, rng, |r| kl_at(truth, approx, &sampler.draw(r)))
}

pub fn expected_label_kl_chunked(
    truth: &impl ConditionalModel,
    approx: &impl ConditionalModel,
    sampler: &impl PointSampler,
    n: usize,
    seed: u64,
    chunks: usize,
) -> Estimate {
    mc_estimate_chunked(n, seed, chunks, |r| kl_at(truth, approx, &sampler.draw(r)))
}

/// `E_x[‖∇ log truth(y|x) - ∇ log approx(y|x)‖²]` over `n` draws from
/// `sampler`, which should target the label-conditional law of `x` (or the
/// marginal, for protocols defined that way).
pub fn guidance_mse(
    truth: &impl ConditionalModel,
    approx: &impl ConditionalModel,
    sampler: &impl PointSampler,
    y: usize,
    n: usize,
    rng: &mut SeededRng,
) -> Estimate {
    mc_estimate(n, rng, |r| sq_grad_error(truth, approx, &sampler.draw(r), y))
}

pub fn guidance_mse_chunked(
    truth: &impl ConditionalModel,
    approx: &impl ConditionalModel,
    sampler: &impl PointSampler,
    y: usize,
    n: usize,
    seed: u64,
    chunks: usize,
) -> Estimate {
    mc_estimate_chunked(n, seed, chunks, |r| sq_grad_error(truth, approx, &sampler.draw(r), y))
}

/// `KL(p(·|y) ‖ p̂(·|y))` between the label-conditional laws of `x` induced by
/// the true and approximate classifiers over a shared marginal `p(x)`:
///
/// `E_{x∼p(·|y)}[log p(y|x) - log p̂(y|x)] + log p̂(y) - log p(y)`
///
/// with `p̂(y) = E_{x∼p}[p̂(y|x)]` estimated from `marginal`. The standard
/// error combines both Monte Carlo terms by the delta method.
#[allow(clippy::too_many_arguments)]
pub fn label_conditional_kl(
    truth: &impl ConditionalModel,
    approx: &impl ConditionalModel,
    conditional: &impl PointSampler,
    marginal: &impl PointSampler,
    y: usize,
    prior: f64,
    n: usize,
    rng: &mut SeededRng,
) -> Estimate {
    let log_ratio = mc_estimate(n, rng, |r| {
        let x = conditional.draw(r);
        let q = approx.prob(&x, y);
        (q > 0.0).then(|| truth.prob(&x, y).ln() - q.ln())
    });
    let approx_prior = mc_estimate(n, rng, |r| Some(approx.prob(&marginal.draw(r), y)));
    let mean = log_ratio.mean + approx_prior.mean.ln() - prior.ln();
    let se_prior = approx_prior.std_error / approx_prior.mean;
    Estimate {
        mean,
        std_error: (log_ratio.std_error.powi(2) + se_prior.powi(2)).sqrt(),
        n,
        rejected: log_ratio.rejected,
    }
}
