//! Noisy-covariate logistic world and maximum-likelihood fitting.
//!
//! Clean covariates are uniform in the ball of radius `R`, observed through
//! `X_v = λ_v X₀ + σ_v Z`, with labels `y | X_v ∼ Bernoulli(σ(X_vᵀβ*))`. The
//! "true" conditional is therefore the logistic model at `β*` itself.

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Error, FitFailureReason, Result};
use crate::estimators::{ConditionalModel, PointSampler};
use crate::rng::SeededRng;
use crate::schedule::{lambda_of, sigma_sq_of};
use crate::table::write_labeled_table;
use crate::{dot, norm};

/// `‖β‖` beyond which the iteration is taken to be diverging on separable data.
pub const DIVERGENCE_NORM: f64 = 1e6;
/// Ridge added to the Hessian when the plain Newton system is singular.
pub const RIDGE: f64 = 1e-8;
const MAX_HALVINGS: usize = 60;
/// Relative resolution of the mean NLL; changes below it are rounding noise.
pub const NLL_ROUNDING: f64 = 64.0 * f64::EPSILON;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// One point uniform in the `d`-ball of radius `R`: Gaussian direction,
/// radius `R·U^{1/d}`.
pub fn draw_uniform_ball(dim: usize, radius: f64, rng: &mut SeededRng) -> Vec<f64> {
    loop {
        let z = rng.normal_vec(dim);
        let n = norm(&z);
        if n == 0.0 {
            continue;
        }
        let r = radius * rng.uniform().powf(1.0 / dim as f64);
        return z.into_iter().map(|v| v * r / n).collect();
    }
}

/// `n` rows uniform in the ball, row-major.
pub fn sample_uniform_ball(dim: usize, radius: f64, n: usize, rng: &mut SeededRng) -> Result<Vec<Vec<f64>>> {
    if !(radius > 0.0) || dim == 0 {
        return Err(domain("uniform ball needs R > 0 and d >= 1"));
    }
    Ok((0..n).map(|_| draw_uniform_ball(dim, radius, rng)).collect())
}

/// `β*` of norm `R/2` along `(1, …, 1)/√d`.
pub fn default_beta_star(dim: usize, radius: f64) -> Vec<f64> {
    vec![0.5 * radius / (dim as f64).sqrt(); dim]
}

/// The data-generating law at noise level `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticWorld {
    dim: usize,
    radius: f64,
    noise: f64,
    lambda: f64,
    sigma: f64,
    beta_star: Vec<f64>,
}

impl LogisticWorld {
    pub fn new(dim: usize, radius: f64, noise: f64, beta_star: Vec<f64>) -> Result<Self> {
        if dim == 0 || !(radius > 0.0) {
            return Err(domain("logistic world needs d >= 1 and R > 0"));
        }
        if beta_star.len() != dim || beta_star.iter().any(|b| !b.is_finite()) {
            return Err(domain("β* must be finite with d entries"));
        }
        Ok(Self {
            dim,
            radius,
            noise,
            lambda: lambda_of(noise)?,
            sigma: sigma_sq_of(noise)?.sqrt(),
            beta_star,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn beta_star(&self) -> &[f64] {
        &self.beta_star
    }

    pub fn truth(&self) -> LogisticModel {
        LogisticModel {
            beta: self.beta_star.clone(),
        }
    }

    /// A draw of `X_v`.
    pub fn draw_covariate(&self, rng: &mut SeededRng) -> Vec<f64> {
        let x0 = draw_uniform_ball(self.dim, self.radius, rng);
        if self.sigma == 0.0 {
            return x0;
        }
        x0.into_iter().map(|v| self.lambda * v + self.sigma * rng.normal()).collect()
    }

    /// A draw of `(X_v, y)`.
    pub fn draw_pair(&self, rng: &mut SeededRng) -> (Vec<f64>, u8) {
        let x = self.draw_covariate(rng);
        let p = sigmoid(dot(&x, &self.beta_star));
        let y = u8::from(rng.uniform() < p);
        (x, y)
    }

    /// A draw of `X_v | y` by rejection from the marginal.
    pub fn draw_given_label(&self, y: usize, rng: &mut SeededRng) -> Vec<f64> {
        loop {
            let x = self.draw_covariate(rng);
            let p1 = sigmoid(dot(&x, &self.beta_star));
            let accept = if y == 1 { p1 } else { 1.0 - p1 };
            if rng.uniform() < accept {
                return x;
            }
        }
    }

    pub fn marginal(&self) -> MarginalSampler<'_> {
        MarginalSampler(self)
    }

    pub fn given_label(&self, y: usize) -> LabelSampler<'_> {
        LabelSampler { world: self, y }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MarginalSampler<'a>(&'a LogisticWorld);

impl PointSampler for MarginalSampler<'_> {
    fn draw(&self, rng: &mut SeededRng) -> Vec<f64> {
        self.0.draw_covariate(rng)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LabelSampler<'a> {
    world: &'a LogisticWorld,
    y: usize,
}

impl PointSampler for LabelSampler<'_> {
    fn draw(&self, rng: &mut SeededRng) -> Vec<f64> {
        self.world.draw_given_label(self.y, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticDataset {
    /// Row-major `n × d` covariates.
    x: Vec<f64>,
    y: Vec<u8>,
    dim: usize,
    pub noise: f64,
    pub radius: f64,
    pub seed: u64,
}

impl LogisticDataset {
    pub fn new(x: Vec<f64>, y: Vec<u8>, dim: usize) -> Result<Self> {
        if dim == 0 || x.len() != y.len() * dim {
            return Err(domain("covariates and labels disagree in size"));
        }
        if y.iter().any(|&l| l > 1) || x.iter().any(|v| !v.is_finite()) {
            return Err(domain("labels must be 0/1 and covariates finite"));
        }
        Ok(Self {
            x,
            y,
            dim,
            noise: 0.0,
            radius: 0.0,
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[u8] {
        &self.y
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.x.chunks_exact(self.dim)
    }

    /// Label-first point table.
    pub fn to_table_string(&self) -> String {
        write_labeled_table(self.dim, self.y.iter().copied().zip(self.rows()))
    }

    /// Mean negative log-likelihood at `β`.
    pub fn nll(&self, beta: &[f64]) -> f64 {
        let total: f64 = self
            .rows()
            .zip(&self.y)
            .map(|(x, &y)| {
                let z = dot(x, beta);
                softplus(z) - if y == 1 { z } else { 0.0 }
            })
            .sum();
        total / self.len() as f64
    }

    /// Gradient of [`Self::nll`].
    pub fn nll_grad(&self, beta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for (x, &y) in self.rows().zip(&self.y) {
            let r = sigmoid(dot(x, beta)) - f64::from(y);
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += r * xi;
            }
        }
        let n = self.len() as f64;
        g.iter_mut().for_each(|gi| *gi /= n);
        g
    }

    fn nll_hessian(&self, beta: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        let mut h = DMatrix::zeros(d, d);
        for x in self.rows() {
            let p = sigmoid(dot(x, beta));
            let w = p * (1.0 - p);
            for i in 0..d {
                for j in 0..=i {
                    h[(i, j)] += w * x[i] * x[j];
                }
            }
        }
        let n = self.len() as f64;
        for i in 0..d {
            for j in 0..=i {
                h[(i, j)] /= n;
                h[(j, i)] = h[(i, j)];
            }
        }
        h
    }
}

/// `n` pairs from `world`.
pub fn make_dataset(world: &LogisticWorld, n: usize, rng: &mut SeededRng) -> LogisticDataset {
    let mut x = Vec::with_capacity(n * world.dim);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let (xi, yi) = world.draw_pair(rng);
        x.extend(xi);
        y.push(yi);
    }
    LogisticDataset {
        x,
        y,
        dim: world.dim,
        noise: world.noise,
        radius: world.radius,
        seed: rng.seed(),
    }
}

/// `p(y=1|x) = σ(xᵀβ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub beta: Vec<f64>,
}

impl LogisticModel {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(domain("β must be finite"));
        }
        Ok(Self { beta })
    }
}

impl ConditionalModel for LogisticModel {
    fn num_labels(&self) -> usize {
        2
    }

    fn prob(&self, x: &[f64], y: usize) -> f64 {
        let z = dot(x, &self.beta);
        if y == 1 {
            sigmoid(z)
        } else {
            sigmoid(-z)
        }
    }

    /// `(1 - σ)β` for `y = 1`, `-σβ` for `y = 0`.
    fn log_grad(&self, x: &[f64], y: usize) -> Vec<f64> {
        let p = sigmoid(dot(x, &self.beta));
        let c = if y == 1 { 1.0 - p } else { -p };
        self.beta.iter().map(|b| c * b).collect()
    }
}

/// Iteration record of a successful fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub model: LogisticModel,
    pub iterations: usize,
    pub grad_norm: f64,
    /// NLL after each accepted step, starting from `β = 0`.
    pub nll_trace: Vec<f64>,
}

fn solve_newton(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Some(ch.solve(g));
    }
    let scale = h.diagonal().amax().max(1.0);
    let ridged = h + DMatrix::identity(h.nrows(), h.ncols()) * (RIDGE * scale);
    ridged.cholesky().map(|ch| ch.solve(g))
}

/// Maximum-likelihood `β̂` by damped Newton from `β = 0`, stopping when the
/// ℓ∞ gradient of the mean NLL drops below `tol`. Separable data are reported
/// either when `‖β‖` passes [`DIVERGENCE_NORM`] or when the final iterate
/// separates the rows.
pub fn fit_mle(data: &LogisticDataset, tol: f64, max_iter: usize) -> Result<FitReport> {
    let d = data.dim;
    if data.len() < d + 1 {
        return Err(domain(format!("fit needs n >= d + 1 = {}, got {}", d + 1, data.len())));
    }
    let mut beta = vec![0.0; d];
    let mut nll = data.nll(&beta);
    let mut trace = vec![nll];
    let failure = |reason, iterations, grad: &[f64], beta: &[f64]| Error::FitFailure {
        reason,
        iterations,
        grad_norm: grad.iter().fold(0.0f64, |m, g| m.max(g.abs())),
        last_beta: beta.to_vec(),
    };
    for iter in 0..max_iter {
        let grad = data.nll_grad(&beta);
        let grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm < tol {
            // An iterate that classifies every row correctly certifies that
            // the data are separable, so no finite maximizer exists.
            if data.rows().zip(&data.y).all(|(x, &y)| (2.0 * f64::from(y) - 1.0) * dot(x, &beta) > 0.0) {
                return Err(failure(FitFailureReason::Separable, iter, &grad, &beta));
            }
            return Ok(FitReport {
                model: LogisticModel { beta },
                iterations: iter,
                grad_norm,
                nll_trace: trace,
            });
        }
        let h = data.nll_hessian(&beta);
        let g = DVector::from_column_slice(&grad);
        let Some(dir) = solve_newton(&h, &g) else {
            return Err(failure(FitFailureReason::SingularHessian, iter, &grad, &beta));
        };
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<f64> = beta.iter().zip(dir.iter()).map(|(b, s)| b - step * s).collect();
            let cand_nll = data.nll(&cand);
            // Near the optimum the true decrease drops below what the NLL can
            // resolve; a full step that is flat to rounding is then accepted.
            let flat = step == 1.0 && cand_nll <= nll + NLL_ROUNDING * nll.abs().max(1.0);
            if cand_nll <= nll || flat {
                accepted = Some((cand, cand_nll));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cand_nll)) = accepted else {
            return Err(failure(FitFailureReason::NotConverged, iter, &grad, &beta));
        };
        beta = cand;
        nll = cand_nll;
        trace.push(nll);
        if norm(&beta) > DIVERGENCE_NORM {
            return Err(failure(FitFailureReason::Separable, iter + 1, &data.nll_grad(&beta), &beta));
        }
    }
    let grad = data.nll_grad(&beta);
    Err(failure(FitFailureReason::NotConverged, max_iter, &grad, &beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn world(v: f64) -> LogisticWorld {
        LogisticWorld::new(5, 3.0, v, default_beta_star(5, 3.0)).unwrap()
    }

    #[test]
    fn ball_rows_inside_radius() {
        let mut rng = SeededRng::new(1);
        let rows = sample_uniform_ball(4, 2.5, 5000, &mut rng).unwrap();
        assert!(rows.iter().all(|r| norm(r) <= 2.5));
        let n = rows.len() as f64;
        for j in 0..4 {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            assert!(m.abs() < 4.0 * 2.5 / n.sqrt());
        }
        assert!(sample_uniform_ball(2, 0.0, 1, &mut rng).is_err());
    }

    #[test]
    fn one_dimensional_ball_passes_ks() {
        let mut rng = SeededRng::new(7);
        let n = 100_000;
        let mut xs: Vec<f64> = sample_uniform_ball(1, 2.0, n, &mut rng).unwrap().into_iter().map(|r| r[0]).collect();
        xs.sort_by(f64::total_cmp);
        let nf = n as f64;
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let cdf = (x + 2.0) / 4.0;
                (cdf - i as f64 / nf).abs().max(((i + 1) as f64 / nf - cdf).abs())
            })
            .fold(0.0, f64::max);
        // Asymptotic 1% critical value of the KS statistic.
        assert!(d < 1.628 / nf.sqrt(), "D = {d}");
    }

    #[test]
    fn zero_noise_is_clean_data() {
        let w = world(0.0);
        let mut a = SeededRng::new(3);
        let mut b = SeededRng::new(3);
        assert_eq!(w.draw_covariate(&mut a), draw_uniform_ball(5, 3.0, &mut b));
    }

    #[test]
    fn noise_variance_at_point_three() {
        assert!((sigma_sq_of(0.3).unwrap() - 0.451).abs() < 5e-4);
    }

    #[test]
    fn label_frequency_matches_model() {
        let w = world(0.1);
        let n = 100_000;
        let data = make_dataset(&w, n, &mut SeededRng::new(5));
        let freq = data.labels().iter().filter(|&&y| y == 1).count() as f64 / n as f64;
        let mut rng = SeededRng::new(6);
        let ps: Vec<f64> = (0..n).map(|_| sigmoid(dot(&w.draw_covariate(&mut rng), w.beta_star()))).collect();
        let mean = ps.iter().sum::<f64>() / n as f64;
        let se = (mean * (1.0 - mean) / n as f64).sqrt() * 2f64.sqrt();
        assert!((freq - mean).abs() < 4.0 * se, "{freq} vs {mean}");
    }

    #[test]
    fn log_grad_identities() {
        let m = LogisticModel::new(vec![0.4, -1.1, 0.7]).unwrap();
        let x = [0.3, 0.2, -0.9];
        let diff: Vec<f64> = m.log_grad(&x, 1).iter().zip(m.log_grad(&x, 0)).map(|(a, b)| a - b).collect();
        for (d, b) in diff.iter().zip(&m.beta) {
            assert_relative_eq!(*d, *b, max_relative = 1e-15);
        }
        assert_eq!(LogisticModel::new(vec![0.0; 2]).unwrap().log_grad(&[5.0, 1.0], 1), vec![0.0; 2]);
        let sat = LogisticModel::new(vec![1.0]).unwrap().log_grad(&[800.0], 1);
        assert_eq!(sat, vec![0.0]);
    }

    #[test]
    fn log_grad_matches_finite_difference() {
        let mut rng = SeededRng::new(9);
        for _ in 0..50 {
            let beta = rng.normal_vec(3);
            let x = rng.normal_vec(3);
            let m = LogisticModel::new(beta).unwrap();
            for y in 0..2 {
                let g = m.log_grad(&x, y);
                for j in 0..3 {
                    let h = 1e-6;
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let fd = (m.prob(&xp, y).ln() - m.prob(&xm, y).ln()) / (2.0 * h);
                    assert!((g[j] - fd).abs() <= 1e-6 * g[j].abs().max(1e-3), "{} vs {fd}", g[j]);
                }
            }
        }
    }

    #[test]
    fn newton_matches_gradient_descent() {
        let w = LogisticWorld::new(2, 3.0, 0.1, default_beta_star(2, 3.0)).unwrap();
        let data = make_dataset(&w, 400, &mut SeededRng::new(12));
        let fit = fit_mle(&data, 1e-12, 100).unwrap();
        // Plain gradient descent with step 1/L, L = max‖x‖²/4.
        let lip = data.rows().map(|r| dot(r, r)).fold(0.0, f64::max) / 4.0;
        let mut beta = vec![0.0; 2];
        for _ in 0..200_000 {
            let g = data.nll_grad(&beta);
            if g.iter().all(|v| v.abs() < 1e-12) {
                break;
            }
            for (b, gi) in beta.iter_mut().zip(&g) {
                *b -= gi / lip;
            }
        }
        let diff = norm(&fit.model.beta.iter().zip(&beta).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(diff < 1e-6, "{diff}");
        assert!(fit
            .nll_trace
            .windows(2)
            .all(|w| w[1] <= w[0] + NLL_ROUNDING * w[0].abs().max(1.0)));
    }

    #[test]
    fn large_sample_recovers_beta_star() {
        let w = world(0.1);
        let small = fit_mle(&make_dataset(&w, 100, &mut SeededRng::new(1)), 1e-10, 100).unwrap();
        let big = fit_mle(&make_dataset(&w, 50_000, &mut SeededRng::new(2)), 1e-10, 100).unwrap();
        let err = |m: &LogisticModel| norm(&m.beta.iter().zip(w.beta_star()).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(err(&big.model) < 0.1, "{}", err(&big.model));
        assert!(err(&big.model) < err(&small.model));
    }

    #[test]
    fn same_label_data_is_separable() {
        let data = LogisticDataset::new(vec![1.0, 0.5, 0.3, 0.2, 0.7, -0.1], vec![1, 1, 1], 2).unwrap();
        match fit_mle(&data, 1e-10, 500) {
            Err(Error::FitFailure { reason, last_beta, .. }) => {
                assert_eq!(reason, FitFailureReason::Separable);
                assert_eq!(last_beta.len(), 2);
            }
            other => panic!("expected a fit failure, got {other:?}"),
        }
    }

    #[test]
    fn too_few_rows_rejected() {
        let data = LogisticDataset::new(vec![1.0, 0.0, 0.0, 1.0], vec![1, 0], 2).unwrap();
        assert!(matches!(fit_mle(&data, 1e-8, 10), Err(Error::Domain(_))));
    }

    #[test]
    fn conditional_sampler_tilts_toward_label() {
        let w = world(0.1);
        let mut rng = SeededRng::new(4);
        let n = 4000;
        let mut proj = |y| (0..n).map(|_| dot(&w.draw_given_label(y, &mut rng), w.beta_star())).sum::<f64>() / n as f64;
        let m1 = proj(1);
        let m0 = proj(0);
        assert!(m1 > 0.3 && m0 < -0.3, "{m1} {m0}");
    }

    #[test]
    fn table_export_label_first() {
        let data = LogisticDataset::new(vec![0.5, -1.0, 2.0, 0.25], vec![1, 0], 2).unwrap();
        let text = data.to_table_string();
        let mut lines = text.lines().skip(1);
        assert!(lines.next().unwrap().starts_with("1,"));
        assert!(lines.next().unwrap().starts_with("0,"));
    }
}
