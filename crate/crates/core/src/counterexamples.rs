//! Two analytic classifier families that separate cross-entropy error from
//! guidance error.
//!
//! * [`PerturbedClassifier`]: multiplies the true `p(y=1|x) = 0.5 + 0.3
//!   tanh(x₁)` by `1 + δ_n sin(n x₁)` on `A_γ = {p(y=1|x) < 1 - γ}`. The KL
//!   error scales as `δ_n²` while the gradient picks up a `δ_n n` term.
//! * [`SharpnessClassifier`]: `σ(2ε sin(x₁/√ε))` against labels independent
//!   of `x`; KL is `Θ(ε²)` but the guidance error is `Θ(ε)`.

use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::estimators::ConditionalModel;
use crate::rng::SeededRng;
use crate::schedule::{lambda_of, sigma_sq_of};

pub const DEFAULT_GAMMA: f64 = 0.3;
/// Largest `ε` accepted by [`SharpnessClassifier`], keeping `|s_ε| ≤ 0.5`.
pub const MAX_SHARPNESS_EPS: f64 = 0.25;

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// True conditional `p(y=1|x) = 0.5 + 0.3 tanh(x₁)`, in `[0.2, 0.8]`.
pub fn base_prob(x: &[f64]) -> f64 {
    0.5 + 0.3 * x[0].tanh()
}

/// `d/dx₁ p(y=1|x) = 0.3 sech²(x₁)`.
fn base_prob_deriv(x1: f64) -> f64 {
    let c = x1.cosh();
    0.3 / (c * c)
}

fn e1_vector(dim: usize, v: f64) -> Vec<f64> {
    let mut g = vec![0.0; dim];
    g[0] = v;
    g
}

/// The smooth truth behind [`PerturbedClassifier`].
#[derive(Debug, Clone, Copy, Default)]
pub struct TanhConditional;

impl ConditionalModel for TanhConditional {
    fn num_labels(&self) -> usize {
        2
    }

    fn prob(&self, x: &[f64], y: usize) -> f64 {
        let p = base_prob(x);
        if y == 1 {
            p
        } else {
            1.0 - p
        }
    }

    fn log_grad(&self, x: &[f64], y: usize) -> Vec<f64> {
        let p = base_prob(x);
        let dp = base_prob_deriv(x[0]);
        e1_vector(x.len(), if y == 1 { dp / p } else { -dp / (1.0 - p) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// `δ_n = 1/n`.
    InvN,
    /// `δ_n = 1/√n`.
    InvSqrtN,
}

impl Regime {
    pub fn amplitude(self, n: u32) -> f64 {
        match self {
            Regime::InvN => 1.0 / n as f64,
            Regime::InvSqrtN => 1.0 / (n as f64).sqrt(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::InvN => "inv_n",
            Regime::InvSqrtN => "inv_sqrt_n",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbedClassifier {
    freq: u32,
    regime: Regime,
    gamma: f64,
    amplitude: f64,
}

impl PerturbedClassifier {
    pub fn new(freq: u32, regime: Regime) -> Result<Self> {
        Self::with_gamma(freq, regime, DEFAULT_GAMMA)
    }

    /// Requires `0 < δ_n < γ/(1-γ)` so `p(1 + δ_n sin)` stays a probability on `A_γ`.
    pub fn with_gamma(freq: u32, regime: Regime, gamma: f64) -> Result<Self> {
        if freq == 0 {
            return Err(Error::Construction("frequency must be positive".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Construction(format!("γ must lie in (0, 1), got {gamma}")));
        }
        let amplitude = regime.amplitude(freq);
        let ceiling = gamma / (1.0 - gamma);
        if !(amplitude > 0.0 && amplitude < ceiling) {
            return Err(Error::Construction(format!(
                "amplitude {amplitude} outside (0, {ceiling}) for n = {freq}"
            )));
        }
        Ok(Self {
            freq,
            regime,
            gamma,
            amplitude,
        })
    }

    pub fn freq(&self) -> u32 {
        self.freq
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `δ_n`.
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// `x ∈ A_γ`, with the strict inequality of the definition.
    pub fn in_region(&self, x: &[f64]) -> bool {
        base_prob(x) < 1.0 - self.gamma
    }

    /// `x₁` at which `p(y=1|x) = 1 - γ`: the boundary of `A_γ`.
    pub fn region_boundary(&self) -> f64 {
        ((0.5 - self.gamma) / 0.3).atanh()
    }

    fn phase(&self, x1: f64) -> f64 {
        self.freq as f64 * x1
    }

    pub fn perturbed_prob(&self, x: &[f64], y: usize) -> f64 {
        let p = base_prob(x);
        let p1 = if self.in_region(x) {
            p * (1.0 + self.amplitude * self.phase(x[0]).sin())
        } else {
            p
        };
        if y == 1 {
            p1
        } else {
            1.0 - p1
        }
    }

    pub fn perturbed_log_grad(&self, x: &[f64], y: usize) -> Vec<f64> {
        if !self.in_region(x) {
            return TanhConditional.log_grad(x, y);
        }
        let p = base_prob(x);
        let dp = base_prob_deriv(x[0]);
        let n = self.freq as f64;
        let (s, c) = self.phase(x[0]).sin_cos();
        let factor = 1.0 + self.amplitude * s;
        let d1 = if y == 1 {
            dp / p + self.amplitude * n * c / factor
        } else {
            // d/dx₁ log(1 - p·factor)
            let dp1 = dp * factor + p * self.amplitude * n * c;
            -dp1 / (1.0 - p * factor)
        };
        e1_vector(x.len(), d1)
    }
}

impl ConditionalModel for PerturbedClassifier {
    fn num_labels(&self) -> usize {
        2
    }

    fn prob(&self, x: &[f64], y: usize) -> f64 {
        self.perturbed_prob(x, y)
    }

    fn log_grad(&self, x: &[f64], y: usize) -> Vec<f64> {
        self.perturbed_log_grad(x, y)
    }
}

/// `σ(s_ε(x))` with `s_ε(x) = 2ε sin(x₁/√ε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpnessClassifier {
    eps: f64,
    radius: f64,
    dim: usize,
}

impl SharpnessClassifier {
    pub fn new(eps: f64, radius: f64, dim: usize) -> Result<Self> {
        if !(eps > 0.0 && eps <= MAX_SHARPNESS_EPS) {
            return Err(Error::Construction(format!(
                "ε must lie in (0, {MAX_SHARPNESS_EPS}], got {eps}"
            )));
        }
        if !(radius > 2.0) {
            return Err(Error::Construction(format!("radius must exceed 2, got {radius}")));
        }
        if dim == 0 {
            return Err(Error::Construction("dimension must be positive".into()));
        }
        Ok(Self { eps, radius, dim })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `s_ε(x)`.
    pub fn logit(&self, x: &[f64]) -> f64 {
        2.0 * self.eps * (x[0] / self.eps.sqrt()).sin()
    }

    /// `s_ε'(x) = 2√ε cos(x₁/√ε)`.
    pub fn logit_deriv(&self, x: &[f64]) -> f64 {
        let r = self.eps.sqrt();
        2.0 * r * (x[0] / r).cos()
    }

    /// `s_ε''(x) = -2 sin(x₁/√ε)`.
    pub fn logit_deriv2(&self, x: &[f64]) -> f64 {
        -2.0 * (x[0] / self.eps.sqrt()).sin()
    }

    pub fn sharpness_prob(&self, x: &[f64], y: usize) -> f64 {
        let q = logistic(self.logit(x));
        if y == 1 {
            q
        } else {
            1.0 - q
        }
    }

    pub fn sharpness_log_grad(&self, x: &[f64], y: usize) -> Vec<f64> {
        let q = logistic(self.logit(x));
        let ds = self.logit_deriv(x);
        e1_vector(x.len(), if y == 1 { (1.0 - q) * ds } else { -q * ds })
    }

    /// `∂²/∂x₁² log p̂(y|x)`.
    pub fn log_hessian_11(&self, x: &[f64], y: usize) -> f64 {
        let q = logistic(self.logit(x));
        let ds = self.logit_deriv(x);
        let d2s = self.logit_deriv2(x);
        let curvature = q * (1.0 - q) * ds * ds;
        if y == 1 {
            (1.0 - q) * d2s - curvature
        } else {
            -q * d2s - curvature
        }
    }
}

impl ConditionalModel for SharpnessClassifier {
    fn num_labels(&self) -> usize {
        2
    }

    fn prob(&self, x: &[f64], y: usize) -> f64 {
        self.sharpness_prob(x, y)
    }

    fn log_grad(&self, x: &[f64], y: usize) -> Vec<f64> {
        self.sharpness_log_grad(x, y)
    }
}

/// True posterior and guidance when labels are independent of `x`.
pub fn sharpness_truth(x: &[f64], _y: usize) -> (f64, Vec<f64>) {
    (0.5, vec![0.0; x.len()])
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IndependentLabels;

impl ConditionalModel for IndependentLabels {
    fn num_labels(&self) -> usize {
        2
    }

    fn prob(&self, x: &[f64], y: usize) -> f64 {
        sharpness_truth(x, y).0
    }

    fn log_grad(&self, x: &[f64], y: usize) -> Vec<f64> {
        sharpness_truth(x, y).1
    }
}

/// Data world of the sharpness construction: `X₀ ∼ Unif([-R, R]^d)`
/// independent of the label, observed at diffusion time `t₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformCubeWorld {
    pub radius: f64,
    pub dim: usize,
    pub time: f64,
}

impl UniformCubeWorld {
    pub fn new(radius: f64, dim: usize, time: f64) -> Result<Self> {
        if !(radius > 0.0) || dim == 0 || !(time > 0.0) {
            return Err(Error::Construction("uniform world needs R > 0, d >= 1, t > 0".into()));
        }
        Ok(Self { radius, dim, time })
    }

    /// A draw of `X_t = λ_t X₀ + σ_t Z`.
    pub fn sample(&self, rng: &mut SeededRng) -> Vec<f64> {
        let lambda = lambda_of(self.time).expect("t > 0");
        let sigma = sigma_sq_of(self.time).expect("t > 0").sqrt();
        (0..self.dim)
            .map(|_| {
                let x0 = self.radius * (2.0 * rng.uniform() - 1.0);
                lambda * x0 + sigma * rng.normal()
            })
            .collect()
    }

    /// Density of one coordinate of `X_t`:
    /// `(Φ((x + λR)/σ) - Φ((x - λR)/σ)) / (2λR)`.
    pub fn coordinate_density(&self, x: f64) -> f64 {
        let lambda = lambda_of(self.time).expect("t > 0");
        let sigma = sigma_sq_of(self.time).expect("t > 0").sqrt();
        let a = lambda * self.radius;
        let cdf = |z: f64| 0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2));
        (cdf((x + a) / sigma) - cdf((x - a) / sigma)) / (2.0 * a)
    }

    /// Interval outside which the coordinate density is below ~1e-20.
    pub fn coordinate_support(&self) -> (f64, f64) {
        let lambda = lambda_of(self.time).expect("t > 0");
        let sigma = sigma_sq_of(self.time).expect("t > 0").sqrt();
        let half = lambda * self.radius + 10.0 * sigma;
        (-half, half)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn base_prob_values() {
        assert_eq!(base_prob(&[0.0, 3.0]), 0.5);
        assert!((base_prob(&[40.0, 0.0]) - 0.8).abs() < 1e-15);
        assert!((base_prob(&[-40.0, 0.0]) - 0.2).abs() < 1e-15);
        // 0.5 + 0.3 tanh(1), 30-digit reference.
        assert_relative_eq!(base_prob(&[1.0, 0.0]), 0.728_478_246_786_729_5, max_relative = 1e-15);
    }

    #[test]
    fn validity_range_enforced() {
        assert!(PerturbedClassifier::new(1, Regime::InvN).is_err());
        assert!(PerturbedClassifier::new(5, Regime::InvSqrtN).is_err());
        assert!(PerturbedClassifier::new(10, Regime::InvSqrtN).is_ok());
        assert!(PerturbedClassifier::new(3, Regime::InvN).is_ok());
        assert!(PerturbedClassifier::new(0, Regime::InvN).is_err());
    }

    #[test]
    fn perturbation_off_outside_region() {
        let c = PerturbedClassifier::new(10, Regime::InvN).unwrap();
        let x = [2.0, 0.0];
        assert!(!c.in_region(&x));
        assert_eq!(c.perturbed_prob(&x, 1), base_prob(&x));
        assert_eq!(c.perturbed_log_grad(&x, 1), TanhConditional.log_grad(&x, 1));
    }

    #[test]
    fn perturbation_zero_at_sine_roots() {
        let c = PerturbedClassifier::new(10, Regime::InvN).unwrap();
        let x = [0.0, 1.0];
        assert_eq!(c.perturbed_prob(&x, 1), base_prob(&x));
    }

    #[test]
    fn perturbation_peak() {
        let c = PerturbedClassifier::new(10, Regime::InvN).unwrap();
        let x = [PI / 20.0, 0.0];
        assert!(c.in_region(&x));
        assert_relative_eq!(c.perturbed_prob(&x, 1), base_prob(&x) * 1.1, max_relative = 1e-15);
    }

    #[test]
    fn oscillatory_term_magnitude() {
        // At x₁ = 0: sin = 0, cos = 1, so the extra term is δ_n n exactly.
        let x = [0.0, 0.0];
        let base = TanhConditional.log_grad(&x, 1)[0];
        let c = PerturbedClassifier::new(37, Regime::InvN).unwrap();
        assert_relative_eq!(c.perturbed_log_grad(&x, 1)[0] - base, 1.0, max_relative = 1e-14);
        let c = PerturbedClassifier::new(100, Regime::InvSqrtN).unwrap();
        assert_relative_eq!(c.perturbed_log_grad(&x, 1)[0] - base, 10.0, max_relative = 1e-14);
    }

    #[test]
    fn boundary_uses_strict_inequality() {
        let c = PerturbedClassifier::new(10, Regime::InvN).unwrap();
        let b = c.region_boundary();
        assert_relative_eq!(base_prob(&[b]), 0.7, max_relative = 1e-15);
        assert!(c.in_region(&[b - 1e-9]));
        assert!(!c.in_region(&[b + 1e-9]));
    }

    #[test]
    fn perturbed_log_grad_matches_finite_difference() {
        for regime in [Regime::InvN, Regime::InvSqrtN] {
            for n in [10u32, 90, 990] {
                let c = PerturbedClassifier::new(n, regime).unwrap();
                let h = 1e-7 * (1.0f64).min(1.0 / n as f64);
                for x1 in [-1.3, -0.2, 0.05, 0.6, 1.5] {
                    for y in 0..2 {
                        let x = [x1, 0.4];
                        let g = c.perturbed_log_grad(&x, y)[0];
                        let fd = central_diff(|v| c.perturbed_prob(&[v, 0.4], y).ln(), x1, h);
                        let err = (g - fd).abs() / g.abs().max(1e-3);
                        assert!(err < 1e-4, "regime {regime:?} n {n} x1 {x1} y {y}: {g} vs {fd}");
                    }
                }
            }
        }
    }

    #[test]
    fn pointwise_kl_bound() {
        for n in [10u32, 50, 500] {
            let c = PerturbedClassifier::new(n, Regime::InvN).unwrap();
            for k in 0..2000 {
                let x = [-4.0 + 4.8 * k as f64 / 2000.0];
                if !c.in_region(&x) {
                    continue;
                }
                let p = TanhConditional.pmf(&x);
                let q = c.pmf(&x);
                let kl = crate::estimators::categorical_kl(&p, &q).finite().unwrap();
                assert!(kl <= c.amplitude() / c.gamma(), "n {n} x {x:?}");
                assert!((q[0] + q[1] - 1.0).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn sharpness_values() {
        let s = SharpnessClassifier::new(0.01, 3.0, 1).unwrap();
        assert_eq!(s.sharpness_prob(&[0.0], 1), 0.5);
        let x = [0.1 * PI / 2.0];
        // σ(0.02), 30-digit reference.
        assert_relative_eq!(s.sharpness_prob(&x, 1), 0.504_999_833_339_999_8, max_relative = 1e-14);
        assert!(s.sharpness_log_grad(&x, 1)[0].abs() < 1e-15);
        assert_relative_eq!(s.sharpness_log_grad(&[0.0], 1)[0], 0.1, max_relative = 1e-14);
        let lo = logistic(-0.02);
        let hi = logistic(0.02);
        for k in 0..1000 {
            let p = s.sharpness_prob(&[k as f64 * 0.013 - 6.0], 1);
            assert!(p >= lo - 1e-16 && p <= hi + 1e-16);
        }
    }

    #[test]
    fn sharpness_construction_errors() {
        assert!(SharpnessClassifier::new(0.3, 3.0, 1).is_err());
        assert!(SharpnessClassifier::new(0.0, 3.0, 1).is_err());
        assert!(SharpnessClassifier::new(0.1, 2.0, 1).is_err());
        assert!(SharpnessClassifier::new(0.1, 3.0, 0).is_err());
    }

    #[test]
    fn sharpness_derivative_bounds_and_fd() {
        for eps in [0.25, 0.1, 0.01, 1e-4] {
            let s = SharpnessClassifier::new(eps, 3.0, 2).unwrap();
            for k in 0..400 {
                let x1 = -3.0 + 6.0 * k as f64 / 399.0;
                for y in 0..2 {
                    let g = s.sharpness_log_grad(&[x1, 0.0], y)[0];
                    assert!(g.abs() <= 2.0);
                    assert!(s.log_hessian_11(&[x1, 0.0], y).abs() <= 3.0);
                    let h = 1e-4 * eps.sqrt();
                    let fd = central_diff(|v| s.sharpness_prob(&[v, 0.0], y).ln(), x1, h);
                    let err = (g - fd).abs() / g.abs().max(2.0 * eps.sqrt());
                    assert!(err < 1e-6, "eps {eps} x1 {x1}: {g} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn truth_is_flat() {
        let (p, g) = sharpness_truth(&[0.3, -2.0, 1.0], 1);
        assert_eq!(p, 0.5);
        assert_eq!(g, vec![0.0; 3]);
        assert_eq!(IndependentLabels.log_grad(&[1.0], 0), vec![0.0]);
    }

    #[test]
    fn uniform_world_density_integrates_to_one() {
        let w = UniformCubeWorld::new(3.0, 1, 0.5).unwrap();
        let (a, b) = w.coordinate_support();
        let mass = crate::estimators::quadrature_1d(|_| 1.0, |x| w.coordinate_density(x), (a, b), 64).unwrap();
        assert!((mass - 1.0).abs() < 1e-9, "{mass}");
    }
}
