//! Composite Gauss–Legendre quadrature with node doubling.
//!
//! Serves as the deterministic oracle for one-dimensional expectations that
//! the Monte Carlo estimators also compute.

use crate::error::{domain, Error, Result};

/// Points per panel of the composite rule.
pub const PANEL_ORDER: usize = 16;
/// Largest panel count tried before giving up.
const MAX_PANELS: usize = 1 << 17;
/// Two successive node doublings must agree to this relative tolerance.
pub const DOUBLING_RTOL: f64 = 1e-8;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            for _ in 0..100 {
                let (p, d) = legendre_and_derivative(n, x);
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre_and_derivative(n, x);
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        half * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
    }

    pub fn integrate_composite(&self, a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
        let width = (b - a) / panels as f64;
        (0..panels)
            .map(|k| {
                let lo = a + width * k as f64;
                let hi = if k + 1 == panels { b } else { lo + width };
                self.integrate(lo, hi, &f)
            })
            .sum()
    }
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// `∫_a^b f(x) w(x) dx` by composite Gauss–Legendre, doubling the node count
/// (starting from `nodes`, at least 16) until two successive estimates agree
/// to [`DOUBLING_RTOL`].
pub fn quadrature_1d(
    f: impl Fn(f64) -> f64,
    weight: impl Fn(f64) -> f64,
    interval: (f64, f64),
    nodes: usize,
) -> Result<f64> {
    let (a, b) = interval;
    if nodes < PANEL_ORDER {
        return Err(domain(format!("quadrature needs at least {PANEL_ORDER} nodes")));
    }
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(domain(format!("invalid interval [{a}, {b}]")));
    }
    let rule = GaussLegendre::new(PANEL_ORDER);
    let integrand = |x: f64| f(x) * weight(x);
    let mut panels = nodes.div_ceil(PANEL_ORDER);
    let mut previous = rule.integrate_composite(a, b, panels, integrand);
    loop {
        panels *= 2;
        let current = rule.integrate_composite(a, b, panels, integrand);
        if (current - previous).abs() <= DOUBLING_RTOL * current.abs() || current == previous {
            return Ok(current);
        }
        if panels >= MAX_PANELS {
            return Err(Error::OracleFailure { previous, current });
        }
        previous = current;
    }
}

/// [`quadrature_1d`] over consecutive intervals `[b_0, b_1], [b_1, b_2], …`;
/// use breakpoints at discontinuities of the integrand.
pub fn quadrature_piecewise(
    f: impl Fn(f64) -> f64,
    weight: impl Fn(f64) -> f64,
    breaks: &[f64],
    nodes: usize,
) -> Result<f64> {
    if breaks.len() < 2 {
        return Err(domain("piecewise quadrature needs at least two breakpoints"));
    }
    breaks
        .windows(2)
        .map(|w| quadrature_1d(&f, &weight, (w[0], w[1]), nodes))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn std_normal_pdf(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn rule_is_exact_for_polynomials() {
        let rule = GaussLegendre::new(16);
        // Degree 31 is integrated exactly by 16 points.
        let v = rule.integrate(-1.0, 1.0, |x| x.powi(30));
        assert_relative_eq!(v, 2.0 / 31.0, max_relative = 1e-13);
        assert_relative_eq!(rule.weights().iter().sum::<f64>(), 2.0, max_relative = 1e-14);
    }

    #[test]
    fn high_order_rule_weights() {
        let rule = GaussLegendre::new(257);
        assert_relative_eq!(rule.weights().iter().sum::<f64>(), 2.0, max_relative = 1e-12);
        assert!(rule.nodes()[128].abs() < 1e-15);
    }

    #[test]
    fn normal_density_normalizes() {
        let v = quadrature_1d(|_| 1.0, std_normal_pdf, (-8.0, 8.0), 16).unwrap();
        assert!((v - 1.0).abs() < 1e-8);
    }

    #[test]
    fn oscillatory_integrand() {
        // ∫_0^π sin²(50x) dx = π/2
        let v = quadrature_1d(|x| (50.0 * x).sin().powi(2), |_| 1.0, (0.0, std::f64::consts::PI), 16).unwrap();
        assert_relative_eq!(v, std::f64::consts::FRAC_PI_2, max_relative = 1e-10);
    }

    #[test]
    fn piecewise_handles_jump() {
        let v = quadrature_piecewise(|x| if x < 0.3 { 1.0 } else { 0.0 }, |_| 1.0, &[0.0, 0.3, 1.0], 16).unwrap();
        assert_relative_eq!(v, 0.3, max_relative = 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(quadrature_1d(|x| x, |_| 1.0, (0.0, 1.0), 8).is_err());
        assert!(quadrature_1d(|x| x, |_| 1.0, (1.0, 0.0), 16).is_err());
    }

    #[test]
    fn non_convergence_is_reported() {
        let r = quadrature_1d(|x| (1.0 / x).sin(), |_| 1.0, (1e-12, 1.0), 16);
        assert!(matches!(r, Err(Error::OracleFailure { .. })));
    }
}
