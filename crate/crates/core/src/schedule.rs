//! Ornstein–Uhlenbeck schedule and reverse-time grids.
//!
//! The forward process `dX = -X dt + sqrt(2) dB` has `X_t = λ_t X_0 + σ_t Z`
//! with `λ_t = e^{-t}` and `σ_t² = 1 - e^{-2t}`. Reverse time `t` runs from 0
//! to `T - δ`; the forward time seen by the fields at step `k` is
//! `s_k = T - t_k`.

use crate::error::{domain, Error, Result};

/// Implementation constant `c` in `κ ≤ c·(T + log(1/δ))/N`.
pub const GRID_CONSTANT: f64 = 2.0;

/// Relative slack applied by [`verify_grid`] to absorb rounding in `κ·min{1, s}`.
const VERIFY_RTOL: f64 = 1e-12;

pub fn lambda_of(t: f64) -> Result<f64> {
    check_time(t)?;
    Ok((-t).exp())
}

pub fn sigma_sq_of(t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(-(-2.0 * t).exp_m1())
}

fn check_time(t: f64) -> Result<()> {
    if t.is_nan() || t < 0.0 {
        return Err(domain(format!("diffusion time must be >= 0, got {t}")));
    }
    Ok(())
}

/// `(λ_t, σ_t²)` for `t > 0`, the pair every posterior computation needs.
pub(crate) fn coefficients(t: f64) -> Result<(f64, f64)> {
    if t == 0.0 {
        return Err(Error::DegenerateTime(t));
    }
    Ok((lambda_of(t)?, sigma_sq_of(t)?))
}

/// Horizon `T = ½ log((R² + d) / ε²)` that makes the initialization gap
/// `(R² + d) e^{-2T}` equal to the target accuracy `ε²`.
pub fn horizon_for_accuracy(radius: f64, dim: usize, eps_sq: f64) -> Result<f64> {
    if !(eps_sq > 0.0) || !(radius >= 0.0) {
        return Err(domain("horizon_for_accuracy needs eps_sq > 0 and radius >= 0"));
    }
    Ok(0.5 * ((radius * radius + dim as f64) / eps_sq).ln())
}

/// Reverse-time discretization `0 = t_0 < … < t_N = T - δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    horizon: f64,
    early_stop: f64,
    kappa: f64,
}

impl TimeGrid {
    /// Builds a grid from explicit times, computing its tight `κ` witness.
    pub fn from_times(times: Vec<f64>, horizon: f64, early_stop: f64) -> Result<Self> {
        if !(horizon >= 1.0) || !(early_stop > 0.0) {
            return Err(domain(format!(
                "grid needs T >= 1 and δ > 0, got T = {horizon}, δ = {early_stop}"
            )));
        }
        if times.len() < 2 || times[0] != 0.0 {
            return Err(domain("grid must start at 0 and have at least one step"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(domain("grid times must be strictly increasing"));
        }
        let end = *times.last().unwrap();
        if (end - (horizon - early_stop)).abs() > 1e-12 {
            return Err(domain(format!("grid must end at T - δ = {}, got {end}", horizon - early_stop)));
        }
        let kappa = tight_kappa(&times, horizon);
        Ok(Self {
            times,
            horizon,
            early_stop,
            kappa,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn early_stop(&self) -> f64 {
        self.early_stop
    }

    /// Smallest `κ` for which every step satisfies `τ_k ≤ κ·min{1, s_{k+1}}`.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Step size `τ_k = t_{k+1} - t_k`.
    pub fn step_size(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    /// Forward time `s_k = T - t_k` at which fields are evaluated on step `k`.
    pub fn forward_time(&self, k: usize) -> f64 {
        self.horizon - self.times[k]
    }

    /// Stable fingerprint of the grid, recorded in sample metadata.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(8 * (self.times.len() + 2));
        bytes.extend_from_slice(&self.horizon.to_le_bytes());
        bytes.extend_from_slice(&self.early_stop.to_le_bytes());
        for t in &self.times {
            bytes.extend_from_slice(&t.to_le_bytes());
        }
        crate::rng::stable_hash(&bytes)
    }
}

fn tight_kappa(times: &[f64], horizon: f64) -> f64 {
    times
        .windows(2)
        .map(|w| (w[1] - w[0]) / (horizon - w[1]).min(1.0))
        .fold(0.0, f64::max)
}

/// Outcome of [`verify_grid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridCheck {
    pub ok: bool,
    pub first_violation: Option<usize>,
}

pub fn verify_grid(grid: &TimeGrid, kappa: f64) -> GridCheck {
    let first_violation = grid.times.windows(2).position(|w| {
        let tau = w[1] - w[0];
        let cap = kappa * (grid.horizon - w[1]).min(1.0);
        tau > cap * (1.0 + VERIFY_RTOL)
    });
    GridCheck {
        ok: first_violation.is_none(),
        first_violation,
    }
}

/// Upper bound `c·(T + log(1/δ))/N` the construction must respect.
pub fn kappa_bound(horizon: f64, early_stop: f64, steps: usize) -> f64 {
    GRID_CONSTANT * (horizon + (1.0 / early_stop).ln()) / steps as f64
}

/// Two-phase grid: uniform steps on `[0, T-1]`, then geometric decay of
/// `s = T - t` from 1 down to `δ`.
///
/// The split between phases minimizes the resulting `κ`. The grid is
/// rejected when that `κ` exceeds [`kappa_bound`]; the error carries the
/// smallest step count that would succeed.
pub fn make_grid(horizon: f64, early_stop: f64, steps: usize) -> Result<TimeGrid> {
    if !(horizon >= 1.0) || !horizon.is_finite() {
        return Err(domain(format!("make_grid needs T >= 1, got {horizon}")));
    }
    if !(early_stop > 0.0 && early_stop < 1.0) {
        return Err(domain(format!("make_grid needs 0 < δ < 1, got {early_stop}")));
    }
    if steps == 0 {
        return Err(domain("make_grid needs at least one step"));
    }

    let Some((uniform_steps, _)) = best_split(horizon, early_stop, steps)
        .filter(|&(_, kappa)| kappa <= kappa_bound(horizon, early_stop, steps))
    else {
        let min_steps = (steps + 1..)
            .find(|&n| {
                best_split(horizon, early_stop, n)
                    .is_some_and(|(_, kappa)| kappa <= kappa_bound(horizon, early_stop, n))
            })
            .expect("a feasible step count always exists");
        return Err(Error::InfeasibleGrid { steps, min_steps });
    };

    let geometric_steps = steps - uniform_steps;
    let uniform_len = horizon - 1.0;
    let log_inv_delta = (1.0 / early_stop).ln();

    let mut times = Vec::with_capacity(steps + 1);
    for k in 0..=uniform_steps {
        times.push(if uniform_steps == 0 {
            0.0
        } else {
            uniform_len * k as f64 / uniform_steps as f64
        });
    }
    for j in 1..=geometric_steps {
        if j == geometric_steps {
            times.push(horizon - early_stop);
        } else {
            let s = (-log_inv_delta * j as f64 / geometric_steps as f64).exp();
            times.push(horizon - s);
        }
    }
    TimeGrid::from_times(times, horizon, early_stop)
}

/// Best `(uniform_steps, κ)` split for `steps` total steps, or `None` if no
/// split exists (a horizon above 1 needs at least one step per phase).
fn best_split(horizon: f64, early_stop: f64, steps: usize) -> Option<(usize, f64)> {
    let uniform_len = horizon - 1.0;
    let log_inv_delta = (1.0 / early_stop).ln();
    let geometric_kappa = |n: usize| (log_inv_delta / n as f64).exp_m1();
    if uniform_len == 0.0 {
        return Some((0, geometric_kappa(steps)));
    }
    (1..steps)
        .map(|n1| {
            let kappa = (uniform_len / n1 as f64).max(geometric_kappa(steps - n1));
            (n1, kappa)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
}
