use crate::error::{domain, Result};

/// r² below which [`loglog_slope_trimmed`] drops the pre-asymptotic head.
pub const TRIM_R2_THRESHOLD: f64 = 0.98;

/// Least-squares fit of `log y = intercept + slope · log x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Number of smallest-`x` points excluded from the fit.
    pub trimmed: usize,
}

pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() {
        return Err(domain("slope fit needs equally many xs and ys"));
    }
    if xs.len() < 3 {
        return Err(domain("slope fit needs at least 3 points"));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(domain("slope fit needs positive finite inputs"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(domain("slope fit needs at least two distinct xs"));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        trimmed: 0,
    })
}

/// [`loglog_slope`], refitting without the smallest 10% of `x` values when
/// the full fit has r² below [`TRIM_R2_THRESHOLD`].
pub fn loglog_slope_trimmed(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    let full = loglog_slope(xs, ys)?;
    if full.r_squared >= TRIM_R2_THRESHOLD {
        return Ok(full);
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let drop = (xs.len() / 10).max(1);
    if xs.len() - drop < 3 {
        return Ok(full);
    }
    let kept = &order[drop..];
    let kx: Vec<f64> = kept.iter().map(|&i| xs[i]).collect();
    let ky: Vec<f64> = kept.iter().map(|&i| ys[i]).collect();
    let mut fit = loglog_slope(&kx, &ky)?;
    fit.trimmed = drop;
    Ok(fit)
}
