use crate::error::{domain, Result};

/// Monte Carlo result. `rejected` counts draws that produced an infinite KL
/// or a non-finite gradient; those are excluded from `mean` rather than
/// folded in as special floating values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    pub rejected: usize,
}

impl Estimate {
    pub fn is_flagged(&self) -> bool {
        self.rejected > 0
    }

    pub fn relative_se(&self) -> f64 {
        if self.mean == 0.0 {
            0.0
        } else {
            self.std_error / self.mean.abs()
        }
    }

    /// Whether two `k`-SE intervals overlap.
    pub fn overlaps(&self, other: &Estimate, k: f64) -> bool {
        (self.mean - other.mean).abs() <= k * (self.std_error + other.std_error)
    }
}

/// Welford accumulator with the pairwise merge of Chan, Golub and LeVeque.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    count: usize,
    mean: f64,
    m2: f64,
    rejected: usize,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
    }

    pub fn reject(&mut self) {
        self.rejected += 1;
    }

    pub fn merge(&mut self, other: &RunningStats) {
        self.rejected += other.rejected;
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            let rejected = self.rejected;
            *self = *other;
            self.rejected = rejected;
            return;
        }
        let n_a = self.count as f64;
        let n_b = other.count as f64;
        let total = n_a + n_b;
        let delta = other.mean - self.mean;
        self.mean += delta * n_b / total;
        self.m2 += other.m2 + delta * delta * n_a * n_b / total;
        self.count += other.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.count > 1 {
            self.m2 / (self.count - 1) as f64
        } else {
            0.0
        }
    }

    pub fn estimate(&self) -> Estimate {
        let std_error = if self.count > 1 {
            (self.variance() / self.count as f64).sqrt()
        } else {
            0.0
        };
        Estimate {
            mean: self.mean,
            std_error,
            n: self.count,
            rejected: self.rejected,
        }
    }
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(domain("median of an empty slice"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Ok(if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_variance() {
        let mut s = RunningStats::new();
        for v in [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0] {
            s.push(v);
        }
        assert_eq!(s.mean(), 5.0);
        assert!((s.variance() - 32.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_single() {
        let s = RunningStats::new();
        assert_eq!(s.estimate().std_error, 0.0);
        let mut s = RunningStats::new();
        s.push(3.0);
        assert_eq!(s.estimate().std_error, 0.0);
        assert_eq!(s.estimate().mean, 3.0);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert!(median(&[]).is_err());
    }

    proptest! {
        #[test]
        fn merge_matches_single_pass(
            a in prop::collection::vec(-1e3f64..1e3, 0..50),
            b in prop::collection::vec(-1e3f64..1e3, 0..50),
        ) {
            let mut whole = RunningStats::new();
            let mut left = RunningStats::new();
            let mut right = RunningStats::new();
            for v in &a { whole.push(*v); left.push(*v); }
            for v in &b { whole.push(*v); right.push(*v); }
            left.merge(&right);
            prop_assert_eq!(left.count(), whole.count());
            prop_assert!((left.mean() - whole.mean()).abs() <= 1e-9 * (1.0 + whole.mean().abs()));
            prop_assert!((left.variance() - whole.variance()).abs() <= 1e-7 * (1.0 + whole.variance()));
        }
    }
}
