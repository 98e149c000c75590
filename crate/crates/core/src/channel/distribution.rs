use crate::error::{Error, Result};

/// Empirical distribution of the effective channel gain.
///
/// Samples are kept sorted; the CDF is the right-continuous step function
/// `#{s <= x} / n` and the quantile is the lower order statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct GainDistribution {
    samples: Vec<f64>,
}

impl GainDistribution {
    pub fn from_samples(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("gain distribution needs at least one sample".into()));
        }
        if let Some(bad) = samples.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Domain(format!("gain samples must be positive and finite, got {bad}")));
        }
        samples.sort_unstable_by(f64::total_cmp);
        Ok(GainDistribution { samples })
    }

    pub fn point_mass(value: f64, count: usize) -> Result<Self> {
        Self::from_samples(vec![value; count.max(1)])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn min(&self) -> f64 {
        self.samples[0]
    }

    pub fn max(&self) -> f64 {
        self.samples[self.samples.len() - 1]
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.len() as f64
    }

    fn fraction(&self, count: usize) -> f64 {
        count as f64 / self.len() as f64
    }

    /// Fraction of samples `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.fraction(self.samples.partition_point(|&s| s <= x))
    }

    /// Fraction of samples `< x`, the left limit of [`cdf`](Self::cdf).
    pub fn prob_below(&self, x: f64) -> f64 {
        self.fraction(self.samples.partition_point(|&s| s < x))
    }

    /// Smallest sample whose CDF reaches `eps`.
    pub fn inverse_cdf(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0, 1], got {eps}")));
        }
        let n = self.len();
        // The rank is found with the same arithmetic `cdf` uses, so
        // `cdf(inverse_cdf(e)) >= e` holds exactly in floating point.
        let mut rank = ((eps * n as f64).ceil() as usize).clamp(1, n);
        while rank > 1 && self.fraction(rank - 1) >= eps {
            rank -= 1;
        }
        while rank < n && self.fraction(rank) < eps {
            rank += 1;
        }
        Ok(self.samples[rank - 1])
    }
}
