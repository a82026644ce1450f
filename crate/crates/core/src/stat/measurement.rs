use serde::{Deserialize, Serialize};

use super::StatError;

/// A value with its standard deviation across repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub mean: f64,
    pub sd: f64,
    pub n: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// How the covariance term of a binary propagation step is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "covariance_mode", rename_all = "snake_case")]
pub enum PropagationPolicy {
    /// Operands are treated as statistically independent (covariance 0).
    #[default]
    Independent,
    /// A caller-supplied covariance applied to every binary step.
    Supplied { covariance: f64 },
}

impl PropagationPolicy {
    pub fn covariance(&self) -> f64 {
        match *self {
            PropagationPolicy::Independent => 0.0,
            PropagationPolicy::Supplied { covariance } => covariance,
        }
    }
}

impl Measurement {
    /// Builds a measurement, rejecting negative or non-finite spreads.
    pub fn new(mean: f64, sd: f64, n: u32) -> Result<Self, StatError> {
        if !mean.is_finite() || !sd.is_finite() {
            return Err(StatError::NonFinite);
        }
        if sd < 0.0 {
            return Err(StatError::NegativeSd(sd));
        }
        if n == 0 {
            return Err(StatError::EmptySampleSet);
        }
        Ok(Measurement {
            mean,
            sd,
            n,
            label: None,
        })
    }

    /// An exact value: zero spread, one observation.
    pub fn exact(mean: f64) -> Self {
        Measurement {
            mean,
            sd: 0.0,
            n: 1,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Mean and sample standard deviation (n - 1 denominator).
    pub fn from_samples(samples: &[f64]) -> Result<Self, StatError> {
        if samples.is_empty() {
            return Err(StatError::EmptySampleSet);
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(StatError::NonFinite);
        }
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
            (ss / (n as f64 - 1.0)).sqrt()
        };
        Ok(Measurement {
            mean,
            sd,
            n: n as u32,
            label: None,
        })
    }

    pub fn relative_sd(&self) -> f64 {
        if self.mean == 0.0 {
            f64::INFINITY
        } else {
            (self.sd / self.mean).abs()
        }
    }

    fn combined_n(&self, other: &Measurement) -> u32 {
        self.n.min(other.n)
    }

    fn derived(mean: f64, variance: f64, n: u32) -> Result<Self, StatError> {
        if variance < 0.0 {
            return Err(StatError::NegativeVariance(variance));
        }
        Measurement::new(mean, variance.sqrt(), n)
    }

    pub fn add(&self, other: &Measurement, policy: PropagationPolicy) -> Result<Self, StatError> {
        let cov = policy.covariance();
        let var = self.sd * self.sd + other.sd * other.sd + 2.0 * cov;
        Self::derived(self.mean + other.mean, var, self.combined_n(other))
    }

    pub fn sub(&self, other: &Measurement, policy: PropagationPolicy) -> Result<Self, StatError> {
        let cov = policy.covariance();
        let var = self.sd * self.sd + other.sd * other.sd - 2.0 * cov;
        Self::derived(self.mean - other.mean, var, self.combined_n(other))
    }

    /// First-order product rule, written in absolute form so that zero
    /// means do not divide by zero:
    /// var = (b sa)^2 + (a sb)^2 + 2 a b cov.
    pub fn mul(&self, other: &Measurement, policy: PropagationPolicy) -> Result<Self, StatError> {
        let cov = policy.covariance();
        let (a, b) = (self.mean, other.mean);
        let n = self.combined_n(other);
        if cov == 0.0 && other.sd == 0.0 {
            return Measurement::new(a * b, b.abs() * self.sd, n);
        }
        if cov == 0.0 && self.sd == 0.0 {
            return Measurement::new(a * b, a.abs() * other.sd, n);
        }
        let var = (b * self.sd).powi(2) + (a * other.sd).powi(2) + 2.0 * a * b * cov;
        Self::derived(a * b, var, n)
    }

    /// Ratio with the cache-hit-ratio propagation rule
    /// sd = |a/b| sqrt((sa/a)^2 + (sb/b)^2 - 2 cov/(ab)),
    /// evaluated as var = (sa/b)^2 + (a sb/b^2)^2 - 2 a cov / b^3.
    pub fn div(&self, other: &Measurement, policy: PropagationPolicy) -> Result<Self, StatError> {
        let b = other.mean;
        if b == 0.0 {
            return Err(StatError::DivisionByZeroMean);
        }
        let cov = policy.covariance();
        let a = self.mean;
        let n = self.combined_n(other);
        if cov == 0.0 && other.sd == 0.0 {
            return Measurement::new(a / b, self.sd / b.abs(), n);
        }
        let var = (self.sd / b).powi(2) + (a * other.sd / (b * b)).powi(2)
            - 2.0 * a * cov / (b * b * b);
        Self::derived(a / b, var, n)
    }

    pub fn scale(&self, k: f64) -> Self {
        Measurement {
            mean: self.mean * k,
            sd: self.sd * k.abs(),
            n: self.n,
            label: self.label.clone(),
        }
    }
}
