//! Running mean with normalized geometrically fading weights, in both the
//! recursive streaming form and the direct-summation form that serves as its
//! oracle.

use crate::error::{CoreError, Result};

/// Default fade factor; exposed through configuration everywhere it is used.
pub const DEFAULT_GAMMA: f64 = 0.99;

fn check_gamma(gamma: f64) -> Result<()> {
    if !gamma.is_finite() || gamma <= 0.0 || gamma >= 1.0 {
        return Err(CoreError::InvalidArgument(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )));
    }
    Ok(())
}

/// Normalizer `rho_n = (1 - gamma^n) / (1 - gamma)`.
///
/// Recomputed from the closed form on every call; for large `n` the power
/// underflows and the value degrades gracefully to `1 / (1 - gamma)`.
pub fn rho(n: u64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    Ok((1.0 - gamma.powi(n.min(i32::MAX as u64) as i32)) / (1.0 - gamma))
}

/// Running mean of batch means with weights `gamma^k` on the k-th most
/// recent batch, normalized by the cumulative geometric weight.
///
/// Before the first update (`step == 0`) the mean is the zero vector, which
/// makes centering a no-op by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaFadeMean {
    mu: Vec<f64>,
    gamma: f64,
    step: u64,
}

impl GammaFadeMean {
    pub fn new(dimension: usize, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if dimension == 0 {
            return Err(CoreError::InvalidArgument(
                "mean dimension must be at least 1".into(),
            ));
        }
        Ok(Self {
            mu: vec![0.0; dimension],
            gamma,
            step: 0,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mu
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Number of batch means absorbed so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn dimension(&self) -> usize {
        self.mu.len()
    }

    /// Absorb one batch mean:
    /// `mu_{n+1} = batch_mean / rho_{n+1} + mu_n * gamma * rho_n / rho_{n+1}`.
    /// The first update sets the mean to the batch mean exactly.
    pub fn update(&mut self, batch_mean: &[f64]) -> Result<()> {
        if batch_mean.len() != self.mu.len() {
            return Err(CoreError::DimensionMismatch(format!(
                "batch mean has dimension {}, state has {}",
                batch_mean.len(),
                self.mu.len()
            )));
        }
        if !batch_mean.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite(
                "batch mean contains NaN or infinity".into(),
            ));
        }
        let rho_n = rho(self.step, self.gamma)?;
        let rho_next = rho(self.step + 1, self.gamma)?;
        let w_new = 1.0 / rho_next;
        let w_old = self.gamma * rho_n / rho_next;
        for (m, &b) in self.mu.iter_mut().zip(batch_mean) {
            *m = w_new * b + w_old * *m;
        }
        self.step += 1;
        Ok(())
    }

    /// Restore a state from checkpointed fields.
    pub fn from_parts(mu: Vec<f64>, gamma: f64, step: u64) -> Result<Self> {
        check_gamma(gamma)?;
        if mu.is_empty() {
            return Err(CoreError::InvalidArgument(
                "mean dimension must be at least 1".into(),
            ));
        }
        if !mu.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite("mean contains NaN or infinity".into()));
        }
        Ok(Self { mu, gamma, step })
    }
}

/// Direct-summation form of the fading mean over an observed sequence:
/// `sum_k gamma^k * means[latest - k] / sum_k gamma^k`.
///
/// Quadratic when called per step; it exists as the independent oracle for
/// [`GammaFadeMean::update`].
pub fn gamma_fade_direct(batch_means: &[Vec<f64>], gamma: f64) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    let Some(first) = batch_means.first() else {
        return Err(CoreError::InvalidArgument(
            "gamma_fade_direct needs at least one batch mean".into(),
        ));
    };
    let dim = first.len();
    let mut numerator = vec![0.0; dim];
    let mut denominator = 0.0;
    let mut weight = 1.0;
    for mean in batch_means.iter().rev() {
        if mean.len() != dim {
            return Err(CoreError::DimensionMismatch(format!(
                "batch means have mixed dimensions {} and {dim}",
                mean.len()
            )));
        }
        for (acc, &v) in numerator.iter_mut().zip(mean) {
            *acc += weight * v;
        }
        denominator += weight;
        weight *= gamma;
    }
    Ok(numerator.into_iter().map(|v| v / denominator).collect())
}
