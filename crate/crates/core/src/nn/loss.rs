use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// `2 v (μ - y + y log(y/μ))`, `y` the observed frequency, `v` the exposure.
    PoissonDeviance,
    /// `w (y - ŷ)^2`.
    SquaredError,
}

/// `d - log(1 + d)`, accurate near `d = 0` where both terms cancel.
fn excess_over_log1p(d: f64) -> f64 {
    if d.abs() < 1e-3 {
        let mut term = d * d;
        let mut sum = 0.0;
        for k in 2..=7 {
            sum += term / k as f64;
            term *= -d;
        }
        sum
    } else {
        d - d.ln_1p()
    }
}

/// Unit Poisson deviance with exposure weight `v`; `y log(y/μ)` is taken as
/// zero at `y = 0`.
pub fn poisson_deviance(y: f64, mu: f64, v: f64) -> Result<f64> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::Numeric(format!("Poisson mean must be positive, got {mu}")));
    }
    if !(v > 0.0) {
        return Err(Error::Numeric(format!("exposure must be positive, got {v}")));
    }
    if !(y >= 0.0) {
        return Err(Error::Numeric(format!("response must be non-negative, got {y}")));
    }
    if y == 0.0 {
        return Ok(2.0 * v * mu);
    }
    // μ - y + y log(y/μ) = y (d - log(1 + d)) with d = μ/y - 1
    Ok(2.0 * v * y * excess_over_log1p(mu / y - 1.0))
}

impl Loss {
    pub fn value(self, y: f64, prediction: f64, weight: f64) -> Result<f64> {
        match self {
            Loss::PoissonDeviance => poisson_deviance(y, prediction, weight),
            Loss::SquaredError => Ok(weight * (y - prediction) * (y - prediction)),
        }
    }

    /// Derivative of [`Loss::value`] with respect to the prediction.
    pub fn derivative(self, y: f64, prediction: f64, weight: f64) -> Result<f64> {
        match self {
            Loss::PoissonDeviance => {
                if !(prediction > 0.0) {
                    return Err(Error::Numeric(format!(
                        "Poisson deviance needs a positive prediction, got {prediction}"
                    )));
                }
                Ok(2.0 * weight * (1.0 - y / prediction))
            }
            Loss::SquaredError => Ok(-2.0 * weight * (y - prediction)),
        }
    }
}

/// Per-row Poisson deviances of `predictions` on `data`, using observed
/// frequencies `N_i / v_i` and exposures `v_i`.
pub fn poisson_losses(data: &Dataset, predictions: &[f64]) -> Result<Vec<f64>> {
    if predictions.len() != data.n() {
        return Err(Error::Shape(format!(
            "{} predictions for {} rows",
            predictions.len(),
            data.n()
        )));
    }
    predictions
        .iter()
        .enumerate()
        .map(|(i, mu)| poisson_deviance(data.frequency(i), *mu, data.exposure()[i]))
        .collect()
}

/// `(1/n) Σ L(Y_i, μ_i)`.
pub fn mean_poisson_deviance(data: &Dataset, predictions: &[f64]) -> Result<f64> {
    let losses = poisson_losses(data, predictions)?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}
