//! Measurement noise models for simulated exams.
//!
//! The default model ties the noise SD to the underlying sensitivity:
//! test-retest variability in perimetry grows sharply as sensitivity
//! falls, which an exponential fit captures well. A homoscedastic
//! variant is available for experiments that want flat noise.

use serde::{Deserialize, Serialize};

/// Floor and ceiling of measurable sensitivity, in dB.
pub const SENS_MIN: f64 = 0.0;
pub const SENS_MAX: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// SD = min(exp(slope * s + intercept), cap).
    SensitivityDependent { slope: f64, intercept: f64, cap: f64 },
    /// Constant SD at every sensitivity.
    Homoscedastic { sd: f64 },
    /// No noise; useful as a degenerate test model.
    None,
}

impl NoiseModel {
    /// Published exponential variability fit, capped at 6 dB.
    pub fn default_sensitivity_dependent() -> Self {
        NoiseModel::SensitivityDependent {
            slope: -0.081,
            intercept: 3.27,
            cap: 6.0,
        }
    }

    /// Noise SD (dB) at a given true sensitivity.
    pub fn sd(&self, sensitivity: f64) -> f64 {
        match *self {
            NoiseModel::SensitivityDependent { slope, intercept, cap } => {
                (slope * sensitivity + intercept).exp().min(cap)
            }
            NoiseModel::Homoscedastic { sd } => sd,
            NoiseModel::None => 0.0,
        }
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::default_sensitivity_dependent()
    }
}

/// Clamp a sensitivity to the measurable range.
pub fn clamp_sens(s: f64) -> f64 {
    s.clamp(SENS_MIN, SENS_MAX)
}
