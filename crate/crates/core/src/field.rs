//! Field representations: one exam, one eye's longitudinal series, and
//! the feature encoding consumed by the denoising networks.

use serde::{Deserialize, Serialize};

use crate::error::VfError;
use crate::grid::FIELD_SIZE;
use crate::noise::{clamp_sens, SENS_MAX};
use crate::normative::{NormativeModel, PCategory};

/// One 24-2 exam: 52 threshold sensitivities plus derived total
/// deviation and probability categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualField {
    pub sensitivities: Vec<f64>,
    /// Years since the eye's baseline exam.
    pub exam_time: f64,
    /// Age anchor used for the normative comparison.
    pub age_at_exam: f64,
    pub td: Vec<f64>,
    pub p_categories: Vec<PCategory>,
}

impl VisualField {
    /// Build an exam from raw sensitivities. Values are clamped to
    /// [0, 40] dB; TD and categories are derived from the model.
    pub fn new(
        sensitivities: Vec<f64>,
        exam_time: f64,
        age_at_exam: f64,
        norm: &NormativeModel,
    ) -> Result<Self, VfError> {
        if sensitivities.len() != FIELD_SIZE {
            return Err(VfError::Dimension {
                expected: FIELD_SIZE,
                got: sensitivities.len(),
            });
        }
        if !age_at_exam.is_finite() {
            return Err(VfError::Format("age_at_exam must be finite".into()));
        }
        if sensitivities.iter().any(|s| !s.is_finite()) {
            return Err(VfError::Format("sensitivities must be finite".into()));
        }
        let sens: Vec<f64> = sensitivities.into_iter().map(clamp_sens).collect();
        let td = total_deviation(&sens, age_at_exam, norm);
        let p_categories = td
            .iter()
            .enumerate()
            .map(|(pos, &d)| norm.categorize(pos, d))
            .collect();
        Ok(VisualField {
            sensitivities: sens,
            exam_time,
            age_at_exam,
            td,
            p_categories,
        })
    }

    /// Mean of the 52 TD values (the MD summary index).
    pub fn mean_deviation(&self) -> f64 {
        self.td.iter().sum::<f64>() / self.td.len() as f64
    }
}

/// TD at every location: sensitivity minus the age-corrected normative
/// value. Not clamped.
pub fn total_deviation(sens: &[f64], age: f64, norm: &NormativeModel) -> Vec<f64> {
    sens.iter()
        .enumerate()
        .map(|(pos, &s)| s - norm.normative(pos, age))
        .collect()
}

/// Feature vector for the networks: sensitivities scaled by 1/40,
/// optionally followed by the 52 ordinal category codes.
pub fn encode_input(field: &VisualField, with_pvalues: bool) -> Vec<f64> {
    let mut v: Vec<f64> = field.sensitivities.iter().map(|&s| s / SENS_MAX).collect();
    if with_pvalues {
        v.extend(field.p_categories.iter().map(|c| c.code()));
    }
    v
}

/// Invert the sensitivity block of [`encode_input`].
pub fn decode_sensitivities(features: &[f64]) -> Vec<f64> {
    features[..FIELD_SIZE].iter().map(|&v| v * SENS_MAX).collect()
}

/// Ground-truth label attached to simulated series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthLabel {
    Progressing,
    Nonprogressing,
}

/// A longitudinal sequence of exams for one eye.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EyeSeries {
    pub eye_id: String,
    pub exams: Vec<VisualField>,
    pub truth: Option<(TruthLabel, String)>,
}

impl EyeSeries {
    /// Exam times must be strictly increasing and the series must be
    /// long enough for the progression harness (6 visits).
    pub fn new(
        eye_id: String,
        exams: Vec<VisualField>,
        truth: Option<(TruthLabel, String)>,
    ) -> Result<Self, VfError> {
        if exams.len() < 6 {
            return Err(VfError::Format(format!(
                "series {eye_id} has {} exams, need at least 6",
                exams.len()
            )));
        }
        for pair in exams.windows(2) {
            if pair[1].exam_time <= pair[0].exam_time {
                return Err(VfError::Format(format!(
                    "series {eye_id} exam times not strictly increasing"
                )));
            }
        }
        Ok(EyeSeries { eye_id, exams, truth })
    }

    pub fn times(&self) -> Vec<f64> {
        self.exams.iter().map(|e| e.exam_time).collect()
    }

    pub fn last_time(&self) -> f64 {
        self.exams.last().map(|e| e.exam_time).unwrap_or(0.0)
    }
}
