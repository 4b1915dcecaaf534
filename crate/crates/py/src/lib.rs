//! Python bindings: simulate cohorts, train and apply denoisers, run
//! progression analysis, and build Kaplan-Meier curves in-process.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use vftk::config::RunConfig;
use vftk::field::{EyeSeries, TruthLabel, VisualField};
use vftk::neural::{fit, CheckpointRecord, TrainConfig, Variant};
use vftk::normative::NormativeModel;
use vftk::progression::{progressive_harness, Method, MethodThresholds};
use vftk::sim::{read_cohort_csv, simulate_cohort, write_cohort_csv, Scenario};
use vftk::survival::{km_estimate, SurvivalInput};
use vftk::VfError;

fn err(e: VfError) -> PyErr {
    match e {
        VfError::Io(..) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_scenario(name: &str) -> PyResult<Scenario> {
    Scenario::parse(name).ok_or_else(|| {
        PyValueError::new_err(format!(
            "unknown scenario '{name}' (expected age_related, slow, medium, fast, cataract)"
        ))
    })
}

fn parse_variant(name: &str) -> PyResult<Variant> {
    Variant::parse(name).ok_or_else(|| {
        PyValueError::new_err(format!(
            "unknown variant '{name}' (expected mae, mae+p, vae, vae+p)"
        ))
    })
}

fn parse_method(name: &str) -> PyResult<Method> {
    Method::parse(name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown method '{name}' (plr, md, gri)")))
}

/// A simulated (or loaded) longitudinal cohort.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct Cohort {
    eyes: Vec<EyeSeries>,
}

#[pymethods]
impl Cohort {
    #[staticmethod]
    fn from_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Cohort { eyes: read_cohort_csv(&path).map_err(err)? })
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        write_cohort_csv(&self.eyes, &path).map_err(err)
    }

    fn n_eyes(&self) -> usize {
        self.eyes.len()
    }

    fn eye_ids(&self) -> Vec<String> {
        self.eyes.iter().map(|e| e.eye_id.clone()).collect()
    }

    /// Exam times (years since baseline) of one eye.
    fn times(&self, eye_id: &str) -> PyResult<Vec<f64>> {
        Ok(self.find(eye_id)?.times())
    }

    /// Per-exam sensitivity vectors (exams x 52) of one eye.
    fn sensitivities(&self, eye_id: &str) -> PyResult<Vec<Vec<f64>>> {
        Ok(self
            .find(eye_id)?
            .exams
            .iter()
            .map(|e| e.sensitivities.clone())
            .collect())
    }

    /// Per-exam total-deviation vectors of one eye.
    fn total_deviation(&self, eye_id: &str) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.find(eye_id)?.exams.iter().map(|e| e.td.clone()).collect())
    }

    /// Mean deviation trace of one eye.
    fn md(&self, eye_id: &str) -> PyResult<Vec<f64>> {
        Ok(self.find(eye_id)?.exams.iter().map(|e| e.mean_deviation()).collect())
    }

    /// Ground-truth labels: eye_id -> (progressing flag, scenario tag).
    fn truth(&self) -> HashMap<String, (bool, String)> {
        self.eyes
            .iter()
            .filter_map(|e| {
                e.truth.as_ref().map(|(label, tag)| {
                    (e.eye_id.clone(), (*label == TruthLabel::Progressing, tag.clone()))
                })
            })
            .collect()
    }

    fn __len__(&self) -> usize {
        self.eyes.len()
    }

    fn __repr__(&self) -> String {
        format!("Cohort(n_eyes={})", self.eyes.len())
    }
}

impl Cohort {
    fn find(&self, eye_id: &str) -> PyResult<&EyeSeries> {
        self.eyes
            .iter()
            .find(|e| e.eye_id == eye_id)
            .ok_or_else(|| PyValueError::new_err(format!("no eye '{eye_id}' in cohort")))
    }
}

/// A trained denoising network.
#[pyclass]
struct Denoiser {
    checkpoint: CheckpointRecord,
}

#[pymethods]
impl Denoiser {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Denoiser { checkpoint: CheckpointRecord::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.checkpoint.save(&path).map_err(err)
    }

    #[getter]
    fn variant(&self) -> String {
        self.checkpoint.variant.tag().to_string()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.checkpoint.epoch
    }

    #[getter]
    fn val_loss(&self) -> f64 {
        self.checkpoint.val_loss
    }

    /// Denoise one exam given its 52 sensitivities (dB). Returns the
    /// reconstructed sensitivities.
    #[pyo3(signature = (sensitivities, age=60.0))]
    fn denoise(&self, sensitivities: Vec<f64>, age: f64) -> PyResult<Vec<f64>> {
        let norm = NormativeModel::standard();
        let field = VisualField::new(sensitivities, 0.0, age, norm).map_err(err)?;
        Ok(self.checkpoint.denoise_field(&field, norm).map_err(err)?.sensitivities)
    }

    /// Denoise every exam of a cohort, returning a new cohort.
    fn denoise_cohort(&self, cohort: &Cohort) -> PyResult<Cohort> {
        let norm = NormativeModel::standard();
        let eyes: Result<Vec<EyeSeries>, VfError> = cohort
            .eyes
            .iter()
            .map(|e| self.checkpoint.denoise_series(e, norm))
            .collect();
        Ok(Cohort { eyes: eyes.map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!(
            "Denoiser(variant={}, epoch={}, val_loss={:.6e})",
            self.checkpoint.variant, self.checkpoint.epoch, self.checkpoint.val_loss
        )
    }
}

/// Simulate one setting. Scenario is one of age_related, slow, medium,
/// fast, cataract.
#[pyfunction]
#[pyo3(signature = (scenario, n_eyes=376, seed=42, pinned_rates=false))]
fn simulate(scenario: &str, n_eyes: usize, seed: u64, pinned_rates: bool) -> PyResult<Cohort> {
    let kind = parse_scenario(scenario)?;
    let mut config = RunConfig::default();
    config.simulate.eyes = n_eyes;
    config.simulate.pinned_rates = pinned_rates;
    let spec = config.scenario_spec(kind);
    let eyes = simulate_cohort(&spec, NormativeModel::standard(), seed).map_err(err)?;
    Ok(Cohort { eyes })
}

/// Train one denoiser variant on the pooled exams of the given cohorts.
#[pyfunction]
#[pyo3(signature = (cohorts, variant, epochs=200, seed=42, batch_size=32, learning_rate=1e-4))]
fn train_denoiser(
    cohorts: Vec<Cohort>,
    variant: &str,
    epochs: usize,
    seed: u64,
    batch_size: usize,
    learning_rate: f64,
) -> PyResult<Denoiser> {
    let variant = parse_variant(variant)?;
    let eyes: Vec<EyeSeries> = cohorts.into_iter().flat_map(|c| c.eyes).collect();
    let config = TrainConfig {
        max_epochs: epochs,
        seed,
        batch_size,
        learning_rate,
        ..TrainConfig::default()
    };
    let outcome = fit(variant, &eyes, &config).map_err(err)?;
    Ok(Denoiser { checkpoint: outcome.checkpoint })
}

/// Run the progressive harness over a cohort with one method. Returns
/// eye_id -> (progressed, conversion_time or None).
#[pyfunction]
#[pyo3(signature = (cohort, method, denoiser=None))]
fn analyze(
    cohort: &Cohort,
    method: &str,
    denoiser: Option<&Denoiser>,
) -> PyResult<HashMap<String, (bool, Option<f64>)>> {
    let method = parse_method(method)?;
    let norm = NormativeModel::standard();
    let thresholds = MethodThresholds::default();
    let mut out = HashMap::with_capacity(cohort.eyes.len());
    for eye in &cohort.eyes {
        let series = match denoiser {
            Some(d) => d.checkpoint.denoise_series(eye, norm).map_err(err)?,
            None => eye.clone(),
        };
        let verdict = progressive_harness(&series, method, norm, &thresholds);
        out.insert(verdict.eye_id, (verdict.progressed, verdict.conversion_time));
    }
    Ok(out)
}

/// Kaplan-Meier product-limit curve. Takes per-subject times and event
/// flags; returns a dict of aligned lists (time, at_risk, events,
/// survival, ci_low, ci_high).
#[pyfunction]
fn km_curve(py: Python<'_>, times: Vec<f64>, events: Vec<bool>) -> PyResult<Py<PyAny>> {
    if times.len() != events.len() {
        return Err(PyValueError::new_err("times and events must have equal length"));
    }
    let inputs: Vec<SurvivalInput> = times
        .iter()
        .zip(events.iter())
        .map(|(&time, &event)| SurvivalInput { time, event })
        .collect();
    let curve = km_estimate(&inputs).map_err(err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("time", curve.event_times)?;
    dict.set_item("at_risk", curve.at_risk)?;
    dict.set_item("events", curve.events)?;
    dict.set_item("survival", curve.survival)?;
    dict.set_item("ci_low", curve.ci_low)?;
    dict.set_item("ci_high", curve.ci_high)?;
    dict.set_item("censored", curve.censored_total)?;
    Ok(dict.into_any().unbind())
}

/// The 24-2 grid: list of (index, x, y, blind_spot) for all 54 points.
#[pyfunction]
fn grid_points() -> Vec<(usize, i32, i32, bool)> {
    let grid = vftk::Grid24_2::build();
    (1..=54)
        .map(|i| {
            let (x, y) = grid.point(i);
            (i, x, y, [26, 35].contains(&i))
        })
        .collect()
}

/// Normative mean sensitivities at age 60, field order (52 values).
#[pyfunction]
fn normative_means() -> Vec<f64> {
    NormativeModel::standard().mean_at_60.clone()
}

#[pymodule]
fn vftk_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Cohort>()?;
    m.add_class::<Denoiser>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(train_denoiser, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(km_curve, m)?)?;
    m.add_function(wrap_pyfunction!(grid_points, m)?)?;
    m.add_function(wrap_pyfunction!(normative_means, m)?)?;
    Ok(())
}
