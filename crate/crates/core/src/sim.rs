//! Longitudinal cohort simulation: two clinical baseline fields, focal
//! and diffuse decay patterns at three rates, age-related decline, and
//! measurement noise.
//!
//! Sensitivities follow a per-location linear trajectory
//! `s_i(t) = clamp(baseline_i + age_slope * t + [i in affected] * rate * t, 0, 40)`
//! before noise. The age term applies everywhere and is part of the
//! measured signal: simulated exams keep the baseline age as their
//! normative anchor, so TD trends show the full decline.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::VfError;
use crate::field::{EyeSeries, TruthLabel, VisualField};
use crate::grid::{grid_to_field, Grid24_2, FIELD_SIZE};
use crate::noise::{clamp_sens, NoiseModel};
use crate::normative::{NormativeModel, PCategory};
use crate::rng::stream_rng;

/// Progression rates (dB/year) applied to deteriorating locations.
pub const RATES: [f64; 3] = [-0.5, -1.0, -2.0];

/// Rate applied uniformly in the cataract setting, on top of age decay.
/// Strong enough that the MD trend flags essentially every eye, mild
/// enough that no single location crosses the PLR slope threshold.
pub const CATARACT_RATE: f64 = -0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    AgeDecline,
    SlowProgression,
    MediumProgression,
    FastProgression,
    Cataract,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::AgeDecline,
        Scenario::SlowProgression,
        Scenario::MediumProgression,
        Scenario::FastProgression,
        Scenario::Cataract,
    ];

    pub fn truth(self) -> TruthLabel {
        match self {
            Scenario::AgeDecline | Scenario::Cataract => TruthLabel::Nonprogressing,
            _ => TruthLabel::Progressing,
        }
    }

    /// Rate used when severity cohorts pin a single rate.
    pub fn pinned_rate(self) -> Option<f64> {
        match self {
            Scenario::SlowProgression => Some(RATES[0]),
            Scenario::MediumProgression => Some(RATES[1]),
            Scenario::FastProgression => Some(RATES[2]),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Scenario> {
        match s {
            "age_related" | "age_decline" => Some(Scenario::AgeDecline),
            "slow" | "slow_progression" => Some(Scenario::SlowProgression),
            "medium" | "medium_progression" => Some(Scenario::MediumProgression),
            "fast" | "fast_progression" => Some(Scenario::FastProgression),
            "cataract" => Some(Scenario::Cataract),
            _ => None,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scenario::AgeDecline => "age_related",
            Scenario::SlowProgression => "slow",
            Scenario::MediumProgression => "medium",
            Scenario::FastProgression => "fast",
            Scenario::Cataract => "cataract",
        };
        f.write_str(s)
    }
}

/// One simulation setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: Scenario,
    pub n_eyes: usize,
    pub n_exams: usize,
    /// Follow-up length in years.
    pub duration: f64,
    pub baseline_age: f64,
    /// Age-related decay in dB/year, applied at every location.
    pub age_slope: f64,
    pub noise: NoiseModel,
    /// When set, severity cohorts pin their single rate and rotate only
    /// over baselines and patterns; otherwise progression cohorts rotate
    /// over the full 24-scenario factorial.
    pub pinned_rates: bool,
}

impl ScenarioSpec {
    pub fn new(kind: Scenario) -> Self {
        ScenarioSpec {
            kind,
            n_eyes: 376,
            n_exams: 20,
            duration: 9.5,
            baseline_age: 60.0,
            age_slope: -0.1,
            noise: NoiseModel::default(),
            pinned_rates: false,
        }
    }

    pub fn exam_time(&self, k: usize) -> f64 {
        k as f64 * self.duration / (self.n_exams - 1) as f64
    }

    fn validate(&self) -> Result<(), VfError> {
        if self.n_eyes == 0 {
            return Err(VfError::Config("n_eyes must be positive".into()));
        }
        if self.n_exams < 6 {
            return Err(VfError::Config("n_exams must be at least 6".into()));
        }
        if self.duration <= 0.0 {
            return Err(VfError::Config("duration must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    InferiorNasalDefect,
    SuperiorArcuate,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BaselineKind::InferiorNasalDefect => "inferior_nasal",
            BaselineKind::SuperiorArcuate => "superior_arcuate",
        };
        f.write_str(s)
    }
}

/// Hand-authored defect depths (dB below the normative hill) keyed by
/// 1-based grid index. Depths are 8-15 dB, deepest at the defect core.
fn defect_depths(kind: BaselineKind) -> &'static [(usize, f64)] {
    match kind {
        BaselineKind::InferiorNasalDefect => &[
            (28, 12.0),
            (29, 13.0),
            (30, 11.0),
            (31, 9.0),
            (37, 8.0),
            (38, 9.0),
            (39, 8.0),
            (45, 8.0),
        ],
        BaselineKind::SuperiorArcuate => &[
            (12, 10.0),
            (13, 12.0),
            (14, 13.0),
            (15, 12.0),
            (16, 11.0),
            (17, 9.0),
            (19, 8.0),
            (20, 9.0),
            (23, 8.0),
            (24, 8.0),
        ],
    }
}

/// A starting field for the simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineField {
    pub kind: BaselineKind,
    pub sensitivities: Vec<f64>,
}

impl BaselineField {
    /// The shipped baseline: normative hill minus the defect depth map.
    pub fn build(kind: BaselineKind, norm: &NormativeModel) -> Self {
        let mut sens = norm.mean_at_60.clone();
        for &(g, depth) in defect_depths(kind) {
            let pos = grid_to_field(g).expect("defect index on blind spot");
            sens[pos] = clamp_sens(sens[pos] - depth);
        }
        BaselineField { kind, sensitivities: sens }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    FocalSmall,
    FocalMedium,
    FocalLarge,
    Diffuse,
}

impl PatternKind {
    pub const ALL: [PatternKind; 4] = [
        PatternKind::FocalSmall,
        PatternKind::FocalMedium,
        PatternKind::FocalLarge,
        PatternKind::Diffuse,
    ];

    pub fn expected_size(self) -> usize {
        match self {
            PatternKind::FocalSmall => 4,
            PatternKind::FocalMedium => 8,
            PatternKind::FocalLarge => 16,
            PatternKind::Diffuse => FIELD_SIZE,
        }
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PatternKind::FocalSmall => "focal_small",
            PatternKind::FocalMedium => "focal_medium",
            PatternKind::FocalLarge => "focal_large",
            PatternKind::Diffuse => "diffuse",
        };
        f.write_str(s)
    }
}

/// Grid indices (1-based) of each focal set. Small defects depend on the
/// baseline (nasal step vs paracentral); the large defect is a pair of
/// broad arcuates shared by both baselines.
fn pattern_grid_indices(kind: PatternKind, baseline: BaselineKind) -> Vec<usize> {
    match (kind, baseline) {
        (PatternKind::FocalSmall, BaselineKind::InferiorNasalDefect) => vec![28, 29, 30, 31],
        (PatternKind::FocalSmall, BaselineKind::SuperiorArcuate) => vec![14, 15, 23, 24],
        (PatternKind::FocalMedium, BaselineKind::InferiorNasalDefect) => {
            vec![28, 29, 30, 31, 37, 38, 39, 45]
        }
        (PatternKind::FocalMedium, BaselineKind::SuperiorArcuate) => {
            vec![12, 13, 14, 15, 16, 17, 23, 24]
        }
        (PatternKind::FocalLarge, _) => {
            vec![12, 13, 14, 15, 16, 17, 19, 20, 28, 29, 38, 39, 40, 41, 42, 43]
        }
        (PatternKind::Diffuse, _) => (1..=54)
            .filter(|i| grid_to_field(*i).is_some())
            .collect(),
    }
}

/// A decay pattern: which locations deteriorate and how fast.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayPattern {
    pub kind: PatternKind,
    /// 0-based positions in the 52-value field vector.
    pub affected: Vec<usize>,
    /// dB/year, negative for deterioration. Zero means no focal decay.
    pub rate: f64,
}

impl DecayPattern {
    pub fn new(kind: PatternKind, baseline: BaselineKind, rate: f64) -> Self {
        let affected: Vec<usize> = pattern_grid_indices(kind, baseline)
            .into_iter()
            .map(|g| grid_to_field(g).expect("pattern index on blind spot"))
            .collect();
        debug_assert_eq!(affected.len(), kind.expected_size());
        DecayPattern { kind, affected, rate }
    }

    /// The no-decay pattern used by the pure age-decline setting.
    pub fn none() -> Self {
        DecayPattern { kind: PatternKind::Diffuse, affected: Vec::new(), rate: 0.0 }
    }
}

/// Noise-free sensitivities at exam `k`.
pub fn true_trajectory(
    baseline: &BaselineField,
    pattern: &DecayPattern,
    spec: &ScenarioSpec,
    k: usize,
) -> Vec<f64> {
    let t = spec.exam_time(k);
    let mut s = baseline.sensitivities.clone();
    for v in s.iter_mut() {
        *v += spec.age_slope * t;
    }
    for &pos in &pattern.affected {
        s[pos] += pattern.rate * t;
    }
    s.iter_mut().for_each(|v| *v = clamp_sens(*v));
    s
}

/// Perturb every location independently with sensitivity-dependent
/// noise and rebuild the derived values.
pub fn add_noise(
    field: &VisualField,
    model: &NoiseModel,
    rng: &mut impl Rng,
    norm: &NormativeModel,
) -> VisualField {
    let sens: Vec<f64> = field
        .sensitivities
        .iter()
        .map(|&s| {
            let eps: f64 = rng.sample(StandardNormal);
            clamp_sens(s + eps * model.sd(s))
        })
        .collect();
    VisualField::new(sens, field.exam_time, field.age_at_exam, norm)
        .expect("noise preserves field shape")
}

/// The (baseline, pattern, rate) combination assigned to one eye.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeAssignment {
    pub baseline: BaselineKind,
    pub pattern: PatternKind,
    pub rate: f64,
}

impl EyeAssignment {
    pub fn tag(&self) -> String {
        format!("{}/{}/{}", self.baseline, self.pattern, self.rate)
    }
}

/// Round-robin assignment of eye `index` within a scenario.
pub fn assign_eye(spec: &ScenarioSpec, index: usize) -> EyeAssignment {
    let baselines = [BaselineKind::InferiorNasalDefect, BaselineKind::SuperiorArcuate];
    match spec.kind {
        Scenario::AgeDecline => EyeAssignment {
            baseline: baselines[index % 2],
            pattern: PatternKind::Diffuse,
            rate: 0.0,
        },
        Scenario::Cataract => EyeAssignment {
            baseline: baselines[index % 2],
            pattern: PatternKind::Diffuse,
            rate: CATARACT_RATE,
        },
        _ => {
            if spec.pinned_rates {
                let combo = index % 8;
                EyeAssignment {
                    baseline: baselines[combo % 2],
                    pattern: PatternKind::ALL[combo / 2],
                    rate: spec.kind.pinned_rate().unwrap(),
                }
            } else {
                let combo = index % 24;
                EyeAssignment {
                    baseline: baselines[combo % 2],
                    pattern: PatternKind::ALL[(combo / 2) % 4],
                    rate: RATES[combo / 8],
                }
            }
        }
    }
}

/// Simulate one eye's full series.
fn simulate_eye(
    spec: &ScenarioSpec,
    norm: &NormativeModel,
    seed: u64,
    index: usize,
) -> EyeSeries {
    let assign = assign_eye(spec, index);
    let baseline = BaselineField::build(assign.baseline, norm);
    let pattern = if assign.rate == 0.0 && spec.kind == Scenario::AgeDecline {
        DecayPattern::none()
    } else {
        DecayPattern::new(assign.pattern, assign.baseline, assign.rate)
    };
    let mut rng = stream_rng(seed, &format!("sim/{}", spec.kind), index as u64);
    let mut exams = Vec::with_capacity(spec.n_exams);
    for k in 0..spec.n_exams {
        let true_sens = true_trajectory(&baseline, &pattern, spec, k);
        // The normative anchor stays at the baseline age: the simulated
        // age decline is part of the signal under study.
        let clean = VisualField::new(true_sens, spec.exam_time(k), spec.baseline_age, norm)
            .expect("trajectory has field shape");
        let noisy = match spec.noise {
            NoiseModel::None => clean,
            _ => add_noise(&clean, &spec.noise, &mut rng, norm),
        };
        exams.push(noisy);
    }
    EyeSeries::new(
        format!("{}_{:04}", spec.kind, index),
        exams,
        Some((spec.kind.truth(), assign.tag())),
    )
    .expect("simulated series is well-formed")
}

/// Simulate a full cohort for one setting. Deterministic in `seed` and
/// order-independent per eye.
pub fn simulate_cohort(
    spec: &ScenarioSpec,
    norm: &NormativeModel,
    seed: u64,
) -> Result<Vec<EyeSeries>, VfError> {
    spec.validate()?;
    Ok((0..spec.n_eyes)
        .map(|i| simulate_eye(spec, norm, seed, i))
        .collect())
}

/// Human-readable table of the focal pattern index sets, for the
/// simulation manifest.
pub fn pattern_table_text() -> String {
    let grid = Grid24_2::build();
    let mut out = String::from("# focal decay patterns: grid indices (1-based) and coordinates\n");
    for baseline in [BaselineKind::InferiorNasalDefect, BaselineKind::SuperiorArcuate] {
        for kind in [PatternKind::FocalSmall, PatternKind::FocalMedium, PatternKind::FocalLarge] {
            let idx = pattern_grid_indices(kind, baseline);
            let coords: Vec<String> = idx
                .iter()
                .map(|&g| {
                    let (x, y) = grid.point(g);
                    format!("{g}:({x},{y})")
                })
                .collect();
            out.push_str(&format!("{baseline} {kind} [{}]\n", coords.join(" ")));
        }
    }
    out.push_str("both diffuse [all 52 analyzed locations]\n");
    for baseline in [BaselineKind::InferiorNasalDefect, BaselineKind::SuperiorArcuate] {
        let depths: Vec<String> = defect_depths(baseline)
            .iter()
            .map(|&(g, d)| format!("{g}:-{d}"))
            .collect();
        out.push_str(&format!("baseline {baseline} depths [{}]\n", depths.join(" ")));
    }
    out
}

// ---------------------------------------------------------------------------
// Cohort file format
// ---------------------------------------------------------------------------

/// Write one cohort as headered CSV, one row per exam. Floats use the
/// shortest round-trip representation so files are byte-stable and
/// reload exactly.
pub fn write_cohort_csv(series: &[EyeSeries], path: &Path) -> Result<(), VfError> {
    let mut out = String::new();
    out.push_str("eye_id,scenario,truth,exam_index,t_years,age");
    for i in 1..=FIELD_SIZE {
        out.push_str(&format!(",s{i}"));
    }
    for i in 1..=FIELD_SIZE {
        out.push_str(&format!(",td{i}"));
    }
    for i in 1..=FIELD_SIZE {
        out.push_str(&format!(",c{i}"));
    }
    out.push('\n');
    for eye in series {
        let (truth, tag) = match &eye.truth {
            Some((TruthLabel::Progressing, tag)) => ("progressing", tag.as_str()),
            Some((TruthLabel::Nonprogressing, tag)) => ("nonprogressing", tag.as_str()),
            None => ("unknown", ""),
        };
        for (k, exam) in eye.exams.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}",
                eye.eye_id, tag, truth, k, exam.exam_time, exam.age_at_exam
            ));
            for &s in &exam.sensitivities {
                out.push_str(&format!(",{s}"));
            }
            for &d in &exam.td {
                out.push_str(&format!(",{d}"));
            }
            for &c in &exam.p_categories {
                out.push_str(&format!(",{}", c.code_index()));
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| VfError::Io(path.display().to_string(), e))
}

/// Read a cohort file back into series. TD and categories are taken
/// from the file as written (they round-trip bit-exactly).
pub fn read_cohort_csv(path: &Path) -> Result<Vec<EyeSeries>, VfError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| VfError::Io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| VfError::Data("empty cohort file".into()))?;
    if !header.starts_with("eye_id,scenario,truth,exam_index") {
        return Err(VfError::Data("unrecognized cohort header".into()));
    }
    type PendingEye = (Option<(TruthLabel, String)>, Vec<(usize, VisualField)>);
    let mut eyes: BTreeMap<String, PendingEye> = BTreeMap::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 + 3 * FIELD_SIZE {
            return Err(VfError::Data(format!(
                "cohort row has {} fields, expected {}",
                f.len(),
                6 + 3 * FIELD_SIZE
            )));
        }
        let parse = |s: &str| -> Result<f64, VfError> {
            s.parse().map_err(|_| VfError::Data(format!("bad number: {s}")))
        };
        let eye_id = f[0].to_string();
        let tag = f[1].to_string();
        let truth = match f[2] {
            "progressing" => Some((TruthLabel::Progressing, tag)),
            "nonprogressing" => Some((TruthLabel::Nonprogressing, tag)),
            _ => None,
        };
        let k: usize = f[3]
            .parse()
            .map_err(|_| VfError::Data(format!("bad exam index: {}", f[3])))?;
        let exam_time = parse(f[4])?;
        let age = parse(f[5])?;
        let mut sens = Vec::with_capacity(FIELD_SIZE);
        let mut td = Vec::with_capacity(FIELD_SIZE);
        let mut cats = Vec::with_capacity(FIELD_SIZE);
        for i in 0..FIELD_SIZE {
            sens.push(parse(f[6 + i])?);
        }
        for i in 0..FIELD_SIZE {
            td.push(parse(f[6 + FIELD_SIZE + i])?);
        }
        for i in 0..FIELD_SIZE {
            let code: u8 = f[6 + 2 * FIELD_SIZE + i]
                .parse()
                .map_err(|_| VfError::Data("bad category code".to_string()))?;
            cats.push(
                PCategory::from_code_index(code)
                    .ok_or_else(|| VfError::Data(format!("bad category code {code}")))?,
            );
        }
        let field = VisualField {
            sensitivities: sens,
            exam_time,
            age_at_exam: age,
            td,
            p_categories: cats,
        };
        eyes.entry(eye_id).or_insert_with(|| (truth, Vec::new())).1.push((k, field));
    }
    let mut out = Vec::with_capacity(eyes.len());
    for (eye_id, (truth, mut exams)) in eyes {
        exams.sort_by_key(|(k, _)| *k);
        let fields: Vec<VisualField> = exams.into_iter().map(|(_, f)| f).collect();
        out.push(EyeSeries::new(eye_id, fields, truth)?);
    }
    Ok(out)
}
