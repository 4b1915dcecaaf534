//! Normative model: per-location normal sensitivities, age correction,
//! and the total-deviation probability categories.
//!
//! The mean field is a "hill of vision" anchored at age 60 (about 30 dB
//! near fixation tapering to 26 dB peripherally). Only TD differences
//! matter downstream, so the absolute level is a shipped convention.
//!
//! Category cutoffs are empirical: a 10,000-exam healthy cohort
//! (age decline only, noise on) is simulated once from a fixed internal
//! seed and per-location TD quantiles at 5/2/1/0.5% become the cutoffs.
//! The derivation is deterministic, so categorization is stable across
//! runs; the table can also be persisted and reloaded.

use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::VfError;
use crate::grid::{field_to_grid, Grid24_2, FIELD_SIZE};
use crate::noise::{clamp_sens, NoiseModel};
use crate::rng::stream_rng;

/// Ordinal total-deviation probability category, least to most extreme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PCategory {
    /// Not significant.
    Ns,
    /// p < 5%
    P5,
    /// p < 2%
    P2,
    /// p < 1%
    P1,
    /// p < 0.5%
    P05,
}

impl PCategory {
    /// Ordinal input code used by the denoising networks.
    pub fn code(self) -> f64 {
        match self {
            PCategory::Ns => 0.0,
            PCategory::P5 => 0.25,
            PCategory::P2 => 0.5,
            PCategory::P1 => 0.75,
            PCategory::P05 => 1.0,
        }
    }

    pub fn from_code_index(i: u8) -> Option<Self> {
        match i {
            0 => Some(PCategory::Ns),
            1 => Some(PCategory::P5),
            2 => Some(PCategory::P2),
            3 => Some(PCategory::P1),
            4 => Some(PCategory::P05),
            _ => None,
        }
    }

    pub fn code_index(self) -> u8 {
        match self {
            PCategory::Ns => 0,
            PCategory::P5 => 1,
            PCategory::P2 => 2,
            PCategory::P1 => 3,
            PCategory::P05 => 4,
        }
    }
}

impl fmt::Display for PCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PCategory::Ns => "NS",
            PCategory::P5 => "P5",
            PCategory::P2 => "P2",
            PCategory::P1 => "P1",
            PCategory::P05 => "P05",
        };
        f.write_str(s)
    }
}

/// Per-location TD cutoffs for the four significance levels.
/// Strictly decreasing: p5 > p2 > p1 > p05.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoffs {
    pub p5: f64,
    pub p2: f64,
    pub p1: f64,
    pub p05: f64,
}

impl Cutoffs {
    pub fn is_strictly_decreasing(&self) -> bool {
        self.p5 > self.p2 && self.p2 > self.p1 && self.p1 > self.p05
    }
}

/// Assign the probability category for one TD value.
///
/// NS when td is above the 5% cutoff; otherwise the most extreme
/// category whose cutoff is still >= td. Boundary values belong to the
/// category they equal (td == p2 cutoff -> P2).
pub fn categorize_pvalue(td: f64, cutoffs: &Cutoffs) -> PCategory {
    if td <= cutoffs.p05 {
        PCategory::P05
    } else if td <= cutoffs.p1 {
        PCategory::P1
    } else if td <= cutoffs.p2 {
        PCategory::P2
    } else if td <= cutoffs.p5 {
        PCategory::P5
    } else {
        PCategory::Ns
    }
}

/// Normal sensitivities at the reference age plus the TD quantile table.
#[derive(Debug, Clone, PartialEq)]
pub struct NormativeModel {
    pub mean_at_60: Vec<f64>,
    pub age_slope: f64,
    pub cutoffs: Vec<Cutoffs>,
}

/// Seed of the one-off healthy-cohort quantile derivation. Fixed so the
/// shipped cutoffs never depend on user configuration.
const CUTOFF_DERIVATION_SEED: u64 = 0x5646_5444_2431;
const HEALTHY_EYES: usize = 500;
const HEALTHY_EXAMS_PER_EYE: usize = 20;
const REFERENCE_AGE: f64 = 60.0;

static STANDARD: OnceLock<NormativeModel> = OnceLock::new();

impl NormativeModel {
    /// The toolkit's standard model: hill-of-vision means, -0.1 dB/year
    /// aging, and the empirically derived cutoff table. Cached after the
    /// first call.
    pub fn standard() -> &'static NormativeModel {
        STANDARD.get_or_init(|| {
            let mean = hill_of_vision();
            let cutoffs = derive_cutoffs(&mean, -0.1);
            NormativeModel {
                mean_at_60: mean,
                age_slope: -0.1,
                cutoffs,
            }
        })
    }

    /// Expected normal sensitivity at a field position and age.
    pub fn normative(&self, pos: usize, age: f64) -> f64 {
        self.mean_at_60[pos] + self.age_slope * (age - REFERENCE_AGE)
    }

    /// Per-location population SD implied by the 5% cutoff
    /// (cutoff ~ -1.6449 * SD under a normal TD distribution).
    pub fn location_sd(&self, pos: usize) -> f64 {
        -self.cutoffs[pos].p5 / 1.6449
    }

    pub fn categorize(&self, pos: usize, td: f64) -> PCategory {
        categorize_pvalue(td, &self.cutoffs[pos])
    }

    /// Write the versioned plain-text table: one row per analyzed
    /// location (grid index, x, y, mean, four cutoffs).
    pub fn save(&self, path: &Path) -> Result<(), VfError> {
        let grid = Grid24_2::build();
        let mut out = String::new();
        out.push_str("# vftk normative table v1\n");
        out.push_str(&format!("# age_slope {}\n", self.age_slope));
        out.push_str("# index x y mean_at_60 cutoff_p5 cutoff_p2 cutoff_p1 cutoff_p05\n");
        for pos in 0..FIELD_SIZE {
            let g = field_to_grid(pos);
            let (x, y) = grid.point(g);
            let c = &self.cutoffs[pos];
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {}\n",
                g, x, y, self.mean_at_60[pos], c.p5, c.p2, c.p1, c.p05
            ));
        }
        std::fs::write(path, out).map_err(|e| VfError::Io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self, VfError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| VfError::Io(path.display().to_string(), e))?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.starts_with("# vftk normative table v1") => {}
            _ => return Err(VfError::Format("unrecognized normative table header".into())),
        }
        let mut age_slope = -0.1;
        let mut mean = Vec::with_capacity(FIELD_SIZE);
        let mut cutoffs = Vec::with_capacity(FIELD_SIZE);
        for line in lines {
            if let Some(rest) = line.strip_prefix("# age_slope ") {
                age_slope = rest
                    .trim()
                    .parse()
                    .map_err(|_| VfError::Format("bad age_slope".into()))?;
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 8 {
                return Err(VfError::Format(format!("bad normative row: {line}")));
            }
            let parse = |s: &str| -> Result<f64, VfError> {
                s.parse().map_err(|_| VfError::Format(format!("bad number: {s}")))
            };
            mean.push(parse(f[3])?);
            cutoffs.push(Cutoffs {
                p5: parse(f[4])?,
                p2: parse(f[5])?,
                p1: parse(f[6])?,
                p05: parse(f[7])?,
            });
        }
        if mean.len() != FIELD_SIZE {
            return Err(VfError::Format(format!(
                "normative table has {} rows, expected {FIELD_SIZE}",
                mean.len()
            )));
        }
        Ok(NormativeModel { mean_at_60: mean, age_slope, cutoffs })
    }
}

/// Hill of vision: 30 dB at fixation tapering to 26 dB at the most
/// eccentric points, rounded to 0.1 dB.
fn hill_of_vision() -> Vec<f64> {
    let grid = Grid24_2::build();
    let r_max = 27.17f64; // eccentricity of the (-27, +-3) points
    grid.field_points()
        .iter()
        .map(|&(x, y)| {
            let r = f64::from(x * x + y * y).sqrt();
            let v = 30.0 - 4.0 * (r / r_max).powf(1.5);
            (v * 10.0).round() / 10.0
        })
        .collect()
}

/// Simulate the healthy cohort and take per-location TD quantiles.
fn derive_cutoffs(mean_at_60: &[f64], age_slope: f64) -> Vec<Cutoffs> {
    let noise = NoiseModel::default_sensitivity_dependent();
    let n = HEALTHY_EYES * HEALTHY_EXAMS_PER_EYE;
    let mut td_samples: Vec<Vec<f64>> =
        (0..FIELD_SIZE).map(|_| Vec::with_capacity(n)).collect();
    for eye in 0..HEALTHY_EYES {
        let mut rng = stream_rng(CUTOFF_DERIVATION_SEED, "healthy-cohort", eye as u64);
        for k in 0..HEALTHY_EXAMS_PER_EYE {
            let t = k as f64 * 0.5;
            for (pos, &m) in mean_at_60.iter().enumerate() {
                let true_s = m + age_slope * t;
                let eps: f64 = rng.sample(StandardNormal);
                let s = clamp_sens(true_s + eps * noise.sd(true_s));
                // TD against the baseline-age normative value.
                td_samples[pos].push(s - m);
            }
        }
    }
    td_samples
        .into_iter()
        .map(|mut v| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q = |p: f64| {
                let rank = ((p * v.len() as f64).ceil() as usize).max(1) - 1;
                v[rank]
            };
            let c = Cutoffs { p5: q(0.05), p2: q(0.02), p1: q(0.01), p05: q(0.005) };
            assert!(c.is_strictly_decreasing(), "degenerate quantile table");
            c
        })
        .collect()
}
