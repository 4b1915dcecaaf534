//! Visual-field toolkit: 24-2 grid geometry, longitudinal exam
//! simulation with realistic noise, masked and variational autoencoder
//! denoising with hand-written backpropagation, progression detection
//! (PLR, MD trend, GRI), and Kaplan-Meier survival summaries.
//!
//! The `pipeline` module wires the stages together the same way the
//! `vftk` binary does: simulate -> train -> denoise -> analyze -> report,
//! all driven by one seed and reproducible byte for byte.

pub mod config;
pub mod error;
pub mod field;
pub mod grid;
pub mod neural;
pub mod noise;
pub mod normative;
pub mod pipeline;
pub mod progression;
pub mod report;
pub mod rng;
pub mod sim;
pub mod survival;

pub use error::VfError;
pub use field::{encode_input, total_deviation, EyeSeries, TruthLabel, VisualField};
pub use grid::{Grid24_2, FIELD_SIZE, GRID_SIZE};
pub use normative::{categorize_pvalue, Cutoffs, NormativeModel, PCategory};
