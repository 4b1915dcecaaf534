//! Kaplan-Meier product-limit estimation with Greenwood confidence
//! bands over progression verdicts.

use crate::error::VfError;
use crate::progression::ProgressionVerdict;

/// One subject's contribution: time to progression (event) or time of
/// last follow-up (censored).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalInput {
    pub time: f64,
    pub event: bool,
}

/// Product-limit curve. One entry per distinct event time.
#[derive(Debug, Clone, PartialEq)]
pub struct KmCurve {
    pub event_times: Vec<f64>,
    pub survival: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    pub censored_total: usize,
}

const Z_95: f64 = 1.959_963_984_540_054;

/// Kaplan-Meier estimate.
///
/// Ties between events and censorings at the same time follow the
/// standard convention: events are processed first, so same-time
/// censorings stay in the risk set for that step. Bands are the
/// log-transformed Greenwood 95% intervals, clipped to [0, 1].
pub fn km_estimate(inputs: &[SurvivalInput]) -> Result<KmCurve, VfError> {
    if inputs.is_empty() {
        return Err(VfError::Data("km_estimate on empty input".into()));
    }
    let mut sorted: Vec<SurvivalInput> = inputs.to_vec();
    sorted.sort_by(|a, b| {
        a.time
            .partial_cmp(&b.time)
            .unwrap()
            // At equal times, events first.
            .then(b.event.cmp(&a.event))
    });

    let n = sorted.len();
    let mut curve = KmCurve {
        event_times: Vec::new(),
        survival: Vec::new(),
        ci_low: Vec::new(),
        ci_high: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
        censored_total: sorted.iter().filter(|s| !s.event).count(),
    };

    let mut s = 1.0;
    let mut greenwood = 0.0; // running sum of d / (n (n - d))
    let mut i = 0;
    let mut at_risk = n;
    while i < n {
        let t = sorted[i].time;
        let mut d = 0;
        let mut removed = 0;
        while i < n && sorted[i].time == t {
            if sorted[i].event {
                d += 1;
            }
            removed += 1;
            i += 1;
        }
        if d > 0 {
            let nf = at_risk as f64;
            let df = d as f64;
            s *= 1.0 - df / nf;
            if (nf - df) > 0.0 {
                greenwood += df / (nf * (nf - df));
            }
            let (lo, hi) = if s <= 0.0 {
                (0.0, 0.0)
            } else {
                let se_log = greenwood.sqrt();
                (
                    (s * (-Z_95 * se_log).exp()).clamp(0.0, 1.0),
                    (s * (Z_95 * se_log).exp()).clamp(0.0, 1.0),
                )
            };
            curve.event_times.push(t);
            curve.survival.push(s);
            curve.ci_low.push(lo);
            curve.ci_high.push(hi);
            curve.at_risk.push(at_risk);
            curve.events.push(d);
        }
        at_risk -= removed;
    }
    Ok(curve)
}

/// Convert harness verdicts into survival inputs: conversion time when
/// progressed, otherwise censoring at the given follow-up length.
pub fn survival_inputs(verdicts: &[ProgressionVerdict], follow_up: f64) -> Vec<SurvivalInput> {
    verdicts
        .iter()
        .map(|v| match v.conversion_time {
            Some(t) if v.progressed => SurvivalInput { time: t, event: true },
            _ => SurvivalInput { time: follow_up, event: false },
        })
        .collect()
}
