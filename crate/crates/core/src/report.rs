//! Report generation: progression-percentage grids, conversion-time
//! grids, and Kaplan-Meier overlays, all computed from persisted
//! verdict files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::{PipelineTag, RunConfig};
use crate::error::VfError;
use crate::pipeline::{manifest_duration, read_verdicts, report_dir, verdict_path, VerdictRow};
use crate::progression::{cohort_summary, Method, ProgressionVerdict};
use crate::sim::Scenario;
use crate::survival::{km_estimate, KmCurve, SurvivalInput};

fn to_verdicts(rows: &[&VerdictRow]) -> Vec<ProgressionVerdict> {
    rows.iter()
        .map(|r| ProgressionVerdict {
            eye_id: r.eye_id.clone(),
            method: r.method,
            progressed: r.progressed,
            conversion_time: r.conversion_time,
            trace: Vec::new(),
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<(), VfError> {
    std::fs::write(path, text).map_err(|e| VfError::Io(path.display().to_string(), e))
}

/// Generate every report artifact. Requires all 15 verdict files.
pub fn run_report(config: &RunConfig) -> Result<Vec<PathBuf>, VfError> {
    let scenarios = config.scenarios()?;
    let duration = manifest_duration(&config.out_dir)?;
    let dir = report_dir(config);
    std::fs::create_dir_all(&dir).map_err(|e| VfError::Io(dir.display().to_string(), e))?;

    // verdicts[(pipeline, method)] -> rows
    let mut verdicts: BTreeMap<(String, Method), Vec<VerdictRow>> = BTreeMap::new();
    for tag in PipelineTag::ALL {
        for method in Method::ALL {
            let path = verdict_path(config, tag, method);
            if !path.exists() {
                return Err(VfError::Data(format!(
                    "verdict file {} missing; run analyze first",
                    path.display()
                )));
            }
            verdicts.insert((tag.tag().to_string(), method), read_verdicts(&path)?);
        }
    }

    let mut written = Vec::new();

    // Percentage grid per method: rows pipelines, columns settings.
    for method in Method::ALL {
        let mut out = String::from("pipeline");
        for s in &scenarios {
            out.push_str(&format!(",{s}"));
        }
        out.push('\n');
        for tag in PipelineTag::ALL {
            out.push_str(tag.label());
            let rows = &verdicts[&(tag.tag().to_string(), method)];
            for &scenario in &scenarios {
                let subset: Vec<&VerdictRow> =
                    rows.iter().filter(|r| r.scenario == scenario.to_string()).collect();
                let summary = cohort_summary(&to_verdicts(&subset))?;
                out.push_str(&format!(",{:.2}", summary.percent));
            }
            out.push('\n');
        }
        let path = dir.join(format!("table1_{method}.csv"));
        write_text(&path, &out)?;
        written.push(path);
    }

    // Pooled progression percent and mean conversion time: rows
    // pipelines, columns methods.
    let mut t2a = String::from("pipeline,plr,md,gri\n");
    let mut t2b = String::from("pipeline,plr,md,gri\n");
    for tag in PipelineTag::ALL {
        t2a.push_str(tag.label());
        t2b.push_str(tag.label());
        for method in Method::ALL {
            let rows = &verdicts[&(tag.tag().to_string(), method)];
            let all: Vec<&VerdictRow> = rows.iter().collect();
            let summary = cohort_summary(&to_verdicts(&all))?;
            t2a.push_str(&format!(",{:.2}", summary.percent));
            match summary.mean_conversion {
                Some(t) => t2b.push_str(&format!(",{t:.2}")),
                None => t2b.push_str(",-"),
            }
        }
        t2a.push('\n');
        t2b.push('\n');
    }
    let t2a_path = dir.join("table2a_progression.csv");
    let t2b_path = dir.join("table2b_conversion.csv");
    write_text(&t2a_path, &t2a)?;
    write_text(&t2b_path, &t2b)?;
    written.push(t2a_path);
    written.push(t2b_path);

    // Kaplan-Meier overlays: one CSV and one SVG per method, five
    // pipelines each, pooled over settings.
    for method in Method::ALL {
        let mut csv = String::from("pipeline,time,at_risk,events,survival,ci_low,ci_high\n");
        let mut curves: Vec<(PipelineTag, KmCurve)> = Vec::new();
        for tag in PipelineTag::ALL {
            let rows = &verdicts[&(tag.tag().to_string(), method)];
            let inputs: Vec<SurvivalInput> = rows
                .iter()
                .map(|r| match r.conversion_time {
                    Some(t) if r.progressed => SurvivalInput { time: t, event: true },
                    _ => SurvivalInput { time: duration, event: false },
                })
                .collect();
            let curve = km_estimate(&inputs)?;
            for i in 0..curve.event_times.len() {
                csv.push_str(&format!(
                    "{},{},{},{},{:.6},{:.6},{:.6}\n",
                    tag.tag(),
                    curve.event_times[i],
                    curve.at_risk[i],
                    curve.events[i],
                    curve.survival[i],
                    curve.ci_low[i],
                    curve.ci_high[i]
                ));
            }
            curves.push((tag, curve));
        }
        let csv_path = dir.join(format!("km_{method}.csv"));
        write_text(&csv_path, &csv)?;
        written.push(csv_path);

        let svg_path = dir.join(format!("km_{method}.svg"));
        write_text(&svg_path, &km_svg(method, &curves, duration))?;
        written.push(svg_path);
    }

    Ok(written)
}

const SVG_COLORS: [&str; 5] = ["#1f2430", "#d62728", "#ff9f4a", "#1f77b4", "#6ab0de"];

/// Step-function survival overlay as a standalone SVG.
fn km_svg(method: Method, curves: &[(PipelineTag, KmCurve)], duration: f64) -> String {
    let (w, h) = (820.0, 520.0);
    let (ml, mr, mt, mb) = (70.0, 170.0, 40.0, 55.0);
    let plot_w = w - ml - mr;
    let plot_h = h - mt - mb;
    let x = |t: f64| ml + plot_w * (t / duration).clamp(0.0, 1.0);
    let y = |s: f64| mt + plot_h * (1.0 - s.clamp(0.0, 1.0));

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">Survival without progression ({})</text>\n",
        ml,
        method.to_string().to_uppercase()
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        mt + plot_h,
        ml + plot_w,
        mt + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        mt + plot_h
    ));
    for i in 0..=5 {
        let s = i as f64 / 5.0;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.1}</text>\n",
            ml - 8.0,
            y(s) + 4.0,
            s
        ));
        svg.push_str(&format!(
            "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>\n",
            y(s),
            ml + plot_w,
            y(s)
        ));
        let t = duration * i as f64 / 5.0;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{t:.1}</text>\n",
            x(t),
            mt + plot_h + 18.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">follow-up (years)</text>\n",
        ml + plot_w / 2.0,
        h - 14.0
    ));

    for (ci, (tag, curve)) in curves.iter().enumerate() {
        let color = SVG_COLORS[ci % SVG_COLORS.len()];
        // Confidence band as a translucent step polygon.
        if !curve.event_times.is_empty() {
            let mut band = String::from("<path d=\"");
            let mut prev = (x(0.0), y(1.0));
            band.push_str(&format!("M {} {} ", prev.0, prev.1));
            for i in 0..curve.event_times.len() {
                let xi = x(curve.event_times[i]);
                band.push_str(&format!("L {xi} {} L {xi} {} ", prev.1, y(curve.ci_high[i])));
                prev = (xi, y(curve.ci_high[i]));
            }
            band.push_str(&format!("L {} {} ", x(duration), prev.1));
            let mut low_prev_y = y(curve.ci_low[curve.ci_low.len() - 1]);
            band.push_str(&format!("L {} {} ", x(duration), low_prev_y));
            for i in (0..curve.event_times.len()).rev() {
                let xi = x(curve.event_times[i]);
                band.push_str(&format!("L {xi} {low_prev_y} "));
                let next_y = if i == 0 { y(1.0) } else { y(curve.ci_low[i - 1]) };
                band.push_str(&format!("L {xi} {next_y} "));
                low_prev_y = next_y;
            }
            band.push_str(&format!("L {} {} Z\" ", x(0.0), y(1.0)));
            band.push_str(&format!("fill=\"{color}\" fill-opacity=\"0.08\" stroke=\"none\"/>\n"));
            svg.push_str(&band);
        }
        // Survival step line.
        let mut path = format!("M {} {} ", x(0.0), y(1.0));
        let mut prev_s = 1.0;
        for i in 0..curve.event_times.len() {
            let xi = x(curve.event_times[i]);
            path.push_str(&format!("L {xi} {} L {xi} {} ", y(prev_s), y(curve.survival[i])));
            prev_s = curve.survival[i];
        }
        path.push_str(&format!("L {} {}", x(duration), y(prev_s)));
        svg.push_str(&format!(
            "<path d=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n"
        ));
        // Legend.
        let ly = mt + 16.0 + ci as f64 * 20.0;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"3\"/>\n",
            ml + plot_w + 12.0,
            ml + plot_w + 40.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            ml + plot_w + 46.0,
            ly + 4.0,
            tag.label()
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Convenience used by tests and the Python bindings: percentage of
/// progressors per scenario from one verdict file.
pub fn percent_by_scenario(rows: &[VerdictRow]) -> Result<BTreeMap<String, f64>, VfError> {
    let mut out = BTreeMap::new();
    let mut grouped: BTreeMap<&str, Vec<&VerdictRow>> = BTreeMap::new();
    for r in rows {
        grouped.entry(r.scenario.as_str()).or_default().push(r);
    }
    for (scenario, rows) in grouped {
        out.insert(scenario.to_string(), cohort_summary(&to_verdicts(&rows))?.percent);
    }
    Ok(out)
}

/// Scenario display order used in the grids.
pub fn scenario_columns() -> Vec<Scenario> {
    Scenario::ALL.to_vec()
}
