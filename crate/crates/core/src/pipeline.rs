//! Stage orchestration behind the CLI: each stage reads its inputs from
//! files written by the previous one, so every report number traces
//! back to a persisted artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::{PipelineTag, RunConfig};
use crate::error::VfError;
use crate::field::EyeSeries;
use crate::neural::{fit, CheckpointRecord, TrainOutcome, Variant};
use crate::normative::NormativeModel;
use crate::progression::{progressive_harness, Method, ProgressionVerdict};
use crate::sim::{pattern_table_text, read_cohort_csv, simulate_cohort, write_cohort_csv, Scenario};

pub fn cohort_path(config: &RunConfig, scenario: Scenario) -> PathBuf {
    config.out_dir.join("cohorts").join(format!("{scenario}.csv"))
}

pub fn checkpoint_path(config: &RunConfig, variant: Variant) -> PathBuf {
    config.out_dir.join("checkpoints").join(format!("{}.txt", variant.tag().replace('+', "_")))
}

pub fn loss_log_path(config: &RunConfig, variant: Variant) -> PathBuf {
    config.out_dir.join("checkpoints").join(format!("loss_{}.csv", variant.tag().replace('+', "_")))
}

pub fn verdict_path(config: &RunConfig, tag: PipelineTag, method: Method) -> PathBuf {
    config
        .out_dir
        .join("verdicts")
        .join(format!("{}_{}.csv", tag.tag().replace('+', "_"), method))
}

pub fn report_dir(config: &RunConfig) -> PathBuf {
    config.out_dir.join("report")
}

fn ensure_dir(path: &Path) -> Result<(), VfError> {
    std::fs::create_dir_all(path).map_err(|e| VfError::Io(path.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), VfError> {
    std::fs::write(path, text).map_err(|e| VfError::Io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Simulate every configured setting, write one cohort file per setting
/// plus the manifest, normative table, and pattern documentation.
pub fn run_simulate(config: &RunConfig) -> Result<Vec<PathBuf>, VfError> {
    let norm = NormativeModel::standard();
    ensure_dir(&config.out_dir.join("cohorts"))?;
    let scenarios = config.scenarios()?;
    let mut paths = Vec::new();
    let mut manifest = String::new();
    manifest.push_str("# vftk simulation manifest v1\n");
    manifest.push_str(&format!("seed {}\n", config.seed));
    manifest.push_str(&format!("duration {}\n", config.simulate.duration));
    manifest.push_str(&format!("exams {}\n", config.simulate.exams));
    manifest.push_str(&format!("baseline_age {}\n", config.simulate.baseline_age));
    manifest.push_str(&format!("pinned_rates {}\n", config.simulate.pinned_rates));
    for &scenario in &scenarios {
        let spec = config.scenario_spec(scenario);
        let cohort = simulate_cohort(&spec, norm, config.seed)?;
        let path = cohort_path(config, scenario);
        write_cohort_csv(&cohort, &path)?;
        manifest.push_str(&format!("cohort {scenario} {} eyes cohorts/{scenario}.csv\n", cohort.len()));
        paths.push(path);
    }
    norm.save(&config.out_dir.join("normative_table.txt"))?;
    write_text(&config.out_dir.join("patterns.txt"), &pattern_table_text())?;
    write_text(&config.out_dir.join("manifest.txt"), &manifest)?;
    Ok(paths)
}

/// Follow-up duration recorded in a manifest.
pub fn manifest_duration(out_dir: &Path) -> Result<f64, VfError> {
    let path = out_dir.join("manifest.txt");
    let text =
        std::fs::read_to_string(&path).map_err(|e| VfError::Io(path.display().to_string(), e))?;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("duration ") {
            return rest
                .trim()
                .parse()
                .map_err(|_| VfError::Data("bad duration in manifest".into()));
        }
    }
    Err(VfError::Data("manifest has no duration".into()))
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Pool every simulated setting into one training corpus.
pub fn load_pooled_corpus(config: &RunConfig) -> Result<Vec<EyeSeries>, VfError> {
    let mut eyes = Vec::new();
    for scenario in config.scenarios()? {
        let path = cohort_path(config, scenario);
        if !path.exists() {
            return Err(VfError::Data(format!(
                "cohort file {} missing; run simulate first",
                path.display()
            )));
        }
        eyes.extend(read_cohort_csv(&path)?);
    }
    Ok(eyes)
}

/// Train one variant on the pooled corpus; writes the checkpoint and the
/// per-epoch loss log.
pub fn run_train(config: &RunConfig, variant: Variant) -> Result<TrainOutcome, VfError> {
    let eyes = load_pooled_corpus(config)?;
    let train_config = config.train_config()?;
    let outcome = fit(variant, &eyes, &train_config)?;
    ensure_dir(&config.out_dir.join("checkpoints"))?;
    outcome.checkpoint.save(&checkpoint_path(config, variant))?;
    let mut log = String::from("epoch,lr,train_loss,train_recon,train_kl,val_loss\n");
    for row in &outcome.log {
        log.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.epoch, row.lr, row.train_loss, row.train_recon, row.train_kl, row.val_loss
        ));
    }
    write_text(&loss_log_path(config, variant), &log)?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// denoise
// ---------------------------------------------------------------------------

/// Write denoised copies of every cohort file for one variant.
pub fn run_denoise(config: &RunConfig, variant: Variant) -> Result<Vec<PathBuf>, VfError> {
    let norm = NormativeModel::standard();
    let ckpt_path = checkpoint_path(config, variant);
    if !ckpt_path.exists() {
        return Err(VfError::Data(format!(
            "checkpoint {} missing; run train first",
            ckpt_path.display()
        )));
    }
    let checkpoint = CheckpointRecord::load(&ckpt_path)?;
    let dir = config.out_dir.join("denoised").join(variant.tag().replace('+', "_"));
    ensure_dir(&dir)?;
    let mut out = Vec::new();
    for scenario in config.scenarios()? {
        let cohort = read_cohort_csv(&cohort_path(config, scenario))?;
        let denoised: Result<Vec<EyeSeries>, VfError> =
            cohort.iter().map(|e| checkpoint.denoise_series(e, norm)).collect();
        let path = dir.join(format!("{scenario}.csv"));
        write_cohort_csv(&denoised?, &path)?;
        out.push(path);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

/// Verdict row as persisted.
#[derive(Debug, Clone, PartialEq)]
pub struct VerdictRow {
    pub eye_id: String,
    pub scenario: String,
    pub method: Method,
    pub pipeline: String,
    pub progressed: bool,
    pub conversion_time: Option<f64>,
}

pub fn write_verdicts(rows: &[VerdictRow], path: &Path) -> Result<(), VfError> {
    let mut out = String::from("eye_id,scenario,method,pipeline,progressed,conversion_time\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.eye_id,
            r.scenario,
            r.method,
            r.pipeline,
            if r.progressed { 1 } else { 0 },
            r.conversion_time.map(|t| t.to_string()).unwrap_or_default()
        ));
    }
    write_text(path, &out)
}

pub fn read_verdicts(path: &Path) -> Result<Vec<VerdictRow>, VfError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| VfError::Io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.starts_with("eye_id,scenario,method,pipeline") => {}
        _ => return Err(VfError::Data(format!("unrecognized verdict header in {}", path.display()))),
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(VfError::Data(format!("bad verdict row: {line}")));
        }
        rows.push(VerdictRow {
            eye_id: f[0].to_string(),
            scenario: f[1].to_string(),
            method: Method::parse(f[2])
                .ok_or_else(|| VfError::Data(format!("bad method: {}", f[2])))?,
            pipeline: f[3].to_string(),
            progressed: f[4] == "1",
            conversion_time: if f[5].is_empty() {
                None
            } else {
                Some(f[5].parse().map_err(|_| VfError::Data("bad conversion time".into()))?)
            },
        });
    }
    Ok(rows)
}

/// Run the progressive harness for one pipeline and method over every
/// configured setting; writes one verdict file.
pub fn run_analyze(
    config: &RunConfig,
    tag: PipelineTag,
    method: Method,
) -> Result<PathBuf, VfError> {
    let norm = NormativeModel::standard();
    let thresholds = &config.analyze;
    let checkpoint = match tag.variant() {
        Some(variant) => {
            let path = checkpoint_path(config, variant);
            if !path.exists() {
                return Err(VfError::Data(format!(
                    "checkpoint {} missing; run train first",
                    path.display()
                )));
            }
            Some(CheckpointRecord::load(&path)?)
        }
        None => None,
    };
    let mut rows = Vec::new();
    for scenario in config.scenarios()? {
        let path = cohort_path(config, scenario);
        if !path.exists() {
            return Err(VfError::Data(format!(
                "cohort file {} missing; run simulate first",
                path.display()
            )));
        }
        for eye in read_cohort_csv(&path)? {
            let series = match &checkpoint {
                Some(ckpt) => ckpt.denoise_series(&eye, norm)?,
                None => eye,
            };
            let verdict: ProgressionVerdict =
                progressive_harness(&series, method, norm, thresholds);
            rows.push(VerdictRow {
                eye_id: verdict.eye_id,
                scenario: scenario.to_string(),
                method,
                pipeline: tag.tag().to_string(),
                progressed: verdict.progressed,
                conversion_time: verdict.conversion_time,
            });
        }
    }
    ensure_dir(&config.out_dir.join("verdicts"))?;
    let path = verdict_path(config, tag, method);
    write_verdicts(&rows, &path)?;
    Ok(path)
}

/// Group verdict rows by scenario.
pub fn verdicts_by_scenario(rows: &[VerdictRow]) -> BTreeMap<String, Vec<&VerdictRow>> {
    let mut map: BTreeMap<String, Vec<&VerdictRow>> = BTreeMap::new();
    for r in rows {
        map.entry(r.scenario.clone()).or_default().push(r);
    }
    map
}

#[cfg(test)]
#[allow(clippy::field_reassign_with_default)]
mod tests {
    use super::*;
    use crate::noise::NoiseModel;

    fn tiny_config(dir: &Path) -> RunConfig {
        let mut config = RunConfig::default();
        config.out_dir = dir.to_path_buf();
        config.simulate.eyes = 8;
        config.simulate.noise = NoiseModel::default();
        config.train.max_epochs = 2;
        config.train.split = [0.5, 0.25, 0.25];
        config.train.batch_size = 64;
        config.seed = 7;
        config
    }

    #[test]
    fn simulate_then_analyze_raw_runs_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        let paths = run_simulate(&config).unwrap();
        assert_eq!(paths.len(), 5);
        assert!(config.out_dir.join("manifest.txt").exists());
        assert!(config.out_dir.join("normative_table.txt").exists());
        assert!((manifest_duration(&config.out_dir).unwrap() - 9.5).abs() < 1e-12);

        let verdicts = run_analyze(&config, PipelineTag::Raw, Method::Md).unwrap();
        let rows = read_verdicts(&verdicts).unwrap();
        assert_eq!(rows.len(), 5 * 8);
        let by_scenario = verdicts_by_scenario(&rows);
        assert_eq!(by_scenario.len(), 5);
    }

    #[test]
    fn analyze_requires_existing_cohorts() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        assert!(run_analyze(&config, PipelineTag::Raw, Method::Plr).is_err());
    }

    #[test]
    fn denoised_pipeline_requires_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        run_simulate(&config).unwrap();
        assert!(run_analyze(&config, PipelineTag::Mae, Method::Plr).is_err());
    }

    #[test]
    fn train_writes_checkpoint_and_loss_log() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path());
        run_simulate(&config).unwrap();
        let outcome = run_train(&config, Variant::Mae).unwrap();
        assert_eq!(outcome.log.len(), 2);
        assert!(checkpoint_path(&config, Variant::Mae).exists());
        let log = std::fs::read_to_string(loss_log_path(&config, Variant::Mae)).unwrap();
        // Header plus one row per epoch run.
        assert_eq!(log.lines().count(), 1 + outcome.log.len());
        // Denoised analysis now works.
        let verdicts = run_analyze(&config, PipelineTag::Mae, Method::Md).unwrap();
        assert!(verdicts.exists());
        // And the denoise stage writes per-setting files.
        let files = run_denoise(&config, Variant::Mae).unwrap();
        assert_eq!(files.len(), 5);
    }

    #[test]
    fn verdict_files_roundtrip() {
        let rows = vec![
            VerdictRow {
                eye_id: "slow_0001".into(),
                scenario: "slow".into(),
                method: Method::Gri,
                pipeline: "mae+p".into(),
                progressed: true,
                conversion_time: Some(4.5),
            },
            VerdictRow {
                eye_id: "slow_0002".into(),
                scenario: "slow".into(),
                method: Method::Gri,
                pipeline: "mae+p".into(),
                progressed: false,
                conversion_time: None,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        write_verdicts(&rows, &path).unwrap();
        assert_eq!(read_verdicts(&path).unwrap(), rows);
    }
}
