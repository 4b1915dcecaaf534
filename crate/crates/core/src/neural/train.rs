//! Training: by-eye splits, the epoch loop with plateau LR scheduling,
//! best-validation checkpointing, and checkpoint persistence.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::VfError;
use crate::field::{encode_input, EyeSeries, VisualField};
use crate::grid::FIELD_SIZE;
use crate::noise::{clamp_sens, SENS_MAX};
use crate::normative::NormativeModel;
use crate::rng::stream_rng;

use super::adam::AdamState;
use super::layer::{Activation, Dense};
use super::net::{
    kl_loss, mask_input, mse_grad, mse_loss, sample_standard_normal, KlForm, NetParams, Variant,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate on a plateau.
    pub lr_factor: f64,
    /// Non-improving epochs tolerated before the rate drops.
    pub lr_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Train/validation/test fractions, by eye.
    pub split: [f64; 3],
    pub mask_count: usize,
    pub kl_weight: f64,
    pub kl_form: KlForm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-4,
            lr_factor: 0.1,
            lr_patience: 5,
            max_epochs: 200,
            seed: 42,
            split: [0.70, 0.15, 0.15],
            mask_count: 10,
            kl_weight: 1.0,
            kl_form: KlForm::AsPrinted,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), VfError> {
        if self.batch_size == 0 {
            return Err(VfError::Config("batch_size must be >= 1".into()));
        }
        let total: f64 = self.split.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(VfError::Config("split fractions must sum to 1".into()));
        }
        if self.split.iter().any(|&f| f < 0.0) {
            return Err(VfError::Config("split fractions must be non-negative".into()));
        }
        if self.mask_count >= FIELD_SIZE {
            return Err(VfError::Config("mask_count must be below 52".into()));
        }
        if self.max_epochs == 0 {
            return Err(VfError::Config("max_epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// FNV-1a over the canonical parameter string; identifies a
    /// configuration in checkpoints and logs.
    pub fn hash(&self, variant: Variant) -> String {
        let canon = format!(
            "{}|{}|{}|{}|{}|{}|{}|{:?}|{}|{}|{}",
            variant.tag(),
            self.batch_size,
            self.learning_rate,
            self.lr_factor,
            self.lr_patience,
            self.max_epochs,
            self.seed,
            self.split,
            self.mask_count,
            self.kl_weight,
            self.kl_form.tag(),
        );
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in canon.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// Loss record for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_recon: f64,
    pub train_kl: f64,
    pub val_loss: f64,
}

/// Best-validation snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub variant: Variant,
    pub params: NetParams,
    pub epoch: usize,
    pub val_loss: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: CheckpointRecord,
    pub log: Vec<EpochLog>,
    /// Eye counts of the train/val/test splits.
    pub split_sizes: [usize; 3],
}

/// One encoded training example.
struct Example {
    features: Vec<f64>,
    target: Vec<f64>,
}

fn encode_eyes(eyes: &[&EyeSeries], with_pvalues: bool) -> Vec<Example> {
    let mut out = Vec::new();
    for eye in eyes {
        for exam in &eye.exams {
            let features = encode_input(exam, with_pvalues);
            let target = features[..FIELD_SIZE].to_vec();
            out.push(Example { features, target });
        }
    }
    out
}

type EyeSplit<'a> = (Vec<&'a EyeSeries>, Vec<&'a EyeSeries>, Vec<&'a EyeSeries>);

/// Split eyes into train/val/test with no eye straddling splits.
fn split_eyes<'a>(eyes: &'a [EyeSeries], config: &TrainConfig) -> Result<EyeSplit<'a>, VfError> {
    let n = eyes.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(config.seed, "split", 0));
    let n_train = (config.split[0] * n as f64).round() as usize;
    let n_val = (config.split[1] * n as f64).round() as usize;
    let n_train = n_train.min(n);
    let n_val = n_val.min(n - n_train);
    let n_test = n - n_train - n_val;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(VfError::Config(format!(
            "empty split: {n} eyes give train {n_train} / val {n_val} / test {n_test}"
        )));
    }
    let train = order[..n_train].iter().map(|&i| &eyes[i]).collect();
    let val = order[n_train..n_train + n_val].iter().map(|&i| &eyes[i]).collect();
    let test = order[n_train + n_val..].iter().map(|&i| &eyes[i]).collect();
    Ok((train, val, test))
}

fn batch_arrays(
    examples: &[Example],
    indices: &[usize],
    variant: Variant,
    mask_count: usize,
    rng: &mut impl Rng,
) -> (Array2<f64>, Array2<f64>) {
    let rows = indices.len();
    let in_dim = variant.input_dim();
    let mut x = Array2::zeros((rows, in_dim));
    let mut target = Array2::zeros((rows, FIELD_SIZE));
    for (r, &i) in indices.iter().enumerate() {
        let ex = &examples[i];
        let mut features = ex.features.clone();
        if !variant.is_vae() && mask_count > 0 {
            mask_input(&mut features, mask_count, rng);
        }
        for (c, &v) in features.iter().enumerate() {
            x[(r, c)] = v;
        }
        for (c, &v) in ex.target.iter().enumerate() {
            target[(r, c)] = v;
        }
    }
    (x, target)
}

/// Validation loss. MAE validation masks are redrawn from the same
/// stream every epoch, so the selection signal is stable; VAE
/// validation runs the deterministic z = mu pass plus the KL term.
fn validation_loss(
    params: &NetParams,
    examples: &[Example],
    variant: Variant,
    config: &TrainConfig,
) -> Result<f64, VfError> {
    let indices: Vec<usize> = (0..examples.len()).collect();
    let mut total = 0.0;
    let mut rows_done = 0;
    let mut mask_rng = stream_rng(config.seed, "val-mask", 0);
    for chunk in indices.chunks(config.batch_size.max(1)) {
        let (x, target) = batch_arrays(examples, chunk, variant, config.mask_count, &mut mask_rng);
        let loss = match params {
            NetParams::Mae(net) => {
                let step = net.forward(&x)?;
                mse_loss(&step.output, &target)
            }
            NetParams::Vae(net) => {
                let step = net.forward(&x, None)?;
                mse_loss(&step.output, &target)
                    + config.kl_weight * kl_loss(&step.mu, &step.sigma, config.kl_form)?
            }
        };
        total += loss * chunk.len() as f64;
        rows_done += chunk.len();
    }
    Ok(total / rows_done as f64)
}

/// Train one variant on a pooled corpus. Deterministic in
/// (seed, config, data); returns the lowest-validation checkpoint.
pub fn fit(variant: Variant, eyes: &[EyeSeries], config: &TrainConfig) -> Result<TrainOutcome, VfError> {
    config.validate()?;
    let (train_eyes, val_eyes, test_eyes) = split_eyes(eyes, config)?;
    let split_sizes = [train_eyes.len(), val_eyes.len(), test_eyes.len()];
    let train = encode_eyes(&train_eyes, variant.with_pvalues());
    let val = encode_eyes(&val_eyes, variant.with_pvalues());
    if train.is_empty() || val.is_empty() {
        return Err(VfError::Config("empty split".into()));
    }

    let mut params = NetParams::init(variant, &mut stream_rng(config.seed, "init", 0));
    let mut adam = AdamState::new(&params.layers());
    let mut lr = config.learning_rate;
    let mut best: Option<(f64, NetParams, usize)> = None;
    let mut bad_epochs = 0usize;
    let mut log = Vec::with_capacity(config.max_epochs);

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.max_epochs {
        let mut rng = stream_rng(config.seed, "epoch", epoch as u64);
        order.shuffle(&mut rng);
        let mut recon_sum = 0.0;
        let mut kl_sum = 0.0;
        let mut loss_sum = 0.0;
        let mut rows_done = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let (x, target) = batch_arrays(&train, chunk, variant, config.mask_count, &mut rng);
            let (loss, recon, kl) = match &mut params {
                NetParams::Mae(net) => {
                    let step = net.forward(&x)?;
                    let recon = mse_loss(&step.output, &target);
                    let d_out = mse_grad(&step.output, &target);
                    let grads = net.backward(&step, &d_out);
                    adam.step(&mut net.layers.iter_mut().collect::<Vec<_>>(), &grads, lr);
                    (recon, recon, 0.0)
                }
                NetParams::Vae(net) => {
                    let eps = sample_standard_normal(chunk.len(), super::net::LATENT_DIM, &mut rng);
                    let step = net.forward(&x, Some(eps))?;
                    let recon = mse_loss(&step.output, &target);
                    let kl = kl_loss(&step.mu, &step.sigma, config.kl_form)?;
                    let d_out = mse_grad(&step.output, &target);
                    let grads = net.backward(&step, &d_out, config.kl_weight, config.kl_form);
                    adam.step(&mut net.layers_mut(), &grads, lr);
                    (recon + config.kl_weight * kl, recon, kl)
                }
            };
            let w = chunk.len() as f64;
            loss_sum += loss * w;
            recon_sum += recon * w;
            kl_sum += kl * w;
            rows_done += chunk.len();
        }

        let val_loss = validation_loss(&params, &val, variant, config)?;
        log.push(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / rows_done as f64,
            train_recon: recon_sum / rows_done as f64,
            train_kl: kl_sum / rows_done as f64,
            val_loss,
        });

        let improved = best.as_ref().is_none_or(|(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, params.clone(), epoch));
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > config.lr_patience {
                lr *= config.lr_factor;
                bad_epochs = 0;
            }
        }
    }

    let (val_loss, best_params, epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint: CheckpointRecord {
            variant,
            params: best_params,
            epoch,
            val_loss,
            config_hash: config.hash(variant),
        },
        log,
        split_sizes,
    })
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

impl CheckpointRecord {
    /// Denoise one feature vector (scaled units in, scaled units out).
    /// No masking; the VAE path uses z = mu.
    pub fn denoise_features(&self, features: &[f64]) -> Result<Vec<f64>, VfError> {
        if features.len() != self.variant.input_dim() {
            return Err(VfError::VariantMismatch(format!(
                "checkpoint is {} ({} inputs), got {} features",
                self.variant,
                self.variant.input_dim(),
                features.len()
            )));
        }
        let x = Array2::from_shape_vec((1, features.len()), features.to_vec())
            .expect("row vector shape");
        let out = self.params.infer(&x)?;
        Ok(out.row(0).to_vec())
    }

    /// Denoise one exam: reconstructed sensitivities are rescaled to dB,
    /// clamped to [0, 40], and TD plus categories are recomputed.
    pub fn denoise_field(
        &self,
        field: &VisualField,
        norm: &NormativeModel,
    ) -> Result<VisualField, VfError> {
        let features = encode_input(field, self.variant.with_pvalues());
        let scaled = self.denoise_features(&features)?;
        let sens: Vec<f64> = scaled.iter().map(|&v| clamp_sens(v * SENS_MAX)).collect();
        VisualField::new(sens, field.exam_time, field.age_at_exam, norm)
    }

    pub fn denoise_series(
        &self,
        series: &EyeSeries,
        norm: &NormativeModel,
    ) -> Result<EyeSeries, VfError> {
        let exams: Result<Vec<VisualField>, VfError> = series
            .exams
            .iter()
            .map(|e| self.denoise_field(e, norm))
            .collect();
        EyeSeries::new(series.eye_id.clone(), exams?, series.truth.clone())
    }

    // -----------------------------------------------------------------
    // Persistence: versioned text container. Floats are written in the
    // shortest round-trip form, so save -> load -> forward is bit-exact.
    // -----------------------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<(), VfError> {
        let mut out = String::new();
        out.push_str("# vftk checkpoint v1\n");
        out.push_str(&format!("variant {}\n", self.variant.tag()));
        out.push_str(&format!("epoch {}\n", self.epoch));
        out.push_str(&format!("val_loss {}\n", self.val_loss));
        out.push_str(&format!("config_hash {}\n", self.config_hash));
        for (name, layer) in self.params.layer_names().iter().zip(self.params.layers()) {
            out.push_str(&format!(
                "layer {} {} {} {}\n",
                name,
                layer.act.tag(),
                layer.out_dim(),
                layer.in_dim()
            ));
            out.push('w');
            for v in layer.w.iter() {
                out.push(' ');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
            out.push('b');
            for v in layer.b.iter() {
                out.push(' ');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| VfError::Io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self, VfError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| VfError::Io(path.display().to_string(), e))?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.starts_with("# vftk checkpoint v1") => {}
            _ => return Err(VfError::Format("unrecognized checkpoint header".into())),
        }
        let mut variant: Option<Variant> = None;
        let mut epoch = 0usize;
        let mut val_loss = f64::NAN;
        let mut config_hash = String::new();
        let mut layers: Vec<(String, Dense)> = Vec::new();
        while let Some(line) = lines.next() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("variant") => {
                    let tag = parts.next().ok_or_else(|| VfError::Format("missing variant".into()))?;
                    variant = Some(
                        Variant::parse(tag)
                            .ok_or_else(|| VfError::Format(format!("unknown variant {tag}")))?,
                    );
                }
                Some("epoch") => {
                    epoch = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| VfError::Format("bad epoch".into()))?;
                }
                Some("val_loss") => {
                    val_loss = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| VfError::Format("bad val_loss".into()))?;
                }
                Some("config_hash") => {
                    config_hash = parts.next().unwrap_or("").to_string();
                }
                Some("layer") => {
                    let name = parts.next().ok_or_else(|| VfError::Format("bad layer line".into()))?;
                    let act = parts
                        .next()
                        .and_then(Activation::parse)
                        .ok_or_else(|| VfError::Format("bad activation".into()))?;
                    let out_dim: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| VfError::Format("bad layer dims".into()))?;
                    let in_dim: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| VfError::Format("bad layer dims".into()))?;
                    let w_line = lines.next().ok_or_else(|| VfError::Format("missing weights".into()))?;
                    let b_line = lines.next().ok_or_else(|| VfError::Format("missing bias".into()))?;
                    let parse_row = |line: &str, prefix: char, count: usize| -> Result<Vec<f64>, VfError> {
                        let mut it = line.split_whitespace();
                        match it.next() {
                            Some(p) if p.len() == 1 && p.starts_with(prefix) => {}
                            _ => return Err(VfError::Format(format!("expected {prefix} row"))),
                        }
                        let vals: Result<Vec<f64>, _> = it.map(str::parse::<f64>).collect();
                        let vals = vals.map_err(|_| VfError::Format("bad parameter value".into()))?;
                        if vals.len() != count {
                            return Err(VfError::Format(format!(
                                "{prefix} row has {} values, expected {count}",
                                vals.len()
                            )));
                        }
                        Ok(vals)
                    };
                    let w_vals = parse_row(w_line, 'w', out_dim * in_dim)?;
                    let b_vals = parse_row(b_line, 'b', out_dim)?;
                    let w = Array2::from_shape_vec((out_dim, in_dim), w_vals)
                        .map_err(|_| VfError::Format("bad weight shape".into()))?;
                    layers.push((
                        name.to_string(),
                        Dense { w, b: ndarray::Array1::from_vec(b_vals), act },
                    ));
                }
                Some(other) => {
                    return Err(VfError::Format(format!("unexpected checkpoint line: {other}")))
                }
                None => {}
            }
        }
        let variant = variant.ok_or_else(|| VfError::Format("checkpoint missing variant".into()))?;
        let expected: &[&str] = if variant.is_vae() {
            &super::net::VAE_LAYER_NAMES
        } else {
            &super::net::MAE_LAYER_NAMES
        };
        let got: Vec<&str> = layers.iter().map(|(n, _)| n.as_str()).collect();
        if got != expected {
            return Err(VfError::Format(format!(
                "layer set {got:?} does not match variant {variant}"
            )));
        }
        let mut dense: Vec<Dense> = layers.into_iter().map(|(_, d)| d).collect();
        let params = if variant.is_vae() {
            let dec2 = dense.pop().unwrap();
            let dec1 = dense.pop().unwrap();
            let logsigma = dense.pop().unwrap();
            let mu = dense.pop().unwrap();
            let enc2 = dense.pop().unwrap();
            let enc1 = dense.pop().unwrap();
            NetParams::Vae(super::net::VaeNet { enc1, enc2, mu, logsigma, dec1, dec2 })
        } else {
            NetParams::Mae(super::net::MaeNet { layers: dense })
        };
        Ok(CheckpointRecord { variant, params, epoch, val_loss, config_hash })
    }
}
