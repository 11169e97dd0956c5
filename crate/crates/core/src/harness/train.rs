//! Mini-batch training with Adam, validation-based checkpoint selection and
//! early stopping.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::Checkpoint;
use crate::dataset::{leave_one_out_split, rotate90_augment, NormParams, TrajWindow};
use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::harness::data::{Corpus, SceneNorms};
use crate::harness::metrics::ade;
use crate::model::{ModelConfig, Sample, SampleMode, SgsgModel};
use crate::scene::SceneRaster;
use crate::tensor::{Adam, AdamConfig, Tape, Tensor};
use crate::LATENT_DIM;

/// Epochs inspected for a rising training loss.
pub const REGRESSION_WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub kld_weight: f64,
    pub teacher_forcing: bool,
    pub patience: usize,
}

impl From<&TrainConfig> for TrainOptions {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lr: c.lr,
            batch_size: c.batch_size,
            epochs: c.epochs,
            seed: c.seed,
            kld_weight: c.kld_weight,
            teacher_forcing: c.teacher_forcing,
            patience: c.patience,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-window training loss.
    pub train_loss: f64,
    /// Deterministic validation ADE in meters, when a validation set exists.
    pub val_ade_m: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept; 0 means the initial parameters.
    pub best_epoch: usize,
    /// Training loss rose during the first epochs.
    pub regression: bool,
    pub early_stopped: bool,
    pub steps: u64,
}

impl TrainReport {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "epoch,train_loss,val_ade_m")?;
        for e in &self.log {
            let val = e.val_ade_m.map(|v| v.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{}", e.epoch, e.train_loss, val)?;
        }
        Ok(())
    }
}

/// Mean deterministic ADE over `samples`: in meters when `norms` gives each
/// sample's normalisation, otherwise in normalised units.
pub fn mean_ade(
    model: &SgsgModel<f32>,
    samples: &[Sample],
    rasters: &[&SceneRaster],
    norms: Option<&[NormParams]>,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to score".into()));
    }
    if norms.is_some_and(|n| n.len() != samples.len()) {
        return Err(Error::InvalidArgument("one normalisation per sample required".into()));
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let mut total = 0.0;
    for (c, chunk) in refs.chunks(256).enumerate() {
        let preds = model.predict(chunk, rasters, 1, SampleMode::Deterministic)?;
        for (i, (s, p)) in chunk.iter().zip(preds).enumerate() {
            let (pred, gt) = match norms {
                Some(n) => {
                    let n = &n[c * 256 + i];
                    (p[0].points.map(|q| n.denormalize(q)), s.gt.map(|q| n.denormalize(q)))
                }
                None => (p[0].points, s.gt),
            };
            total += ade(&pred, &gt)?;
        }
    }
    Ok(total / samples.len() as f64)
}

fn noise_batch(rng: &mut ChaCha8Rng, rows: usize) -> Tensor<f32> {
    let data = (0..rows * LATENT_DIM)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    Tensor::new(vec![rows, LATENT_DIM], data).expect("shape matches data")
}

/// Trains `model` in place and leaves it holding the best parameters.
///
/// Validation ADE is measured in meters using `val_norms`, one per
/// validation sample. Without validation samples the final epoch is kept.
pub fn fit(
    model: &mut SgsgModel<f32>,
    train: &[Sample],
    val: &[Sample],
    val_norms: &[NormParams],
    rasters: &[&SceneRaster],
    opts: &TrainOptions,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = Adam::new(
        AdamConfig {
            lr: opts.lr,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut report = TrainReport::default();
    let mut best_val = if val.is_empty() {
        f64::INFINITY
    } else {
        mean_ade(model, val, rasters, Some(val_norms))?
    };
    let mut best_params = model.params.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(opts.batch_size) {
            let samples: Vec<&Sample> = batch.iter().map(|&i| &train[i]).collect();
            let eps = model.config.use_vae.then(|| noise_batch(&mut rng, samples.len()));
            let mut tape = Tape::new();
            let loss = model.batch_loss(&mut tape, &samples, rasters, eps, opts.kld_weight, opts.teacher_forcing)?;
            let value = f64::from(tape.value(loss).item());
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss: value,
                    epoch,
                    window_ids: samples.iter().map(|s| s.window_id).collect(),
                });
            }
            tape.backward(loss, &mut model.params)?;
            adam.step(&mut model.params);
            epoch_loss += value * samples.len() as f64;
        }
        let train_loss = epoch_loss / train.len() as f64;
        let val_ade_m = if val.is_empty() {
            None
        } else {
            Some(mean_ade(model, val, rasters, Some(val_norms))?)
        };
        log::info!("epoch {epoch}: train loss {train_loss:.6}, val ADE {val_ade_m:?}");
        if epoch <= REGRESSION_WINDOW {
            if let Some(prev) = report.log.last() {
                if train_loss > prev.train_loss {
                    if !report.regression {
                        log::warn!(
                            "training loss rose from {} to {train_loss} at epoch {epoch}",
                            prev.train_loss
                        );
                    }
                    report.regression = true;
                }
            }
        }
        report.log.push(EpochLog {
            epoch,
            train_loss,
            val_ade_m,
        });
        match val_ade_m {
            Some(v) if v < best_val => {
                best_val = v;
                best_params = model.params.clone();
                report.best_epoch = epoch;
            }
            Some(_) => {
                if epoch - report.best_epoch >= opts.patience {
                    report.early_stopped = true;
                    break;
                }
            }
            None => report.best_epoch = epoch,
        }
    }
    if !val.is_empty() {
        model.params = best_params;
    }
    report.steps = adam.step_count();
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
    pub n_train: usize,
    pub n_val: usize,
}

/// Model configuration with raster dimensions taken from the corpus.
pub fn model_config_for(cfg: &TrainConfig, corpus: &Corpus) -> ModelConfig {
    let mut m = cfg.model;
    if let Some((c, size)) = corpus.raster_dims() {
        m.raster_channels = c;
        m.raster_size = size;
    }
    m
}

/// Splits shuffled training windows into `(train, validation)`.
pub fn split_train_val(
    cfg: &TrainConfig,
    corpus: &Corpus,
    held_out: &str,
) -> Result<(Vec<TrajWindow>, Vec<TrajWindow>)> {
    let (train_scenes, _) = leave_one_out_split(&corpus.names(), held_out)?;
    let mut windows: Vec<TrajWindow> = Vec::new();
    for name in &train_scenes {
        windows.extend(corpus.scene(name)?.windows.iter().cloned());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    windows.shuffle(&mut rng);
    if let Some(cap) = cfg.max_train_windows {
        windows.truncate(cap);
    }
    if windows.is_empty() {
        return Err(Error::Config("training scenes yield no windows".into()));
    }
    let n_val = if windows.len() >= 2 {
        ((cfg.val_fraction * windows.len() as f64).round() as usize).min(windows.len() - 1)
    } else {
        0
    };
    let train = windows.split_off(n_val);
    Ok((train, windows))
}

/// Leave-one-out training run on `cfg.held_out`.
pub fn train(cfg: &TrainConfig, corpus: &Corpus) -> Result<TrainOutcome> {
    cfg.validate()?;
    let held_out = cfg
        .held_out
        .as_deref()
        .ok_or_else(|| Error::Config("no held-out scene given".into()))?;
    let (train_w, val_w) = split_train_val(cfg, corpus, held_out)?;
    let train_w = rotate90_augment(&train_w, cfg.augment_rotations);
    let norms = SceneNorms::fit(cfg.norm_mode, &train_w)?;
    let train_s = corpus.samples(&train_w, &norms)?;
    let val_s = corpus.samples(&val_w, &norms)?;
    let val_norms: Vec<NormParams> = val_w.iter().map(|w| *norms.get(&w.scene)).collect();
    let rasters = corpus.raster_table();
    let mut model = SgsgModel::<f32>::new(model_config_for(cfg, corpus), cfg.seed)?;
    let report = fit(
        &mut model,
        &train_s,
        &val_s,
        &val_norms,
        &rasters,
        &TrainOptions::from(cfg),
    )?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            norm: norms.global,
            norm_mode: cfg.norm_mode,
        },
        report,
        n_train: train_w.len(),
        n_val: val_w.len(),
    })
}
