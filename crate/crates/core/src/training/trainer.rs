use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::metrics::{classification_auroc, OvrAuroc};
use super::schedule::{lr_at, TrainConfig};
use crate::data::{BagRecord, DatasetManifest};
use crate::encoder::{checkpoint_save, ClassifierModel, FreezePolicy, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{softmax_rows, Scalar, Tensor};

/// A bag converted to model precision.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub x: Tensor<T>,
    pub label: usize,
}

impl<T: Scalar> Sample<T> {
    pub fn from_bag(bag: &BagRecord) -> Self {
        Self {
            x: bag.features.cast(),
            label: bag.label,
        }
    }

    pub fn from_bags(bags: &[BagRecord]) -> Vec<Self> {
        bags.iter().map(Self::from_bag).collect()
    }
}

/// Clears gradients, then accumulates the mean cross-entropy gradient of the
/// given bags, each processed on its own. Returns the mean loss.
pub fn accumulate_batch<T: Scalar>(model: &mut ClassifierModel<T>, batch: &[&Sample<T>]) -> Result<f64> {
    model.params_mut().zero_grads();
    let scale = T::from_f64_lossy(1.0 / batch.len() as f64);
    let mut total = 0.0;
    for s in batch {
        let (loss, _, grads) = model.loss_and_grads(&s.x, s.label)?;
        let loss = loss.as_f64();
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss is {loss}")));
        }
        total += loss;
        grads.accumulate_into(model.params_mut(), scale)?;
    }
    Ok(total / batch.len() as f64)
}

/// Softmax class probabilities, one row per sample.
pub fn predict_proba<T: Scalar>(model: &ClassifierModel<T>, samples: &[Sample<T>]) -> Result<Vec<Vec<f64>>> {
    samples
        .iter()
        .map(|s| {
            let out = model.forward(&s.x)?;
            let logits = out.logits.to_f64().reshape(&[1, out.logits.numel()])?;
            let p = softmax_rows(&logits).into_data();
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("non-finite class probabilities".into()));
            }
            Ok(p)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_bags: usize,
    pub class_counts: Vec<usize>,
    pub mean_loss: f64,
    pub auroc: OvrAuroc,
}

pub fn evaluate<T: Scalar>(model: &ClassifierModel<T>, samples: &[Sample<T>]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let c = model.config().encoder.num_classes;
    let probs = predict_proba(model, samples)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let mut class_counts = vec![0; c];
    for &l in &labels {
        if l >= c {
            return Err(Error::Data(format!("label {l} >= num_classes {c}")));
        }
        class_counts[l] += 1;
    }
    let mean_loss = probs
        .iter()
        .zip(&labels)
        .map(|(p, &l)| -p[l].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / samples.len() as f64;
    Ok(EvalReport {
        num_bags: samples.len(),
        class_counts,
        mean_loss,
        auroc: classification_auroc(&probs, &labels, c)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_config: TrainConfig,
    pub model_config: ModelConfig,
    pub seed: u64,
    pub freeze_policy: FreezePolicy,
    pub positional_embeddings: bool,
    pub trainable_params: usize,
    pub total_params: usize,
    pub num_train: usize,
    pub num_val: usize,
    pub steps_per_epoch: usize,
    /// Mean batch loss of every optimizer step.
    pub step_loss: Vec<f64>,
    pub step_lr: Vec<f64>,
    pub epoch_train_loss: Vec<f64>,
    pub initial_val: EvalReport,
    /// Validation AUROC after each epoch.
    pub val_auroc: Vec<f64>,
    pub final_val: EvalReport,
    pub checkpoint: Option<PathBuf>,
}

/// Runs the full schedule. The model is switched to `cfg.freeze_policy` first.
pub fn train<T: Scalar>(
    model: &mut ClassifierModel<T>,
    train_bags: &[BagRecord],
    val_bags: &[BagRecord],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_bags.is_empty() || val_bags.is_empty() {
        return Err(Error::Data(format!(
            "need non-empty train and validation splits, got {} and {} bags",
            train_bags.len(),
            val_bags.len()
        )));
    }
    model.apply_freeze_policy(cfg.freeze_policy);
    let train_set = Sample::<T>::from_bags(train_bags);
    let val_set = Sample::<T>::from_bags(val_bags);
    let initial_val = evaluate(model, &val_set)?;

    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(model.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0;
    let mut step_loss = Vec::with_capacity(cfg.epochs * steps_per_epoch);
    let mut step_lr = Vec::with_capacity(cfg.epochs * steps_per_epoch);
    let mut epoch_train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_auroc = Vec::with_capacity(cfg.epochs);
    let mut final_val = initial_val.clone();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample<T>> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = accumulate_batch(model, &batch).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, step {step}: {m}")),
                other => other,
            })?;
            let lr = lr_at(step, steps_per_epoch, cfg);
            adam_step(model.params_mut(), &mut adam, lr, cfg)?;
            epoch_loss += loss * chunk.len() as f64;
            step_loss.push(loss);
            step_lr.push(lr);
            step += 1;
        }
        epoch_loss /= train_set.len() as f64;
        final_val = evaluate(model, &val_set)?;
        log::info!(
            "epoch {:>3}/{}: train loss {:.4}, val AUROC {:.4}",
            epoch + 1,
            cfg.epochs,
            epoch_loss,
            final_val.auroc.macro_mean
        );
        epoch_train_loss.push(epoch_loss);
        val_auroc.push(final_val.auroc.macro_mean);
    }

    Ok(TrainReport {
        train_config: cfg.clone(),
        model_config: *model.config(),
        seed: cfg.seed,
        freeze_policy: cfg.freeze_policy,
        positional_embeddings: model.config().encoder.use_positional_embeddings,
        trainable_params: model.count_parameters(true),
        total_params: model.count_parameters(false),
        num_train: train_set.len(),
        num_val: val_set.len(),
        steps_per_epoch,
        step_loss,
        step_lr,
        epoch_train_loss,
        initial_val,
        val_auroc,
        final_val,
        checkpoint: None,
    })
}

/// Trains on the manifest's `train` split, validates on `val`, and optionally
/// writes the final checkpoint.
pub fn train_manifest<T: Scalar>(
    model: &mut ClassifierModel<T>,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainReport> {
    let train_bags = manifest.load_split("train")?;
    let val_bags = manifest.load_split("val")?;
    let mut report = train(model, &train_bags, &val_bags, cfg)?;
    if let Some(path) = checkpoint {
        checkpoint_save(model, path)?;
        report.checkpoint = Some(path.to_path_buf());
    }
    Ok(report)
}
