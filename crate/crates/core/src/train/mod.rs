//! Mini-batch Adam training, evaluation metrics and the per-epoch log.

mod adam;
mod metrics;

pub use adam::{adam_step, AdamState};
pub use metrics::Metrics;

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{make_tokens, DataError, PatchSet, Split};
use crate::model::{forward_tokens, predict, Mhssmamba, ModelError};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, TensorError};

/// ChaCha stream used for epoch shuffling, so data order never shares draws
/// with weight initialization (stream 0) even under the same seed.
pub const SHUFFLE_STREAM: u64 = 1;

/// Largest batch pushed through one forward pass during evaluation.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::Numeric(msg) => TrainError::Numeric(msg),
            other => TrainError::Model(ModelError::Tensor(other)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Seeds the shuffle stream.
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 50,
            batch_size: 256,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(TrainError::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sample cross-entropy over the epoch's batches.
    pub train_loss: f64,
    /// `None` when the validation split is empty.
    pub val_oa: Option<f64>,
    /// Wall time; the only non-deterministic column.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_oa,seconds";

impl TrainLog {
    /// CSV with header `epoch,train_loss,val_oa,seconds`. Losses are
    /// written with round-trip precision. With `with_seconds` unset the
    /// time column is left empty, making the text a deterministic function
    /// of seed, data and config.
    pub fn to_csv(&self, with_seconds: bool) -> String {
        let mut out = format!("{LOG_HEADER}\n");
        for r in &self.epochs {
            let val = r.val_oa.map_or(String::new(), |v| format!("{v:?}"));
            let secs = if with_seconds {
                format!("{:.3}", r.seconds)
            } else {
                String::new()
            };
            let _ = writeln!(out, "{},{:?},{},{}", r.epoch, r.train_loss, val, secs);
        }
        out
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.epochs.first().map(|r| r.train_loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.train_loss)
    }
}

fn check_compatible<T: Scalar>(model: &Mhssmamba<T>, patches: &PatchSet) -> Result<(), TrainError> {
    if model.bands != patches.bands() {
        return Err(TrainError::Config(format!(
            "model expects {} bands but data has {}",
            model.bands,
            patches.bands()
        )));
    }
    if model.hp.num_classes != patches.num_classes() {
        return Err(TrainError::Config(format!(
            "model has {} classes but data has {}",
            model.hp.num_classes,
            patches.num_classes()
        )));
    }
    Ok(())
}

fn targets(patches: &PatchSet, batch: &[usize]) -> Result<Vec<usize>, TrainError> {
    batch
        .iter()
        .map(|&i| match patches.center_label(i) {
            0 => Err(TrainError::Contract(format!("patch {i} is unlabeled"))),
            l => Ok(l as usize - 1),
        })
        .collect()
}

/// Trains `model` in place on `split.train` and returns the per-epoch log.
///
/// Each epoch visits every training sample once, in mini-batches of
/// `cfg.batch_size`; the last batch may be smaller. `on_epoch` sees each
/// record as soon as it is complete. Deterministic for fixed inputs.
pub fn train<T: Scalar>(
    model: &mut Mhssmamba<T>,
    patches: &PatchSet,
    split: &Split,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    check_compatible(model, patches)?;
    if split.train.is_empty() {
        return Err(TrainError::Contract("training split is empty".into()));
    }
    if let Some(&i) = split.train.iter().chain(&split.val).find(|&&i| i >= patches.len()) {
        return Err(DataError::Index {
            index: i,
            len: patches.len(),
        }
        .into());
    }

    let names = model.params.names();
    let mut flat = model.params.to_flat();
    let mut state = AdamState::new(&flat);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order = split.train.clone();
    let mut log = TrainLog::default();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let tokens = make_tokens::<T>(patches, batch)?;
            let labels = targets(patches, batch)?;
            let mut g = Graph::new();
            let vars: Vec<_> = flat.iter().map(|t| g.param(t.clone())).collect();
            let bound = model.params.rebuild(vars.iter().copied())?;
            let logits = forward_tokens(&mut g, &bound, &model.hp, &tokens)?;
            let loss = g.cross_entropy(logits, &labels)?;
            let value = g.value(loss).data()[0].as_f64();
            if !value.is_finite() {
                return Err(TrainError::Numeric(format!("loss is {value} in epoch {epoch}")));
            }
            g.backward(loss)?;
            let grads: Vec<Tensor<T>> = vars
                .iter()
                .zip(&flat)
                .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            adam_step(&mut flat, &grads, &names, &mut state, cfg)?;
            loss_sum += value * batch.len() as f64;
        }
        model.params = model.params.rebuild(flat.iter().cloned())?;

        let val_oa = if split.val.is_empty() {
            None
        } else {
            Some(evaluate(model, patches, &split.val)?.oa)
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_oa,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.6}, val OA {}, {:.2}s",
            record.train_loss,
            val_oa.map_or("-".into(), |v| format!("{v:.4}")),
            record.seconds
        );
        on_epoch(&record);
        log.epochs.push(record);
    }
    Ok(log)
}

/// 0-based class predictions for the patches at `indices`.
///
/// Rows are independent, so chunks are spread over threads without
/// affecting the result.
pub fn predict_indices<T: Scalar>(
    model: &Mhssmamba<T>,
    patches: &PatchSet,
    indices: &[usize],
) -> Result<Vec<usize>, TrainError> {
    model.check_bands(patches.bands())?;
    if let Some(&i) = indices.iter().find(|&&i| i >= patches.len()) {
        return Err(DataError::Index {
            index: i,
            len: patches.len(),
        }
        .into());
    }
    let chunks: Vec<&[usize]> = indices.chunks(EVAL_CHUNK).collect();
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(chunks.len().max(1));
    let per_worker = chunks.len().div_ceil(workers.max(1)).max(1);
    let results: Vec<Result<Vec<usize>, TrainError>> = std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .chunks(per_worker)
            .map(|group| {
                s.spawn(move || {
                    let mut out = Vec::new();
                    for chunk in group {
                        let tokens = make_tokens::<T>(patches, chunk)?;
                        out.extend(predict(&model.logits(&tokens)?));
                    }
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(indices.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Confusion matrix and OA/AA/kappa over the labeled patches at `indices`.
pub fn evaluate<T: Scalar>(model: &Mhssmamba<T>, patches: &PatchSet, indices: &[usize]) -> Result<Metrics, TrainError> {
    if indices.is_empty() {
        return Err(TrainError::Contract("evaluation index list is empty".into()));
    }
    check_compatible(model, patches)?;
    let truth = targets(patches, indices)?;
    let pred = predict_indices(model, patches, indices)?;
    Metrics::from_pairs(model.hp.num_classes, &truth, &pred)
}
