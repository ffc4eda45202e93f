use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::data::{availability_mask, Dataset, EmbeddingRecord, Task};
use crate::error::{Error, Result};
use crate::metrics::{f1_binary, f1_macro};
use crate::model::{predict, ModalBatch, Model};
use crate::optim::{adamw_step, clip, lr_at, AdamWState, ParamGroup, ScheduleSpec};
use crate::tensor::{softmax_cross_entropy, Matrix, Mode};

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Bookkeeping for one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f32,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation score.
    pub model: Model,
    pub optimizer: AdamWState,
    pub history: Vec<StepRecord>,
    /// Validation score after each epoch; empty when there is no validation set.
    pub val_scores: Vec<f64>,
    pub best_epoch: usize,
    pub total_steps: usize,
}

/// F1 of the positive class for binary tasks, macro F1 otherwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub f1: f64,
    pub macro_f1: f64,
}

/// Batch index lists for one epoch. The incomplete final batch is kept; a
/// lone trailing row is folded into the batch before it.
pub fn epoch_batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

pub fn steps_per_epoch(records: usize, batch_size: usize) -> usize {
    let full = records.div_ceil(batch_size);
    if full > 1 && records % batch_size == 1 {
        full - 1
    } else {
        full
    }
}

/// Builds a batch from records. Text is read only where the record has text
/// and `text_present` (when given) allows it.
pub fn records_batch(records: &[&EmbeddingRecord], dim: usize, text_present: Option<&[bool]>) -> Result<ModalBatch> {
    let mut image = Vec::with_capacity(records.len() * dim);
    let mut text = Vec::with_capacity(records.len() * dim);
    let mut present = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        image.extend_from_slice(&r.image);
        let use_text = r.has_text() && text_present.is_none_or(|p| p[i]);
        match (&r.text, use_text) {
            (Some(t), true) => text.extend_from_slice(t),
            _ => text.extend(std::iter::repeat_n(0.0, dim)),
        }
        present.push(use_text);
    }
    let labels = records.iter().map(|r| r.label).collect();
    let image = Matrix::from_vec(records.len(), dim, image)?;
    if present.iter().any(|&p| p) {
        let text = Matrix::from_vec(records.len(), dim, text)?;
        ModalBatch::new(Some(text), image, present, Some(labels))
    } else {
        ModalBatch::image_only(image, Some(labels))
    }
}

pub fn scores(task: Task, preds: &[usize], labels: &[usize], classes: usize) -> Result<Scores> {
    let macro_f1 = f1_macro(preds, labels, classes)?;
    let f1 = match task {
        Task::Binary => f1_binary(preds, labels, 1)?,
        Task::Multiclass => macro_f1,
    };
    Ok(Scores { f1, macro_f1 })
}

/// Eval-mode scores on `records`, reading text only where `text_present` allows.
pub fn evaluate(model: &Model, dataset: &Dataset, text_present: Option<&[bool]>) -> Result<Scores> {
    let records: Vec<&EmbeddingRecord> = dataset.records().iter().collect();
    let batch = records_batch(&records, dataset.dim(), text_present)?;
    let preds = predict(&model.infer(&batch)?)?;
    scores(dataset.scheme().task, &preds, &dataset.labels(), dataset.num_classes())
}

fn validation_score(model: &Model, val: &Dataset, config: &ExperimentConfig) -> Result<f64> {
    let mask = if config.val_level == 100 {
        None
    } else {
        let labels = val.labels();
        let has_text: Vec<bool> = val.records().iter().map(EmbeddingRecord::has_text).collect();
        Some(availability_mask(
            &labels,
            &has_text,
            config.val_level,
            config.mask_seed,
        )?)
    };
    Ok(evaluate(model, val, mask.as_ref().map(|m| m.text_present()))?.f1)
}

/// Trains one model with mini-batch AdamW under the warmup/decay schedule.
///
/// The schedule spans `total_steps - 1` so that the final update runs at
/// exactly `final_frac · base_lr`. After every epoch the model is scored on
/// `val`; the best-scoring parameters are returned, earliest epoch on ties.
pub fn train(config: &ExperimentConfig, train_set: &Dataset, val: &Dataset, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if val.dim() != train_set.dim() || val.num_classes() != train_set.num_classes() {
        return Err(Error::Config("training and validation sets disagree on shape".into()));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffle_rng = init_rng.clone();
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut dropout_rng = init_rng.clone();
    dropout_rng.set_stream(DROPOUT_STREAM);

    let shape = config.model_shape(train_set.dim(), train_set.num_classes());
    let mut model = Model::init(config.variant, shape, &mut init_rng)?;
    let mut optimizer = AdamWState::new(config.adamw, &model.stack().slot_lengths());

    let per_epoch = steps_per_epoch(train_set.len(), config.batch_size);
    let total_steps = config.epochs * per_epoch;
    let schedule = ScheduleSpec::new(config.base_lr, total_steps - 1, config.warmup_frac, config.final_frac)?;

    let mut history = Vec::with_capacity(total_steps);
    let mut val_scores = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model, AdamWState)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let records = train_set.records();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch_idx in epoch_batches(&order, config.batch_size) {
            let step = history.len();
            let rows: Vec<&EmbeddingRecord> = batch_idx.iter().map(|&i| &records[i]).collect();
            let batch = records_batch(&rows, train_set.dim(), None)?;
            let labels = batch.labels().expect("batch built with labels").to_vec();

            let (logits, mut tape) = model.forward(&batch, Mode::Train, config.bn_pooling, &mut dropout_rng)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            let mut grads = model.backward(&mut tape, &dlogits)?;
            let report = match clip(&mut grads.slots_mut(), config.clip_mode, config.clip) {
                Ok(r) => r,
                Err(Error::Numeric(_)) => return Err(Error::Diverged { step, loss }),
                Err(e) => return Err(e),
            };
            let lr = lr_at(&schedule, step)?;
            let grad_slots = grads.slots();
            let mut groups: Vec<ParamGroup<'_>> = model
                .stack_mut()
                .slots_mut()
                .into_iter()
                .zip(grad_slots)
                .map(|((values, kind), g)| ParamGroup {
                    values,
                    grads: g,
                    decay: kind.decays(),
                })
                .collect();
            adamw_step(&mut groups, &mut optimizer, lr)?;
            if !model.stack().slots().iter().all(|s| s.iter().all(|v| v.is_finite())) {
                return Err(Error::Diverged { step, loss });
            }
            history.push(StepRecord {
                step,
                epoch,
                lr,
                loss,
                grad_norm: report.norm,
                clipped: report.clipped,
            });
        }

        if !val.is_empty() {
            let score = validation_score(&model, val, config)?;
            val_scores.push(score);
            log::debug!("seed {seed} epoch {epoch}: validation score {score:.4}");
            if best.as_ref().is_none_or(|(b, ..)| score > *b) {
                best = Some((score, epoch, model.clone(), optimizer.clone()));
            }
        }
    }

    let (model, optimizer, best_epoch) = match best {
        Some((_, epoch, m, o)) => (m, o, epoch),
        None => (model, optimizer, config.epochs - 1),
    };
    Ok(TrainOutcome {
        model,
        optimizer,
        history,
        val_scores,
        best_epoch,
        total_steps,
    })
}
