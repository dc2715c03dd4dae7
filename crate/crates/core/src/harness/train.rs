use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::folds::FoldPlan;
use super::metrics::{compute_metrics, Metrics};
use super::optim::{cosine_lr, Adam};
use super::TrainConfig;
use crate::arch::{forward, forward_graph, init_params, positive_probability, ModelConfig, RunMode};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::par;
use crate::params::{Binder, ParamStore};
use crate::phantom::{augment, preprocess, MultiPhaseSample};
use crate::seed::derive_seed;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub fold: usize,
    pub epoch: usize,
    /// Class-weighted mean loss over the epoch's batches.
    pub loss: f64,
    /// Accuracy on the held-out fold after the epoch.
    pub val_acc: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

impl EpochLog {
    pub fn to_line(&self) -> String {
        format!(
            "fold={} epoch={} loss={:.6} val_acc={:.4} lr={:.3e}",
            self.fold, self.epoch, self.loss, self.val_acc, self.lr
        )
    }
}

/// Held-out positive-class probability of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub fold: usize,
    pub label: u8,
    pub score: f64,
}

/// A trained fold.
#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    pub params: ParamStore<f32>,
    pub log: Vec<EpochLog>,
    /// Loss of every optimiser step, in order.
    pub step_losses: Vec<f64>,
    pub predictions: Vec<Prediction>,
    pub metrics: Metrics,
}

/// Inverse-frequency class weights `n / (2 n_c)`.
pub fn class_weights(labels: &[u8]) -> [f64; 2] {
    let ones = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n = labels.len() as f64;
    let zeros = n - ones;
    [0.0, 1.0].map(|c| {
        let count = if c == 0.0 { zeros } else { ones };
        if count > 0.0 {
            n / (2.0 * count)
        } else {
            0.0
        }
    })
}

/// Resample and normalise every sample to the model's ROI.
pub fn prepare(samples: &[MultiPhaseSample], cfg: &ModelConfig) -> Result<Vec<MultiPhaseSample>> {
    par::map_indexed(samples.len(), |i| preprocess(&samples[i], cfg.roi_shape))
        .into_iter()
        .collect()
}

/// Unweighted cross-entropy of one sample and its gradient in the store's layout.
pub fn sample_gradient(
    params: &ParamStore<f32>,
    cfg: &ModelConfig,
    sample: &MultiPhaseSample,
    mode: RunMode,
) -> Result<(f64, ParamStore<f32>)> {
    let g = Graph::new();
    let binder = Binder::new(&g, params);
    let out = forward_graph(&binder, cfg, sample.phases(), mode)?;
    let loss = g.cross_entropy(out.logits, sample.label as usize, 1.0)?;
    let value = g.value(loss).data()[0] as f64;
    let grads = g.backward(loss)?;
    let mut acc = params.zeros_like();
    binder.accumulate(&grads, &mut acc, 1.0);
    Ok((value, acc))
}

/// Eval-mode positive-class probabilities.
pub fn predict(params: &ParamStore<f32>, cfg: &ModelConfig, samples: &[&MultiPhaseSample]) -> Result<Vec<f64>> {
    par::map_indexed(samples.len(), |i| {
        forward(params, cfg, samples[i].phases(), RunMode::eval()).map(|z| positive_probability(&z))
    })
    .into_iter()
    .collect()
}

/// Train on `train_idx`, reporting accuracy on `test_idx` after every epoch.
///
/// Each step averages per-sample gradients with weights `w_i / Σ w` (class weights),
/// summed in sample order; per-sample work runs in parallel. Shuffling, masking and
/// augmentation draw from seeds derived from `train.train_seed`, the fold and the step;
/// one masking plan is drawn per `(epoch, batch)` and shared by the batch.
pub fn train_fold(
    model: &ModelConfig,
    train: &TrainConfig,
    data: &[MultiPhaseSample],
    train_idx: &[usize],
    test_idx: &[usize],
    fold: usize,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<FoldOutcome> {
    train.validate()?;
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::TooFewSamples(format!("fold {fold} has an empty split")));
    }
    let labels: Vec<u8> = train_idx.iter().map(|&i| data[i].label).collect();
    let weights = class_weights(&labels);
    let mut params = init_params::<f32>(model)?;
    let mut adam = Adam::new(&params, train.beta1, train.beta2, train.adam_eps);
    let steps_per_epoch = train_idx.len().div_ceil(train.batch_size);
    let total = steps_per_epoch * train.epochs;
    let test: Vec<&MultiPhaseSample> = test_idx.iter().map(|&i| &data[i]).collect();
    let test_labels: Vec<u8> = test.iter().map(|s| s.label).collect();
    let mut log = Vec::with_capacity(train.epochs);
    let mut step_losses = Vec::with_capacity(total);
    let mut step = 0;
    let mut scores = Vec::new();
    for epoch in 0..train.epochs {
        let mut order = train_idx.to_vec();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            train.train_seed,
            &[fold as u64, epoch as u64],
        )));
        let mut epoch_loss = 0.0;
        let mut lr = train.lr_start;
        for (b, batch) in order.chunks(train.batch_size).enumerate() {
            let mask_seed = derive_seed(train.train_seed, &[fold as u64, epoch as u64, b as u64, 1]);
            let results = par::map_indexed(batch.len(), |j| {
                let i = batch[j];
                let seed = derive_seed(train.train_seed, &[fold as u64, step as u64, i as u64]);
                let sample = augment(&data[i], train.aug_noise, derive_seed(seed, &[0]))?;
                sample_gradient(&params, model, &sample, RunMode::train(mask_seed))
            });
            let wsum: f64 = batch.iter().map(|&i| weights[data[i].label as usize]).sum();
            let mut grads = params.zeros_like();
            let mut loss = 0.0;
            for (&i, r) in batch.iter().zip(results) {
                let (li, gi) = r?;
                let w = weights[data[i].label as usize] / wsum;
                loss += w * li;
                for k in 0..grads.len() {
                    let acc = grads.tensor_at_mut(k).data_mut();
                    for (a, &g) in acc.iter_mut().zip(gi.tensor_at(k).data()) {
                        *a += w as f32 * g;
                    }
                }
            }
            lr = cosine_lr(train.lr_start, train.lr_end, step, total);
            adam.step(&mut params, &grads, lr);
            step_losses.push(loss);
            epoch_loss += loss;
            step += 1;
        }
        scores = predict(&params, model, &test)?;
        let correct = scores
            .iter()
            .zip(&test_labels)
            .filter(|&(&s, &l)| (s > train.threshold) == (l == 1))
            .count();
        let entry = EpochLog {
            fold,
            epoch,
            loss: epoch_loss / steps_per_epoch as f64,
            val_acc: correct as f64 / test.len() as f64,
            lr,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    let predictions: Vec<Prediction> = test
        .iter()
        .zip(&scores)
        .map(|(s, &score)| Prediction {
            id: s.id.clone(),
            fold,
            label: s.label,
            score,
        })
        .collect();
    let metrics = compute_metrics(&test_labels, &scores, train.threshold)?;
    Ok(FoldOutcome {
        fold,
        params,
        log,
        step_losses,
        predictions,
        metrics,
    })
}

/// Train every fold of `plan` in fold order. `data` must already be prepared and in
/// the plan's order.
pub fn cross_validate(
    model: &ModelConfig,
    train: &TrainConfig,
    data: &[MultiPhaseSample],
    plan: &FoldPlan,
    on_epoch: &mut dyn FnMut(&EpochLog),
    on_fold: &mut dyn FnMut(&FoldOutcome) -> Result<()>,
) -> Result<Vec<FoldOutcome>> {
    if plan.assignments.len() != data.len() || plan.assignments.iter().zip(data).any(|((id, _), s)| *id != s.id) {
        return Err(Error::ConfigInvalid("fold plan does not match the dataset order".into()));
    }
    let mut out = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let outcome = train_fold(
            model,
            train,
            data,
            &plan.train_indices(fold),
            &plan.test_indices(fold),
            fold,
            on_epoch,
        )?;
        on_fold(&outcome)?;
        out.push(outcome);
    }
    Ok(out)
}
