use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::augment::AugmentedDataset;
use crate::encoder::backward::{accumulate_grads, total_cells};
use crate::encoder::{predict, Model, ModelParams, Real, TrainingExample};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::table::{CellCoord, TableTextPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// `p -= lr * g`
    Sgd,
    /// `v = momentum * v + g; p -= lr * v`
    Momentum,
}

fn default_momentum() -> f64 {
    0.9
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Seeds the per-epoch example order.
    pub seed: u64,
    /// Each batch is split into this many contiguous shards whose gradients
    /// are computed on separate threads and summed in shard order.
    #[serde(default = "one")]
    pub shards: usize,
    /// Evaluate every this many epochs (0: after the last epoch only).
    #[serde(default = "one")]
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            learning_rate,
            optimizer: OptimizerKind::Momentum,
            momentum: default_momentum(),
            seed,
            shards: 1,
            eval_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.batch_size == 0 || self.shards == 0 {
            return fail("batch_size and shards must be positive");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return fail("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Augmentation copy served this epoch.
    pub variant: usize,
    /// Mean cell loss over the epoch's batches.
    pub train_loss: f64,
    /// Exact-match accuracy of the predictions made while training.
    pub train_accuracy: f64,
    pub eval_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub trace: Vec<EpochMetrics>,
}

impl<T> TrainOutcome<T> {
    pub fn final_eval_accuracy(&self) -> Option<f64> {
        self.trace.iter().rev().find_map(|m| m.eval_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<BTreeSet<CellCoord>>,
    pub correct: Vec<bool>,
}

/// Exact-match cell-selection accuracy over `pairs`.
pub fn evaluate<T: Real>(model: &Model<T>, pairs: &[TableTextPair]) -> Result<Evaluation> {
    let mut predictions = Vec::with_capacity(pairs.len());
    let mut correct = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let selected = predict(model, pair)?.selected;
        correct.push(&selected == pair.gold_cells());
        predictions.push(selected);
    }
    let hits = correct.iter().filter(|&&c| c).count();
    Ok(Evaluation {
        accuracy: if pairs.is_empty() {
            0.0
        } else {
            hits as f64 / pairs.len() as f64
        },
        predictions,
        correct,
    })
}

fn scale<T: Real>(params: &mut ModelParams<T>, factor: T) {
    for (_, m) in params.tensors_mut() {
        for x in m.as_mut_slice() {
            *x = *x * factor;
        }
    }
}

/// Gradient of the mean cell loss over `batch`, split across `shards`
/// threads. Shard gradients are summed in shard order.
fn batch_grads<T: Real>(
    batch: &[&TrainingExample],
    model: &Model<T>,
    shards: usize,
    correct: &mut Vec<bool>,
) -> Result<(T, ModelParams<T>)> {
    let cells = batch.iter().map(|e| e.cells.len()).sum();
    let shards = shards.min(batch.len()).max(1);
    if shards == 1 {
        let mut grads = model.params.zeros_like();
        let loss = accumulate_grads(batch, &model.params, &model.config, cells, &mut grads, Some(correct))?;
        return Ok((loss, grads));
    }
    let per = batch.len().div_ceil(shards);
    let results: Vec<Result<(T, ModelParams<T>, Vec<bool>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(per)
            .map(|chunk| {
                s.spawn(move || {
                    let mut grads = model.params.zeros_like();
                    let mut ok = Vec::with_capacity(chunk.len());
                    let loss = accumulate_grads(chunk, &model.params, &model.config, cells, &mut grads, Some(&mut ok))?;
                    Ok((loss, grads, ok))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("gradient shard panicked"))
            .collect()
    });
    let mut total = T::zero();
    let mut grads = model.params.zeros_like();
    for r in results {
        let (loss, g, ok) = r?;
        total = total + loss;
        grads.axpy(T::one(), &g);
        correct.extend(ok);
    }
    Ok((total, grads))
}

/// Minibatch training on the cell-selection loss. Epoch `e` serves
/// `data.epoch(e)` in an order shuffled by `derive_seed(config.seed, e)`.
pub fn train<T: Real>(
    model: Model<T>,
    data: &AugmentedDataset,
    eval: &[TableTextPair],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::LengthMismatch("empty training set".into()));
    }
    let mut model = model;
    let used = data.copies().min(config.epochs.max(1));
    let prepared: Vec<Vec<TrainingExample>> = (0..used)
        .map(|k| {
            data.variant(k)
                .iter()
                .map(|p| TrainingExample::prepare(p, &model.config))
                .collect()
        })
        .collect::<Result<_>>()?;
    total_cells(&prepared[0])?;
    let lr = T::lit(config.learning_rate);
    let mu = T::lit(config.momentum);
    let mut velocity = model.params.zeros_like();
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let variant = data.variant_for_epoch(epoch);
        let examples = &prepared[variant];
        let mut order: Vec<usize> = (0..examples.len()).collect();
        SplitMix64::new(derive_seed(config.seed, epoch as u64)).shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut correct = Vec::with_capacity(examples.len());
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TrainingExample> = idx.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) = batch_grads(&batch, &model, config.shards, &mut correct)
                .map_err(|e| Error::Numerical(format!("epoch {epoch}, step {step}: {e}")))?;
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("epoch {epoch}, step {step}: loss {loss}")));
            }
            loss_sum += loss;
            batches += 1;
            match config.optimizer {
                OptimizerKind::Sgd => model.params.axpy(-lr, &grads),
                OptimizerKind::Momentum => {
                    scale(&mut velocity, mu);
                    velocity.axpy(T::one(), &grads);
                    model.params.axpy(-lr, &velocity);
                }
            }
        }
        let last = epoch + 1 == config.epochs;
        let due = config.eval_every > 0 && (epoch + 1) % config.eval_every == 0;
        let eval_accuracy = if !eval.is_empty() && (due || last) {
            Some(evaluate(&model, eval)?.accuracy)
        } else {
            None
        };
        trace.push(EpochMetrics {
            epoch,
            variant,
            train_loss: loss_sum / batches as f64,
            train_accuracy: correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64,
            eval_accuracy,
        });
    }
    Ok(TrainOutcome { model, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::toytask::{generate_dataset, TaskKind, TaskSpec};

    fn setup() -> (Model<f64>, AugmentedDataset, Vec<TableTextPair>) {
        let config = EncoderConfig::new(1, 2, 8).with_vocab(256, 32);
        let model = Model::new(config, 1).unwrap();
        let data = generate_dataset(&TaskSpec::new(TaskKind::SelectByHeader, 3), 12).unwrap();
        let eval = generate_dataset(&TaskSpec::new(TaskKind::SelectByHeader, 4), 6).unwrap();
        (model, AugmentedDataset::unaugmented(data), eval)
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (model, data, eval) = setup();
        let out = train(model.clone(), &data, &eval, &TrainConfig::new(3, 4, 0.0, 7)).unwrap();
        assert_eq!(out.model.params, model.params);
        let acc: Vec<_> = out.trace.iter().map(|m| m.eval_accuracy.unwrap()).collect();
        assert!(acc.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn training_is_reproducible_and_reduces_loss() {
        let (model, data, eval) = setup();
        let config = TrainConfig::new(6, 4, 0.05, 7);
        let a = train(model.clone(), &data, &eval, &config).unwrap();
        let b = train(model, &data, &eval, &config).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.trace, b.trace);
        assert!(a.trace.last().unwrap().train_loss < a.trace[0].train_loss);
    }

    #[test]
    fn sharded_batches_match_closely() {
        let (model, data, eval) = setup();
        let mut config = TrainConfig::new(2, 6, 0.05, 7);
        let one = train(model.clone(), &data, &eval, &config).unwrap();
        config.shards = 3;
        let three = train(model.clone(), &data, &eval, &config).unwrap();
        assert_eq!(
            three.model.params,
            train(model, &data, &eval, &config).unwrap().model.params
        );
        for ((_, a), (_, b)) in one.model.params.tensors().into_iter().zip(three.model.params.tensors()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn divergence_is_reported() {
        let (model, data, eval) = setup();
        let err = train(model, &data, &eval, &TrainConfig::new(5, 4, 1e200, 7)).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err}");
    }

    #[test]
    fn invalid_config() {
        let (model, data, eval) = setup();
        let mut config = TrainConfig::new(1, 0, 0.1, 0);
        assert!(train(model.clone(), &data, &eval, &config).is_err());
        config.batch_size = 2;
        config.momentum = 1.0;
        assert!(train(model, &data, &eval, &config).is_err());
    }
}
