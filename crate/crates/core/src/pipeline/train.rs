use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, evaluate, segment_sample, ClassifierHead, HeadGrads, SyntheticDataset};
use crate::aggregator::{aggregate_backward, forward, init_params, AggregatorConfig, AggregatorParams, AttentionParams};
use crate::container::{pull_params, push_params, Block, Container};
use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Frames per training sample (one per segment).
    pub segments: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs at which the learning rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            segments: 3,
            epochs: 40,
            learning_rate: 0.001,
            decay_epochs: vec![20, 30],
            decay_factor: 0.1,
            batch_size: 16,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("segments, epochs and batch_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config("learning rate must be finite and nonnegative"));
        }
        if !(self.decay_factor.is_finite() && self.decay_factor > 0.0) {
            return Err(Error::config("decay factor must be finite and positive"));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("decay epochs must be strictly increasing"));
        }
        if self.decay_epochs.last().is_some_and(|&e| e >= self.epochs) {
            return Err(Error::config("decay epochs must be below the epoch count"));
        }
        Ok(())
    }

    /// Step-decayed learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.learning_rate * self.decay_factor.powi(decays as i32)
    }
}

/// Aggregator plus classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub aggregator: AggregatorParams,
    pub head: ClassifierHead,
}

impl Model {
    pub fn init(config: &AggregatorConfig, classes: usize, seed: u64) -> Result<Self> {
        if classes == 0 {
            return Err(Error::config("classes must be positive"));
        }
        Ok(Self {
            aggregator: init_params(config, seed)?,
            head: ClassifierHead::init(classes, config.m, derive_seed(seed, 0x4845_4144, 0)),
        })
    }

    /// Loss, correctness and gradients for one `m × k` input.
    fn sample_grads(
        &self,
        f: &crate::Tensor,
        label: usize,
    ) -> Result<(f64, bool, Option<AttentionParams>, HeadGrads)> {
        let (fv, state) = forward(&self.aggregator, f, None)?;
        let (loss, probs, head_grads) = self.head.loss_and_grads(&fv, label)?;
        let predicted = argmax(&probs);
        let agg = aggregate_backward(&self.aggregator, &state, &head_grads.input)?;
        Ok((loss, predicted == label, agg.params, head_grads))
    }

    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<()> {
        let mut c = Container::new(
            "checkpoint",
            serde_json::json!({
                "config": self.aggregator.config,
                "classes": self.head.classes,
                "train": meta,
            }),
        );
        push_params(&mut c, "aggregator.", &self.aggregator);
        c.push(Block::new("head.weight", vec![self.head.classes, self.head.m], self.head.weight.clone()));
        c.push(Block::new("head.bias", vec![self.head.classes], self.head.bias.clone()));
        c.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        c.expect_kind("checkpoint", path)?;
        let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
        let config: AggregatorConfig =
            serde_json::from_value(c.meta["config"].clone()).map_err(|e| bad(format!("config: {e}")))?;
        let classes = c.meta["classes"].as_u64().ok_or_else(|| bad("missing classes".into()))? as usize;
        let aggregator = pull_params(&c, "aggregator.", &config, path)?;
        let weight = c.require("head.weight", path)?;
        let bias = c.require("head.bias", path)?;
        if weight.shape != [classes, config.m] || bias.shape != [classes] {
            return Err(bad("head shape disagrees with header".into()));
        }
        let head = ClassifierHead { classes, m: config.m, weight: weight.data.clone(), bias: bias.data.clone() };
        Ok(Self { aggregator, head })
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_acc: f64,
    /// Centre-frame top-1 at `segments` frames, when a validation set is
    /// supplied.
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochMetrics>,
}

/// Mini-batch SGD on softmax cross-entropy over aggregator and head.
///
/// Every epoch each sample draws fresh segment-sampled frames from its own
/// seeded stream; per-sample gradients within a batch may be computed in
/// parallel and are summed in sample order.
pub fn train(
    dataset: &SyntheticDataset,
    aggregator: &AggregatorConfig,
    config: &TrainConfig,
    validation: Option<&SyntheticDataset>,
) -> Result<TrainOutcome> {
    config.validate()?;
    aggregator.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset has no samples".into()));
    }
    if aggregator.m != dataset.spec.m {
        return Err(Error::config(format!(
            "aggregator m = {} but dataset features have m = {}",
            aggregator.m, dataset.spec.m
        )));
    }
    if config.segments > dataset.spec.n_total {
        return Err(Error::Sampling(format!(
            "{} segments requested from {} frames",
            config.segments, dataset.spec.n_total
        )));
    }
    let mut model = Model::init(aggregator, dataset.classes(), config.seed)?;
    let mut history = Vec::with_capacity(config.epochs);
    let count = dataset.len();

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch as u64, u64::MAX)));

        let mut losses = vec![0.0; count];
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let model_ref = &model;
            let results = config.execution.map_indexed(batch.len(), |b| {
                let idx = batch[b];
                let sample = &dataset.samples[idx];
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch as u64, idx as u64));
                let frames = segment_sample(dataset.spec.n_total, config.segments, &mut rng)?;
                let f = sample.features.select_columns(&frames)?;
                model_ref.sample_grads(&f, sample.label)
            });

            let scale = -lr / batch.len() as f64;
            let mut agg_sum = model.aggregator.zeros_like();
            let mut weight_sum = vec![0.0; model.head.weight.len()];
            let mut bias_sum = vec![0.0; model.head.classes];
            for (&idx, r) in batch.iter().zip(results) {
                let (loss, ok, agg, head) = r?;
                losses[idx] = loss;
                correct += usize::from(ok);
                if let (Some(sum), Some(g)) = (agg_sum.as_mut(), agg.as_ref()) {
                    sum.axpy(1.0, g);
                }
                for (s, g) in weight_sum.iter_mut().zip(&head.weight) {
                    *s += g;
                }
                for (s, g) in bias_sum.iter_mut().zip(&head.bias) {
                    *s += g;
                }
            }
            if lr != 0.0 {
                if let (Some(p), Some(g)) = (model.aggregator.attention.as_mut(), agg_sum.as_ref()) {
                    p.axpy(scale, g);
                }
                model.head.axpy(scale, &weight_sum, &bias_sum);
            }
        }

        let loss = losses.iter().sum::<f64>() / count as f64;
        let params_finite = model.aggregator.attention.as_ref().is_none_or(AttentionParams::is_finite);
        if !loss.is_finite() || !params_finite {
            return Err(Error::Diverged { epoch, loss });
        }
        let val_acc = match validation {
            Some(v) => Some(evaluate(&model, v, config.segments, config.execution)?.top1),
            None => None,
        };
        history.push(EpochMetrics {
            epoch,
            lr,
            loss,
            train_acc: correct as f64 / count as f64,
            val_acc,
        });
    }
    Ok(TrainOutcome { model, history })
}
