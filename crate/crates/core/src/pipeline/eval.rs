use serde::{Deserialize, Serialize};

use super::train::Model;
use super::{segment_centers, SyntheticDataset};
use crate::aggregator::forward;
use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_eval: usize,
    pub samples: usize,
    pub top1: f64,
    /// Top-`min(5, classes)` accuracy.
    pub top5: f64,
    pub top_k: usize,
}

/// Accuracy with `n_eval` centre frames per sample, independent of the
/// frame count used in training.
pub fn evaluate(
    model: &Model,
    dataset: &SyntheticDataset,
    n_eval: usize,
    execution: Execution,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("evaluation dataset has no samples".into()));
    }
    if model.head.classes != dataset.classes() {
        return Err(Error::config(format!(
            "model has {} classes, dataset {}",
            model.head.classes,
            dataset.classes()
        )));
    }
    let frames = segment_centers(dataset.spec.n_total, n_eval)?;
    let top_k = model.head.classes.min(5);
    let ranks = execution.map_indexed(dataset.len(), |i| -> Result<usize> {
        let sample = &dataset.samples[i];
        let f = sample.features.select_columns(&frames)?;
        let (fv, _) = forward(&model.aggregator, &f, None)?;
        let (logits, _) = model.head.classify(&fv)?;
        let target = logits[sample.label];
        // Ties count against the sample.
        Ok(logits
            .iter()
            .enumerate()
            .filter(|&(c, &z)| c != sample.label && z >= target)
            .count())
    });
    let (mut top1, mut top5) = (0usize, 0usize);
    for r in ranks {
        let r = r?;
        top1 += usize::from(r == 0);
        top5 += usize::from(r < top_k);
    }
    let n = dataset.len() as f64;
    Ok(EvalReport {
        n_eval,
        samples: dataset.len(),
        top1: top1 as f64 / n,
        top5: top5 as f64 / n,
        top_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregator::AggregatorConfig;
    use crate::pipeline::DatasetSpec;

    fn data() -> SyntheticDataset {
        SyntheticDataset::generate(&DatasetSpec {
            classes: 4,
            samples: 30,
            m: 8,
            n_total: 32,
            signal_frames: 1,
            noise: 0.5,
            seed: 2,
            partition: 0,
        })
        .unwrap()
    }

    #[test]
    fn variable_n_and_small_c_top5() {
        let d = data();
        let model = Model::init(&AggregatorConfig::hgnl(8, 4, 2, 2, false), 4, 0).unwrap();
        for n_eval in [1, 3, 25, 32] {
            let r = evaluate(&model, &d, n_eval, Execution::Parallel).unwrap();
            assert_eq!(r.top5, 1.0);
            assert_eq!(r.top_k, 4);
        }
        assert!(matches!(evaluate(&model, &d, 33, Execution::Parallel), Err(Error::Sampling(_))));
    }

    #[test]
    fn execution_modes_agree() {
        let d = data();
        let model = Model::init(&AggregatorConfig::nl(8, 4), 4, 9).unwrap();
        assert_eq!(
            evaluate(&model, &d, 8, Execution::Sequential).unwrap(),
            evaluate(&model, &d, 8, Execution::Parallel).unwrap()
        );
    }
}
