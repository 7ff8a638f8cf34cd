use hgnl_core::aggregator::AggregatorConfig;
use hgnl_core::pipeline::{class_patterns, evaluate, segment_centers, train, DatasetSpec, Model, SyntheticDataset, TrainConfig};
use hgnl_core::Execution;

fn spec(samples: usize, seed: u64) -> DatasetSpec {
    DatasetSpec { classes: 4, samples, m: 32, n_total: 16, signal_frames: 1, noise: 0.5, seed, partition: 0 }
}

#[test]
fn nearest_pattern_on_signal_frame_is_perfect() {
    for seed in 0..3 {
        let s = spec(500, seed);
        let data = SyntheticDataset::generate(&s).unwrap();
        let patterns = class_patterns(&s);
        for sample in &data.samples {
            let j = sample.signal_frames[0];
            let frame: Vec<f64> = (0..s.m).map(|r| sample.features.at2(r, j)).collect();
            let dist = |p: &Vec<f64>| p.iter().zip(&frame).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..s.classes).min_by(|&a, &b| dist(&patterns[a]).total_cmp(&dist(&patterns[b]))).unwrap();
            assert_eq!(best, sample.label, "seed {seed}");
        }
    }
}

/// With no signal frames the labels are independent of the features, so any
/// fixed model's top-1 is Binomial(N, 1/4) / N.
#[test]
fn untrained_model_is_at_chance_without_signal() {
    let data = SyntheticDataset::generate(&DatasetSpec { samples: 2000, signal_frames: 0, ..spec(0, 5) }).unwrap();
    let sigma = (0.25f64 * 0.75 / 2000.0).sqrt();
    for (i, cfg) in [AggregatorConfig::avg(32), AggregatorConfig::hgnl(32, 8, 4, 2, false)].iter().enumerate() {
        let model = Model::init(cfg, 4, 100 + i as u64).unwrap();
        let r = evaluate(&model, &data, 16, Execution::Parallel).unwrap();
        assert!((r.top1 - 0.25).abs() <= 3.0 * sigma, "{cfg:?}: {}", r.top1);
        assert_eq!(r.top_k, 4);
        assert_eq!(r.top5, 1.0);
    }
}

/// On signal-bearing data a single random head is biased by how its rows
/// happen to align with the class patterns; averaged over initialisations
/// the accuracy is still at chance.
#[test]
fn untrained_models_average_to_chance() {
    let data = SyntheticDataset::generate(&spec(400, 5)).unwrap();
    let cfg = AggregatorConfig::hgnl(32, 8, 4, 2, false);
    let accs: Vec<f64> = (0..60)
        .map(|seed| evaluate(&Model::init(&cfg, 4, seed).unwrap(), &data, 16, Execution::Parallel).unwrap().top1)
        .collect();
    let k = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / k;
    let sd = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    assert!((mean - 0.25).abs() <= 3.0 * sd / k.sqrt(), "mean {mean}, sd {sd}");
}

#[test]
fn train_short_evaluate_long() {
    let data = SyntheticDataset::generate(&DatasetSpec { n_total: 25, samples: 48, ..spec(0, 1) }).unwrap();
    let cfg = AggregatorConfig::hgnl(32, 8, 4, 2, false);
    let tc = TrainConfig { epochs: 3, decay_epochs: vec![2], learning_rate: 0.2, ..TrainConfig::default() };
    let out = train(&data, &cfg, &tc, None).unwrap();
    assert_eq!(out.history.len(), 3);
    for n_eval in [1, 3, 25] {
        let r = evaluate(&out.model, &data, n_eval, Execution::Sequential).unwrap();
        assert_eq!(r.n_eval, n_eval);
    }
    assert!(evaluate(&out.model, &data, 26, Execution::Sequential).is_err());
}

#[test]
fn centres_cover_every_frame_at_full_length() {
    assert_eq!(segment_centers(16, 16).unwrap(), (0..16).collect::<Vec<_>>());
    assert_eq!(segment_centers(25, 3).unwrap(), vec![4, 13, 21]);
}

#[test]
fn sequential_and_parallel_training_agree() {
    let data = SyntheticDataset::generate(&spec(40, 2)).unwrap();
    let cfg = AggregatorConfig::nl(32, 8);
    let base = TrainConfig { epochs: 2, decay_epochs: vec![], learning_rate: 0.1, ..TrainConfig::default() };
    let seq = train(&data, &cfg, &TrainConfig { execution: Execution::Sequential, ..base.clone() }, Some(&data)).unwrap();
    let par = train(&data, &cfg, &TrainConfig { execution: Execution::Parallel, ..base }, Some(&data)).unwrap();
    assert_eq!(seq.history, par.history);
    assert_eq!(seq.model, par.model);
}
