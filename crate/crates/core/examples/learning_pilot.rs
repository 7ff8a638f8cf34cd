//! Trains AVG and HG-NL on the one-signal-frame task and prints validation
//! accuracy per seed. Used to fix the golden thresholds in the acceptance
//! suite.
//!
//!     cargo run --release -p hgnl-core --example learning_pilot -- [lr] [train] [val]

use hgnl_core::aggregator::AggregatorConfig;
use hgnl_core::pipeline::{evaluate, train, DatasetSpec, SyntheticDataset, TrainConfig};
use hgnl_core::Execution;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map_or(0.05, |s| s.parse().unwrap());
    let n_train: usize = args.get(2).map_or(400, |s| s.parse().unwrap());
    let n_val: usize = args.get(3).map_or(400, |s| s.parse().unwrap());
    for seed in 0..3u64 {
        let spec = DatasetSpec {
            classes: 4,
            samples: n_train,
            m: 32,
            n_total: 16,
            signal_frames: 1,
            noise: 0.5,
            seed,
            partition: 0,
        };
        let train_set = SyntheticDataset::generate(&spec).unwrap();
        let val_set = SyntheticDataset::generate(&DatasetSpec { samples: n_val, ..spec.with_partition(1) }).unwrap();
        let tc = TrainConfig { learning_rate: lr, seed, ..TrainConfig::default() };
        for cfg in [AggregatorConfig::avg(32), AggregatorConfig::hgnl(32, 8, 4, 2, false)] {
            let t = std::time::Instant::now();
            let out = train(&train_set, &cfg, &tc, Some(&val_set)).unwrap();
            let last = out.history.last().unwrap();
            let e3 = evaluate(&out.model, &val_set, 3, Execution::Parallel).unwrap();
            let e16 = evaluate(&out.model, &val_set, 16, Execution::Parallel).unwrap();
            let s = out.model.aggregator.attention.as_ref().map(|a| a.s);
            println!(
                "seed {seed} {:>4}: loss {:.4} train {:.3} val@3 {:.4} val@16 {:.4} s={s:?} ({:.1?})",
                cfg.kind.to_string(),
                last.loss,
                last.train_acc,
                e3.top1,
                e16.top1,
                t.elapsed()
            );
        }
    }
}
