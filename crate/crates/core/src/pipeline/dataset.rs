use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::container::{Block, Container};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Generation recipe for a synthetic frame-feature dataset.
///
/// Each sample is `m × n_total` frame features. `signal_frames` randomly
/// chosen frames carry the class pattern; every frame gets `noise`-scaled
/// Gaussian noise. `seed` fixes the class patterns; `partition` selects an
/// independent stream of samples over the same patterns (e.g. 0 for
/// training, 1 for validation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub classes: usize,
    pub samples: usize,
    pub m: usize,
    pub n_total: usize,
    pub signal_frames: usize,
    pub noise: f64,
    pub seed: u64,
    #[serde(default)]
    pub partition: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.samples == 0 || self.m == 0 || self.n_total == 0 {
            return Err(Error::config("classes, samples, m and n_total must be positive"));
        }
        if self.signal_frames > self.n_total {
            return Err(Error::config(format!(
                "signal_frames = {} exceeds n_total = {}",
                self.signal_frames, self.n_total
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::config("noise must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn with_partition(&self, partition: u64) -> Self {
        Self { partition, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `m × n_total`.
    pub features: Tensor,
    pub label: usize,
    /// Frames carrying the class pattern, ascending.
    pub signal_frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub spec: DatasetSpec,
    pub samples: Vec<Sample>,
}

/// One ±1 pattern per class, fixed by `spec.seed`.
pub fn class_patterns(spec: &DatasetSpec) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.classes)
        .map(|_| (0..spec.m).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect())
        .collect()
}

impl SyntheticDataset {
    /// Labels cycle through the classes, so every class is equally
    /// represented (up to one sample).
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let patterns = class_patterns(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0x5a4d_504c, spec.partition));
        let (m, n) = (spec.m, spec.n_total);
        let samples = (0..spec.samples)
            .map(|i| {
                let label = i % spec.classes;
                let mut signal = index::sample(&mut rng, n, spec.signal_frames).into_vec();
                signal.sort_unstable();
                let mut data = vec![0.0; m * n];
                for x in &mut data {
                    let z: f64 = rng.sample(StandardNormal);
                    *x = spec.noise * z;
                }
                for &j in &signal {
                    for (r, &p) in patterns[label].iter().enumerate() {
                        data[r * n + j] += p;
                    }
                }
                Sample {
                    features: Tensor::matrix(m, n, data).expect("sample shape"),
                    label,
                    signal_frames: signal,
                }
            })
            .collect();
        Ok(Self { spec: spec.clone(), samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn to_container(&self) -> Container {
        let (m, n) = (self.spec.m, self.spec.n_total);
        let mut c = Container::new("dataset", serde_json::json!({ "spec": self.spec }));
        let mut features = Vec::with_capacity(self.len() * m * n);
        for s in &self.samples {
            features.extend_from_slice(s.features.data());
        }
        c.push(Block::new("features", vec![self.len(), m, n], features));
        c.push(Block::new(
            "labels",
            vec![self.len()],
            self.samples.iter().map(|s| s.label as f64).collect(),
        ));
        let offsets: Vec<f64> = std::iter::once(0.0)
            .chain(self.samples.iter().scan(0usize, |acc, s| {
                *acc += s.signal_frames.len();
                Some(*acc as f64)
            }))
            .collect();
        let flat: Vec<f64> = self.samples.iter().flat_map(|s| s.signal_frames.iter().map(|&j| j as f64)).collect();
        c.push(Block::new("signal_offsets", vec![offsets.len()], offsets));
        if !flat.is_empty() {
            c.push(Block::new("signal_frames", vec![flat.len()], flat));
        }
        c
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        c.expect_kind("dataset", path)?;
        let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
        let spec: DatasetSpec = serde_json::from_value(c.meta["spec"].clone())
            .map_err(|e| bad(format!("spec: {e}")))?;
        spec.validate()?;
        let (m, n) = (spec.m, spec.n_total);
        let features = c.require("features", path)?;
        let labels = c.require("labels", path)?;
        let offsets = c.require("signal_offsets", path)?;
        let count = labels.data.len();
        if features.shape != [count, m, n] || offsets.data.len() != count + 1 {
            return Err(bad("block shapes disagree with spec".into()));
        }
        let flat = c.block("signal_frames").map_or(&[][..], |b| &b.data[..]);
        let samples = (0..count)
            .map(|i| {
                let label = labels.data[i] as usize;
                if label >= spec.classes {
                    return Err(bad(format!("label {label} out of range")));
                }
                let (a, b) = (offsets.data[i] as usize, offsets.data[i + 1] as usize);
                if a > b || b > flat.len() {
                    return Err(bad("signal offsets out of range".into()));
                }
                Ok(Sample {
                    features: Tensor::matrix(m, n, features.data[i * m * n..(i + 1) * m * n].to_vec())?,
                    label,
                    signal_frames: flat[a..b].iter().map(|&j| j as usize).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, samples })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DatasetSpec {
        DatasetSpec { classes: 4, samples: 40, m: 32, n_total: 16, signal_frames: 1, noise: 0.5, seed: 3, partition: 0 }
    }

    #[test]
    fn noiseless_full_signal_is_pattern() {
        let s = DatasetSpec { noise: 0.0, signal_frames: 16, ..spec() };
        let d = SyntheticDataset::generate(&s).unwrap();
        let patterns = class_patterns(&s);
        for sample in &d.samples {
            let (m, n) = sample.features.dims2().unwrap();
            for r in 0..m {
                for j in 0..n {
                    assert_eq!(sample.features.at2(r, j), patterns[sample.label][r]);
                }
            }
        }
    }

    #[test]
    fn deterministic_and_partitioned() {
        let a = SyntheticDataset::generate(&spec()).unwrap();
        assert_eq!(a, SyntheticDataset::generate(&spec()).unwrap());
        let b = SyntheticDataset::generate(&spec().with_partition(1)).unwrap();
        assert_ne!(a.samples[0].features, b.samples[0].features);
        assert_eq!(class_patterns(&spec()), class_patterns(&spec().with_partition(1)));
    }

    #[test]
    fn labels_and_signal_indices() {
        let d = SyntheticDataset::generate(&spec()).unwrap();
        for (i, s) in d.samples.iter().enumerate() {
            assert_eq!(s.label, i % 4);
            assert_eq!(s.signal_frames.len(), 1);
            assert!(s.signal_frames[0] < 16);
        }
    }

    #[test]
    fn invalid_spec() {
        assert!(SyntheticDataset::generate(&DatasetSpec { signal_frames: 17, ..spec() }).is_err());
        assert!(SyntheticDataset::generate(&DatasetSpec { noise: -1.0, ..spec() }).is_err());
        assert!(SyntheticDataset::generate(&DatasetSpec { classes: 0, ..spec() }).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let d = SyntheticDataset::generate(&spec()).unwrap();
        d.save(&path).unwrap();
        assert_eq!(SyntheticDataset::load(&path).unwrap(), d);
    }
}
