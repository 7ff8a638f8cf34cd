use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AggregatorConfig, AggregatorKind};
use crate::error::{Error, Result};
use crate::tensor::GroupedWeights;

/// A 1×1 (grouped) convolution layer: weights plus bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub weights: GroupedWeights,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(c_out: usize, c_in: usize, groups: usize, shared: bool) -> Result<Self> {
        let weights = GroupedWeights::for_channels(c_out, c_in, groups, shared)?;
        let bias = vec![0.0; weights.bias_len()];
        Ok(Self { weights, bias })
    }

    /// Stored scalars, bias included.
    pub fn len(&self) -> usize {
        self.weights.data.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Learned state of an NL / HG-NL module. Also used as the gradient
/// container, since gradients share the exact layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub wq: ConvLayer,
    pub wk: ConvLayer,
    pub wv: ConvLayer,
    pub s: f64,
}

impl AttentionParams {
    pub fn zeros(config: &AggregatorConfig) -> Result<Self> {
        config.validate()?;
        if !config.kind.has_attention() {
            return Err(Error::config(format!("{} has no attention parameters", config.kind)));
        }
        let AggregatorConfig { m, m1, g1, g2, shared, .. } = *config;
        Ok(Self {
            wq: ConvLayer::zeros(m1, m, g1, shared)?,
            wk: ConvLayer::zeros(m1, m, g1, shared)?,
            wv: ConvLayer::zeros(m, m, g2, shared)?,
            s: 0.0,
        })
    }

    /// Weight and bias scalars, excluding the residual scale `s`.
    pub fn weight_count(&self) -> usize {
        self.wq.len() + self.wk.len() + self.wv.len()
    }

    /// Named flat views in a fixed order; `s` comes last.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("wq.weight", &self.wq.weights.data[..]),
            ("wq.bias", &self.wq.bias[..]),
            ("wk.weight", &self.wk.weights.data[..]),
            ("wk.bias", &self.wk.bias[..]),
            ("wv.weight", &self.wv.weights.data[..]),
            ("wv.bias", &self.wv.bias[..]),
            ("s", std::slice::from_ref(&self.s)),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("wq.weight", &mut self.wq.weights.data[..]),
            ("wq.bias", &mut self.wq.bias[..]),
            ("wk.weight", &mut self.wk.weights.data[..]),
            ("wk.bias", &mut self.wk.bias[..]),
            ("wv.weight", &mut self.wv.weights.data[..]),
            ("wv.bias", &mut self.wv.bias[..]),
            ("s", std::slice::from_mut(&mut self.s)),
        ]
    }

    /// `self += alpha · other`; layouts must match.
    pub fn axpy(&mut self, alpha: f64, other: &AttentionParams) {
        for ((_, dst), (_, src)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            assert_eq!(dst.len(), src.len(), "parameter layout mismatch");
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|x| x.is_finite()))
    }
}

/// Parameters of any aggregator kind; pooling kinds carry none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorParams {
    pub config: AggregatorConfig,
    pub attention: Option<AttentionParams>,
}

impl AggregatorParams {
    /// Learned weights and biases, excluding `s`. Matches
    /// [`crate::cost::param_count`] for the same config.
    pub fn weight_count(&self) -> usize {
        self.attention.as_ref().map_or(0, AttentionParams::weight_count)
    }

    /// Gradient container of matching layout, all zeros.
    pub fn zeros_like(&self) -> Option<AttentionParams> {
        self.attention.as_ref().map(|a| {
            let mut z = a.clone();
            for (_, b) in z.blocks_mut() {
                b.fill(0.0);
            }
            z
        })
    }
}

/// Uniform `±sqrt(1/fan_in)` weights per block (`fan_in = c_in / groups`),
/// zero biases and `s = 0`, so a fresh module reduces to plain averaging.
pub fn init_params(config: &AggregatorConfig, seed: u64) -> Result<AggregatorParams> {
    config.validate()?;
    let attention = match config.kind {
        AggregatorKind::Avg | AggregatorKind::Max => None,
        AggregatorKind::Nl | AggregatorKind::Hgnl => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = AttentionParams::zeros(config)?;
            for layer in [&mut p.wq, &mut p.wk, &mut p.wv] {
                let bound = (1.0 / layer.weights.in_per_group as f64).sqrt();
                for w in &mut layer.weights.data {
                    *w = rng.random_range(-bound..bound);
                }
            }
            Some(p)
        }
    };
    Ok(AggregatorParams { config: *config, attention })
}
