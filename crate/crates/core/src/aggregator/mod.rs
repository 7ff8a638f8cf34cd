//! Frame aggregators mapping `F ∈ R^{m×n}` to a video-level `F_v ∈ R^m`.
//!
//! NL computes one column-softmax attention map over frames; HG-NL uses
//! `g1`-grouped query/key convolutions, a `g2`-grouped value convolution and
//! `g2` ReLU attention maps. Both finish with `F_weight = s·F_o + F` and a
//! mean over frames, so `n` is free at every call.

mod forward;
mod params;

pub use forward::{
    aggregate_backward, attention_forward, avg_aggregate, forward, hgnl_forward, max_aggregate,
    nl_forward, AttentionActivation, AttentionState, ForwardState, Gradients, StageCounters,
};
pub use params::{init_params, AggregatorParams, AttentionParams, ConvLayer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorKind {
    Nl,
    Hgnl,
    Avg,
    Max,
}

impl AggregatorKind {
    pub fn has_attention(self) -> bool {
        matches!(self, Self::Nl | Self::Hgnl)
    }
}

impl std::fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Nl => "nl",
            Self::Hgnl => "hgnl",
            Self::Avg => "avg",
            Self::Max => "max",
        })
    }
}

impl std::str::FromStr for AggregatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nl" => Ok(Self::Nl),
            "hgnl" | "hg-nl" => Ok(Self::Hgnl),
            "avg" => Ok(Self::Avg),
            "max" => Ok(Self::Max),
            other => Err(Error::config(format!("unknown aggregator kind {other:?}"))),
        }
    }
}

/// Hyperparameters of one aggregator instance.
///
/// `m1` is the query/key embedding width, `g1` the group count of the
/// query/key convolutions and `g2` that of the value convolution and of the
/// attention maps. Pooling kinds only use `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    pub kind: AggregatorKind,
    pub m: usize,
    pub m1: usize,
    pub g1: usize,
    pub g2: usize,
    pub shared: bool,
}

impl AggregatorConfig {
    pub fn nl(m: usize, m1: usize) -> Self {
        Self { kind: AggregatorKind::Nl, m, m1, g1: 1, g2: 1, shared: false }
    }

    pub fn hgnl(m: usize, m1: usize, g1: usize, g2: usize, shared: bool) -> Self {
        Self { kind: AggregatorKind::Hgnl, m, m1, g1, g2, shared }
    }

    pub fn avg(m: usize) -> Self {
        Self { kind: AggregatorKind::Avg, m, m1: 0, g1: 1, g2: 1, shared: false }
    }

    pub fn max(m: usize) -> Self {
        Self { kind: AggregatorKind::Max, m, m1: 0, g1: 1, g2: 1, shared: false }
    }

    /// `g1 / g2`.
    pub fn ratio(&self) -> usize {
        self.g1 / self.g2.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let Self { kind, m, m1, g1, g2, shared } = *self;
        if m == 0 {
            return Err(Error::config("m must be positive"));
        }
        match kind {
            AggregatorKind::Avg | AggregatorKind::Max => Ok(()),
            AggregatorKind::Nl => {
                if m1 == 0 {
                    return Err(Error::config("m1 must be positive"));
                }
                if g1 != 1 || g2 != 1 || shared {
                    return Err(Error::config("NL requires g1 = g2 = 1 and no sharing"));
                }
                Ok(())
            }
            AggregatorKind::Hgnl => {
                if m1 == 0 || g1 == 0 || g2 == 0 {
                    return Err(Error::config("m1, g1 and g2 must be positive"));
                }
                for (what, value, groups) in
                    [("m", m, g1), ("m1", m1, g1), ("m", m, g2), ("m1", m1, g2)]
                {
                    if value % groups != 0 {
                        return Err(Error::config(format!(
                            "{what} = {value} is not divisible by {groups} groups"
                        )));
                    }
                }
                if g1 % g2 != 0 {
                    return Err(Error::config(format!("g1 = {g1} must be a multiple of g2 = {g2}")));
                }
                Ok(())
            }
        }
    }
}
