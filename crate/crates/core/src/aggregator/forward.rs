use serde::{Deserialize, Serialize};

use super::{AggregatorKind, AggregatorParams, AttentionParams};
use crate::error::{Error, Result};
use crate::tensor::{
    gmm_qk, gmm_qk_backward, gmm_va, gmm_va_backward, grouped_conv1x1, grouped_conv1x1_backward,
    max_over_frames, max_over_frames_backward, mean_over_frames, mean_over_frames_backward, relu,
    relu_backward, residual_scale, residual_scale_backward, softmax_cols, softmax_cols_backward,
    OpCounter, Tensor,
};

/// Nonlinearity applied to the `Qᵀ K` products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionActivation {
    /// Column-normalised; each output frame is a convex combination of
    /// value frames.
    Softmax,
    /// Unnormalised, entries clamped at zero.
    Relu,
}

/// Per-stage operation tallies for one forward pass.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounters {
    pub wq: OpCounter,
    pub wk: OpCounter,
    pub wv: OpCounter,
    /// `Qᵀ K` or its grouped form.
    pub attention: OpCounter,
    /// `V A` or its grouped form.
    pub output: OpCounter,
}

impl StageCounters {
    pub fn total(&self) -> OpCounter {
        let mut t = self.wq;
        for c in [self.wk, self.wv, self.attention, self.output] {
            t += c;
        }
        t
    }
}

/// Intermediates of an attention forward pass needed by the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionState {
    pub activation: AttentionActivation,
    pub input: Tensor,
    pub q: Tensor,
    pub k: Tensor,
    /// Pre-activation `groups × n × n` products.
    pub logits: Tensor,
    /// Post-activation attention maps.
    pub attention: Tensor,
    pub v: Tensor,
    pub f_o: Tensor,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForwardState {
    Avg { m: usize, n: usize },
    Max { input: Tensor },
    Attention(Box<AttentionState>),
}

impl ForwardState {
    pub fn frames(&self) -> usize {
        match self {
            Self::Avg { n, .. } => *n,
            Self::Max { input } => input.shape()[1],
            Self::Attention(st) => st.input.shape()[1],
        }
    }
}

/// Gradients from [`aggregate_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub input: Tensor,
    pub params: Option<AttentionParams>,
}

fn check_input(f: &Tensor, m: usize) -> Result<usize> {
    let (rows, n) = f.dims2()?;
    if rows != m {
        return Err(Error::dim(format!("aggregator expects {m} feature rows, got {rows}")));
    }
    Ok(n)
}

/// Row-wise mean over frames.
pub fn avg_aggregate(f: &Tensor) -> Result<Tensor> {
    mean_over_frames(f)
}

/// Row-wise max over frames.
pub fn max_aggregate(f: &Tensor) -> Result<Tensor> {
    max_over_frames(f)
}

/// Shared NL / HG-NL body. The attention group count is that of the value
/// layer; query/key layers carry their own grouping.
pub fn attention_forward(
    params: &AttentionParams,
    f: &Tensor,
    activation: AttentionActivation,
    mut counters: Option<&mut StageCounters>,
) -> Result<(Tensor, AttentionState)> {
    let groups = params.wv.weights.groups;
    let q = grouped_conv1x1(&params.wq.weights, &params.wq.bias, f, counters.as_deref_mut().map(|c| &mut c.wq))?;
    let k = grouped_conv1x1(&params.wk.weights, &params.wk.bias, f, counters.as_deref_mut().map(|c| &mut c.wk))?;
    let logits = gmm_qk(&q, &k, groups, counters.as_deref_mut().map(|c| &mut c.attention))?;
    let attention = match activation {
        AttentionActivation::Softmax => softmax_cols(&logits)?,
        AttentionActivation::Relu => relu(&logits),
    };
    let v = grouped_conv1x1(&params.wv.weights, &params.wv.bias, f, counters.as_deref_mut().map(|c| &mut c.wv))?;
    let f_o = gmm_va(&v, &attention, counters.map(|c| &mut c.output))?;
    let weighted = residual_scale(&f_o, f, params.s)?;
    let out = mean_over_frames(&weighted)?;
    let state = AttentionState {
        activation,
        input: f.clone(),
        q,
        k,
        logits,
        attention,
        v,
        f_o,
        s: params.s,
    };
    Ok((out, state))
}

fn attention_params(params: &AggregatorParams, kind: AggregatorKind) -> Result<&AttentionParams> {
    if params.config.kind != kind {
        return Err(Error::config(format!(
            "parameters are for {}, not {kind}",
            params.config.kind
        )));
    }
    params
        .attention
        .as_ref()
        .ok_or_else(|| Error::contract(format!("{kind} parameters missing attention weights")))
}

/// Standard non-local aggregation with one softmax attention map.
pub fn nl_forward(
    f: &Tensor,
    params: &AggregatorParams,
    counters: Option<&mut StageCounters>,
) -> Result<(Tensor, ForwardState)> {
    let p = attention_params(params, AggregatorKind::Nl)?;
    check_input(f, params.config.m)?;
    let (out, st) = attention_forward(p, f, AttentionActivation::Softmax, counters)?;
    Ok((out, ForwardState::Attention(Box::new(st))))
}

/// Hierarchical group-wise non-local aggregation with `g2` ReLU attention maps.
pub fn hgnl_forward(
    f: &Tensor,
    params: &AggregatorParams,
    counters: Option<&mut StageCounters>,
) -> Result<(Tensor, ForwardState)> {
    let p = attention_params(params, AggregatorKind::Hgnl)?;
    params.config.validate()?;
    check_input(f, params.config.m)?;
    let (out, st) = attention_forward(p, f, AttentionActivation::Relu, counters)?;
    Ok((out, ForwardState::Attention(Box::new(st))))
}

/// Dispatches on the configured kind.
pub fn forward(
    params: &AggregatorParams,
    f: &Tensor,
    counters: Option<&mut StageCounters>,
) -> Result<(Tensor, ForwardState)> {
    match params.config.kind {
        AggregatorKind::Nl => nl_forward(f, params, counters),
        AggregatorKind::Hgnl => hgnl_forward(f, params, counters),
        AggregatorKind::Avg => {
            let n = check_input(f, params.config.m)?;
            Ok((avg_aggregate(f)?, ForwardState::Avg { m: params.config.m, n }))
        }
        AggregatorKind::Max => {
            check_input(f, params.config.m)?;
            Ok((max_aggregate(f)?, ForwardState::Max { input: f.clone() }))
        }
    }
}

/// Gradients of `<upstream, F_v>` with respect to the input frames and, for
/// attention kinds, every parameter including `s`.
pub fn aggregate_backward(
    params: &AggregatorParams,
    state: &ForwardState,
    upstream: &Tensor,
) -> Result<Gradients> {
    let m = params.config.m;
    if upstream.shape() != [m] {
        return Err(Error::contract(format!(
            "upstream gradient has shape {:?}, expected [{m}]",
            upstream.shape()
        )));
    }
    match (state, params.attention.as_ref()) {
        (ForwardState::Avg { m: sm, n }, None) if *sm == m => Ok(Gradients {
            input: mean_over_frames_backward(upstream, *n)?,
            params: None,
        }),
        (ForwardState::Max { input }, None) if input.shape()[0] == m => Ok(Gradients {
            input: max_over_frames_backward(input, upstream)?,
            params: None,
        }),
        (ForwardState::Attention(st), Some(p)) if st.input.shape()[0] == m => {
            attention_backward(p, st, upstream)
        }
        _ => Err(Error::contract("saved state does not match the parameters")),
    }
}

fn attention_backward(p: &AttentionParams, st: &AttentionState, upstream: &Tensor) -> Result<Gradients> {
    let n = st.input.shape()[1];
    let g_weighted = mean_over_frames_backward(upstream, n)?;
    let (g_fo, mut g_input, g_s) = residual_scale_backward(&st.f_o, st.s, &g_weighted)?;
    let (g_v, g_attention) = gmm_va_backward(&st.v, &st.attention, &g_fo)?;
    let g_logits = match st.activation {
        AttentionActivation::Softmax => softmax_cols_backward(&st.attention, &g_attention)?,
        AttentionActivation::Relu => relu_backward(&st.logits, &g_attention)?,
    };
    let groups = st.logits.shape()[0];
    let (g_q, g_k) = gmm_qk_backward(&st.q, &st.k, groups, &g_logits)?;

    let mut grads = p.clone();
    grads.s = g_s;
    for (layer, grad_out, dst) in [
        (&p.wq, &g_q, &mut grads.wq),
        (&p.wk, &g_k, &mut grads.wk),
        (&p.wv, &g_v, &mut grads.wv),
    ] {
        let cg = grouped_conv1x1_backward(&layer.weights, &st.input, grad_out)?;
        g_input.add_assign(&cg.input)?;
        dst.weights = cg.weights;
        dst.bias = cg.bias;
    }
    Ok(Gradients { input: g_input, params: Some(grads) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregator::{init_params, AggregatorConfig};
    use crate::tensor::matmul;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn perturbed(cfg: &AggregatorConfig, seed: u64) -> AggregatorParams {
        let mut p = init_params(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let a = p.attention.as_mut().unwrap();
        for (_, b) in a.blocks_mut() {
            for x in b.iter_mut() {
                *x += rng.random_range(-0.3..0.3);
            }
        }
        p
    }

    #[test]
    fn s_zero_reduces_to_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random(8, 5, &mut rng);
        for cfg in [AggregatorConfig::nl(8, 4), AggregatorConfig::hgnl(8, 4, 4, 2, false)] {
            let p = init_params(&cfg, 3).unwrap();
            let (out, _) = forward(&p, &f, None).unwrap();
            assert_eq!(out, avg_aggregate(&f).unwrap());
        }
    }

    #[test]
    fn nl_single_frame() {
        let cfg = AggregatorConfig::nl(4, 2);
        let mut p = perturbed(&cfg, 5);
        p.attention.as_mut().unwrap().s = 0.7;
        let f = Tensor::from_rows(&[[0.5], [-1.0], [2.0], [0.25]]);
        let (out, st) = nl_forward(&f, &p, None).unwrap();
        let ForwardState::Attention(st) = st else { panic!() };
        assert_eq!(st.attention.data(), &[1.0]);
        let a = p.attention.as_ref().unwrap();
        let v = grouped_conv1x1(&a.wv.weights, &a.wv.bias, &f, None).unwrap();
        for i in 0..4 {
            let expect = f.data()[i] + 0.7 * v.data()[i];
            assert!((out.data()[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn nl_matches_straight_line_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = AggregatorConfig::nl(8, 4);
        let p = perturbed(&cfg, 9);
        let a = p.attention.as_ref().unwrap();
        let f = random(8, 4, &mut rng);
        let (out, _) = nl_forward(&f, &p, None).unwrap();

        let add_bias = |t: Tensor, b: &[f64]| {
            let (r, c) = t.dims2().unwrap();
            let d = (0..r * c).map(|i| t.data()[i] + b[i / c]).collect();
            Tensor::matrix(r, c, d).unwrap()
        };
        let q = add_bias(matmul(&a.wq.weights.to_dense(), &f, None).unwrap(), &a.wq.bias);
        let k = add_bias(matmul(&a.wk.weights.to_dense(), &f, None).unwrap(), &a.wk.bias);
        let v = add_bias(matmul(&a.wv.weights.to_dense(), &f, None).unwrap(), &a.wv.bias);
        let attn = softmax_cols(&matmul(&q.transpose().unwrap(), &k, None).unwrap()).unwrap();
        let fo = matmul(&v, &attn, None).unwrap();
        for i in 0..8 {
            let row: f64 = (0..4).map(|j| a.s * fo.at2(i, j) + f.at2(i, j)).sum::<f64>() / 4.0;
            assert!((out.data()[i] - row).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_kind_and_rows_rejected() {
        let p = init_params(&AggregatorConfig::nl(8, 4), 0).unwrap();
        let f = Tensor::zeros(&[8, 3]);
        assert!(matches!(hgnl_forward(&f, &p, None), Err(Error::Config(_))));
        assert!(matches!(nl_forward(&Tensor::zeros(&[6, 3]), &p, None), Err(Error::Dimension(_))));
    }

    #[test]
    fn pooling_baselines() {
        let f = Tensor::from_rows(&[[1.0, 3.0], [4.0, 2.0]]);
        assert_eq!(avg_aggregate(&f).unwrap().data(), &[2.0, 3.0]);
        assert_eq!(max_aggregate(&f).unwrap().data(), &[3.0, 4.0]);
        let one = Tensor::from_rows(&[[1.5], [-2.0]]);
        assert_eq!(avg_aggregate(&one).unwrap().data(), one.data());
        assert_eq!(max_aggregate(&one).unwrap().data(), one.data());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = AggregatorConfig::hgnl(16, 8, 4, 2, false);
        let p = perturbed(&cfg, 1);
        let f = random(16, 5, &mut rng);
        let (_, st) = forward(&p, &f, None).unwrap();
        let g = aggregate_backward(&p, &st, &Tensor::zeros(&[16])).unwrap();
        assert!(g.input.data().iter().all(|&x| x == 0.0));
        for (_, b) in g.params.unwrap().blocks() {
            assert!(b.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn mismatched_state_is_contract_violation() {
        let nl = init_params(&AggregatorConfig::nl(8, 4), 0).unwrap();
        let avg = init_params(&AggregatorConfig::avg(8), 0).unwrap();
        let f = Tensor::zeros(&[8, 3]);
        let (_, st) = forward(&avg, &f, None).unwrap();
        let up = Tensor::zeros(&[8]);
        assert!(matches!(aggregate_backward(&nl, &st, &up), Err(Error::Contract(_))));
        let (_, st) = forward(&nl, &f, None).unwrap();
        assert!(matches!(
            aggregate_backward(&nl, &st, &Tensor::zeros(&[4])),
            Err(Error::Contract(_))
        ));
    }
}
