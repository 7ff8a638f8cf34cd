//! Vector-Jacobian products for every kernel in [`super::kernels`].
//!
//! Each function takes the forward inputs (or outputs, where cheaper) it
//! needs plus the upstream gradient, and rejects inconsistent shapes with
//! [`Error::Contract`].

use super::{GroupedWeights, Tensor};
use crate::error::{Error, Result};

fn expect_shape(t: &Tensor, shape: &[usize], what: &str) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::contract(format!(
            "{what}: expected shape {shape:?}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Returns `(∂a, ∂b)` for `c = a · b` given `∂c`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor)> {
    let (p, q) = a.dims2()?;
    let (q2, r) = b.dims2()?;
    if q != q2 {
        return Err(Error::contract("matmul_backward: saved operands do not chain"));
    }
    expect_shape(grad, &[p, r], "matmul_backward upstream")?;
    let (ad, bd, gd) = (a.data(), b.data(), grad.data());
    let mut ga = vec![0.0; p * q];
    let mut gb = vec![0.0; q * r];
    for i in 0..p {
        for j in 0..r {
            let g = gd[i * r + j];
            for k in 0..q {
                ga[i * q + k] += g * bd[k * r + j];
                gb[k * r + j] += ad[i * q + k] * g;
            }
        }
    }
    Ok((Tensor::matrix(p, q, ga)?, Tensor::matrix(q, r, gb)?))
}

/// Gradients of a grouped 1×1 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    /// Same layout as the forward weights; in shared mode the per-group
    /// contributions are summed into the single stored block (and bias).
    pub weights: GroupedWeights,
    pub bias: Vec<f64>,
    pub input: Tensor,
}

pub fn grouped_conv1x1_backward(
    weights: &GroupedWeights,
    f: &Tensor,
    grad: &Tensor,
) -> Result<ConvGrads> {
    let (c_in, n) = f.dims2()?;
    if c_in != weights.c_in() {
        return Err(Error::contract("grouped_conv1x1_backward: input does not match weights"));
    }
    let c_out = weights.c_out();
    expect_shape(grad, &[c_out, n], "grouped_conv1x1_backward upstream")?;
    let (opg, ipg) = (weights.out_per_group, weights.in_per_group);
    let (x, gd) = (f.data(), grad.data());

    let mut gw = GroupedWeights::zeros(weights.groups, weights.shared, opg, ipg);
    let block_len = gw.block_len();
    let mut gbias = vec![0.0; weights.bias_len()];
    let mut gx = vec![0.0; c_in * n];
    for g in 0..weights.groups {
        let block = weights.block(g);
        let stored = if weights.shared { 0 } else { g };
        let gblock = &mut gw.data[stored * block_len..(stored + 1) * block_len];
        for o in 0..opg {
            let row = g * opg + o;
            let g_row = &gd[row * n..(row + 1) * n];
            gbias[weights.bias_index(g, o)] += g_row.iter().sum::<f64>();
            for c in 0..ipg {
                let col = g * ipg + c;
                let x_row = &x[col * n..(col + 1) * n];
                gblock[o * ipg + c] += g_row.iter().zip(x_row).map(|(a, b)| a * b).sum::<f64>();
                let w = block[o * ipg + c];
                for (dst, &gv) in gx[col * n..(col + 1) * n].iter_mut().zip(g_row) {
                    *dst += w * gv;
                }
            }
        }
    }
    Ok(ConvGrads { weights: gw, bias: gbias, input: Tensor::matrix(c_in, n, gx)? })
}

/// Returns `(∂q, ∂k)` for `a = gmm_qk(q, k, groups)` given `∂a`.
pub fn gmm_qk_backward(
    q: &Tensor,
    k: &Tensor,
    groups: usize,
    grad: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (rows, n) = q.dims2()?;
    if q.shape() != k.shape() || groups == 0 || rows % groups != 0 {
        return Err(Error::contract("gmm_qk_backward: saved operands inconsistent"));
    }
    expect_shape(grad, &[groups, n, n], "gmm_qk_backward upstream")?;
    let d = rows / groups;
    let (qd, kd, gd) = (q.data(), k.data(), grad.data());
    let mut gq = vec![0.0; rows * n];
    let mut gk = vec![0.0; rows * n];
    for g in 0..groups {
        let ga = &gd[g * n * n..(g + 1) * n * n];
        for c in g * d..(g + 1) * d {
            for i in 0..n {
                for j in 0..n {
                    let gij = ga[i * n + j];
                    gq[c * n + i] += gij * kd[c * n + j];
                    gk[c * n + j] += gij * qd[c * n + i];
                }
            }
        }
    }
    Ok((Tensor::matrix(rows, n, gq)?, Tensor::matrix(rows, n, gk)?))
}

/// Returns `(∂v, ∂a)` for `out = gmm_va(v, a)` given `∂out`.
pub fn gmm_va_backward(v: &Tensor, a: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, n) = v.dims2()?;
    let (groups, an, an2) = a.dims3()?;
    if an != n || an2 != n || m % groups != 0 {
        return Err(Error::contract("gmm_va_backward: saved operands inconsistent"));
    }
    expect_shape(grad, &[m, n], "gmm_va_backward upstream")?;
    let d = m / groups;
    let (vd, ad, gd) = (v.data(), a.data(), grad.data());
    let mut gv = vec![0.0; m * n];
    let mut ga = vec![0.0; groups * n * n];
    for g in 0..groups {
        let a_g = &ad[g * n * n..(g + 1) * n * n];
        let ga_g = &mut ga[g * n * n..(g + 1) * n * n];
        for r in g * d..(g + 1) * d {
            for t in 0..n {
                for j in 0..n {
                    let gout = gd[r * n + j];
                    gv[r * n + t] += gout * a_g[t * n + j];
                    ga_g[t * n + j] += vd[r * n + t] * gout;
                }
            }
        }
    }
    Ok((Tensor::matrix(m, n, gv)?, Tensor::new(vec![groups, n, n], ga)?))
}

/// Input gradient of [`super::softmax_cols`] from its saved output.
pub fn softmax_cols_backward(output: &Tensor, grad: &Tensor) -> Result<Tensor> {
    if output.shape() != grad.shape() {
        return Err(Error::contract("softmax_cols_backward: output/upstream shapes differ"));
    }
    let (slices, r, c) = match output.shape() {
        &[r, c] => (1, r, c),
        &[s, r, c] => (s, r, c),
        other => return Err(Error::contract(format!("softmax_cols_backward: shape {other:?}"))),
    };
    let (y, g) = (output.data(), grad.data());
    let mut out = vec![0.0; y.len()];
    for s in 0..slices {
        let base = s * r * c;
        for j in 0..c {
            let dot: f64 = (0..r).map(|i| y[base + i * c + j] * g[base + i * c + j]).sum();
            for i in 0..r {
                let idx = base + i * c + j;
                out[idx] = y[idx] * (g[idx] - dot);
            }
        }
    }
    Tensor::new(output.shape().to_vec(), out)
}

/// Masks `grad` by positivity of the forward input.
pub fn relu_backward(input: &Tensor, grad: &Tensor) -> Result<Tensor> {
    if input.shape() != grad.shape() {
        return Err(Error::contract("relu_backward: input/upstream shapes differ"));
    }
    let data = input
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Returns `(∂f_o, ∂f, ∂s)` for `s · f_o + f`.
pub fn residual_scale_backward(f_o: &Tensor, s: f64, grad: &Tensor) -> Result<(Tensor, Tensor, f64)> {
    if f_o.shape() != grad.shape() {
        return Err(Error::contract("residual_scale_backward: shapes differ"));
    }
    let gs = f_o.data().iter().zip(grad.data()).map(|(a, b)| a * b).sum();
    Ok((grad.scale(s), grad.clone(), gs))
}

/// Spreads `grad / n` over every frame column.
pub fn mean_over_frames_backward(grad: &Tensor, n: usize) -> Result<Tensor> {
    if grad.rank() != 1 || n == 0 {
        return Err(Error::contract("mean_over_frames_backward: need a vector and n ≥ 1"));
    }
    let inv = 1.0 / n as f64;
    let data = grad.data().iter().flat_map(|&g| std::iter::repeat_n(g * inv, n)).collect();
    Tensor::matrix(grad.len(), n, data)
}

/// Routes each row's gradient to the first frame attaining the maximum.
pub fn max_over_frames_backward(input: &Tensor, grad: &Tensor) -> Result<Tensor> {
    let (m, n) = input.dims2()?;
    if grad.shape() != [m] {
        return Err(Error::contract("max_over_frames_backward: upstream length mismatch"));
    }
    let mut out = vec![0.0; m * n];
    for (i, row) in input.data().chunks_exact(n).enumerate() {
        let mut best = 0;
        for (j, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = j;
            }
        }
        out[i * n + best] = grad.data()[i];
    }
    Tensor::matrix(m, n, out)
}
