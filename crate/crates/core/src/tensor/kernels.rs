use serde::{Deserialize, Serialize};

use super::{OpCounter, Tensor};
use crate::error::{Error, Result};

/// `a · b` for `a: p×q`, `b: q×r`.
///
/// Each output entry is accumulated left to right starting from the first
/// product, i.e. `q` multiplies and `q - 1` adds.
pub fn matmul(a: &Tensor, b: &Tensor, mut counter: Option<&mut OpCounter>) -> Result<Tensor> {
    let (p, q) = a.dims2()?;
    let (q2, r) = b.dims2()?;
    if q != q2 {
        return Err(Error::dim(format!(
            "matmul: inner dimensions differ, {:?} · {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; p * r];
    matmul_into(a.data(), b.data(), &mut out, p, q, r);
    OpCounter::tally(&mut counter, (p * r * q) as u64, (p * r * (q - 1)) as u64);
    Tensor::matrix(p, r, out)
}

/// Row-major `out = a · b` over raw slices.
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let a_row = &a[i * q..(i + 1) * q];
        for j in 0..r {
            let mut acc = a_row[0] * b[j];
            for (k, &aik) in a_row.iter().enumerate().skip(1) {
                acc += aik * b[k * r + j];
            }
            out[i * r + j] = acc;
        }
    }
}

/// Weights of a 1×1 grouped convolution: `groups` row-major blocks of
/// `out_per_group × in_per_group`, or a single block reused by every group
/// when `shared` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedWeights {
    pub groups: usize,
    pub shared: bool,
    pub out_per_group: usize,
    pub in_per_group: usize,
    pub data: Vec<f64>,
}

impl GroupedWeights {
    pub fn new(
        groups: usize,
        shared: bool,
        out_per_group: usize,
        in_per_group: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if groups == 0 || out_per_group == 0 || in_per_group == 0 {
            return Err(Error::config("grouped weights need nonzero groups and block sizes"));
        }
        let w = Self { groups, shared, out_per_group, in_per_group, data };
        if w.data.len() != w.stored_blocks() * w.block_len() {
            return Err(Error::dim(format!(
                "grouped weights: expected {} values, got {}",
                w.stored_blocks() * w.block_len(),
                w.data.len()
            )));
        }
        Ok(w)
    }

    pub fn zeros(groups: usize, shared: bool, out_per_group: usize, in_per_group: usize) -> Self {
        let blocks = if shared { 1 } else { groups };
        Self::new(
            groups,
            shared,
            out_per_group,
            in_per_group,
            vec![0.0; blocks * out_per_group * in_per_group],
        )
        .expect("zeros: invalid grouping")
    }

    /// Builds from `c_out × c_in` totals; both must be divisible by `groups`.
    pub fn for_channels(c_out: usize, c_in: usize, groups: usize, shared: bool) -> Result<Self> {
        if groups == 0 || !c_out.is_multiple_of(groups) || !c_in.is_multiple_of(groups) {
            return Err(Error::config(format!(
                "channels {c_out}x{c_in} not divisible into {groups} groups"
            )));
        }
        Ok(Self::zeros(groups, shared, c_out / groups, c_in / groups))
    }

    pub fn c_out(&self) -> usize {
        self.groups * self.out_per_group
    }

    pub fn c_in(&self) -> usize {
        self.groups * self.in_per_group
    }

    pub fn stored_blocks(&self) -> usize {
        if self.shared {
            1
        } else {
            self.groups
        }
    }

    pub fn block_len(&self) -> usize {
        self.out_per_group * self.in_per_group
    }

    /// Bias length for this layer: `c_out`, or `c_out / groups` when the
    /// block (and with it the bias) is shared.
    pub fn bias_len(&self) -> usize {
        self.stored_blocks() * self.out_per_group
    }

    /// Bias entry applied to output row `o` of group `g`.
    pub(crate) fn bias_index(&self, g: usize, o: usize) -> usize {
        let b = if self.shared { 0 } else { g };
        b * self.out_per_group + o
    }

    /// Block applied to group `g`.
    pub fn block(&self, g: usize) -> &[f64] {
        let b = if self.shared { 0 } else { g };
        &self.data[b * self.block_len()..(b + 1) * self.block_len()]
    }

    /// Equivalent dense `c_out × c_in` block-diagonal matrix.
    pub fn to_dense(&self) -> Tensor {
        let (co, ci) = (self.c_out(), self.c_in());
        let mut dense = vec![0.0; co * ci];
        for g in 0..self.groups {
            let block = self.block(g);
            for o in 0..self.out_per_group {
                for c in 0..self.in_per_group {
                    let row = g * self.out_per_group + o;
                    let col = g * self.in_per_group + c;
                    dense[row * ci + col] = block[o * self.in_per_group + c];
                }
            }
        }
        Tensor::matrix(co, ci, dense).expect("dense shape")
    }
}

/// 1×1 grouped convolution over the frame axis: `f: c_in × n → c_out × n`.
///
/// Output row block `g` is `W_g · F_g + bias_g`; shared weights also share
/// the bias (see [`GroupedWeights::bias_len`]). Counting follows the
/// bias-inclusive convention: per output entry, `c_in/groups` multiplies and
/// `c_in/groups` adds (accumulation plus the bias add).
pub fn grouped_conv1x1(
    weights: &GroupedWeights,
    bias: &[f64],
    f: &Tensor,
    mut counter: Option<&mut OpCounter>,
) -> Result<Tensor> {
    let (c_in, n) = f.dims2()?;
    if c_in != weights.c_in() {
        return Err(Error::dim(format!(
            "grouped conv: input has {c_in} channels, weights expect {}",
            weights.c_in()
        )));
    }
    let c_out = weights.c_out();
    if bias.len() != weights.bias_len() {
        return Err(Error::dim(format!(
            "grouped conv: bias length {} != expected {}",
            bias.len(),
            weights.bias_len()
        )));
    }
    let (opg, ipg) = (weights.out_per_group, weights.in_per_group);
    let x = f.data();
    let mut out = vec![0.0; c_out * n];
    for g in 0..weights.groups {
        let block = weights.block(g);
        let x_g = &x[g * ipg * n..(g + 1) * ipg * n];
        let out_g = &mut out[g * opg * n..(g + 1) * opg * n];
        matmul_into(block, x_g, out_g, opg, ipg, n);
        for o in 0..opg {
            let b = bias[weights.bias_index(g, o)];
            for v in &mut out_g[o * n..(o + 1) * n] {
                *v += b;
            }
        }
    }
    let per_entry = ipg as u64;
    let entries = (c_out * n) as u64;
    OpCounter::tally(&mut counter, entries * per_entry, entries * per_entry);
    Tensor::matrix(c_out, n, out)
}

/// Grouped `Qᵀ K`: slice `g` is `Q_gᵀ K_g` over the `g`-th contiguous row
/// blocks. Returns `groups × n × n`.
pub fn gmm_qk(
    q: &Tensor,
    k: &Tensor,
    groups: usize,
    mut counter: Option<&mut OpCounter>,
) -> Result<Tensor> {
    let (rows, n) = q.dims2()?;
    q.check_same_shape(k, "gmm_qk")?;
    if groups == 0 || rows % groups != 0 {
        return Err(Error::config(format!("gmm_qk: {rows} rows not divisible into {groups} groups")));
    }
    let d = rows / groups;
    let (qd, kd) = (q.data(), k.data());
    let mut out = vec![0.0; groups * n * n];
    for g in 0..groups {
        let base = g * d;
        let slice = &mut out[g * n * n..(g + 1) * n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = qd[base * n + i] * kd[base * n + j];
                for c in 1..d {
                    acc += qd[(base + c) * n + i] * kd[(base + c) * n + j];
                }
                slice[i * n + j] = acc;
            }
        }
    }
    let nn = (n * n) as u64;
    OpCounter::tally(&mut counter, nn * rows as u64, nn * (rows - groups) as u64);
    Tensor::new(vec![groups, n, n], out)
}

/// Grouped `V A`: output row block `g` is `V_g · A_g` with `a: groups × n × n`.
pub fn gmm_va(v: &Tensor, a: &Tensor, mut counter: Option<&mut OpCounter>) -> Result<Tensor> {
    let (m, n) = v.dims2()?;
    let (groups, an, an2) = a.dims3()?;
    if an != n || an2 != n {
        return Err(Error::dim(format!(
            "gmm_va: values {:?} incompatible with attention {:?}",
            v.shape(),
            a.shape()
        )));
    }
    if m % groups != 0 {
        return Err(Error::dim(format!("gmm_va: {m} rows not divisible into {groups} slices")));
    }
    let d = m / groups;
    let mut out = vec![0.0; m * n];
    for g in 0..groups {
        matmul_into(
            &v.data()[g * d * n..(g + 1) * d * n],
            &a.data()[g * n * n..(g + 1) * n * n],
            &mut out[g * d * n..(g + 1) * d * n],
            d,
            n,
            n,
        );
    }
    OpCounter::tally(&mut counter, (m * n * n) as u64, (m * n * (n - 1)) as u64);
    Tensor::matrix(m, n, out)
}

/// Column-wise softmax of an `n × n` matrix, or of every slice of a
/// `g × n × n` tensor. Stabilised by subtracting each column's maximum.
pub fn softmax_cols(a: &Tensor) -> Result<Tensor> {
    let (slices, r, c) = match a.shape() {
        &[r, c] => (1, r, c),
        &[s, r, c] => (s, r, c),
        other => return Err(Error::dim(format!("softmax_cols: unsupported shape {other:?}"))),
    };
    let mut out = a.data().to_vec();
    for s in 0..slices {
        let m = &mut out[s * r * c..(s + 1) * r * c];
        for j in 0..c {
            let max = (0..r).map(|i| m[i * c + j]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for i in 0..r {
                let e = (m[i * c + j] - max).exp();
                m[i * c + j] = e;
                sum += e;
            }
            for i in 0..r {
                m[i * c + j] /= sum;
            }
        }
    }
    Tensor::new(a.shape().to_vec(), out)
}

pub fn relu(t: &Tensor) -> Tensor {
    t.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// `s · f_o + f`.
pub fn residual_scale(f_o: &Tensor, f: &Tensor, s: f64) -> Result<Tensor> {
    f_o.check_same_shape(f, "residual_scale")?;
    let data = f_o.data().iter().zip(f.data()).map(|(&o, &x)| s * o + x).collect();
    Tensor::new(f.shape().to_vec(), data)
}

/// Row-wise mean over the frame axis: `m × n → m`.
pub fn mean_over_frames(f: &Tensor) -> Result<Tensor> {
    let (m, n) = frames_dims(f)?;
    let data = f
        .data()
        .chunks_exact(n)
        .map(|row| row.iter().sum::<f64>() / n as f64)
        .collect::<Vec<_>>();
    debug_assert_eq!(data.len(), m);
    Tensor::vector(data)
}

/// Row-wise maximum over the frame axis: `m × n → m`.
pub fn max_over_frames(f: &Tensor) -> Result<Tensor> {
    let (_, n) = frames_dims(f)?;
    let data = f
        .data()
        .chunks_exact(n)
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Tensor::vector(data)
}

fn frames_dims(f: &Tensor) -> Result<(usize, usize)> {
    // Tensors cannot hold zero-sized dimensions, so an empty frame set
    // only arrives here through a rank-1 value.
    match f.shape() {
        &[m, n] => Ok((m, n)),
        other => Err(Error::EmptyInput(format!(
            "frame reduction needs an m×n matrix with n ≥ 1, got shape {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counted<T>(f: impl FnOnce(Option<&mut OpCounter>) -> T) -> (T, OpCounter) {
        let mut c = OpCounter::new();
        let out = f(Some(&mut c));
        (out, c)
    }

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::identity(2);
        assert_eq!(matmul(&i2, &i2, None).unwrap(), i2);
    }

    #[test]
    fn matmul_hand_values() {
        let a = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Tensor::from_rows(&[[1.0], [1.0]]);
        assert_eq!(matmul(&a, &b, None).unwrap(), Tensor::from_rows(&[[3.0], [7.0]]));
    }

    #[test]
    fn matmul_counts_2x2x2() {
        let a = Tensor::identity(2);
        let (_, c) = counted(|c| matmul(&a, &a, c).unwrap());
        assert_eq!((c.multiplies, c.additions), (8, 4));
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let a = Tensor::zeros(&[2, 3]);
        let err = matmul(&a, &a, None).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
        assert!(matches!(matmul(&a, &a, None), Err(Error::Dimension(_))));
    }

    #[test]
    fn grouped_conv_selection() {
        let w = GroupedWeights::new(2, false, 1, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let f = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]]);
        let out = grouped_conv1x1(&w, &[0.0, 0.0], &f, None).unwrap();
        assert_eq!(out, Tensor::from_rows(&[[1.0, 2.0], [7.0, 8.0]]));
    }

    #[test]
    fn grouped_conv_single_group_is_matmul_plus_bias() {
        let w = GroupedWeights::new(1, false, 2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]).unwrap();
        let f = Tensor::from_rows(&[[1.0, -2.0], [0.5, 3.0], [2.0, 1.0]]);
        let bias = [0.1, -0.2];
        let out = grouped_conv1x1(&w, &bias, &f, None).unwrap();
        let mm = matmul(&w.to_dense(), &f, None).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(out.at2(i, j), mm.at2(i, j) + bias[i]);
            }
        }
    }

    #[test]
    fn grouped_conv_shared_equals_duplicated() {
        let block = vec![0.3, -0.7, 1.1, 0.2];
        let shared = GroupedWeights::new(2, true, 2, 2, block.clone()).unwrap();
        let dup = GroupedWeights::new(2, false, 2, 2, [block.clone(), block].concat()).unwrap();
        let f = Tensor::from_rows(&[[1.0, 2.0], [3.0, -4.0], [0.5, 6.0], [-7.0, 8.0]]);
        assert_eq!(
            grouped_conv1x1(&shared, &[0.1, 0.2], &f, None).unwrap(),
            grouped_conv1x1(&dup, &[0.1, 0.2, 0.1, 0.2], &f, None).unwrap()
        );
    }

    #[test]
    fn grouped_conv_errors() {
        assert!(matches!(GroupedWeights::for_channels(3, 4, 2, false), Err(Error::Config(_))));
        let w = GroupedWeights::zeros(2, false, 1, 2);
        let f = Tensor::zeros(&[4, 3]);
        assert!(matches!(grouped_conv1x1(&w, &[0.0], &f, None), Err(Error::Dimension(_))));
    }

    #[test]
    fn gmm_qk_identity_and_scalars() {
        let i2 = Tensor::identity(2);
        let a = gmm_qk(&i2, &i2, 1, None).unwrap();
        assert_eq!(a.shape(), &[1, 2, 2]);
        assert_eq!(a.slice(0).unwrap(), i2);

        let q = Tensor::from_rows(&[[2.0], [3.0]]);
        let k = Tensor::from_rows(&[[5.0], [7.0]]);
        let a = gmm_qk(&q, &k, 2, None).unwrap();
        assert_eq!(a.data(), &[10.0, 21.0]);
    }

    #[test]
    fn gmm_qk_counts() {
        let q = Tensor::zeros(&[4, 3]);
        let (_, c) = counted(|c| gmm_qk(&q, &q, 2, c).unwrap());
        assert_eq!((c.multiplies, c.additions), (36, 18));
        assert_eq!(c.madds(), 54);
        assert!(matches!(gmm_qk(&q, &q, 3, None), Err(Error::Config(_))));
    }

    #[test]
    fn gmm_va_identity_attention() {
        let v = Tensor::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let eye = Tensor::stack(&[Tensor::identity(3), Tensor::identity(3)]).unwrap();
        assert_eq!(gmm_va(&v, &eye, None).unwrap(), v);
    }

    #[test]
    fn gmm_va_blockwise_hand_values() {
        let v = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]]);
        let a0 = Tensor::from_rows(&[[1.0, 2.0], [0.0, 1.0]]);
        let a1 = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let a = Tensor::stack(&[a0, a1]).unwrap();
        let out = gmm_va(&v, &a, None).unwrap();
        assert_eq!(out, Tensor::from_rows(&[[1.0, 4.0], [3.0, 10.0], [6.0, 5.0], [8.0, 7.0]]));
        let bad = Tensor::zeros(&[3, 2, 2]);
        assert!(matches!(gmm_va(&v, &bad, None), Err(Error::Dimension(_))));
    }

    #[test]
    fn softmax_closed_forms() {
        let z = softmax_cols(&Tensor::zeros(&[3, 3])).unwrap();
        assert!(z.data().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));

        let a = Tensor::from_rows(&[[0.0], [3f64.ln()]]);
        let s = softmax_cols(&a).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariant_per_column() {
        let a = Tensor::from_rows(&[[0.1, 2.0], [-0.4, 0.3], [1.2, -1.0]]);
        let mut shifted = a.clone();
        for i in 0..3 {
            shifted.data_mut()[i * 2 + 1] += 7.5;
        }
        let (x, y) = (softmax_cols(&a).unwrap(), softmax_cols(&shifted).unwrap());
        for (p, q) in x.data().iter().zip(y.data()) {
            assert!((p - q).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_cases() {
        let t = Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        let pos = Tensor::vector(vec![0.0, 1.0, 3.5]).unwrap();
        assert_eq!(relu(&pos), pos);
        assert_eq!(relu(&relu(&t)), relu(&t));
    }

    #[test]
    fn residual_cases() {
        let f = Tensor::from_rows(&[[1.0, -2.0], [3.5, 0.25]]);
        let fo = Tensor::from_rows(&[[9.0, 8.0], [7.0, 6.0]]);
        assert_eq!(residual_scale(&fo, &f, 0.0).unwrap(), f);
        assert_eq!(residual_scale(&Tensor::zeros(&[2, 2]), &f, 1.0).unwrap(), f);
        assert_eq!(residual_scale(&f, &f, 2.0).unwrap(), f.scale(3.0));
        assert!(residual_scale(&f, &Tensor::zeros(&[2, 3]), 1.0).is_err());
    }

    #[test]
    fn mean_cases() {
        let one = Tensor::from_rows(&[[1.5], [-2.0]]);
        assert_eq!(mean_over_frames(&one).unwrap().data(), &[1.5, -2.0]);
        let f = Tensor::from_rows(&[[1.0, 3.0], [2.0, 4.0]]);
        assert_eq!(mean_over_frames(&f).unwrap().data(), &[2.0, 3.0]);
        let c = Tensor::from_rows(&[[0.5, 0.5, 0.5], [-1.0, -1.0, -1.0]]);
        assert_eq!(mean_over_frames(&c).unwrap().data(), &[0.5, -1.0]);
        let v = Tensor::vector(vec![1.0]).unwrap();
        assert!(matches!(mean_over_frames(&v), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn max_cases() {
        let f = Tensor::from_rows(&[[1.0, 3.0], [4.0, 2.0]]);
        assert_eq!(max_over_frames(&f).unwrap().data(), &[3.0, 4.0]);
    }
}
