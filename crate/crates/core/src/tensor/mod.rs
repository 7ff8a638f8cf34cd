//! Dense row-major tensors of rank 1 to 3 and the kernels built on them.

mod adjoint;
mod kernels;

pub use adjoint::{
    gmm_qk_backward, gmm_va_backward, grouped_conv1x1_backward, matmul_backward,
    max_over_frames_backward, mean_over_frames_backward, relu_backward, residual_scale_backward,
    softmax_cols_backward, ConvGrads,
};
pub use kernels::{
    gmm_qk, gmm_va, grouped_conv1x1, matmul, max_over_frames, mean_over_frames, relu,
    residual_scale, softmax_cols, GroupedWeights,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact tally of scalar multiplies and adds executed by the instrumented
/// kernels ([`matmul`], [`grouped_conv1x1`], [`gmm_qk`], [`gmm_va`]).
///
/// Kernels take `Option<&mut OpCounter>`; passing `None` disables counting.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounter {
    pub multiplies: u64,
    pub additions: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Multiplies plus additions.
    pub fn madds(&self) -> u64 {
        self.multiplies + self.additions
    }

    pub(crate) fn tally(counter: &mut Option<&mut OpCounter>, multiplies: u64, additions: u64) {
        if let Some(c) = counter.as_deref_mut() {
            c.multiplies += multiplies;
            c.additions += additions;
        }
    }
}

impl std::ops::AddAssign for OpCounter {
    fn add_assign(&mut self, rhs: Self) {
        self.multiplies += rhs.multiplies;
        self.additions += rhs.additions;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::dim(format!("rank must be 1..=3, got shape {shape:?}")));
        }
        if shape.contains(&0) {
            return Err(Error::dim(format!("zero-sized dimension in shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; len]).expect("zeros: invalid shape")
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::matrix(rows.len(), cols, data).expect("from_rows: invalid shape")
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::dim(format!("expected a matrix, got shape {:?}", self.shape))),
        }
    }

    /// `(slices, rows, cols)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [s, r, c] => Ok((s, r, c)),
            _ => Err(Error::dim(format!("expected a rank-3 tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn at3(&self, s: usize, i: usize, j: usize) -> f64 {
        self.data[(s * self.shape[1] + i) * self.shape[2] + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|x| c * x)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::matrix(c, r, out)
    }

    /// Contiguous block of rows `[start, end)` of a matrix.
    pub fn rows(&self, start: usize, end: usize) -> Result<Self> {
        let (r, c) = self.dims2()?;
        if start >= end || end > r {
            return Err(Error::dim(format!("row range {start}..{end} out of 0..{r}")));
        }
        Self::matrix(end - start, c, self.data[start * c..end * c].to_vec())
    }

    /// Slice `s` of a rank-3 tensor as a matrix.
    pub fn slice(&self, s: usize) -> Result<Self> {
        let (count, r, c) = self.dims3()?;
        if s >= count {
            return Err(Error::dim(format!("slice {s} out of 0..{count}")));
        }
        Self::matrix(r, c, self.data[s * r * c..(s + 1) * r * c].to_vec())
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::EmptyInput("concat_rows".into()))?;
        let (_, c) = first.dims2()?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (pr, pc) = p.dims2()?;
            if pc != c {
                return Err(Error::dim(format!("concat_rows: {:?} vs {:?}", first.shape, p.shape)));
            }
            rows += pr;
            data.extend_from_slice(&p.data);
        }
        Self::matrix(rows, c, data)
    }

    /// Stacks equally shaped matrices into a rank-3 tensor.
    pub fn stack(parts: &[Tensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::EmptyInput("stack".into()))?;
        let (r, c) = first.dims2()?;
        let mut data = Vec::with_capacity(parts.len() * r * c);
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::dim(format!("stack: {:?} vs {:?}", first.shape, p.shape)));
            }
            data.extend_from_slice(&p.data);
        }
        Self::new(vec![parts.len(), r, c], data)
    }

    /// Columns of a matrix in the given order (repeats allowed).
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let (r, c) = self.dims2()?;
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(Error::dim(format!("column {bad} out of 0..{c}")));
        }
        let mut data = Vec::with_capacity(r * cols.len());
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            data.extend(cols.iter().map(|&j| row[j]));
        }
        Self::matrix(r, cols.len(), data)
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other, "add")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }

    #[test]
    fn transpose_and_select() {
        let t = Tensor::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(t.transpose().unwrap(), Tensor::from_rows(&[[1.0, 4.0], [2.0, 5.0], [3.0, 6.0]]));
        assert_eq!(
            t.select_columns(&[2, 0]).unwrap(),
            Tensor::from_rows(&[[3.0, 1.0], [6.0, 4.0]])
        );
        assert!(t.select_columns(&[3]).is_err());
    }

    #[test]
    fn rows_concat_roundtrip() {
        let t = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let parts = [t.rows(0, 1).unwrap(), t.rows(1, 3).unwrap()];
        assert_eq!(Tensor::concat_rows(&parts).unwrap(), t);
    }
}
