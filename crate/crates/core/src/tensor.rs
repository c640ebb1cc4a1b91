//! Dense row-major tensors and the raw kernels behind every graph op.

use crate::error::{Error, Result};
use crate::types::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Input(format!("zero-sized dimension in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a tensor from `f64` values, converting to the element type.
    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Input("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_f64(&[m, n], &flat)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Row/column of a rank-2 tensor.
    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.shape[1] + j]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::dim(op, &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(Error::Contract(format!("{op} expects a rank-2 tensor, got {:?}", self.shape))),
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.matrix_dims("matmul")?;
        let (k2, n) = other.matrix_dims("matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_acc(&self.data, &other.data, m, k, n, &mut out);
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = self.matrix_dims("transpose")?;
        Ok(Self {
            shape: vec![n, m],
            data: transpose_raw(&self.data, m, n),
        })
    }

    fn axis_split(&self, axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
        if axis >= self.shape.len() {
            return Err(Error::Contract(format!(
                "{op}: axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        Ok(axis_layout(&self.shape, axis))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        let (outer, len, inner) = self.axis_split(axis, "softmax")?;
        let mut out = self.data.clone();
        for o in 0..outer {
            for k in 0..inner {
                let idx = |i: usize| (o * len + i) * inner + k;
                let mut max = T::neg_infinity();
                for i in 0..len {
                    max = max.max(self.data[idx(i)]);
                }
                let mut total = T::zero();
                for i in 0..len {
                    let e = (self.data[idx(i)] - max).exp();
                    out[idx(i)] = e;
                    total = total + e;
                }
                for i in 0..len {
                    out[idx(i)] = out[idx(i)] / total;
                }
            }
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: out,
        })
    }

    /// Arithmetic mean along `axis`; the axis is removed from the shape
    /// (a rank-1 input yields shape `[1]`).
    pub fn mean_axis(&self, axis: usize) -> Result<Self> {
        let (outer, len, inner) = self.axis_split(axis, "mean_pool")?;
        let scale = T::one() / T::from_f64(len as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..len {
                let src = &self.data[(o * len + i) * inner..(o * len + i + 1) * inner];
                for (acc, &x) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc = *acc + x;
                }
            }
        }
        for x in &mut out {
            *x = *x * scale;
        }
        Ok(Self {
            shape: reduced_shape(&self.shape, axis),
            data: out,
        })
    }
}

/// `(outer, len, inner)` strides for iterating along one axis.
pub(crate) fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

const TILE_ROWS: usize = 4;
const TILE_COLS: usize = 8;

/// `out += A·B` with A `m×k`, B `k×n`. Each output element accumulates in
/// ascending `l`, matching a naive triple loop bit for bit. Full 4×8 output
/// tiles are held in locals across the whole reduction.
pub(crate) fn matmul_acc<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    let row_end = m - m % TILE_ROWS;
    let col_end = n - n % TILE_COLS;
    for i0 in (0..row_end).step_by(TILE_ROWS) {
        let a_rows: [&[T]; TILE_ROWS] = std::array::from_fn(|r| &a[(i0 + r) * k..(i0 + r + 1) * k]);
        for j0 in (0..col_end).step_by(TILE_COLS) {
            let mut acc = [[T::zero(); TILE_COLS]; TILE_ROWS];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&out[(i0 + r) * n + j0..(i0 + r) * n + j0 + TILE_COLS]);
            }
            for (l, brow) in b[j0..].chunks(n).take(k).enumerate() {
                let bl: &[T; TILE_COLS] = brow[..TILE_COLS].try_into().unwrap();
                for (row, a_row) in acc.iter_mut().zip(&a_rows) {
                    let s = a_row[l];
                    for c in 0..TILE_COLS {
                        row[c] = row[c] + s * bl[c];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                out[(i0 + r) * n + j0..(i0 + r) * n + j0 + TILE_COLS].copy_from_slice(row);
            }
        }
    }
    // Ragged edges: remaining columns of the tiled rows, then leftover rows.
    if col_end < n {
        for i in 0..row_end {
            matmul_row(a, b, i, k, n, col_end, out);
        }
    }
    for i in row_end..m {
        matmul_row(a, b, i, k, n, 0, out);
    }
}

fn matmul_row<T: Real>(a: &[T], b: &[T], i: usize, k: usize, n: usize, from: usize, out: &mut [T]) {
    let row = &mut out[i * n + from..(i + 1) * n];
    for l in 0..k {
        let s = a[i * k + l];
        let brow = &b[l * n + from..(l + 1) * n];
        for (o, &bv) in row.iter_mut().zip(brow) {
            *o = *o + s * bv;
        }
    }
}

/// `out += A·Bᵀ` with A `m×n`, B `k×n`; out is `m×k`. B is transposed once
/// so the inner loop runs over contiguous output rows.
pub(crate) fn matmul_nt_acc<T: Real>(a: &[T], b: &[T], m: usize, n: usize, k: usize, out: &mut [T]) {
    let bt = transpose_raw(b, k, n);
    matmul_acc(a, &bt, m, n, k, out);
}

/// `out += Aᵀ·B` with A `m×k`, B `m×n`; out is `k×n`.
pub(crate) fn matmul_tn_acc<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    let at = transpose_raw(a, m, k);
    matmul_acc(&at, b, k, m, n, out);
}

pub(crate) fn transpose_raw<T: Copy + Default>(data: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::default(); m * n];
    for (i, row) in data.chunks_exact(n.max(1)).take(m).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[j * m + i] = v;
        }
    }
    out
}
