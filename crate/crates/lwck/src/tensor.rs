//! Dense tensors, matrices, and the multilinear primitives the decomposition
//! routines are built on: mode-n unfolding, Khatri-Rao products, and the
//! spatial reshape that turns a D×D×S×T kernel into a 3rd-order tensor.
//!
//! All numeric work is done in `f64`. Tensors are immutable after
//! construction; every operation returns a new value, so sharing across
//! threads is safe.

use thiserror::Error;

/// Errors from tensor construction and the multilinear primitives.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {len} does not match dims {dims:?} (expected {expected})")]
    ShapeDataMismatch {
        dims: Vec<usize>,
        expected: usize,
        len: usize,
    },
    #[error("dims must be non-empty with every extent >= 1, got {dims:?}")]
    InvalidDims { dims: Vec<usize> },
    #[error("mode {mode} out of range for order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("column counts differ: {left} vs {right}")]
    ColumnCountMismatch { left: usize, right: usize },
    #[error("expected a 4th-order kernel with square spatial dims, got {dims:?}")]
    NotSpatialKernel { dims: Vec<usize> },
    #[error("reference tensor has zero Frobenius norm")]
    ZeroReference,
}

/// N-dimensional dense array, row-major, `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(TensorError::InvalidDims { dims });
        }
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(TensorError::ShapeDataMismatch {
                dims,
                expected,
                len: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self, TensorError> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(TensorError::InvalidDims { dims });
        }
        let len = dims.iter().product();
        Ok(Self {
            dims,
            data: vec![0.0; len],
        })
    }

    /// Build entrywise from a multi-index function.
    pub fn from_fn(
        dims: Vec<usize>,
        mut f: impl FnMut(&[usize]) -> f64,
    ) -> Result<Self, TensorError> {
        let mut t = Self::zeros(dims)?;
        let mut idx = vec![0usize; t.order()];
        for flat in 0..t.data.len() {
            t.data[flat] = f(&idx);
            increment_index(&mut idx, &t.dims);
        }
        Ok(t)
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.dims.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat row-major offset of a multi-index.
    #[inline]
    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut flat = 0;
        for (i, &d) in idx.iter().zip(&self.dims) {
            debug_assert!(*i < d);
            flat = flat * d + i;
        }
        flat
    }

    #[inline]
    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if rows == 0 || cols == 0 {
            return Err(TensorError::InvalidDims {
                dims: vec![rows, cols],
            });
        }
        if data.len() != rows * cols {
            return Err(TensorError::ShapeDataMismatch {
                dims: vec![rows, cols],
                expected: rows * cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[row * self.cols + col] = value;
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, TensorError> {
        if self.cols != other.rows {
            return Err(TensorError::DimMismatch {
                left: vec![self.rows, self.cols],
                right: vec![other.rows, other.cols],
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * out.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, col)).collect()
    }

    pub fn column_norm(&self, col: usize) -> f64 {
        (0..self.rows)
            .map(|i| self.get(i, col).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_column(&mut self, col: usize, factor: f64) {
        for i in 0..self.rows {
            let v = self.get(i, col);
            self.set(i, col, v * factor);
        }
    }

    /// Gram matrix `self^T * self` (cols × cols).
    pub fn gram(&self) -> Self {
        let r = self.cols;
        let mut g = Self::zeros(r, r);
        for a in 0..r {
            for b in a..r {
                let mut s = 0.0;
                for i in 0..self.rows {
                    s += self.get(i, a) * self.get(i, b);
                }
                g.set(a, b, s);
                g.set(b, a, s);
            }
        }
        g
    }
}

#[inline]
fn increment_index(idx: &mut [usize], dims: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < dims[k] {
            return;
        }
        idx[k] = 0;
    }
}

/// Mode-n unfolding: rows indexed by mode `mode`, columns by the remaining
/// modes in ascending order, flattened row-major (last remaining mode varies
/// fastest). `refold` is the exact inverse.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<DenseMatrix, TensorError> {
    let order = t.order();
    if mode >= order {
        return Err(TensorError::ModeOutOfRange { mode, order });
    }
    let rows = t.dims()[mode];
    let cols = t.len() / rows;
    let mut m = DenseMatrix::zeros(rows, cols);
    let mut idx = vec![0usize; order];
    for flat in 0..t.len() {
        let mut col = 0;
        for k in 0..order {
            if k != mode {
                col = col * t.dims()[k] + idx[k];
            }
        }
        m.set(idx[mode], col, t.data()[flat]);
        increment_index(&mut idx, t.dims());
    }
    Ok(m)
}

/// Inverse of [`unfold`]: rebuild the tensor with dims `dims` from its mode-n
/// unfolding.
pub fn refold(m: &DenseMatrix, mode: usize, dims: &[usize]) -> Result<DenseTensor, TensorError> {
    let order = dims.len();
    if mode >= order {
        return Err(TensorError::ModeOutOfRange { mode, order });
    }
    let total: usize = dims.iter().product();
    if m.rows() != dims[mode] || m.rows() * m.cols() != total {
        return Err(TensorError::DimMismatch {
            left: vec![m.rows(), m.cols()],
            right: dims.to_vec(),
        });
    }
    let mut t = DenseTensor::zeros(dims.to_vec())?;
    let mut idx = vec![0usize; order];
    for flat in 0..total {
        let mut col = 0;
        for k in 0..order {
            if k != mode {
                col = col * dims[k] + idx[k];
            }
        }
        t.data_mut()[flat] = m.get(idx[mode], col);
        increment_index(&mut idx, dims);
    }
    Ok(t)
}

/// Column-wise Kronecker product. For `a` (I×R) and `b` (J×R), the result is
/// (I·J)×R with entry (i·J + j, r) = a(i,r)·b(j,r).
pub fn khatri_rao(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix, TensorError> {
    if a.cols() != b.cols() {
        return Err(TensorError::ColumnCountMismatch {
            left: a.cols(),
            right: b.cols(),
        });
    }
    let mut out = DenseMatrix::zeros(a.rows() * b.rows(), a.cols());
    for r in 0..a.cols() {
        for i in 0..a.rows() {
            let av = a.get(i, r);
            for j in 0..b.rows() {
                out.set(i * b.rows() + j, r, av * b.get(j, r));
            }
        }
    }
    Ok(out)
}

/// Reshape a D×D×S×T kernel into the 3rd-order D²×S×T tensor used for CP
/// decomposition: entry (j·D + i, s, t) = k(j, i, s, t). Bijective; inverse
/// is [`unshape_kernel`].
pub fn reshape_kernel(k: &DenseTensor) -> Result<DenseTensor, TensorError> {
    let d = k.dims();
    if d.len() != 4 || d[0] != d[1] {
        return Err(TensorError::NotSpatialKernel { dims: d.to_vec() });
    }
    // Row-major layout makes the flatten of the two leading modes a no-op.
    DenseTensor::new(vec![d[0] * d[1], d[2], d[3]], k.data().to_vec())
}

/// Inverse of [`reshape_kernel`]: D²×S×T back to D×D×S×T.
pub fn unshape_kernel(t: &DenseTensor, d: usize) -> Result<DenseTensor, TensorError> {
    let dims = t.dims();
    if dims.len() != 3 || dims[0] != d * d {
        return Err(TensorError::NotSpatialKernel {
            dims: dims.to_vec(),
        });
    }
    DenseTensor::new(vec![d, d, dims[1], dims[2]], t.data().to_vec())
}

/// Relative Frobenius error ‖x − y‖_F / ‖x‖_F.
pub fn relative_error(x: &DenseTensor, y: &DenseTensor) -> Result<f64, TensorError> {
    if x.dims() != y.dims() {
        return Err(TensorError::DimMismatch {
            left: x.dims().to_vec(),
            right: y.dims().to_vec(),
        });
    }
    let denom = x.frobenius_norm();
    if denom == 0.0 {
        return Err(TensorError::ZeroReference);
    }
    let diff = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / denom)
}
