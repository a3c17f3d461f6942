use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Result, UalError};

/// Contiguous `f64` vector. Arithmetic between vectors requires equal lengths.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(data: Vec<f64>) -> Self {
        DenseVector(data)
    }

    pub fn zeros(len: usize) -> Self {
        DenseVector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        DenseVector(vec![value; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    fn check_len(&self, other: &DenseVector, context: &str) -> Result<()> {
        if self.len() != other.len() {
            return Err(UalError::dim(context, self.len(), other.len()));
        }
        Ok(())
    }

    pub fn add(&self, other: &DenseVector) -> Result<DenseVector> {
        self.check_len(other, "vector add")?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &DenseVector) -> Result<DenseVector> {
        self.check_len(other, "vector sub")?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a - b).collect())
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, other: &DenseVector) -> Result<DenseVector> {
        self.check_len(other, "hadamard product")?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a * b).collect())
    }

    pub fn dot(&self, other: &DenseVector) -> Result<f64> {
        self.check_len(other, "dot product")?;
        Ok(dot(self, other))
    }

    pub fn scale(&self, factor: f64) -> DenseVector {
        self.iter().map(|v| v * factor).collect()
    }

    /// `self += factor * other`
    pub fn axpy(&mut self, factor: f64, other: &DenseVector) -> Result<()> {
        self.check_len(other, "axpy")?;
        for (a, b) in self.0.iter_mut().zip(other.iter()) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn l1_distance(&self, other: &DenseVector) -> Result<f64> {
        self.check_len(other, "l1 distance")?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| (a - b).abs()).sum())
    }

    pub fn euclidean_distance(&self, other: &DenseVector) -> Result<f64> {
        self.check_len(other, "euclidean distance")?;
        Ok(self
            .iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn max_abs_diff(&self, other: &DenseVector) -> Result<f64> {
        self.check_len(other, "max abs diff")?;
        Ok(self
            .iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.iter().sum()
    }

    /// Arithmetic mean of equally sized vectors.
    pub fn mean_of(vectors: &[DenseVector]) -> Result<DenseVector> {
        let first = vectors
            .first()
            .ok_or_else(|| UalError::InvalidArgument("mean of an empty vector list".into()))?;
        let mut acc = DenseVector::zeros(first.len());
        for v in vectors {
            acc.axpy(1.0, v)?;
        }
        let inv = 1.0 / vectors.len() as f64;
        Ok(acc.scale(inv))
    }
}

impl Deref for DenseVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for DenseVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        DenseVector(v)
    }
}

impl FromIterator<f64> for DenseVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        DenseVector(iter.into_iter().collect())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(UalError::dim("matrix storage", rows * cols, data.len()));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(UalError::dim("matrix row", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// `W x`
    pub fn matvec(&self, x: &[f64]) -> Result<DenseVector> {
        if x.len() != self.cols {
            return Err(UalError::dim("matrix-vector product", self.cols, x.len()));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `Wᵀ y`
    pub fn matvec_transposed(&self, y: &[f64]) -> Result<DenseVector> {
        if y.len() != self.rows {
            return Err(UalError::dim(
                "transposed matrix-vector product",
                self.rows,
                y.len(),
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += yr * w;
            }
        }
        Ok(DenseVector::new(out))
    }

    /// `self += factor * u vᵀ`
    pub fn add_outer(&mut self, factor: f64, u: &[f64], v: &[f64]) -> Result<()> {
        if u.len() != self.rows {
            return Err(UalError::dim("outer product rows", self.rows, u.len()));
        }
        if v.len() != self.cols {
            return Err(UalError::dim("outer product cols", self.cols, v.len()));
        }
        for (r, &ur) in u.iter().enumerate() {
            let a = factor * ur;
            if a == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, vc) in row.iter_mut().zip(v) {
                *w += a * vc;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
