//! Dense row-major `f32` matrices.

use crate::error::{Error, Result};

/// An N×D dense matrix of finite `f32` feature vectors, stored row-major.
///
/// Both dimensions are at least one and every value is finite; constructors
/// enforce this so downstream code never sees NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorMatrix {
    n_rows: usize,
    n_dims: usize,
    values: Vec<f32>,
}

impl VectorMatrix {
    pub fn new(n_rows: usize, n_dims: usize, values: Vec<f32>) -> Result<Self> {
        if n_rows == 0 || n_dims == 0 {
            return Err(Error::Shape(format!(
                "matrix must be at least 1x1, got {n_rows}x{n_dims}"
            )));
        }
        if values.len() != n_rows * n_dims {
            return Err(Error::Shape(format!(
                "{} values cannot form a {n_rows}x{n_dims} matrix",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / n_dims,
                col: pos % n_dims,
            });
        }
        Ok(Self {
            n_rows,
            n_dims,
            values,
        })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let n_dims = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * n_dims);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n_dims {
                return Err(Error::RecordDimension {
                    record: i,
                    expected: n_dims,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), n_dims, values)
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.n_dims..(i + 1) * self.n_dims]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.n_dims)
    }

    /// Copies rows `start..end` into a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_rows {
            return Err(Error::Shape(format!(
                "row range {start}..{end} invalid for {} rows",
                self.n_rows
            )));
        }
        Ok(Self {
            n_rows: end - start,
            n_dims: self.n_dims,
            values: self.values[start * self.n_dims..end * self.n_dims].to_vec(),
        })
    }

    /// Copies the column block `start..end` of every row into a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_dims {
            return Err(Error::Shape(format!(
                "column range {start}..{end} invalid for {} columns",
                self.n_dims
            )));
        }
        let width = end - start;
        let mut values = Vec::with_capacity(self.n_rows * width);
        for row in self.rows() {
            values.extend_from_slice(&row[start..end]);
        }
        Ok(Self {
            n_rows: self.n_rows,
            n_dims: width,
            values,
        })
    }

    /// Stacks matrices vertically. All parts must share the column count.
    pub fn vstack(parts: &[&VectorMatrix]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero matrices".into()))?;
        let n_dims = first.n_dims;
        let mut values = Vec::with_capacity(parts.iter().map(|p| p.values.len()).sum());
        for (i, part) in parts.iter().enumerate() {
            if part.n_dims != n_dims {
                return Err(Error::Shape(format!(
                    "part {i} has {} columns, expected {n_dims}",
                    part.n_dims
                )));
            }
            values.extend_from_slice(&part.values);
        }
        Ok(Self {
            n_rows: values.len() / n_dims,
            n_dims,
            values,
        })
    }

    /// Builds a matrix from values already known to be finite and well-shaped.
    pub(crate) fn from_parts_unchecked(n_rows: usize, n_dims: usize, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), n_rows * n_dims);
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self {
            n_rows,
            n_dims,
            values,
        }
    }
}

/// Squared L2 distance with a 64-bit accumulator.
#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}
