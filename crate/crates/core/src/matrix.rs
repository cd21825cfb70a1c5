//! Dense row-major matrix carrier.
//!
//! Every tensor in the attention pipeline (queries, keys, values, the
//! `A_mod` aggregate, the augmented outputs) is a [`Matrix`]. Storage is a
//! single `Vec` in row-major order; element `(i, j)` lives at `i * cols + j`.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Floating-point scalar usable by every kernel.
///
/// Implemented for `f64` (the default) and `f32`, which exists to exercise
/// the reduced-precision overflow behaviour of the unnormalized pipeline.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + std::str::FromStr
    + Send
    + Sync
    + 'static
{
    /// Significant decimal digits needed for a lossless text round trip.
    const ROUND_TRIP_DIGITS: usize;
    const BITS: u32;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const ROUND_TRIP_DIGITS: usize = 17;
    const BITS: u32 = 64;
}

impl Scalar for f32 {
    const ROUND_TRIP_DIGITS: usize = 9;
    const BITS: u32 = 32;
}

#[derive(Clone, PartialEq)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(Error::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Zero-filled matrix. Panics on an empty shape; use [`Matrix::try_zeros`]
    /// when the shape comes from untrusted input.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::try_zeros(rows, cols).expect("valid non-empty shape")
    }

    /// Zero-filled matrix whose allocation failure is reported instead of
    /// aborting.
    pub fn try_zeros(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        let entries = rows.checked_mul(cols).ok_or(Error::Allocation {
            entries: usize::MAX,
        })?;
        let mut data = Vec::new();
        data.try_reserve_exact(entries)
            .map_err(|_| Error::Allocation { entries })?;
        data.resize(entries, T::zero());
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix from nested rows, e.g. `Matrix::from_rows(&[[1.0, 2.0]])`.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let c = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * c);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != c {
                return Err(Error::DimensionMismatch {
                    op: "from_rows",
                    left: (0, c),
                    right: (i, r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(n, c, data)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Number of scalar entries.
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false; kept for the `len`/`is_empty` convention.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    /// Selects a contiguous block of columns `[start, start + width)`.
    pub fn column_block(&self, start: usize, width: usize) -> Result<Self> {
        if width == 0 || start + width > self.cols {
            return Err(Error::InvalidArgument(format!(
                "column block {start}..{} out of range for {} columns",
                start + width,
                self.cols
            )));
        }
        let mut data = Vec::with_capacity(self.rows * width);
        for r in self.row_iter() {
            data.extend_from_slice(&r[start..start + width]);
        }
        Self::new(self.rows, width, data)
    }

    /// Writes `block` into columns `[start, start + block.cols())`.
    pub fn set_column_block(&mut self, start: usize, block: &Self) -> Result<()> {
        if block.rows != self.rows || start + block.cols > self.cols {
            return Err(Error::DimensionMismatch {
                op: "set_column_block",
                left: self.shape(),
                right: block.shape(),
            });
        }
        for i in 0..self.rows {
            let w = block.cols;
            self.row_mut(i)[start..start + w].copy_from_slice(block.row(i));
        }
        Ok(())
    }

    /// Reorders rows so that row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.rows {
            return Err(Error::InvalidArgument(format!(
                "permutation of length {} for {} rows",
                perm.len(),
                self.rows
            )));
        }
        let mut data = Vec::with_capacity(self.len());
        for &p in perm {
            if p >= self.rows {
                return Err(Error::InvalidArgument(format!(
                    "row index {p} out of range"
                )));
            }
            data.extend_from_slice(self.row(p));
        }
        Self::new(self.rows, self.cols, data)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| {
            if x.abs() > acc || x.is_nan() {
                x.abs()
            } else {
                acc
            }
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Converts to another precision.
    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|&x| U::from_f64(x.as_f64()).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    /// Frobenius norm of the matrix viewed as one flat vector.
    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    /// Largest entrywise absolute difference, or an error on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op: "max_abs_diff",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs())))
    }
}

impl<T: Scalar> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in self.row_iter().take(8) {
            writeln!(f, "  {r:?}")?;
        }
        if self.rows > 8 {
            writeln!(f, "  ... {} more rows", self.rows - 8)?;
        }
        write!(f, "]")
    }
}

impl<T: Scalar + Serialize> Serialize for Matrix<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Matrix", 3)?;
        st.serialize_field("rows", &self.rows)?;
        st.serialize_field("cols", &self.cols)?;
        st.serialize_field("data", &self.data)?;
        st.end()
    }
}

impl<'de, T: Scalar + DeserializeOwned> Deserialize<'de> for Matrix<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(bound = "U: DeserializeOwned")]
        struct Raw<U> {
            rows: usize,
            cols: usize,
            data: Vec<U>,
        }
        let raw = Raw::<T>::deserialize(d)?;
        Matrix::new(raw.rows, raw.cols, raw.data).map_err(serde::de::Error::custom)
    }
}
