use crate::error::Result;
use crate::linalg;
use crate::matrix::{Matrix, Scalar};
use crate::memtrack::Tracked;

use super::check_qkv;

/// Standard attention `softmax(QKᵀ/√d)·V`.
pub fn softmax_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
) -> Result<Matrix<T>> {
    let scale = T::one() / T::lit(q.cols() as f64).sqrt();
    softmax_attention_scaled(q, k, v, scale)
}

/// `softmax(scale · QKᵀ)·V` with the usual max-subtraction for stability.
pub fn softmax_attention_scaled<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    scale: T,
) -> Result<Matrix<T>> {
    check_qkv(q, k, v)?;
    let mut scores = Tracked::new(linalg::matmul_nt(q, k)?);
    for i in 0..scores.rows() {
        let row = scores.row_mut(i);
        let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x * scale));
        let mut total = T::zero();
        for x in row.iter_mut() {
            *x = (*x * scale - max).exp();
            total = total + *x;
        }
        row.iter_mut().for_each(|x| *x = *x / total);
    }
    linalg::matmul(&scores, v)
}
