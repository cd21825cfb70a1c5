//! Matrix operations used by the attention kernels.
//!
//! All products accumulate in a fixed row-major order, so repeated calls on
//! the same inputs are bit-identical.

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Scalar};

fn mismatch(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::DimensionMismatch {
        op,
        left: a,
        right: b,
    }
}

/// Standard product `a · b`.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.rows() {
        return Err(mismatch("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::try_zeros(m, n)?;
    for i in 0..m {
        let a_row = a.row(i);
        let o_row = out.row_mut(i);
        for (p, &a_ip) in a_row.iter().enumerate().take(k) {
            if a_ip == T::zero() {
                continue;
            }
            for (o, &b_pj) in o_row.iter_mut().zip(b.row(p)) {
                *o = *o + a_ip * b_pj;
            }
        }
    }
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.rows() != b.rows() {
        return Err(mismatch("matmul_tn", a.shape(), b.shape()));
    }
    let mut out = Matrix::try_zeros(a.cols(), b.cols())?;
    for r in 0..a.rows() {
        let b_row = b.row(r);
        for (i, &a_ri) in a.row(r).iter().enumerate() {
            if a_ri == T::zero() {
                continue;
            }
            for (o, &b_rj) in out.row_mut(i).iter_mut().zip(b_row) {
                *o = *o + a_ri * b_rj;
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ`; row `i`, column `j` is the dot product of row `i` of `a` with
/// row `j` of `b`.
pub fn matmul_nt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.cols() {
        return Err(mismatch("matmul_nt", a.shape(), b.shape()));
    }
    let mut out = Matrix::try_zeros(a.rows(), b.rows())?;
    for i in 0..a.rows() {
        let a_row = a.row(i);
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = dot(a_row, b.row(j));
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub(crate) fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Row-wise tensor product: row `n` of the result is the outer product of
/// row `n` of `a` with row `n` of `b`, flattened row-major, so entry
/// `(n, k * d + l)` equals `a[n, k] * b[n, l]`.
pub fn tensor_rows<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.shape() != b.shape() {
        return Err(mismatch("tensor_rows", a.shape(), b.shape()));
    }
    let d = a.cols();
    let mut out = Matrix::try_zeros(a.rows(), d * d)?;
    for n in 0..a.rows() {
        let (ar, br) = (a.row(n), b.row(n));
        for (chunk, &a_nk) in out.row_mut(n).chunks_exact_mut(d).zip(ar) {
            for (o, &b_nl) in chunk.iter_mut().zip(br) {
                *o = a_nk * b_nl;
            }
        }
    }
    Ok(out)
}

/// Entrywise `n`-th power.
pub fn hadamard_pow<T: Scalar>(a: &Matrix<T>, n: u32) -> Result<Matrix<T>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "Hadamard power must be positive".into(),
        ));
    }
    Ok(a.map(|x| x.powi(n as i32)))
}

/// Entrywise quotient `a ⊘ b`.
pub fn hadamard_div<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.shape() != b.shape() {
        return Err(mismatch("hadamard_div", a.shape(), b.shape()));
    }
    let mut out = a.clone();
    for i in 0..a.rows() {
        for (j, (o, &den)) in out.row_mut(i).iter_mut().zip(b.row(i)).enumerate() {
            if den == T::zero() {
                return Err(Error::ZeroDivisor { row: i, col: j });
            }
            *o = *o / den;
        }
    }
    Ok(out)
}

/// Rescales every row to ℓ2 norm `|scale|` (direction flipped for negative
/// `scale`). Zero rows are rejected.
pub fn row_normalize<T: Scalar>(a: &Matrix<T>, scale: T) -> Result<Matrix<T>> {
    let mut out = a.clone();
    for i in 0..a.rows() {
        let row = out.row_mut(i);
        let norm = norm2(row);
        if norm == T::zero() || !norm.is_finite() {
            return Err(Error::ZeroRow { row: i });
        }
        let f = scale / norm;
        row.iter_mut().for_each(|x| *x = *x * f);
    }
    Ok(out)
}

/// Column sums as a `1 × c` matrix.
pub fn col_sums<T: Scalar>(a: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, a.cols());
    for r in a.row_iter() {
        for (o, &x) in out.row_mut(0).iter_mut().zip(r) {
            *o = *o + x;
        }
    }
    out
}

/// `all_scale · [ones_scale · 1_N | v]`, an `N × (d + 1)` matrix whose first
/// column carries the denominator weights.
pub fn prepend_scaled_ones<T: Scalar>(
    v: &Matrix<T>,
    ones_scale: T,
    all_scale: T,
) -> Result<Matrix<T>> {
    let d = v.cols();
    let mut out = Matrix::try_zeros(v.rows(), d + 1)?;
    let first = ones_scale * all_scale;
    for i in 0..v.rows() {
        let src = v.row(i);
        let dst = out.row_mut(i);
        dst[0] = first;
        for (o, &x) in dst[1..].iter_mut().zip(src) {
            *o = all_scale * x;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{sample_gaussian, RandomSeed};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn triple_loop(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            let mut s = 0.0;
            for p in 0..a.cols() {
                s += a.get(i, p) * b.get(p, j);
            }
            s
        })
    }

    fn assert_close(a: &Matrix, b: &Matrix, rel: f64) {
        assert_eq!(a.shape(), b.shape());
        let scale = b.max_abs().max(f64::MIN_POSITIVE);
        let diff = a.max_abs_diff(b).unwrap();
        assert!(diff <= rel * scale, "diff {diff} > {rel} * {scale}");
    }

    #[test]
    fn matmul_examples() {
        let id = Matrix::identity(2);
        let b = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(matmul(&id, &b).unwrap(), b);
        assert_eq!(
            matmul(&m(&[&[1.0, 2.0]]), &m(&[&[3.0], &[4.0]])).unwrap(),
            m(&[&[11.0]])
        );
        assert!(matches!(
            matmul(&b, &m(&[&[1.0, 2.0]])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = sample_gaussian::<f64>(7, 3, RandomSeed::new(11, 0));
        let b = sample_gaussian::<f64>(3, 5, RandomSeed::new(11, 1));
        assert_close(&matmul(&a, &b).unwrap(), &triple_loop(&a, &b), 1e-12);
        assert_close(
            &matmul_tn(&a.transpose(), &b).unwrap(),
            &triple_loop(&a, &b),
            1e-12,
        );
        assert_close(
            &matmul_nt(&a, &b.transpose()).unwrap(),
            &triple_loop(&a, &b),
            1e-12,
        );
    }

    #[test]
    fn matmul_is_bit_reproducible() {
        let a = sample_gaussian::<f64>(9, 6, RandomSeed::new(3, 0));
        let b = sample_gaussian::<f64>(6, 4, RandomSeed::new(3, 1));
        assert_eq!(matmul(&a, &b).unwrap(), matmul(&a, &b).unwrap());
    }

    #[test]
    fn tensor_rows_examples() {
        let a = m(&[&[1.0, 2.0]]);
        let b = m(&[&[3.0, 4.0]]);
        assert_eq!(tensor_rows(&a, &b).unwrap(), m(&[&[3.0, 4.0, 6.0, 8.0]]));
        let z = m(&[&[0.0, 1.0]]);
        assert_eq!(tensor_rows(&z, &z).unwrap(), m(&[&[0.0, 0.0, 0.0, 1.0]]));
        assert!(tensor_rows(&a, &m(&[&[1.0, 2.0, 3.0]])).is_err());
    }

    #[test]
    fn tensor_rows_gram_identity() {
        // (A⊠B)(C⊠D)ᵀ = (ACᵀ) ⊙ (BDᵀ), checked entry by entry.
        let s = |k| sample_gaussian::<f64>(5, 3, RandomSeed::new(77, k));
        let (a, b, c, d) = (s(0), s(1), s(2), s(3));
        let lhs = matmul_nt(&tensor_rows(&a, &b).unwrap(), &tensor_rows(&c, &d).unwrap()).unwrap();
        let ac = triple_loop(&a, &c.transpose());
        let bd = triple_loop(&b, &d.transpose());
        let rhs = Matrix::from_fn(5, 5, |i, j| ac.get(i, j) * bd.get(i, j));
        assert_close(&lhs, &rhs, 1e-12);
    }

    #[test]
    fn hadamard_examples() {
        assert_eq!(
            hadamard_pow(&m(&[&[2.0, -3.0]]), 2).unwrap(),
            m(&[&[4.0, 9.0]])
        );
        let r = sample_gaussian::<f64>(3, 3, RandomSeed::new(1, 0));
        assert_eq!(hadamard_pow(&r, 1).unwrap(), r);
        assert_eq!(hadamard_pow(&m(&[&[0.5]]), 2).unwrap(), m(&[&[0.25]]));

        assert_eq!(
            hadamard_div(&m(&[&[6.0, 8.0]]), &m(&[&[2.0, 4.0]])).unwrap(),
            m(&[&[3.0, 2.0]])
        );
        assert!(hadamard_div(&r, &r)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&x| x == 1.0));
        assert_eq!(
            hadamard_div(&m(&[&[1.0, 1.0]]), &m(&[&[1.0, 0.0]])),
            Err(Error::ZeroDivisor { row: 0, col: 1 })
        );
    }

    #[test]
    fn row_normalize_examples() {
        let r = row_normalize(&m(&[&[3.0, 4.0]]), 1.0).unwrap();
        assert_relative_eq!(r.get(0, 0), 0.6, epsilon = 1e-15);
        assert_relative_eq!(r.get(0, 1), 0.8, epsilon = 1e-15);
        let r = row_normalize(&m(&[&[0.6, 0.8]]), 2.0).unwrap();
        assert_relative_eq!(r.get(0, 0), 1.2, epsilon = 1e-15);
        assert_relative_eq!(r.get(0, 1), 1.6, epsilon = 1e-15);
        assert_eq!(
            row_normalize(&m(&[&[1.0, 1.0], &[0.0, 0.0]]), 1.0),
            Err(Error::ZeroRow { row: 1 })
        );
    }

    #[test]
    fn col_sums_examples() {
        assert_eq!(col_sums(&m(&[&[1.0, 2.0], &[3.0, 4.0]])), m(&[&[4.0, 6.0]]));
        assert_eq!(col_sums(&m(&[&[1.5, -2.0]])), m(&[&[1.5, -2.0]]));
        let a = sample_gaussian::<f64>(100, 4, RandomSeed::new(5, 0));
        let sums = col_sums(&a);
        for j in 0..4 {
            let mut s = 0.0;
            for i in 0..100 {
                s += a.get(i, j);
            }
            assert_relative_eq!(sums.get(0, j), s, max_relative = 1e-12);
        }
    }

    #[test]
    fn prepend_scaled_ones_examples() {
        let v = m(&[&[1.0], &[2.0]]);
        assert_eq!(
            prepend_scaled_ones(&v, 3.0, 0.5).unwrap(),
            m(&[&[1.5, 0.5], &[1.5, 1.0]])
        );
        assert_eq!(
            prepend_scaled_ones(&v, 1.0, 1.0).unwrap(),
            m(&[&[1.0, 1.0], &[1.0, 2.0]])
        );
        let v = Matrix::from_fn(4, 2, |i, j| (i + j) as f64);
        let out = prepend_scaled_ones(&v, (2.0f64 / 4.0).sqrt(), 0.25).unwrap();
        for i in 0..4 {
            assert_relative_eq!(out.get(i, 0), 2f64.sqrt() / 8.0, epsilon = 1e-15);
        }
    }

    fn small_matrix(max_r: usize, max_c: usize) -> impl Strategy<Value = Matrix> {
        (1..=max_r, 1..=max_c).prop_flat_map(|(r, c)| {
            prop::collection::vec(-3.0f64..3.0, r * c)
                .prop_map(move |v| Matrix::new(r, c, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn tensor_rows_is_bilinear(a in small_matrix(6, 5), alpha in -4.0f64..4.0, seed in 0u64..1000) {
            let b = sample_gaussian::<f64>(a.rows(), a.cols(), RandomSeed::new(seed, 0));
            let lhs = tensor_rows(&a.scale(alpha), &b).unwrap();
            let rhs = tensor_rows(&a, &b).unwrap().scale(alpha);
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12 * (1.0 + rhs.max_abs()));
        }

        #[test]
        fn square_identity(n in 1usize..=32, d in 1usize..=16, seed in 0u64..10_000) {
            let a = sample_gaussian::<f64>(n, d, RandomSeed::new(seed, 0));
            let b = sample_gaussian::<f64>(n, d, RandomSeed::new(seed, 1));
            let lhs = matmul_nt(&tensor_rows(&a, &a).unwrap(), &tensor_rows(&b, &b).unwrap()).unwrap();
            let rhs = hadamard_pow(&matmul_nt(&a, &b).unwrap(), 2).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-10 * rhs.max_abs().max(1e-300));
        }

        #[test]
        fn matmul_associative(seed in 0u64..10_000, m_ in 1usize..6, k in 1usize..6, l in 1usize..6, n in 1usize..6) {
            let a = sample_gaussian::<f64>(m_, k, RandomSeed::new(seed, 0));
            let b = sample_gaussian::<f64>(k, l, RandomSeed::new(seed, 1));
            let c = sample_gaussian::<f64>(l, n, RandomSeed::new(seed, 2));
            let lhs = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let rhs = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = triple_loop(&triple_loop(&a.map(f64::abs), &b.map(f64::abs)), &c.map(f64::abs)).max_abs();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-10 * scale);
        }

        #[test]
        fn row_normalize_idempotent(a in small_matrix(6, 5), s in 0.1f64..10.0) {
            prop_assume!(a.row_iter().all(|r| norm2(r) > 1e-6));
            let once = row_normalize(&a, s).unwrap();
            let twice = row_normalize(&once, s).unwrap();
            prop_assert!(once.max_abs_diff(&twice).unwrap() <= 1e-12 * s);
            for r in once.row_iter() {
                prop_assert!((norm2(r) - s).abs() <= 1e-12 * s);
            }
        }
    }
}
