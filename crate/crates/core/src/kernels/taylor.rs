use crate::error::{Error, Result};
use crate::linalg::{self, norm2};
use crate::matrix::{Matrix, Scalar};
use crate::memtrack::Tracked;

use super::{check_qkv, check_tau, NormMode};

/// Degree of the Taylor expansion of `exp` (Maclaurin series).
pub const TAYLOR_ORDER: u32 = 2;

/// Row-wise Taylor-softmax: `p(x) = Σ_{n ≤ order} xⁿ/n!` applied entrywise,
/// then each row divided by its ℓ1 norm. Even orders keep `p` strictly
/// positive, so every row is a probability distribution.
pub fn taylor_softmax_rows<T: Scalar>(m: &Matrix<T>, order: u32) -> Result<Matrix<T>> {
    if order == 0 || order % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "Taylor-softmax order must be even and positive, got {order}"
        )));
    }
    let coeffs: Vec<T> = (0..=order)
        .scan(1.0f64, |fact, n| {
            if n > 0 {
                *fact *= n as f64;
            }
            Some(T::lit(1.0 / *fact))
        })
        .collect();
    let mut out = Matrix::try_zeros(m.rows(), m.cols())?;
    for i in 0..m.rows() {
        let dst = out.row_mut(i);
        let mut total = T::zero();
        for (o, &x) in dst.iter_mut().zip(m.row(i)) {
            let p = coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * x + c);
            *o = p;
            total = total + p.abs();
        }
        dst.iter_mut().for_each(|o| *o = *o / total);
    }
    Ok(out)
}

/// Quadratic-cost TaylorShift: materializes the `N × N` attention matrix.
///
/// Working set at the peak (applying the polynomial out of place): the
/// scaled values (`dN`), `QKᵀ` (`N²`) and the attention matrix (`N²`).
/// The returned output is not part of the working set.
pub fn direct_taylorshift<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    tau: f64,
    norm_mode: NormMode,
) -> Result<Matrix<T>> {
    check_qkv(q, k, v)?;
    check_tau(tau)?;
    let (n, d) = q.shape();

    let out_scale = match norm_mode {
        NormMode::InputOutput => T::lit((n as f64 / d as f64).sqrt()),
        _ => T::one(),
    };
    let values = Tracked::new(v.scale(out_scale));

    let mut scores = Tracked::new(linalg::matmul_nt(q, k)?);
    if norm_mode.normalizes_inputs() {
        let tau = T::lit(tau);
        let mut inv_k = Vec::with_capacity(n);
        for j in 0..n {
            let norm = norm2(k.row(j));
            if norm == T::zero() {
                return Err(Error::ZeroRow { row: j });
            }
            inv_k.push(T::one() / norm);
        }
        for i in 0..n {
            let norm = norm2(q.row(i));
            if norm == T::zero() {
                return Err(Error::ZeroRow { row: i });
            }
            let f = tau / norm;
            for (s, &g) in scores.row_mut(i).iter_mut().zip(&inv_k) {
                *s = *s * f * g;
            }
        }
    }

    let weights = Tracked::new(taylor_softmax_rows(&scores, TAYLOR_ORDER)?);
    drop(scores);
    let y = linalg::matmul(&weights, &values)?;
    if norm_mode.normalizes_inputs() && !y.all_finite() {
        return Err(Error::NonFinite {
            stage: "direct output",
        });
    }
    Ok(y)
}

/// Largest magnitudes seen inside one efficient forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntermediateStats {
    /// `(K⊠K)ᵀV'`.
    pub a_mod: f64,
    /// `(Q⊠Q)·A_mod`, the quadratic term before its ½ coefficient.
    pub quadratic: f64,
    /// `Q(KᵀV')`.
    pub linear: f64,
    /// The combined nominator/denominator matrix `Ŷ`.
    pub augmented: f64,
    /// Final output.
    pub output: f64,
    /// Smallest entry of the denominator column of `Ŷ`.
    pub min_denominator: f64,
    /// Every tracked intermediate and the output were finite.
    pub finite: bool,
}

impl Default for IntermediateStats {
    fn default() -> Self {
        Self {
            a_mod: 0.0,
            quadratic: 0.0,
            linear: 0.0,
            augmented: 0.0,
            output: 0.0,
            min_denominator: f64::INFINITY,
            finite: true,
        }
    }
}

impl IntermediateStats {
    /// Largest magnitude over all intermediates (excluding the output).
    pub fn max_intermediate(&self) -> f64 {
        [self.a_mod, self.quadratic, self.linear, self.augmented]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

fn observe<T: Scalar>(slot: &mut f64, finite: &mut bool, x: T) {
    let a = x.abs().as_f64();
    if !x.is_finite() {
        *finite = false;
    }
    if a > *slot || a.is_nan() {
        *slot = a;
    }
}

/// Linear-cost TaylorShift.
///
/// With [`NormMode::InputOutput`] this follows the normalized algorithm:
/// queries and keys are scaled to norms `ατ` and `α` with `α = d^¼`, the
/// values are augmented with a ones column and scaled by `1/N` (ones column
/// additionally by `√(d/N)`), and the Taylor coefficients become
/// `(½, α², α⁴)`. The result equals [`direct_taylorshift`] with the same
/// mode.
///
/// Working set at the peak (while forming `A_mod`): `A_mod` (`d²(d+1)`),
/// normalized queries and keys (`2dN`), augmented values (`(d+1)N`) and
/// `K⊠K` (`d²N`).
pub fn efficient_taylorshift<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    tau: f64,
    norm_mode: NormMode,
) -> Result<Matrix<T>> {
    efficient_impl(q, k, v, tau, norm_mode, None)
}

/// [`efficient_taylorshift`] that also reports intermediate magnitudes.
/// Non-finite values are reported in the stats rather than as an error when
/// `norm_mode` is [`NormMode::None`].
pub fn efficient_taylorshift_traced<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    tau: f64,
    norm_mode: NormMode,
) -> Result<(Matrix<T>, IntermediateStats)> {
    let mut stats = IntermediateStats::default();
    let y = efficient_impl(q, k, v, tau, norm_mode, Some(&mut stats))?;
    Ok((y, stats))
}

fn efficient_impl<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    tau: f64,
    norm_mode: NormMode,
    mut stats: Option<&mut IntermediateStats>,
) -> Result<Matrix<T>> {
    check_qkv(q, k, v)?;
    check_tau(tau)?;
    let (n, d) = q.shape();
    let (nf, df) = (n as f64, d as f64);

    let (alpha, ones_scale, all_scale) = match norm_mode {
        NormMode::None => (1.0, 1.0, 1.0),
        NormMode::Input => (df.powf(0.25), 1.0, 1.0 / nf),
        NormMode::InputOutput => (df.powf(0.25), (df / nf).sqrt(), 1.0 / nf),
    };
    let c_quad = T::lit(0.5);
    let c_lin = T::lit(alpha * alpha);
    let c_const = T::lit(alpha.powi(4));

    let mut values = Tracked::new(linalg::prepend_scaled_ones(
        v,
        T::lit(ones_scale),
        T::lit(all_scale),
    )?);
    let (q_hat, k_hat) = if norm_mode.normalizes_inputs() {
        (
            Tracked::new(linalg::row_normalize(q, T::lit(alpha * tau))?),
            Tracked::new(linalg::row_normalize(k, T::lit(alpha))?),
        )
    } else {
        (Tracked::new(q.clone()), Tracked::new(k.clone()))
    };

    let kk = Tracked::new(linalg::tensor_rows(&k_hat, &k_hat)?);
    let a_mod = Tracked::new(linalg::matmul_tn(&kk, &values)?);
    drop(kk);

    let ktv = Tracked::new(linalg::matmul_tn(&k_hat, &values)?);
    let col_sum = Tracked::new(linalg::col_sums(&values));
    drop(k_hat);

    let mut st = IntermediateStats::default();
    if stats.is_some() {
        for &x in a_mod.as_slice() {
            observe(&mut st.a_mod, &mut st.finite, x);
        }
    }

    // Ŷ overwrites the augmented values row by row; row i only needs q̂_i and
    // the aggregates. The row of Q⊠Q is formed implicitly.
    let width = d + 1;
    for i in 0..n {
        let qi = q_hat.row(i);
        let yi = values.row_mut(i);
        yi.iter_mut().for_each(|y| *y = T::zero());
        for (ka, &qa) in qi.iter().enumerate() {
            for (lb, &qb) in qi.iter().enumerate() {
                let w = qa * qb;
                let a_row = a_mod.row(ka * d + lb);
                for (y, &a) in yi.iter_mut().zip(a_row) {
                    *y = *y + w * a;
                }
            }
        }
        for c in 0..width {
            let lin = qi
                .iter()
                .enumerate()
                .fold(T::zero(), |acc, (a, &qa)| acc + qa * ktv.get(a, c));
            if stats.is_some() {
                observe(&mut st.quadratic, &mut st.finite, yi[c]);
                observe(&mut st.linear, &mut st.finite, lin);
            }
            yi[c] = c_quad * yi[c] + c_lin * lin + c_const * col_sum.get(0, c);
            if stats.is_some() {
                observe(&mut st.augmented, &mut st.finite, yi[c]);
            }
        }
    }
    drop(a_mod);
    drop(ktv);
    drop(col_sum);
    drop(q_hat);

    let mut y = Matrix::try_zeros(n, d)?;
    for i in 0..n {
        let yi = values.row(i);
        let den = yi[0];
        st.min_denominator = st.min_denominator.min(den.as_f64());
        if den == T::zero() {
            return Err(Error::ZeroDivisor { row: i, col: 0 });
        }
        for (o, &num) in y.row_mut(i).iter_mut().zip(&yi[1..]) {
            *o = num / den;
        }
    }
    drop(values);

    if let Some(s) = stats.as_deref_mut() {
        for &x in y.as_slice() {
            observe(&mut st.output, &mut st.finite, x);
        }
        *s = st;
    }
    if norm_mode.normalizes_inputs() && !y.all_finite() {
        return Err(Error::NonFinite {
            stage: "efficient output",
        });
    }
    Ok(y)
}
