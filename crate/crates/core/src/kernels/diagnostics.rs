use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::Matrix;

use super::{direct_taylorshift, softmax_attention_scaled, NormMode};

/// Elementwise difference between softmax and Taylor-softmax attention on
/// the same normalized inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapStats {
    pub max_abs_diff: f64,
    pub mean_abs_diff: f64,
}

/// Compares `softmax(q̂k̂ᵀ)v` with `T-SM(q̂k̂ᵀ)v`, where `q̂` has row norm `tau`
/// and `k̂` unit rows. No `1/√d` factor is applied to either side.
pub fn approximation_gap(q: &Matrix, k: &Matrix, v: &Matrix, tau: f64) -> Result<GapStats> {
    let qn = linalg::row_normalize(q, tau)?;
    let kn = linalg::row_normalize(k, 1.0)?;
    let exact = softmax_attention_scaled(&qn, &kn, v, 1.0)?;
    let approx = direct_taylorshift(q, k, v, tau, NormMode::Input)?;
    let diffs: Vec<f64> = exact
        .as_slice()
        .iter()
        .zip(approx.as_slice())
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(GapStats {
        max_abs_diff: diffs.iter().copied().fold(0.0, f64::max),
        mean_abs_diff: diffs.iter().sum::<f64>() / diffs.len() as f64,
    })
}

/// Central-difference Jacobians of the flattened output with respect to the
/// flattened inputs. Each block has one row per output entry and one column
/// per input entry.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlocks {
    pub wrt_q: Matrix,
    pub wrt_k: Matrix,
    pub wrt_v: Matrix,
}

pub fn finite_diff_jacobian<F>(
    kernel_fn: F,
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    tau: f64,
    epsilon: f64,
) -> Result<JacobianBlocks>
where
    F: Fn(&Matrix, &Matrix, &Matrix, f64) -> Result<Matrix>,
{
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let out_len = kernel_fn(q, k, v, tau)?.len();

    let block = |which: usize| -> Result<Matrix> {
        let base = [q, k, v][which];
        let mut jac = Matrix::zeros(out_len, base.len());
        for idx in 0..base.len() {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus.as_mut_slice()[idx] += epsilon;
            minus.as_mut_slice()[idx] -= epsilon;
            let eval = |m: &Matrix| match which {
                0 => kernel_fn(m, k, v, tau),
                1 => kernel_fn(q, m, v, tau),
                _ => kernel_fn(q, k, m, tau),
            };
            let (yp, ym) = (eval(&plus)?, eval(&minus)?);
            for (o, (a, b)) in yp.as_slice().iter().zip(ym.as_slice()).enumerate() {
                jac.set(o, idx, (a - b) / (2.0 * epsilon));
            }
        }
        Ok(jac)
    };

    Ok(JacobianBlocks {
        wrt_q: block(0)?,
        wrt_k: block(1)?,
        wrt_v: block(2)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{efficient_taylorshift, taylor_softmax_rows};
    use crate::sampling::{sample_gaussian, sample_sphere_rows, RandomSeed};

    fn inputs(n: usize, d: usize, seed: u64) -> (Matrix, Matrix, Matrix) {
        let s = RandomSeed::new(seed, 0);
        (
            sample_gaussian(n, d, s.derive(0)),
            sample_gaussian(n, d, s.derive(1)),
            sample_gaussian(n, d, s.derive(2)),
        )
    }

    #[test]
    fn orthogonal_rows_have_no_gap() {
        let q = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let k = Matrix::from_rows(&[[0.0, 1.0], [0.0, -2.0]]).unwrap();
        let v = Matrix::from_rows(&[[1.0, 2.0], [3.0, 5.0]]).unwrap();
        let g = approximation_gap(&q, &k, &v, 1.0).unwrap();
        assert!(g.max_abs_diff < 1e-15);
    }

    #[test]
    fn gap_vanishes_as_temperature_shrinks() {
        let (q, k, v) = inputs(12, 4, 1);
        let gaps: Vec<f64> = [1.0, 0.1, 0.01, 0.001]
            .iter()
            .map(|&t| approximation_gap(&q, &k, &v, t).unwrap().max_abs_diff)
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]));
        assert!(gaps[3] < 1e-8);
    }

    #[test]
    fn gap_matches_loop_oracle() {
        let (n, d, tau) = (16, 8, 1.0);
        let s = RandomSeed::new(2, 0);
        let q: Matrix = sample_sphere_rows(n, d, s.derive(0));
        let k: Matrix = sample_sphere_rows(n, d, s.derive(1));
        let v: Matrix = sample_gaussian(n, d, s.derive(2));
        let mut max = 0.0f64;
        let mut total = 0.0;
        for i in 0..n {
            let x: Vec<f64> = (0..n)
                .map(|j| tau * (0..d).map(|c| q.get(i, c) * k.get(j, c)).sum::<f64>())
                .collect();
            let e: Vec<f64> = x.iter().map(|x| x.exp()).collect();
            let p: Vec<f64> = x.iter().map(|x| 1.0 + x + 0.5 * x * x).collect();
            let (se, sp): (f64, f64) = (e.iter().sum(), p.iter().sum());
            for c in 0..d {
                let ye: f64 = (0..n).map(|j| e[j] * v.get(j, c)).sum::<f64>() / se;
                let yp: f64 = (0..n).map(|j| p[j] * v.get(j, c)).sum::<f64>() / sp;
                max = max.max((ye - yp).abs());
                total += (ye - yp).abs();
            }
        }
        let g = approximation_gap(&q, &k, &v, tau).unwrap();
        assert!((g.max_abs_diff - max).abs() < 1e-12);
        assert!((g.mean_abs_diff - total / (n * d) as f64).abs() < 1e-12);
    }

    fn direct(q: &Matrix, k: &Matrix, v: &Matrix, t: f64) -> Result<Matrix> {
        direct_taylorshift(q, k, v, t, NormMode::InputOutput)
    }

    fn efficient(q: &Matrix, k: &Matrix, v: &Matrix, t: f64) -> Result<Matrix> {
        efficient_taylorshift(q, k, v, t, NormMode::InputOutput)
    }

    #[test]
    fn jacobians_of_both_paths_agree() {
        let (q, k, v) = inputs(4, 3, 3);
        let a = finite_diff_jacobian(direct, &q, &k, &v, 1.5, 1e-5).unwrap();
        let b = finite_diff_jacobian(efficient, &q, &k, &v, 1.5, 1e-5).unwrap();
        assert!(a.wrt_q.max_abs_diff(&b.wrt_q).unwrap() < 1e-5);
        assert!(a.wrt_k.max_abs_diff(&b.wrt_k).unwrap() < 1e-5);
        assert!(a.wrt_v.max_abs_diff(&b.wrt_v).unwrap() < 1e-5);
    }

    #[test]
    fn value_jacobian_is_attention_kronecker_identity() {
        // y[i, c] = s · Σ_j P[i, j] v[j, c], so ∂y[i, c]/∂v[j, c'] = s·P[i, j]·δ(c, c').
        let (n, d, tau) = (4, 3, 0.7);
        let (q, k, v) = inputs(n, d, 4);
        let jac = finite_diff_jacobian(direct, &q, &k, &v, tau, 1e-4).unwrap();
        let qn = linalg::row_normalize(&q, tau).unwrap();
        let kn = linalg::row_normalize(&k, 1.0).unwrap();
        let p = taylor_softmax_rows(&linalg::matmul_nt(&qn, &kn).unwrap(), 2).unwrap();
        let s = (n as f64 / d as f64).sqrt();
        for i in 0..n {
            for c in 0..d {
                for j in 0..n {
                    for c2 in 0..d {
                        let expect = if c == c2 { s * p.get(i, j) } else { 0.0 };
                        assert!((jac.wrt_v.get(i * d + c, j * d + c2) - expect).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn central_differences_converge_quadratically() {
        // Richardson check: |J(ε) − J(ε/2)| shrinks by ≈4 when ε halves.
        let (q, k, v) = inputs(3, 2, 5);
        let j = |e| {
            finite_diff_jacobian(direct, &q, &k, &v, 2.0, e)
                .unwrap()
                .wrt_q
        };
        let (j1, j2, j4) = (j(1e-2), j(5e-3), j(2.5e-3));
        let d1 = j1.max_abs_diff(&j2).unwrap();
        let d2 = j2.max_abs_diff(&j4).unwrap();
        assert!(d2 < d1);
        let ratio = d1 / d2;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rejects_non_positive_epsilon() {
        let (q, k, v) = inputs(2, 2, 6);
        assert!(finite_diff_jacobian(direct, &q, &k, &v, 1.0, 0.0).is_err());
    }
}
