use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::{Matrix, Scalar};
use crate::sampling::{sample_gaussian, RandomSeed};

use super::{attention, check_tau, KernelKind, NormMode};

/// Projection weights for multi-head self-attention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhsaWeights {
    pub w_q: Matrix<f64>,
    pub w_k: Matrix<f64>,
    pub w_v: Matrix<f64>,
    pub w_o: Matrix<f64>,
    pub tau_per_head: Vec<f64>,
}

impl MhsaWeights {
    /// Gaussian weights scaled by `1/√d_emb`, one temperature `tau` per head.
    pub fn random(d_emb: usize, h: usize, tau: f64, seed: RandomSeed) -> Result<Self> {
        if h == 0 || d_emb % h != 0 {
            return Err(Error::HeadDivisibility { d_emb, h });
        }
        let s = 1.0 / (d_emb as f64).sqrt();
        let w = |i| sample_gaussian::<f64>(d_emb, d_emb, seed.derive(i)).scale(s);
        Ok(Self {
            w_q: w(0),
            w_k: w(1),
            w_v: w(2),
            w_o: w(3),
            tau_per_head: vec![tau; h],
        })
    }

    pub fn d_emb(&self) -> usize {
        self.w_q.rows()
    }

    pub fn validate(&self, h: usize) -> Result<()> {
        let e = self.d_emb();
        if h == 0 || e % h != 0 {
            return Err(Error::HeadDivisibility { d_emb: e, h });
        }
        for w in [&self.w_q, &self.w_k, &self.w_v, &self.w_o] {
            if w.shape() != (e, e) {
                return Err(Error::DimensionMismatch {
                    op: "MhsaWeights",
                    left: (e, e),
                    right: w.shape(),
                });
            }
        }
        if self.tau_per_head.len() != h {
            return Err(Error::InvalidArgument(format!(
                "{} temperatures for {h} heads",
                self.tau_per_head.len()
            )));
        }
        self.tau_per_head.iter().try_for_each(|&t| check_tau(t))
    }
}

/// Multi-head self-attention: project, split into `h` heads of width
/// `d_emb / h`, attend per head with that head's temperature, concatenate,
/// and apply the output projection.
///
/// Heads run in order and each writes a disjoint column block.
pub fn mhsa_forward<T: Scalar>(
    x: &Matrix<T>,
    w: &MhsaWeights,
    h: usize,
    kernel: KernelKind,
    norm_mode: NormMode,
) -> Result<Matrix<T>> {
    w.validate(h)?;
    let e = w.d_emb();
    if x.cols() != e {
        return Err(Error::DimensionMismatch {
            op: "mhsa_forward",
            left: x.shape(),
            right: (e, e),
        });
    }
    let q = linalg::matmul(x, &w.w_q.cast())?;
    let k = linalg::matmul(x, &w.w_k.cast())?;
    let v = linalg::matmul(x, &w.w_v.cast())?;
    let d = e / h;
    let mut concat = Matrix::try_zeros(x.rows(), e)?;
    for (head, &tau) in w.tau_per_head.iter().enumerate() {
        let start = head * d;
        let y = attention(
            &q.column_block(start, d)?,
            &k.column_block(start, d)?,
            &v.column_block(start, d)?,
            tau,
            kernel,
            norm_mode,
        )?;
        concat.set_column_block(start, &y)?;
    }
    linalg::matmul(&concat, &w.w_o.cast())
}
