//! Monte-Carlo measurement of intermediate magnitudes in the unnormalized
//! efficient pipeline, and the overflow demonstration for unnormalized
//! inputs.
//!
//! Every trial draws `Q`, `K` and `V` with rows uniform on the unit sphere and
//! runs the raw pipeline: no temperature, no `d^¼` rebalancing and no `1/N`
//! on the values. Values are augmented with a leading ones column, as in the
//! efficient algorithm, wherever they enter a product.
//!
//! Sizes are mean row norms, except for `A_mod` (Frobenius norm of the whole
//! `d² × (d+1)` matrix, since it has no per-token rows) and `Y_denom` (mean
//! absolute value).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{efficient_taylorshift_traced, NormMode, Precision};
use crate::matrix::{Matrix, Scalar};
use crate::sampling::{sample_sphere_rows, RandomSeed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expression {
    #[serde(rename = "A_mod")]
    AMod,
    #[serde(rename = "Y_squ")]
    YSqu,
    #[serde(rename = "QKtV")]
    QktV,
    #[serde(rename = "Y_denom")]
    YDenom,
    #[serde(rename = "Y")]
    Y,
}

impl Expression {
    pub const ALL: [Expression; 5] = [Self::AMod, Self::YSqu, Self::QktV, Self::YDenom, Self::Y];

    pub fn name(self) -> &'static str {
        match self {
            Self::AMod => "A_mod",
            Self::YSqu => "Y_squ",
            Self::QktV => "QKtV",
            Self::YDenom => "Y_denom",
            Self::Y => "Y",
        }
    }

    pub fn predicted(self, n: usize, d: usize) -> f64 {
        let (n, d) = (n as f64, d as f64);
        match self {
            Self::AMod => (n + 1.0) / d.sqrt(),
            Self::YSqu => n / d,
            Self::QktV => n.sqrt() * (4.0 * d + 1.0) / (4.0 * d),
            Self::YDenom => n * (d + 2.0) / (2.0 * d),
            Self::Y => (d / n).sqrt(),
        }
    }
}

impl std::fmt::Display for Expression {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Predicted sizes in [`Expression::ALL`] order.
pub fn predicted_norms(n: usize, d: usize) -> [f64; 5] {
    Expression::ALL.map(|e| e.predicted(n, d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpressionNorm {
    pub expression: Expression,
    pub measured_mean_norm: f64,
    pub predicted: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub n: usize,
    pub d: usize,
    pub trials: usize,
    pub seed: u64,
    pub norms: Vec<ExpressionNorm>,
}

impl ScalingReport {
    pub fn get(&self, e: Expression) -> &ExpressionNorm {
        self.norms
            .iter()
            .find(|x| x.expression == e)
            .expect("report holds every expression")
    }

    pub fn max_rel_error(&self) -> f64 {
        self.norms.iter().map(|x| x.rel_error).fold(0.0, f64::max)
    }
}

/// Pairs `(a, b)` with `a ≤ b` and their multiplicity in the full `d²` sum.
fn sym_pairs(d: usize) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for a in 0..d {
        for b in a..d {
            out.push((a, b, if a == b { 1.0 } else { 2.0 }));
        }
    }
    out
}

/// Sizes of the five expressions for one draw of `Q`, `K`, `V`.
pub(crate) fn trial_norms(q: &Matrix, k: &Matrix, v: &Matrix) -> [f64; 5] {
    let (n, d) = q.shape();
    let w = d + 1;
    let pairs = sym_pairs(d);

    // A_mod rows are indexed by (a, b); rows (a, b) and (b, a) coincide, so
    // only a ≤ b is formed.
    let mut a_sym = vec![0.0f64; pairs.len() * w];
    let mut ktv = vec![0.0f64; d * w];
    let mut v_sum = vec![0.0f64; w];
    for j in 0..n {
        let kj = k.row(j);
        let vj = v.row(j);
        for (p, &(a, b, _)) in pairs.iter().enumerate() {
            let s = kj[a] * kj[b];
            let row = &mut a_sym[p * w..(p + 1) * w];
            row[0] += s;
            for (x, &y) in row[1..].iter_mut().zip(vj) {
                *x += s * y;
            }
        }
        for a in 0..d {
            let row = &mut ktv[a * w..(a + 1) * w];
            row[0] += kj[a];
            for (x, &y) in row[1..].iter_mut().zip(vj) {
                *x += kj[a] * y;
            }
        }
        v_sum[0] += 1.0;
        for (x, &y) in v_sum[1..].iter_mut().zip(vj) {
            *x += y;
        }
    }
    let a_mod_norm = pairs
        .iter()
        .enumerate()
        .map(|(p, &(_, _, m))| m * a_sym[p * w..(p + 1) * w].iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();

    let mut squ = vec![0.0f64; w];
    let mut lin = vec![0.0f64; w];
    let (mut sum_squ, mut sum_lin, mut sum_den, mut sum_y) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let qi = q.row(i);
        squ.iter_mut().for_each(|x| *x = 0.0);
        lin.iter_mut().for_each(|x| *x = 0.0);
        for (p, &(a, b, m)) in pairs.iter().enumerate() {
            let s = m * qi[a] * qi[b];
            for (x, &y) in squ.iter_mut().zip(&a_sym[p * w..(p + 1) * w]) {
                *x += s * y;
            }
        }
        for (a, &qa) in qi.iter().enumerate() {
            for (x, &y) in lin.iter_mut().zip(&ktv[a * w..(a + 1) * w]) {
                *x += qa * y;
            }
        }
        sum_squ += squ.iter().map(|x| x * x).sum::<f64>().sqrt();
        sum_lin += lin.iter().map(|x| x * x).sum::<f64>().sqrt();
        let den = 0.5 * squ[0] + lin[0] + v_sum[0];
        sum_den += den.abs();
        sum_y += (1..w)
            .map(|c| {
                let y = (0.5 * squ[c] + lin[c] + v_sum[c]) / den;
                y * y
            })
            .sum::<f64>()
            .sqrt();
    }
    let nf = n as f64;
    [
        a_mod_norm,
        sum_squ / nf,
        sum_lin / nf,
        sum_den / nf,
        sum_y / nf,
    ]
}

fn trial_inputs(n: usize, d: usize, seed: RandomSeed) -> (Matrix, Matrix, Matrix) {
    (
        sample_sphere_rows(n, d, seed.derive(0)),
        sample_sphere_rows(n, d, seed.derive(1)),
        sample_sphere_rows(n, d, seed.derive(2)),
    )
}

/// Averages [`trial_norms`] over `trials` independent draws. Trial `t` uses
/// its own derived stream, and the reduction runs in trial order, so the
/// result does not depend on scheduling.
pub fn measure_intermediate_norms(
    n: usize,
    d: usize,
    trials: usize,
    seed: u64,
) -> Result<ScalingReport> {
    if n == 0 || d == 0 || trials == 0 {
        return Err(Error::InvalidArgument(format!(
            "n, d and trials must be positive (got {n}, {d}, {trials})"
        )));
    }
    let base = RandomSeed::new(seed, 0);
    let per_trial: Vec<[f64; 5]> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let (q, k, v) = trial_inputs(n, d, base.derive(t));
            trial_norms(&q, &k, &v)
        })
        .collect();
    let mut total = [0.0f64; 5];
    for r in &per_trial {
        for (acc, x) in total.iter_mut().zip(r) {
            *acc += x;
        }
    }
    let norms = Expression::ALL
        .iter()
        .zip(total)
        .map(|(&e, s)| {
            let measured = s / trials as f64;
            let predicted = e.predicted(n, d);
            ExpressionNorm {
                expression: e,
                measured_mean_norm: measured,
                predicted,
                rel_error: (measured - predicted).abs() / predicted,
            }
        })
        .collect();
    Ok(ScalingReport {
        n,
        d,
        trials,
        seed,
        norms,
    })
}

/// One report per `(n, d)` pair, `n` varying slowest.
pub fn scaling_sweep(
    n_list: &[usize],
    d_list: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<ScalingReport>> {
    if n_list.is_empty() || d_list.is_empty() {
        return Err(Error::InvalidArgument(
            "scaling sweep needs non-empty n and d lists".into(),
        ));
    }
    let mut out = Vec::with_capacity(n_list.len() * d_list.len());
    for &n in n_list {
        for &d in d_list {
            out.push(measure_intermediate_norms(n, d, trials, seed)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstabilityReport {
    pub n: usize,
    pub d: usize,
    pub input_scale: f64,
    pub precision: Precision,
    /// Largest entry of `(Q⊠Q)·A_mod` without normalization.
    pub max_abs_unnormalized: f64,
    /// The same quantity with input and output normalization.
    pub max_abs_normalized: f64,
    /// Largest entry over every intermediate, without normalization.
    pub max_intermediate_unnormalized: f64,
    /// Largest entry over every intermediate, with normalization.
    pub max_intermediate_normalized: f64,
    pub finite_unnormalized: bool,
    pub finite_normalized: bool,
}

impl InstabilityReport {
    pub fn finite(&self) -> bool {
        self.finite_unnormalized && self.finite_normalized
    }
}

/// Runs the efficient kernel on sphere-sampled queries and keys multiplied
/// by `input_scale` (values stay on the unit sphere), once without and once
/// with normalization. Overflow shows up in the report, not as an error.
pub fn instability_demo(
    n: usize,
    d: usize,
    input_scale: f64,
    precision: Precision,
    seed: u64,
) -> Result<InstabilityReport> {
    if !(input_scale >= 1.0) || !input_scale.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "input scale must be a finite value >= 1, got {input_scale}"
        )));
    }
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("n and d must be positive".into()));
    }
    let (q, k, v) = trial_inputs(n, d, RandomSeed::new(seed, 0xD3));
    let (q, k) = (q.scale(input_scale), k.scale(input_scale));
    match precision {
        Precision::F64 => run_demo::<f64>(&q, &k, &v, input_scale, precision),
        Precision::F32 => run_demo::<f32>(&q.cast(), &k.cast(), &v.cast(), input_scale, precision),
    }
}

fn run_demo<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    input_scale: f64,
    precision: Precision,
) -> Result<InstabilityReport> {
    let (_, raw) = efficient_taylorshift_traced(q, k, v, 1.0, NormMode::None)?;
    let normalized = match efficient_taylorshift_traced(q, k, v, 1.0, NormMode::InputOutput) {
        Ok((_, s)) => s,
        Err(Error::NonFinite { .. }) => {
            let mut s = crate::kernels::IntermediateStats::default();
            s.finite = false;
            s.quadratic = f64::NAN;
            s
        }
        Err(e) => return Err(e),
    };
    Ok(InstabilityReport {
        n: q.rows(),
        d: q.cols(),
        input_scale,
        precision,
        max_abs_unnormalized: raw.quadratic,
        max_abs_normalized: normalized.quadratic,
        max_intermediate_unnormalized: raw.max_intermediate(),
        max_intermediate_normalized: normalized.max_intermediate(),
        finite_unnormalized: raw.finite,
        finite_normalized: normalized.finite,
    })
}
