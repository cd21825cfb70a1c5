//! Closed-form operation and memory counts for both TaylorShift
//! implementations, their crossover lengths, and the head-count optima.
//!
//! Counts are exact `u128` evaluations. The softmax baseline has no model:
//! it needs slightly more operations than the direct path (one `exp` per
//! score instead of a quadratic polynomial), but no closed form is used here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelKind;

/// Which TaylorShift implementation a count refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Implementation {
    Direct,
    Efficient,
}

impl TryFrom<KernelKind> for Implementation {
    type Error = Error;
    fn try_from(k: KernelKind) -> Result<Self> {
        match k {
            KernelKind::TaylorDirect => Ok(Self::Direct),
            KernelKind::TaylorEfficient => Ok(Self::Efficient),
            other => Err(Error::InvalidArgument(format!(
                "no cost model for kernel {other}"
            ))),
        }
    }
}

/// `4N²d + 6N²`.
pub const fn ops_direct(n: u64, d: u64) -> u128 {
    let (n, d) = (n as u128, d as u128);
    4 * n * n * d + 6 * n * n
}

/// `N(4d³ + 10d² + 9d + 4)`.
pub const fn ops_efficient(n: u64, d: u64) -> u128 {
    let (n, d) = (n as u128, d as u128);
    n * (4 * d * d * d + 10 * d * d + 9 * d + 4)
}

/// `dN + 2N²`: the values plus `QKᵀ` and the attention matrix.
pub const fn entries_direct(n: u64, d: u64) -> u128 {
    let (n, d) = (n as u128, d as u128);
    d * n + 2 * n * n
}

/// `d²(d+1) + 2dN + (d+1)N + d²N`: `A_mod`, queries and keys, augmented
/// values, and `K⊠K`.
pub const fn entries_efficient(n: u64, d: u64) -> u128 {
    let (n, d) = (n as u128, d as u128);
    d * d * (d + 1) + 2 * d * n + (d + 1) * n + d * d * n
}

pub fn ops(imp: Implementation, n: u64, d: u64) -> u128 {
    match imp {
        Implementation::Direct => ops_direct(n, d),
        Implementation::Efficient => ops_efficient(n, d),
    }
}

pub fn entries(imp: Implementation, n: u64, d: u64) -> u128 {
    match imp {
        Implementation::Direct => entries_direct(n, d),
        Implementation::Efficient => entries_efficient(n, d),
    }
}

/// Speed-crossover data for one head dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedTransition {
    /// `4d³ + 10d² + 9d + 4`.
    pub numerator: u128,
    /// `4d + 6`.
    pub denominator: u128,
    /// `numerator / denominator`.
    pub exact: f64,
    /// Smallest `N` with `ops_efficient ≤ ops_direct`.
    pub n0: u64,
}

/// Memory-crossover data for one head dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryTransition {
    /// `¼[d² + 2d + 1 + √(d⁴ + 12d³ + 14d² + 4d + 1)]`.
    pub exact: f64,
    /// Smallest `N` with `entries_efficient ≤ entries_direct`.
    pub n1: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionPoints {
    pub d: u64,
    pub n0_exact: f64,
    pub n0: u64,
    pub n1_exact: f64,
    pub n1: u64,
}

pub fn n0(d: u64) -> SpeedTransition {
    let dd = d as u128;
    let numerator = 4 * dd * dd * dd + 10 * dd * dd + 9 * dd + 4;
    let denominator = 4 * dd + 6;
    // N·num ≤ N²·den  ⇔  N ≥ num/den, so the integer crossover is the ceiling.
    let n0 = numerator.div_ceil(denominator) as u64;
    SpeedTransition {
        numerator,
        denominator,
        exact: numerator as f64 / denominator as f64,
        n0,
    }
}

pub fn n1(d: u64) -> MemoryTransition {
    let df = d as f64;
    let disc = df.powi(4) + 12.0 * df.powi(3) + 14.0 * df * df + 4.0 * df + 1.0;
    let exact = 0.25 * (df * df + 2.0 * df + 1.0 + disc.sqrt());
    // Settle the ceiling with exact integer comparisons around the float root.
    let wins = |n: u64| entries_efficient(n, d) <= entries_direct(n, d);
    let mut n1 = (exact.ceil() as u64).max(1);
    while n1 > 1 && wins(n1 - 1) {
        n1 -= 1;
    }
    while !wins(n1) {
        n1 += 1;
    }
    MemoryTransition { exact, n1 }
}

pub fn transition_points(d: u64) -> TransitionPoints {
    let s = n0(d);
    let m = n1(d);
    TransitionPoints {
        d,
        n0_exact: s.exact,
        n0: s.n0,
        n1_exact: m.exact,
        n1: m.n1,
    }
}

fn check_heads(d_emb: u64, h: u64) -> Result<()> {
    if h == 0 || d_emb == 0 || d_emb % h != 0 {
        return Err(Error::HeadDivisibility {
            d_emb: d_emb as usize,
            h: h as usize,
        });
    }
    Ok(())
}

/// Multi-head operation count with every head computed by `imp`.
///
/// Direct: `4N²d_emb + 6hN²`. Efficient:
/// `N(4d_emb³/h² + 10d_emb²/h + 9d_emb + 4h)`.
pub fn mhsa_ops(n: u64, d_emb: u64, h: u64, imp: Implementation) -> Result<u128> {
    check_heads(d_emb, h)?;
    let (n, e, h) = (n as u128, d_emb as u128, h as u128);
    Ok(match imp {
        Implementation::Direct => 4 * n * n * e + 6 * h * n * n,
        Implementation::Efficient => n * (4 * e * e * e / (h * h) + 10 * e * e / h + 9 * e + 4 * h),
    })
}

/// Multi-head simultaneous entries, heads held in parallel.
///
/// Direct: `d_emb·N + 2N²h`. Efficient:
/// `d_emb³/h² + (N+1)d_emb²/h + 3N·d_emb + N·h`.
pub fn mhsa_entries(n: u64, d_emb: u64, h: u64, imp: Implementation) -> Result<u128> {
    check_heads(d_emb, h)?;
    let (n, e, h) = (n as u128, d_emb as u128, h as u128);
    Ok(match imp {
        Implementation::Direct => e * n + 2 * n * n * h,
        Implementation::Efficient => e * e * e / (h * h) + (n + 1) * e * e / h + 3 * n * e + n * h,
    })
}

/// Bisection for a root of a continuous `f` with a sign change on `[lo, hi]`.
pub(crate) fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut f_lo = f(lo);
    debug_assert!(f_lo * f(hi) <= 0.0, "no sign change on [{lo}, {hi}]");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Operation-optimal per-head dimension: the positive root of
/// `9d³ + 10d² = 4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalHeadDim {
    /// `∛(3374 + 54√3561)`.
    pub alpha: f64,
    /// `(α + 100/α − 10) / 27`.
    pub closed_form: f64,
    pub bisection: f64,
    /// `|9d³ + 10d² − 4|` at the closed form.
    pub residual: f64,
}

pub fn ops_optimum_residual(d: f64) -> f64 {
    9.0 * d * d * d + 10.0 * d * d - 4.0
}

pub fn optimal_head_dim_ops() -> OptimalHeadDim {
    let alpha = (3374.0 + 54.0 * 3561f64.sqrt()).cbrt();
    let closed_form = (alpha + 100.0 / alpha - 10.0) / 27.0;
    let bisection = bisect(ops_optimum_residual, 0.0, 1.0, 1e-15);
    OptimalHeadDim {
        alpha,
        closed_form,
        bisection,
        residual: ops_optimum_residual(closed_form).abs(),
    }
}

/// `2d³ + (N+1)d² − N`, whose root is the memory-optimal per-head dimension.
pub fn entries_optimum_residual(n: u64, d: f64) -> f64 {
    let nf = n as f64;
    2.0 * d * d * d + (nf + 1.0) * d * d - nf
}

/// Memory-optimal per-head dimension for sequence length `n`; always in
/// `(0, 1)`, so the optimal head count exceeds `d_emb`.
pub fn optimal_head_dim_entries(n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sequence length must be positive".into(),
        ));
    }
    Ok(bisect(|d| entries_optimum_residual(n, d), 0.0, 1.0, 1e-14))
}

/// Counts for one `(N, d, h)` point: `h` heads of width `d`, held in
/// parallel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub n: u64,
    pub d: u64,
    pub h: u64,
    pub ops_direct: u128,
    pub ops_eff: u128,
    pub entries_direct: u128,
    pub entries_eff: u128,
}

impl CostReport {
    pub fn new(n: u64, d: u64, h: u64) -> Result<Self> {
        if n == 0 || d == 0 || h == 0 {
            return Err(Error::InvalidArgument(format!(
                "n, d and h must be positive (got {n}, {d}, {h})"
            )));
        }
        let e = d.checked_mul(h).ok_or(Error::Overflow("d·h"))?;
        Ok(Self {
            n,
            d,
            h,
            ops_direct: mhsa_ops(n, e, h, Implementation::Direct)?,
            ops_eff: mhsa_ops(n, e, h, Implementation::Efficient)?,
            entries_direct: mhsa_entries(n, e, h, Implementation::Direct)?,
            entries_eff: mhsa_entries(n, e, h, Implementation::Efficient)?,
        })
    }
}

/// Cartesian product over `d × n × h`, in that nesting order.
pub fn cost_sweep(d_list: &[u64], n_list: &[u64], h_list: &[u64]) -> Result<Vec<CostReport>> {
    if d_list.is_empty() || n_list.is_empty() || h_list.is_empty() {
        return Err(Error::InvalidArgument(
            "cost sweep needs non-empty d, n and h lists".into(),
        ));
    }
    let mut out = Vec::with_capacity(d_list.len() * n_list.len() * h_list.len());
    for &d in d_list {
        for &n in n_list {
            for &h in h_list {
                out.push(CostReport::new(n, d, h)?);
            }
        }
    }
    Ok(out)
}

/// Positive divisors of `x` in increasing order.
pub fn divisors(x: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut i = 1;
    while i * i <= x {
        if x % i == 0 {
            small.push(i);
            if i * i != x {
                large.push(x / i);
            }
        }
        i += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE_D: [u64; 5] = [8, 16, 32, 64, 128];

    #[test]
    fn single_head_formulas() {
        assert_eq!(ops_direct(1, 1), 10);
        assert_eq!(ops_direct(2, 3), 72);
        assert_eq!(ops_efficient(1, 1), 27);
        assert_eq!(ops_efficient(10, 2), 940);
        assert_eq!(ops_efficient(14, 5), 2 * ops_efficient(7, 5));
        assert_eq!(entries_direct(1, 1), 3);
        assert_eq!(entries_direct(4, 2), 40);
        assert_eq!(entries_efficient(1, 1), 7);
        assert_eq!(entries_efficient(10, 2), 122);
        let d = 6;
        assert_eq!(
            entries_efficient(11, d) - entries_efficient(10, d),
            (d * d + 3 * d + 1) as u128
        );
    }

    #[test]
    fn counts_around_table_points() {
        assert_eq!(ops_direct(73, 8), 202_502);
        assert_eq!(ops_efficient(73, 8), 201_772);
        assert!(ops_efficient(72, 8) > ops_direct(72, 8));
        assert_eq!(entries_direct(47, 8), 4794);
        assert_eq!(entries_efficient(47, 8), 4759);
        assert!(entries_efficient(46, 8) > entries_direct(46, 8));
    }

    #[test]
    fn table_two_values() {
        let n0s: Vec<u64> = TABLE_D.iter().map(|&d| n0(d).n0).collect();
        let n1s: Vec<u64> = TABLE_D.iter().map(|&d| n1(d).n1).collect();
        assert_eq!(n0s, [73, 273, 1057, 4161, 16513]);
        assert_eq!(n1s, [47, 159, 574, 2174, 8446]);
    }

    #[test]
    fn crossovers_match_linear_scans() {
        for d in 1..=200u64 {
            let scan0 = (1..)
                .find(|&n| ops_efficient(n, d) <= ops_direct(n, d))
                .unwrap();
            let scan1 = (1..)
                .find(|&n| entries_efficient(n, d) <= entries_direct(n, d))
                .unwrap();
            let t = transition_points(d);
            assert_eq!(t.n0, scan0, "d={d}");
            assert_eq!(t.n1, scan1, "d={d}");
            assert_eq!(t.n0, t.n0_exact.ceil() as u64);
            assert_eq!(t.n1, t.n1_exact.ceil() as u64);
            let df = d as f64;
            assert!(t.n0_exact <= df * df + df + 0.75);
            assert!(t.n1_exact <= 0.5 * df * df + 2.0 * df + 0.5);
            if d >= 2 {
                assert!(t.n1 <= t.n0, "d={d}");
            }
        }
    }

    #[test]
    fn mhsa_is_h_times_single_head() {
        for e in [12u64, 64, 256] {
            for h in divisors(e) {
                for n in [1u64, 100, 1024] {
                    let d = e / h;
                    for imp in [Implementation::Direct, Implementation::Efficient] {
                        assert_eq!(mhsa_ops(n, e, h, imp).unwrap(), h as u128 * ops(imp, n, d));
                        assert_eq!(
                            mhsa_entries(n, e, h, imp).unwrap(),
                            h as u128 * entries(imp, n, d)
                        );
                    }
                }
            }
        }
        assert!(mhsa_ops(10, 12, 5, Implementation::Direct).is_err());
    }

    #[test]
    fn mhsa_monotone_in_heads() {
        let hs = [4u64, 8, 16, 32, 64];
        let series = |f: &dyn Fn(u64) -> u128| hs.iter().map(|&h| f(h)).collect::<Vec<_>>();
        let eff_ops = series(&|h| mhsa_ops(1024, 256, h, Implementation::Efficient).unwrap());
        let eff_mem = series(&|h| mhsa_entries(1024, 256, h, Implementation::Efficient).unwrap());
        assert!(eff_ops.windows(2).all(|w| w[1] < w[0]));
        assert!(eff_mem.windows(2).all(|w| w[1] < w[0]));
        let all = divisors(256);
        let dir_ops: Vec<u128> = all
            .iter()
            .map(|&h| mhsa_ops(1024, 256, h, Implementation::Direct).unwrap())
            .collect();
        let dir_mem: Vec<u128> = all
            .iter()
            .map(|&h| mhsa_entries(1024, 256, h, Implementation::Direct).unwrap())
            .collect();
        assert!(dir_ops.windows(2).all(|w| w[1] > w[0]));
        assert!(dir_mem.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn operation_optimum() {
        let o = optimal_head_dim_ops();
        assert!((o.alpha - 18.75).abs() < 0.005);
        assert!((o.closed_form - 0.52).abs() < 0.005);
        assert!((o.closed_form - o.bisection).abs() < 1e-12);
        assert!(o.residual <= 1e-10);
        // The uncorrected reading α/27 + 100/(729α) − 10/27 misses the root.
        let printed = o.alpha / 27.0 + 100.0 / (729.0 * o.alpha) - 10.0 / 27.0;
        assert!(ops_optimum_residual(printed).abs() > 1.0);
    }

    #[test]
    fn memory_optimum() {
        let mut prev = 0.0;
        for n in [1u64, 10, 100, 10_000, 1_000_000] {
            let d = optimal_head_dim_entries(n).unwrap();
            assert!(d > 0.0 && d < 1.0);
            assert!(entries_optimum_residual(n, d).abs() < 1e-9 * n as f64);
            assert!(d > prev);
            prev = d;
        }
        assert!((optimal_head_dim_entries(100).unwrap() - 0.985).abs() < 0.0005);
        assert!(optimal_head_dim_entries(1_000_000).unwrap() > 0.999);
        assert!(optimal_head_dim_entries(0).is_err());
    }

    #[test]
    fn sweep_shape() {
        let rows = cost_sweep(&[1, 2], &[1, 5, 9], &[1, 2]).unwrap();
        assert_eq!(rows.len(), 12);
        let one = cost_sweep(&[1], &[1], &[1]).unwrap();
        assert_eq!(
            one[0],
            CostReport {
                n: 1,
                d: 1,
                h: 1,
                ops_direct: 10,
                ops_eff: 27,
                entries_direct: 3,
                entries_eff: 7
            }
        );
        assert!(cost_sweep(&[], &[1], &[1]).is_err());
    }

    #[test]
    fn large_inputs_do_not_overflow() {
        let n = 1_000_000_000u64;
        assert_eq!(ops_direct(n, 1000), 4006 * (n as u128) * (n as u128));
        assert!(entries_efficient(n, 1000) > 0);
    }
}
