//! Wall-clock timing, tracked peak memory, and crossover detection from
//! measured series.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::costmodel::{self, Implementation};
use crate::error::{Error, Result};
use crate::kernels::{attention, select_kernel, KernelKind, NormMode, Precision};
use crate::matrix::{Matrix, Scalar};
use crate::memtrack;
use crate::sampling::{sample_gaussian, RandomSeed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSample {
    /// The kernel that actually ran (`auto` is resolved per `(n, d)`).
    pub kernel: KernelKind,
    pub n: usize,
    pub d: usize,
    pub h: usize,
    pub precision: Precision,
    pub reps: usize,
    pub warmup: usize,
    /// Mean wall time of one forward call over all `h` heads.
    pub mean_seconds: Option<f64>,
    /// Population standard deviation of the per-call times.
    pub std_seconds: Option<f64>,
    /// Peak live entries of one head, from instrumented allocation.
    pub peak_entries_tracked: Option<u128>,
    /// Model entries of one head; absent for the softmax baseline.
    pub peak_entries_model: Option<u128>,
    pub status: SampleStatus,
    pub error: Option<String>,
}

impl BenchSample {
    pub fn is_ok(&self) -> bool {
        self.status == SampleStatus::Ok
    }
}

fn resolve(kernel: KernelKind, n: usize, d: usize) -> KernelKind {
    match kernel {
        KernelKind::Auto => select_kernel(n, d),
        k => k,
    }
}

pub fn model_entries(kernel: KernelKind, n: usize, d: usize) -> Option<u128> {
    let imp = Implementation::try_from(resolve(kernel, n, d)).ok()?;
    Some(costmodel::entries(imp, n as u64, d as u64))
}

/// Bytes one head needs: inputs, working set and output.
fn required_bytes(kernel: KernelKind, n: usize, d: usize, h: usize, precision: Precision) -> u128 {
    let (nn, dd) = (n as u128, d as u128);
    let working = model_entries(kernel, n, d).unwrap_or(nn * nn + nn * dd);
    let inputs = 3 * nn * dd * h as u128;
    (working + inputs + nn * dd) * (precision.bits() as u128 / 8)
}

/// `MemAvailable` from `/proc/meminfo`, when the platform provides it.
pub fn available_memory_bytes() -> Option<u64> {
    let info = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = info.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    kb.checked_mul(1024)
}

/// Peak simultaneously live tracked entries during one call of `kernel` on
/// Gaussian inputs.
pub fn peak_entries(kernel: KernelKind, n: usize, d: usize) -> Result<u128> {
    peak_entries_with::<f64>(kernel, n, d, RandomSeed::new(0, 0x9E))
}

fn peak_entries_with<T: Scalar>(
    kernel: KernelKind,
    n: usize,
    d: usize,
    seed: RandomSeed,
) -> Result<u128> {
    let q = sample_gaussian::<T>(n, d, seed.derive(0));
    let k = sample_gaussian::<T>(n, d, seed.derive(1));
    let v = sample_gaussian::<T>(n, d, seed.derive(2));
    let (y, peak) = memtrack::measure(|| attention(&q, &k, &v, 1.0, kernel, NormMode::InputOutput));
    y?;
    Ok(peak.peak as u128)
}

/// Times `reps` forward calls after `warmup` untimed ones. Each call runs
/// `h` heads of width `d` in sequence on inputs generated up front.
///
/// Failures (including a failed memory pre-check or a panic inside the
/// kernel) come back as a sample with [`SampleStatus::Failed`].
#[allow(clippy::too_many_arguments)]
pub fn time_kernel(
    kernel: KernelKind,
    n: usize,
    d: usize,
    h: usize,
    reps: usize,
    warmup: usize,
    seed: u64,
    precision: Precision,
) -> Result<BenchSample> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    if n == 0 || d == 0 || h == 0 {
        return Err(Error::InvalidArgument(format!(
            "n, d and h must be positive (got {n}, {d}, {h})"
        )));
    }
    let kernel = resolve(kernel, n, d);
    let mut sample = BenchSample {
        kernel,
        n,
        d,
        h,
        precision,
        reps,
        warmup,
        mean_seconds: None,
        std_seconds: None,
        peak_entries_tracked: None,
        peak_entries_model: model_entries(kernel, n, d),
        status: SampleStatus::Failed,
        error: None,
    };
    let need = required_bytes(kernel, n, d, h, precision);
    if let Some(avail) = available_memory_bytes() {
        if need > avail as u128 {
            sample.error = Some(format!("needs about {need} bytes, {avail} available"));
            return Ok(sample);
        }
    }
    let seed = RandomSeed::new(seed, 0xBE);
    let outcome = catch_unwind(AssertUnwindSafe(|| match precision {
        Precision::F64 => run_timed::<f64>(kernel, n, d, h, reps, warmup, seed),
        Precision::F32 => run_timed::<f32>(kernel, n, d, h, reps, warmup, seed),
    }));
    match outcome {
        Ok(Ok((times, peak))) => {
            let (mean, std) = mean_std(&times);
            sample.mean_seconds = Some(mean);
            sample.std_seconds = Some(std);
            sample.peak_entries_tracked = Some(peak);
            sample.status = SampleStatus::Ok;
        }
        Ok(Err(e)) => sample.error = Some(e.to_string()),
        Err(_) => sample.error = Some("kernel panicked".into()),
    }
    Ok(sample)
}

type Heads<T> = Vec<(Matrix<T>, Matrix<T>, Matrix<T>)>;

fn run_timed<T: Scalar>(
    kernel: KernelKind,
    n: usize,
    d: usize,
    h: usize,
    reps: usize,
    warmup: usize,
    seed: RandomSeed,
) -> Result<(Vec<f64>, u128)> {
    let heads: Heads<T> = (0..h as u64)
        .map(|i| {
            let s = seed.derive(i);
            (
                sample_gaussian(n, d, s.derive(0)),
                sample_gaussian(n, d, s.derive(1)),
                sample_gaussian(n, d, s.derive(2)),
            )
        })
        .collect();
    let call = || -> Result<()> {
        for (q, k, v) in &heads {
            std::hint::black_box(attention(q, k, v, 1.0, kernel, NormMode::InputOutput)?);
        }
        Ok(())
    };
    for _ in 0..warmup {
        call()?;
    }
    // Heads run one after another, so the peak over a call is one head's peak.
    let mut times = Vec::with_capacity(reps);
    let mut peak = 0;
    for _ in 0..reps {
        let start = Instant::now();
        let (r, p) = memtrack::measure(call);
        times.push(start.elapsed().as_secs_f64());
        r?;
        peak = peak.max(p.peak);
    }
    Ok((times, peak as u128))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Solves the small dense system `m·x = rhs` by Gaussian elimination with
/// partial pivoting.
fn solve<const K: usize>(mut m: [[f64; K]; K], mut rhs: [f64; K]) -> Option<[f64; K]> {
    for col in 0..K {
        let piv = (col..K).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-13 {
            return None;
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in col + 1..K {
            let f = m[r][col] / m[col][col];
            for c in col..K {
                m[r][c] -= f * m[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = [0.0; K];
    for r in (0..K).rev() {
        let tail: f64 = (r + 1..K).map(|c| m[r][c] * x[c]).sum();
        x[r] = (rhs[r] - tail) / m[r][r];
    }
    Some(x)
}

/// Least-squares polynomial of degree `K − 1`, coefficients from the highest
/// power down. `x` is rescaled to `[-1, 1]` around its midpoint before the
/// normal equations are formed.
fn polyfit<const K: usize>(points: &[(f64, f64)]) -> Result<[f64; K]> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < K || points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "degree-{} fit needs at least {K} distinct finite x values",
            K - 1
        )));
    }
    let mid = 0.5 * (xs[0] + xs[xs.len() - 1]);
    let half = 0.5 * (xs[xs.len() - 1] - xs[0]);
    let t = |x: f64| (x - mid) / half;
    let mut m = [[0.0; K]; K];
    let mut rhs = [0.0; K];
    for &(x, y) in points {
        let mut pow = [1.0; K];
        for i in 1..K {
            pow[i] = pow[i - 1] * t(x);
        }
        for i in 0..K {
            rhs[i] += pow[i] * y;
            for j in 0..K {
                m[i][j] += pow[i] * pow[j];
            }
        }
    }
    let c = solve(m, rhs).ok_or_else(|| Error::InvalidArgument("degenerate fit".into()))?;
    // c holds ascending coefficients in t = (x − mid)/half; expand in x.
    let mut out = [0.0; K];
    let mut binom = [[0.0f64; K]; K];
    for i in 0..K {
        binom[i][0] = 1.0;
        for j in 1..=i {
            binom[i][j] = binom[i - 1][j - 1] + if j < i { binom[i - 1][j] } else { 0.0 };
        }
    }
    for (i, &ci) in c.iter().enumerate() {
        // ci·((x − mid)/half)^i = ci/halfⁱ · Σ_j C(i, j) x^j (−mid)^(i−j)
        let s = ci / half.powi(i as i32);
        for j in 0..=i {
            out[K - 1 - j] += s * binom[i][j] * (-mid).powi((i - j) as i32);
        }
    }
    Ok(out)
}

/// Least-squares `y = a·x² + b·x + c`; returns `(a, b, c)`.
pub fn fit_parabola(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    let [a, b, c] = polyfit::<3>(points)?;
    Ok((a, b, c))
}

/// Least-squares `y = m·x + b`; returns `(m, b)`.
pub fn fit_line(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let [m, b] = polyfit::<2>(points)?;
    Ok((m, b))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.iter().any(|p| p.0 <= 0.0 || p.1 <= 0.0) {
        return Err(Error::InvalidArgument(
            "log-log fit needs positive values".into(),
        ));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|p| (p.0.ln(), p.1.ln())).collect();
    Ok(fit_line(&logs)?.0)
}

fn rms_residual(points: &[(f64, f64)], f: impl Fn(f64) -> f64) -> f64 {
    let ss: f64 = points.iter().map(|&(x, y)| (y - f(x)).powi(2)).sum();
    (ss / points.len() as f64).sqrt()
}

/// Largest positive `x` where the parabola `(a, b, c)` meets the line
/// `(m, i)`, beyond which the parabola stays above when `a > 0`.
pub fn parabola_line_intersection(parabola: (f64, f64, f64), line: (f64, f64)) -> Option<f64> {
    let (a, b, c) = parabola;
    let (qa, qb, qc) = (a, b - line.0, c - line.1);
    let roots: Vec<f64> = if qa.abs() <= f64::EPSILON * (qb.abs() + qc.abs()) {
        if qb == 0.0 {
            vec![]
        } else {
            vec![-qc / qb]
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            vec![]
        } else {
            // Numerically stable pair.
            let s = -0.5 * (qb + qb.signum() * disc.sqrt());
            let mut r = vec![s / qa];
            if s != 0.0 {
                r.push(qc / s);
            }
            r
        }
    };
    roots
        .into_iter()
        .filter(|r| r.is_finite() && *r > 0.0)
        .max_by(f64::total_cmp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverReport {
    pub d: usize,
    pub n0_theory: u64,
    pub n1_theory: u64,
    /// Intersection of the fitted direct parabola and efficient line.
    pub n0_empirical: Option<f64>,
    /// Intersection of the fitted tracked-entry curves, rounded up.
    pub n1_empirical: Option<u64>,
    pub n1_empirical_exact: Option<f64>,
    /// `(a, b, c)` of the direct timing parabola.
    pub direct_fit: Option<(f64, f64, f64)>,
    /// `(slope, intercept)` of the efficient timing line.
    pub efficient_fit: Option<(f64, f64)>,
    pub direct_rms_residual: Option<f64>,
    pub efficient_rms_residual: Option<f64>,
    pub samples: Vec<BenchSample>,
}

fn check_grid(n_grid: &[usize]) -> Result<()> {
    if n_grid.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "crossover needs at least 4 grid points, got {}",
            n_grid.len()
        )));
    }
    if n_grid[0] == 0 || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "grid must be positive and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Crossover lengths from measured series. `direct_seconds` and
/// `efficient_seconds` are indexed like `n_grid`; entry counts come from
/// tracking.
pub fn crossover_from_series(
    d: usize,
    n_grid: &[usize],
    direct_seconds: &[f64],
    efficient_seconds: &[f64],
    direct_entries: &[u128],
    efficient_entries: &[u128],
) -> Result<CrossoverReport> {
    check_grid(n_grid)?;
    for len in [
        direct_seconds.len(),
        efficient_seconds.len(),
        direct_entries.len(),
        efficient_entries.len(),
    ] {
        if len != n_grid.len() {
            return Err(Error::InvalidArgument(
                "series length differs from grid".into(),
            ));
        }
    }
    let pts = |ys: &mut dyn Iterator<Item = f64>| -> Vec<(f64, f64)> {
        n_grid.iter().map(|&n| n as f64).zip(ys).collect()
    };
    let dt = pts(&mut direct_seconds.iter().copied());
    let et = pts(&mut efficient_seconds.iter().copied());
    let de = pts(&mut direct_entries.iter().map(|&x| x as f64));
    let ee = pts(&mut efficient_entries.iter().map(|&x| x as f64));

    let direct_fit = fit_parabola(&dt)?;
    let efficient_fit = fit_line(&et)?;
    let n0_empirical = parabola_line_intersection(direct_fit, efficient_fit);
    let n1_empirical_exact = parabola_line_intersection(fit_parabola(&de)?, fit_line(&ee)?);

    let t = costmodel::transition_points(d as u64);
    Ok(CrossoverReport {
        d,
        n0_theory: t.n0,
        n1_theory: t.n1,
        n0_empirical,
        // Entry curves are exact integer polynomials; snap away fit rounding
        // before taking the ceiling.
        n1_empirical: n1_empirical_exact.map(|x| (x - 1e-9 * x.max(1.0)).ceil() as u64),
        n1_empirical_exact,
        direct_fit: Some(direct_fit),
        efficient_fit: Some(efficient_fit),
        direct_rms_residual: Some(rms_residual(&dt, |x| {
            let (a, b, c) = direct_fit;
            a * x * x + b * x + c
        })),
        efficient_rms_residual: Some(rms_residual(&et, |x| efficient_fit.0 * x + efficient_fit.1)),
        samples: Vec::new(),
    })
}

/// Times both Taylor kernels over `n_grid` and locates the crossovers.
pub fn empirical_crossover(
    d: usize,
    n_grid: &[usize],
    reps: usize,
    warmup: usize,
    seed: u64,
    precision: Precision,
) -> Result<CrossoverReport> {
    check_grid(n_grid)?;
    let mut samples = Vec::with_capacity(2 * n_grid.len());
    for &n in n_grid {
        for kernel in [KernelKind::TaylorDirect, KernelKind::TaylorEfficient] {
            samples.push(time_kernel(kernel, n, d, 1, reps, warmup, seed, precision)?);
        }
    }
    let t = costmodel::transition_points(d as u64);
    if samples.iter().any(|s| !s.is_ok()) {
        return Ok(CrossoverReport {
            d,
            n0_theory: t.n0,
            n1_theory: t.n1,
            n0_empirical: None,
            n1_empirical: None,
            n1_empirical_exact: None,
            direct_fit: None,
            efficient_fit: None,
            direct_rms_residual: None,
            efficient_rms_residual: None,
            samples,
        });
    }
    let col = |kernel: KernelKind| samples.iter().filter(move |s| s.kernel == kernel);
    let secs = |k| {
        col(k)
            .map(|s| s.mean_seconds.unwrap_or(f64::NAN))
            .collect::<Vec<_>>()
    };
    let ents = |k| {
        col(k)
            .map(|s| s.peak_entries_tracked.unwrap_or(0))
            .collect::<Vec<_>>()
    };
    let mut report = crossover_from_series(
        d,
        n_grid,
        &secs(KernelKind::TaylorDirect),
        &secs(KernelKind::TaylorEfficient),
        &ents(KernelKind::TaylorDirect),
        &ents(KernelKind::TaylorEfficient),
    )?;
    report.samples = samples;
    Ok(report)
}

/// Smallest `n ≤ max_n` where the tracked efficient peak is at most the
/// tracked direct peak.
pub fn tracked_entry_crossover(d: usize, max_n: usize) -> Result<Option<usize>> {
    for n in 1..=max_n {
        let direct = peak_entries(KernelKind::TaylorDirect, n, d)?;
        let efficient = peak_entries(KernelKind::TaylorEfficient, n, d)?;
        if efficient <= direct {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

/// Geometric grid from `lo` to `hi` with `per_decade` points per factor of
/// ten, rounded and deduplicated.
pub fn geometric_grid(lo: usize, hi: usize, per_decade: usize) -> Result<Vec<usize>> {
    if lo == 0 || hi < lo || per_decade == 0 {
        return Err(Error::InvalidArgument(
            "grid needs 0 < lo <= hi and per_decade > 0".into(),
        ));
    }
    let steps = ((hi as f64 / lo as f64).log10() * per_decade as f64).round() as usize;
    let mut g: Vec<usize> = (0..=steps)
        .map(|i| {
            let x = lo as f64 * 10f64.powf(i as f64 / per_decade as f64);
            (x.round() as usize).clamp(lo, hi)
        })
        .collect();
    g.push(hi);
    g.dedup();
    Ok(g)
}
