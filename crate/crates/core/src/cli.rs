//! The `tslab` command line.
//!
//! Every command writes a table (CSV with a header row, or a JSON array of
//! flat objects with the same field names) preceded by a `#` line holding the
//! effective configuration. For CSV that line goes to the output itself; for
//! JSON it goes to standard error so the output stays valid JSON.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::bench::{self, geometric_grid};
use crate::costmodel::{self, Implementation};
use crate::error::{Error, Result};
use crate::io as mio;
use crate::kernels::{
    attention, direct_taylorshift, efficient_taylorshift, KernelKind, NormMode, Precision,
};
use crate::matrix::{Matrix, Scalar};
use crate::sampling::{sample_gaussian, RandomSeed};
use crate::scaling;

pub const OUT_DIR_ENV: &str = "TS_LAB_OUT";
pub const EQUIV_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "tslab", version, about = "TaylorShift attention lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    pub format: Format,
    /// Output file. Defaults to standard output, or to a file named after the
    /// command inside $TS_LAB_OUT when that is set.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0, global = true)]
    pub seed: u64,
    /// Floating-point width for kernels that run on generated or loaded data.
    #[arg(long, value_parser = parse_precision, default_value = "64", global = true)]
    pub precision: Precision,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kernel(s: &str) -> std::result::Result<KernelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_norm(s: &str) -> std::result::Result<NormMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Operation and entry counts over a grid.
    Cost(CostArgs),
    /// Theoretical speed and memory crossover lengths.
    CrossoverTheory(CrossoverTheoryArgs),
    /// Random direct-vs-efficient agreement check.
    Equiv(EquivArgs),
    /// Mean sizes of intermediate expressions.
    Scaling(ScalingArgs),
    /// Wall time and tracked peak entries.
    Bench(BenchArgs),
    /// Crossover lengths fitted from measured timings.
    CrossoverEmpirical(CrossoverEmpiricalArgs),
    /// Multi-head costs for every head count dividing the embedding width.
    Heads(HeadsArgs),
    /// Intermediate magnitudes with and without normalization.
    Instability(InstabilityArgs),
    /// One forward pass on Q, K, V read from a file.
    Attend(AttendArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Cost(_) => "cost",
            Command::CrossoverTheory(_) => "crossover-theory",
            Command::Equiv(_) => "equiv",
            Command::Scaling(_) => "scaling",
            Command::Bench(_) => "bench",
            Command::CrossoverEmpirical(_) => "crossover-empirical",
            Command::Heads(_) => "heads",
            Command::Instability(_) => "instability",
            Command::Attend(_) => "attend",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CostArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub d: Vec<u64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub h: Vec<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct CrossoverTheoryArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub d: Vec<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct EquivArgs {
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 512)]
    pub max_n: usize,
    /// Head dimensions are drawn from the powers of two up to this value.
    #[arg(long, default_value_t = 64)]
    pub max_d: usize,
    /// Fixed temperature; drawn uniformly from [0.1, 80] when absent.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_parser = parse_norm, default_value = "input_output")]
    pub norm_mode: NormMode,
}

#[derive(Debug, Args, Serialize)]
pub struct ScalingArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub d: Vec<usize>,
    #[arg(long, default_value_t = 512)]
    pub trials: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_parser = parse_kernel, value_delimiter = ',', required = true)]
    pub kernel: Vec<KernelKind>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub d: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub h: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct CrossoverEmpiricalArgs {
    #[arg(long)]
    pub d: usize,
    /// Sequence lengths; defaults to a geometric grid with 8 points per
    /// decade from N₀/8 to 8·N₀.
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct HeadsArgs {
    #[arg(long)]
    pub d_emb: u64,
    #[arg(long)]
    pub n: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct InstabilityArgs {
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    pub scales: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct AttendArgs {
    /// File holding Q, K and V as three consecutive matrix blocks.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_parser = parse_kernel, default_value = "auto")]
    pub kernel: KernelKind,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, value_parser = parse_norm, default_value = "input_output")]
    pub norm_mode: NormMode,
}

/// One cell of an output table.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u128),
    Float(f64),
    Str(String),
    Bool(bool),
    Null,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(x) => x.to_string(),
            Cell::Float(x) => format_float(*x),
            Cell::Str(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Null => String::new(),
        }
    }
}

/// Shortest round-trip form, switching to exponent notation far from 1.
fn format_float(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cell::Int(x) => s.serialize_u128(*x),
            Cell::Float(x) if x.is_finite() => s.serialize_f64(*x),
            Cell::Float(x) => s.serialize_str(&x.to_string()),
            Cell::Str(x) => s.serialize_str(x),
            Cell::Bool(b) => s.serialize_bool(*b),
            Cell::Null => s.serialize_none(),
        }
    }
}

impl From<u128> for Cell {
    fn from(x: u128) -> Self {
        Cell::Int(x)
    }
}
impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as u128)
    }
}
impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as u128)
    }
}
impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}
impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}
impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Str(x.to_string())
    }
}
impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::Str(x)
    }
}
impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(x: Option<T>) -> Self {
        x.map_or(Cell::Null, Into::into)
    }
}

/// Column names plus rows in that column order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    /// Extra `#` lines written after the rows in CSV output.
    pub footer: Vec<String>,
}

impl Table {
    fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            ..Self::default()
        }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let j = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| &r[j]).collect())
    }
}

struct JsonRow<'a>(&'a [&'static str], &'a [Cell]);

impl Serialize for JsonRow<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in self.0.iter().zip(self.1) {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }
}

fn write_table(w: &mut dyn Write, t: &Table, format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            let mut cw = csv::Writer::from_writer(&mut *w);
            cw.write_record(&t.columns).map_err(csv_err)?;
            for r in &t.rows {
                cw.write_record(r.iter().map(Cell::csv)).map_err(csv_err)?;
            }
            cw.flush()?;
            drop(cw);
            for line in &t.footer {
                writeln!(w, "# {line}")?;
            }
        }
        Format::Json => {
            let rows: Vec<JsonRow> = t.rows.iter().map(|r| JsonRow(&t.columns, r)).collect();
            serde_json::to_writer_pretty(&mut *w, &rows).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(w)?;
        }
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// What a command produced.
pub enum Output {
    Table(Table),
    Matrix(String),
}

/// Outcome of a command: its output and whether its check passed.
pub struct Outcome {
    pub output: Output,
    pub check_failed: bool,
    /// Lines added to the configuration header.
    pub notes: Vec<String>,
}

impl From<Table> for Outcome {
    fn from(t: Table) -> Self {
        Outcome {
            output: Output::Table(t),
            check_failed: false,
            notes: Vec::new(),
        }
    }
}

/// Executes a parsed command without writing anything.
pub fn execute(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Cost(a) => cmd_cost(a).map(Into::into),
        Command::CrossoverTheory(a) => cmd_crossover_theory(a).map(Into::into),
        Command::Equiv(a) => cmd_equiv(a, cli.seed),
        Command::Scaling(a) => cmd_scaling(a, cli.seed),
        Command::Bench(a) => cmd_bench(a, cli.seed, cli.precision).map(Into::into),
        Command::CrossoverEmpirical(a) => {
            cmd_crossover_empirical(a, cli.seed, cli.precision).map(Into::into)
        }
        Command::Heads(a) => cmd_heads(a).map(Into::into),
        Command::Instability(a) => cmd_instability(a, cli.seed, cli.precision).map(Into::into),
        Command::Attend(a) => cmd_attend(a, cli.precision, cli.format),
    }
}

fn cmd_cost(a: &CostArgs) -> Result<Table> {
    let mut t = Table::new(&[
        "n",
        "d",
        "h",
        "ops_direct",
        "ops_eff",
        "entries_direct",
        "entries_eff",
    ]);
    for r in costmodel::cost_sweep(&a.d, &a.n, &a.h)? {
        t.push(vec![
            r.n.into(),
            r.d.into(),
            r.h.into(),
            r.ops_direct.into(),
            r.ops_eff.into(),
            r.entries_direct.into(),
            r.entries_eff.into(),
        ]);
    }
    Ok(t)
}

fn cmd_crossover_theory(a: &CrossoverTheoryArgs) -> Result<Table> {
    if let Some(&bad) = a.d.iter().find(|&&d| d == 0) {
        return Err(Error::InvalidArgument(format!(
            "d must be positive, got {bad}"
        )));
    }
    let mut t = Table::new(&["d", "n0_exact", "n0", "n1_exact", "n1"]);
    for &d in &a.d {
        let p = costmodel::transition_points(d);
        t.push(vec![
            d.into(),
            p.n0_exact.into(),
            p.n0.into(),
            p.n1_exact.into(),
            p.n1.into(),
        ]);
    }
    Ok(t)
}

/// Largest `|direct − efficient| / max|direct|` over random instances, with
/// the instance where it occurred.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivSummary {
    pub trials: usize,
    pub max_rel_discrepancy: f64,
    pub worst_n: usize,
    pub worst_d: usize,
    pub worst_tau: f64,
}

pub fn equivalence_check(
    trials: usize,
    max_n: usize,
    max_d: usize,
    tau: Option<f64>,
    norm_mode: NormMode,
    seed: u64,
) -> Result<EquivSummary> {
    if trials == 0 || max_n == 0 || max_d == 0 {
        return Err(Error::InvalidArgument(
            "trials, max-n and max-d must be positive".into(),
        ));
    }
    let dims: Vec<usize> = (0..)
        .map(|p| 1usize << p)
        .take_while(|&d| d <= max_d)
        .collect();
    let base = RandomSeed::new(seed, 0xE0);
    let mut rng = base.rng();
    let mut s = EquivSummary {
        trials,
        max_rel_discrepancy: 0.0,
        worst_n: 0,
        worst_d: 0,
        worst_tau: 0.0,
    };
    for t in 0..trials as u64 {
        let n = rng.gen_range(1..=max_n);
        let d = dims[rng.gen_range(0..dims.len())];
        let tau = tau.unwrap_or_else(|| rng.gen_range(0.1..=80.0));
        let ts = base.derive(t);
        let q: Matrix = sample_gaussian(n, d, ts.derive(0));
        let k: Matrix = sample_gaussian(n, d, ts.derive(1));
        let v: Matrix = sample_gaussian(n, d, ts.derive(2));
        let a = direct_taylorshift(&q, &k, &v, tau, norm_mode)?;
        let b = efficient_taylorshift(&q, &k, &v, tau, norm_mode)?;
        let rel = a.max_abs_diff(&b)? / a.max_abs().max(f64::MIN_POSITIVE);
        if !(rel <= s.max_rel_discrepancy) {
            s.max_rel_discrepancy = rel;
            s.worst_n = n;
            s.worst_d = d;
            s.worst_tau = tau;
        }
    }
    Ok(s)
}

fn cmd_equiv(a: &EquivArgs, seed: u64) -> Result<Outcome> {
    let s = equivalence_check(a.trials, a.max_n, a.max_d, a.tau, a.norm_mode, seed)?;
    let passed = s.max_rel_discrepancy <= EQUIV_THRESHOLD;
    let mut t = Table::new(&[
        "trials",
        "max_rel_discrepancy",
        "worst_n",
        "worst_d",
        "worst_tau",
        "threshold",
        "passed",
    ]);
    t.push(vec![
        s.trials.into(),
        s.max_rel_discrepancy.into(),
        s.worst_n.into(),
        s.worst_d.into(),
        s.worst_tau.into(),
        EQUIV_THRESHOLD.into(),
        passed.into(),
    ]);
    Ok(Outcome {
        output: Output::Table(t),
        check_failed: !passed,
        notes: Vec::new(),
    })
}

fn cmd_scaling(a: &ScalingArgs, seed: u64) -> Result<Outcome> {
    let mut t = Table::new(&[
        "n",
        "d",
        "trials",
        "expression",
        "measured_mean_norm",
        "predicted",
        "rel_error",
    ]);
    for r in scaling::scaling_sweep(&a.n, &a.d, a.trials, seed)? {
        for e in &r.norms {
            t.push(vec![
                r.n.into(),
                r.d.into(),
                r.trials.into(),
                e.expression.name().into(),
                e.measured_mean_norm.into(),
                e.predicted.into(),
                e.rel_error.into(),
            ]);
        }
    }
    Ok(Outcome {
        output: Output::Table(t),
        check_failed: false,
        notes: vec!["unnormalized pipeline: unit-sphere rows, no temperature, no rebalancing, no 1/N on values".into()],
    })
}

fn sample_cells(s: &bench::BenchSample) -> Vec<Cell> {
    vec![
        s.kernel.name().into(),
        s.n.into(),
        s.d.into(),
        s.h.into(),
        s.precision.bits().to_string().into(),
        s.reps.into(),
        s.warmup.into(),
        s.mean_seconds.into(),
        s.std_seconds.into(),
        s.peak_entries_tracked.into(),
        s.peak_entries_model.into(),
        if s.is_ok() { "ok" } else { "failed" }.into(),
        s.error.clone().into(),
    ]
}

const SAMPLE_COLUMNS: [&str; 13] = [
    "kernel",
    "n",
    "d",
    "h",
    "precision",
    "reps",
    "warmup",
    "mean_seconds",
    "std_seconds",
    "peak_entries_tracked",
    "peak_entries_model",
    "status",
    "error",
];

fn cmd_bench(a: &BenchArgs, seed: u64, precision: Precision) -> Result<Table> {
    let mut t = Table::new(&SAMPLE_COLUMNS);
    for &kernel in &a.kernel {
        for &d in &a.d {
            for &n in &a.n {
                let s = bench::time_kernel(kernel, n, d, a.h, a.reps, a.warmup, seed, precision)?;
                t.push(sample_cells(&s));
            }
        }
    }
    Ok(t)
}

fn cmd_crossover_empirical(
    a: &CrossoverEmpiricalArgs,
    seed: u64,
    precision: Precision,
) -> Result<Table> {
    if a.d == 0 {
        return Err(Error::InvalidArgument("d must be positive".into()));
    }
    let grid = match &a.n_grid {
        Some(g) => g.clone(),
        None => {
            let n0 = costmodel::n0(a.d as u64).n0 as usize;
            geometric_grid((n0 / 8).max(1), n0 * 8, 8)?
        }
    };
    let r = bench::empirical_crossover(a.d, &grid, a.reps, a.warmup, seed, precision)?;
    let mut t = Table::new(&[
        "d",
        "n0_theory",
        "n0_empirical",
        "n1_theory",
        "n1_empirical",
        "n1_empirical_exact",
        "direct_a",
        "direct_b",
        "direct_c",
        "efficient_slope",
        "efficient_intercept",
        "direct_rms_residual",
        "efficient_rms_residual",
        "grid_points",
    ]);
    let (pa, pb, pc) = match r.direct_fit {
        Some((a, b, c)) => (Some(a), Some(b), Some(c)),
        None => (None, None, None),
    };
    t.push(vec![
        r.d.into(),
        r.n0_theory.into(),
        r.n0_empirical.into(),
        r.n1_theory.into(),
        r.n1_empirical.into(),
        r.n1_empirical_exact.into(),
        pa.into(),
        pb.into(),
        pc.into(),
        r.efficient_fit.map(|f| f.0).into(),
        r.efficient_fit.map(|f| f.1).into(),
        r.direct_rms_residual.into(),
        r.efficient_rms_residual.into(),
        grid.len().into(),
    ]);
    for s in r.samples.iter().filter(|s| !s.is_ok()) {
        t.footer.push(format!(
            "failed sample {} n={}: {}",
            s.kernel,
            s.n,
            s.error.as_deref().unwrap_or("unknown")
        ));
    }
    Ok(t)
}

fn cmd_heads(a: &HeadsArgs) -> Result<Table> {
    if a.d_emb == 0 || a.n == 0 {
        return Err(Error::InvalidArgument(
            "d-emb and n must be positive".into(),
        ));
    }
    let opt = costmodel::optimal_head_dim_ops();
    let d_mem = costmodel::optimal_head_dim_entries(a.n)?;
    let mut t = Table::new(&[
        "d_emb",
        "n",
        "h",
        "d_head",
        "ops_direct",
        "ops_eff",
        "entries_direct",
        "entries_eff",
        "d_star_ops",
        "d_star_ops_bisection",
        "d_star_entries",
    ]);
    for h in costmodel::divisors(a.d_emb) {
        let c = |f: fn(u64, u64, u64, Implementation) -> Result<u128>, imp| f(a.n, a.d_emb, h, imp);
        t.push(vec![
            a.d_emb.into(),
            a.n.into(),
            h.into(),
            (a.d_emb / h).into(),
            c(costmodel::mhsa_ops, Implementation::Direct)?.into(),
            c(costmodel::mhsa_ops, Implementation::Efficient)?.into(),
            c(costmodel::mhsa_entries, Implementation::Direct)?.into(),
            c(costmodel::mhsa_entries, Implementation::Efficient)?.into(),
            opt.closed_form.into(),
            opt.bisection.into(),
            d_mem.into(),
        ]);
    }
    Ok(t)
}

fn cmd_instability(a: &InstabilityArgs, seed: u64, precision: Precision) -> Result<Table> {
    if a.scales.is_empty() {
        return Err(Error::InvalidArgument("no scales given".into()));
    }
    let mut t = Table::new(&[
        "n",
        "d",
        "input_scale",
        "precision",
        "max_abs_unnormalized",
        "max_abs_normalized",
        "max_intermediate_unnormalized",
        "max_intermediate_normalized",
        "finite_unnormalized",
        "finite_normalized",
    ]);
    let mut pts = Vec::new();
    for &s in &a.scales {
        let r = scaling::instability_demo(a.n, a.d, s, precision, seed)?;
        if r.finite_unnormalized {
            pts.push((s, r.max_abs_unnormalized));
        }
        t.push(vec![
            r.n.into(),
            r.d.into(),
            r.input_scale.into(),
            r.precision.bits().to_string().into(),
            r.max_abs_unnormalized.into(),
            r.max_abs_normalized.into(),
            r.max_intermediate_unnormalized.into(),
            r.max_intermediate_normalized.into(),
            r.finite_unnormalized.into(),
            r.finite_normalized.into(),
        ]);
    }
    let distinct: BTreeSet<u64> = pts.iter().map(|p| p.0.to_bits()).collect();
    if distinct.len() >= 2 {
        t.footer.push(format!(
            "log-log slope of max_abs_unnormalized over finite rows: {:.6}",
            bench::log_log_slope(&pts)?
        ));
    }
    Ok(t)
}

fn cmd_attend(a: &AttendArgs, precision: Precision, format: Format) -> Result<Outcome> {
    let text = match precision {
        Precision::F64 => attend_file::<f64>(a, format)?,
        Precision::F32 => attend_file::<f32>(a, format)?,
    };
    Ok(Outcome {
        output: Output::Matrix(text),
        check_failed: false,
        notes: Vec::new(),
    })
}

fn attend_file<T: Scalar + Serialize>(a: &AttendArgs, format: Format) -> Result<String> {
    let ms = mio::read_matrix_file::<T>(&a.input)?;
    let [q, k, v] = <[Matrix<T>; 3]>::try_from(ms)
        .map_err(|ms| Error::Parse(format!("expected 3 matrices (Q, K, V), found {}", ms.len())))?;
    let y = attention(&q, &k, &v, a.tau, a.kernel, a.norm_mode)?;
    Ok(match format {
        Format::Csv => mio::format_matrix(&y),
        Format::Json => serde_json::to_string(&y).map_err(|e| Error::Io(e.to_string()))? + "\n",
    })
}

fn config_line(cli: &Cli, notes: &[String]) -> String {
    let cfg = serde_json::to_string(cli).unwrap_or_else(|_| "{}".into());
    let mut s = format!("# tslab {} {cfg}\n", cli.command.name());
    for n in notes {
        s.push_str(&format!("# {n}\n"));
    }
    s
}

fn output_path(cli: &Cli) -> Option<PathBuf> {
    if let Some(p) = &cli.out {
        return Some(p.clone());
    }
    let dir = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty())?;
    let ext = match (&cli.command, cli.format) {
        (Command::Attend(_), Format::Csv) => "txt",
        (_, Format::Csv) => "csv",
        (_, Format::Json) => "json",
    };
    Some(PathBuf::from(dir).join(format!("{}.{ext}", cli.command.name())))
}

fn emit(
    cli: &Cli,
    outcome: &Outcome,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<()> {
    let mut file;
    let w: &mut dyn Write = match output_path(cli) {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            file = BufWriter::new(
                File::create(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
            );
            &mut file
        }
        None => stdout,
    };
    let header = config_line(cli, &outcome.notes);
    match cli.format {
        Format::Csv => w.write_all(header.as_bytes())?,
        Format::Json => stderr.write_all(header.as_bytes())?,
    }
    match &outcome.output {
        Output::Table(t) => write_table(w, t, cli.format)?,
        Output::Matrix(s) => w.write_all(s.as_bytes())?,
    }
    w.flush()?;
    Ok(())
}

/// Parses `argv` (program name first), runs the command, and writes its
/// output. Returns the process exit code: 0 on success, 1 when `equiv`
/// finds a discrepancy above threshold, 2 on usage or runtime errors.
pub fn run_with<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    2
                }
            };
        }
    };
    let result =
        execute(&cli).and_then(|o| emit(&cli, &o, stdout, stderr).map(|()| o.check_failed));
    match result {
        Ok(false) => 0,
        Ok(true) => 1,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            2
        }
    }
}

/// [`run_with`] on the process's standard streams.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}
