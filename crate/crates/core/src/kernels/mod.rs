//! Attention mechanisms: the softmax baseline, Taylor-softmax, the direct
//! quadratic TaylorShift path, the efficient linear path, and a multi-head
//! wrapper.

mod diagnostics;
mod mhsa;
mod softmax;
mod taylor;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::costmodel;
use crate::error::{Error, Result};
use crate::matrix::{Matrix, Scalar};

pub use diagnostics::{approximation_gap, finite_diff_jacobian, GapStats, JacobianBlocks};
pub use mhsa::{mhsa_forward, MhsaWeights};
pub use softmax::{softmax_attention, softmax_attention_scaled};
pub use taylor::{
    direct_taylorshift, efficient_taylorshift, efficient_taylorshift_traced, taylor_softmax_rows,
    IntermediateStats, TAYLOR_ORDER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Softmax,
    TaylorDirect,
    TaylorEfficient,
    /// Direct below the speed crossover `N₀(d)`, efficient from it onwards.
    Auto,
}

impl KernelKind {
    pub const fn name(self) -> &'static str {
        match self {
            KernelKind::Softmax => "softmax",
            KernelKind::TaylorDirect => "taylor_direct",
            KernelKind::TaylorEfficient => "taylor_efficient",
            KernelKind::Auto => "auto",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "softmax" => Ok(Self::Softmax),
            "taylor_direct" | "direct" => Ok(Self::TaylorDirect),
            "taylor_efficient" | "efficient" => Ok(Self::TaylorEfficient),
            "auto" => Ok(Self::Auto),
            _ => Err(Error::InvalidArgument(format!("unknown kernel '{s}'"))),
        }
    }
}

/// Which stages of the query/key/output normalization are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Raw Taylor-softmax attention, no rescaling anywhere.
    None,
    /// Queries scaled to norm τ, keys to unit norm.
    Input,
    /// Input normalization plus the `√(N/d)` output scale.
    #[default]
    InputOutput,
}

impl NormMode {
    pub const fn name(self) -> &'static str {
        match self {
            NormMode::None => "none",
            NormMode::Input => "input",
            NormMode::InputOutput => "input_output",
        }
    }

    pub const fn normalizes_inputs(self) -> bool {
        !matches!(self, NormMode::None)
    }
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NormMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "none" => Ok(Self::None),
            "input" => Ok(Self::Input),
            "input_output" => Ok(Self::InputOutput),
            _ => Err(Error::InvalidArgument(format!("unknown norm mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "32")]
    F32,
    #[default]
    #[serde(rename = "64")]
    F64,
}

impl Precision {
    pub const fn bits(self) -> u32 {
        match self {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "32" | "f32" => Ok(Self::F32),
            "64" | "f64" => Ok(Self::F64),
            _ => Err(Error::InvalidArgument(format!("unknown precision '{s}'"))),
        }
    }
}

/// Shape and mode parameters of one attention computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub n: usize,
    /// Per-head dimension.
    pub d: usize,
    pub h: usize,
    /// One temperature per head.
    pub tau: Vec<f64>,
    pub kernel: KernelKind,
    pub norm_mode: NormMode,
    pub precision: Precision,
}

impl AttentionConfig {
    pub fn single_head(
        n: usize,
        d: usize,
        tau: f64,
        kernel: KernelKind,
        norm_mode: NormMode,
    ) -> Self {
        Self {
            n,
            d,
            h: 1,
            tau: vec![tau],
            kernel,
            norm_mode,
            precision: Precision::F64,
        }
    }

    /// Fixed at 2; always even so Taylor-softmax yields a distribution.
    pub const fn taylor_order(&self) -> u32 {
        TAYLOR_ORDER
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.h == 0 {
            return Err(Error::InvalidArgument(format!(
                "n, d and h must be positive (got n={}, d={}, h={})",
                self.n, self.d, self.h
            )));
        }
        if self.tau.len() != self.h {
            return Err(Error::InvalidArgument(format!(
                "{} temperatures for {} heads",
                self.tau.len(),
                self.h
            )));
        }
        for &t in &self.tau {
            check_tau(t)?;
        }
        Ok(())
    }

    /// Runs single-head attention, checking that the inputs match the
    /// configured shape.
    pub fn run<T: Scalar>(&self, q: &Matrix<T>, k: &Matrix<T>, v: &Matrix<T>) -> Result<Matrix<T>> {
        self.validate()?;
        if self.h != 1 {
            return Err(Error::InvalidArgument("use mhsa_forward for h > 1".into()));
        }
        if q.shape() != (self.n, self.d) {
            return Err(Error::DimensionMismatch {
                op: "AttentionConfig::run",
                left: (self.n, self.d),
                right: q.shape(),
            });
        }
        attention(q, k, v, self.tau[0], self.kernel, self.norm_mode)
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "temperature must be positive and finite, got {tau}"
        )))
    }
}

pub(crate) fn check_qkv<T: Scalar>(q: &Matrix<T>, k: &Matrix<T>, v: &Matrix<T>) -> Result<()> {
    if q.shape() != k.shape() {
        return Err(Error::DimensionMismatch {
            op: "attention (q vs k)",
            left: q.shape(),
            right: k.shape(),
        });
    }
    if v.shape() != k.shape() {
        return Err(Error::DimensionMismatch {
            op: "attention (k vs v)",
            left: k.shape(),
            right: v.shape(),
        });
    }
    Ok(())
}

/// Implementation chosen by [`KernelKind::Auto`] for a sequence of length
/// `n` with head dimension `d`.
pub fn select_kernel(n: usize, d: usize) -> KernelKind {
    if (n as u128) < costmodel::n0(d as u64).n0 as u128 {
        KernelKind::TaylorDirect
    } else {
        KernelKind::TaylorEfficient
    }
}

/// Auto-dispatched TaylorShift: the quadratic path for short sequences, the
/// linear path once it needs fewer operations.
pub fn attention_auto<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    tau: f64,
    norm_mode: NormMode,
) -> Result<Matrix<T>> {
    match select_kernel(q.rows(), q.cols()) {
        KernelKind::TaylorDirect => direct_taylorshift(q, k, v, tau, norm_mode),
        _ => efficient_taylorshift(q, k, v, tau, norm_mode),
    }
}

/// Single-head attention with the given kernel. `tau` and `norm_mode` are
/// ignored by the softmax baseline.
pub fn attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    tau: f64,
    kernel: KernelKind,
    norm_mode: NormMode,
) -> Result<Matrix<T>> {
    match kernel {
        KernelKind::Softmax => softmax_attention(q, k, v),
        KernelKind::TaylorDirect => direct_taylorshift(q, k, v, tau, norm_mode),
        KernelKind::TaylorEfficient => efficient_taylorshift(q, k, v, tau, norm_mode),
        KernelKind::Auto => attention_auto(q, k, v, tau, norm_mode),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispatch_follows_speed_crossover() {
        assert_eq!(select_kernel(100, 16), KernelKind::TaylorDirect);
        assert_eq!(select_kernel(500, 16), KernelKind::TaylorEfficient);
        assert_eq!(select_kernel(73, 8), KernelKind::TaylorEfficient);
        assert_eq!(select_kernel(72, 8), KernelKind::TaylorDirect);
    }

    #[test]
    fn parses_names() {
        assert_eq!(
            "taylor-efficient".parse::<KernelKind>().unwrap(),
            KernelKind::TaylorEfficient
        );
        assert_eq!(
            "input-output".parse::<NormMode>().unwrap(),
            NormMode::InputOutput
        );
        assert_eq!("32".parse::<Precision>().unwrap(), Precision::F32);
        assert!("cubic".parse::<KernelKind>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c =
            AttentionConfig::single_head(8, 4, 1.0, KernelKind::Auto, NormMode::InputOutput);
        assert!(c.validate().is_ok());
        assert_eq!(c.taylor_order() % 2, 0);
        c.tau[0] = 0.0;
        assert!(c.validate().is_err());
        c.tau = vec![1.0, 2.0];
        assert!(c.validate().is_err());
    }
}
