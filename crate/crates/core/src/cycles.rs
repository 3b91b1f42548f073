//! Closed-form cycle accounting for the base and approximate pipelines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CycleParams {
    /// Constant overhead added to the approximate pipeline latency.
    pub alpha: u64,
    /// Depth of the candidate selector's refill loop.
    pub refill_depth: u64,
    /// Greedy-score registers scanned per cycle.
    pub scan_width: u64,
    pub div_cycles: u64,
    pub mul_acc_cycles: u64,
}

impl Default for CycleParams {
    fn default() -> Self {
        CycleParams {
            alpha: 27,
            refill_depth: 4,
            scan_width: 16,
            div_cycles: 7,
            mul_acc_cycles: 2,
        }
    }
}

impl CycleParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("refill_depth", self.refill_depth),
            ("scan_width", self.scan_width),
            ("div_cycles", self.div_cycles),
            ("mul_acc_cycles", self.mul_acc_cycles),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!(
                "cycle parameter {name} must be >= 1"
            )));
        }
        Ok(())
    }

    /// Cycles one base module spends on a query: a row per cycle plus the
    /// divide and multiply-accumulate tail of the output module.
    pub fn base_module_cycles(&self, n: u64) -> u64 {
        n + self.div_cycles + self.mul_acc_cycles
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCycles {
    pub stage: String,
    pub cycles: u64,
    /// Whether the term is part of `latency_cycles`.
    pub in_latency: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleReport {
    pub latency_cycles: u64,
    pub throughput_cycles_per_query: u64,
    pub breakdown: Vec<StageCycles>,
}

fn stage(name: &str, cycles: u64, in_latency: bool) -> StageCycles {
    StageCycles {
        stage: name.to_string(),
        cycles,
        in_latency,
    }
}

/// `3n + 27` with default parameters.
pub fn base_latency(n: u64) -> u64 {
    3 * CycleParams::default().base_module_cycles(n)
}

/// `n + 9` with default parameters.
pub fn base_throughput(n: u64) -> u64 {
    CycleParams::default().base_module_cycles(n)
}

pub fn base_report(n: u64, params: &CycleParams) -> CycleReport {
    let module = params.base_module_cycles(n);
    CycleReport {
        latency_cycles: 3 * module,
        throughput_cycles_per_query: module,
        breakdown: vec![
            stage("dot_product", module, true),
            stage("exponent", module, true),
            stage("output", module, true),
        ],
    }
}

/// `M + C + 2K + alpha`.
pub fn approx_latency(m: u64, c: u64, k: u64, params: &CycleParams) -> Result<u64> {
    if k > c {
        return Err(Error::InvalidArgument(format!(
            "post-scoring count {k} exceeds candidate count {c}"
        )));
    }
    Ok(m + c + 2 * k + params.alpha)
}

/// Candidate selector occupancy: `M` iterations plus the greedy-score scan.
pub fn approx_throughput(m: u64, n: u64, params: &CycleParams) -> u64 {
    m + n.div_ceil(params.scan_width)
}

pub fn approx_report(m: u64, c: u64, k: u64, n: u64, params: &CycleParams) -> Result<CycleReport> {
    let latency = approx_latency(m, c, k, params)?;
    Ok(CycleReport {
        latency_cycles: latency,
        throughput_cycles_per_query: approx_throughput(m, n, params),
        breakdown: vec![
            stage("candidate_selection", m, true),
            stage("dot_product", c, true),
            stage("exponent", k, true),
            stage("output", k, true),
            stage("alpha", params.alpha, true),
            stage("greedy_scan", n.div_ceil(params.scan_width), false),
            stage("refill_init", params.refill_depth, false),
        ],
    })
}

/// True when the approximate pipeline finishes a query sooner.
pub fn approx_is_faster(m: u64, c: u64, k: u64, n: u64, params: &CycleParams) -> bool {
    approx_latency(m, c, k, params).is_ok_and(|a| a < 3 * params.base_module_cycles(n))
}
