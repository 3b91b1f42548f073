//! Exact vs. base-quantized vs. approximate attention over a workload.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{attention_approx, KeyValueMemory};
use crate::cycles::{base_report, CycleParams, CycleReport};
use crate::error::{Error, Result};
use crate::fixedpoint::{make_schedule, PrecisionSchedule};
use crate::harness::synth::Workload;
use crate::pipeline::{quantize_vector, Pipeline};
use crate::reference::{attention_exact, top_k, true_scores};
use crate::search::{Fallback, SelectionConfig};

/// Iteration budget, either absolute or as a fraction of `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Budget {
    Absolute(usize),
    Fraction { fraction: f64 },
}

impl Budget {
    pub fn resolve(&self, n: usize) -> Result<usize> {
        match *self {
            Budget::Absolute(m) => Ok(m),
            Budget::Fraction { fraction } if fraction.is_finite() && fraction >= 0.0 => {
                Ok((fraction * n as f64).floor() as usize)
            }
            Budget::Fraction { fraction } => Err(Error::Config(format!(
                "budget fraction {fraction} is invalid"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub d: usize,
    pub i_bits: u32,
    pub f_bits: u32,
    pub m: Budget,
    pub t_percent: f64,
    pub heuristic: bool,
    /// High/low bit split of the exponent tables; even split when absent.
    pub lut_split: Option<[u32; 2]>,
    pub alpha: u64,
    pub seed: u64,
    /// Queries to generate for synthetic runs.
    pub queries: usize,
    pub top_k: usize,
    /// Planted rows per query for synthetic runs.
    pub planted: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n: 320,
            d: 64,
            i_bits: 4,
            f_bits: 4,
            m: Budget::Fraction { fraction: 0.5 },
            t_percent: 5.0,
            heuristic: true,
            lut_split: None,
            alpha: 27,
            seed: 0,
            queries: 32,
            top_k: 5,
            planted: 5,
        }
    }
}

impl ExperimentConfig {
    /// `M = n/2`, `T = 5`.
    pub fn conservative() -> Self {
        ExperimentConfig::default()
    }

    /// `M = n/8`, `T = 10`.
    pub fn aggressive() -> Self {
        ExperimentConfig {
            m: Budget::Fraction { fraction: 0.125 },
            t_percent: 10.0,
            ..ExperimentConfig::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::Config("n and d must be >= 1".into()));
        }
        if self.i_bits == 0 || self.f_bits == 0 {
            return Err(Error::Config("i_bits and f_bits must be >= 1".into()));
        }
        if self.top_k == 0 || self.top_k > self.n {
            return Err(Error::Config(format!(
                "top_k must be in 1..={} (got {})",
                self.n, self.top_k
            )));
        }
        self.m.resolve(self.n)?;
        self.selection()?.validate()?;
        self.cycle_params().validate()
    }

    pub fn resolved_m(&self) -> Result<usize> {
        self.m.resolve(self.n)
    }

    pub fn selection(&self) -> Result<SelectionConfig> {
        Ok(SelectionConfig {
            m: self.resolved_m()?,
            t_percent: self.t_percent,
            heuristic: self.heuristic,
        })
    }

    pub fn cycle_params(&self) -> CycleParams {
        CycleParams {
            alpha: self.alpha,
            ..CycleParams::default()
        }
    }

    pub fn schedule(&self) -> Result<PrecisionSchedule> {
        make_schedule(self.n, self.d, self.i_bits, self.f_bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QueryMetrics {
    /// Fraction of the exact top-k among post-scoring survivors.
    pub recall: f64,
    /// Fraction of the exact top-k among greedy candidates.
    pub candidate_recall: f64,
    pub linf_error: f64,
    pub l2_error: f64,
}

/// `|selected ∩ top| / |top|`.
pub fn recall_at_k(selected: &[usize], top: &[usize]) -> f64 {
    if top.is_empty() {
        return 1.0;
    }
    let hits = top.iter().filter(|r| selected.contains(r)).count();
    hits as f64 / top.len() as f64
}

pub fn output_errors(exact: &[f64], approx: &[f64]) -> Result<(f64, f64)> {
    if exact.len() != approx.len() {
        return Err(Error::dims("output length", exact.len(), approx.len()));
    }
    let (mut linf, mut sq) = (0.0f64, 0.0);
    for (a, b) in exact.iter().zip(approx) {
        let e = (a - b).abs();
        linf = linf.max(e);
        sq += e * e;
    }
    Ok((linf, sq.sqrt()))
}

pub fn compute_metrics(
    exact_output: &[f64],
    exact_top_k: &[usize],
    approx_output: &[f64],
    survivors: &[usize],
    candidates: &[usize],
) -> Result<QueryMetrics> {
    if exact_top_k.is_empty() {
        return Err(Error::InvalidArgument("empty top-k list".into()));
    }
    let (linf_error, l2_error) = output_errors(exact_output, approx_output)?;
    Ok(QueryMetrics {
        recall: recall_at_k(survivors, exact_top_k),
        candidate_recall: recall_at_k(candidates, exact_top_k),
        linf_error,
        l2_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryReport {
    pub index: usize,
    pub exact_top_k: Vec<usize>,
    pub candidates: usize,
    pub survivors: usize,
    pub iterations: usize,
    pub fallback: Option<Fallback>,
    pub approx: QueryMetrics,
    pub base_linf_error: f64,
    pub base_l2_error: f64,
    /// Fraction of planted rows among survivors, for planted workloads.
    pub planted_recall: Option<f64>,
    pub base_expsum: f64,
    pub approx_expsum: f64,
    pub base_cycles: CycleReport,
    pub approx_cycles: CycleReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub queries: usize,
    pub mean_candidates: f64,
    pub mean_survivors: f64,
    pub mean_recall: f64,
    pub min_recall: f64,
    pub mean_candidate_recall: f64,
    pub min_planted_recall: Option<f64>,
    pub max_approx_linf_error: f64,
    pub mean_approx_l2_error: f64,
    pub max_base_linf_error: f64,
    pub mean_base_l2_error: f64,
    pub fallbacks: usize,
    pub mean_base_latency: f64,
    pub mean_approx_latency: f64,
    /// Base latency over mean approximate latency.
    pub latency_speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub resolved_m: usize,
    pub lut_split: [u32; 2],
    pub schedule: PrecisionSchedule,
    pub aggregate: Aggregate,
    pub per_query: Vec<QueryReport>,
}

impl RunReport {
    /// Pretty JSON with stable field order and a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn check_shapes(cfg: &ExperimentConfig, data: &Workload) -> Result<()> {
    let checks = [
        ("key rows", cfg.n, data.key.rows()),
        ("key columns", cfg.d, data.key.cols()),
        ("value rows", cfg.n, data.value.rows()),
        ("value columns", cfg.d, data.value.cols()),
        ("query columns", cfg.d, data.queries.cols()),
    ];
    for (what, expected, got) in checks {
        if expected != got {
            return Err(Error::dims(what, expected, got));
        }
    }
    if !data.planted.is_empty() && data.planted.len() != data.queries.rows() {
        return Err(Error::dims(
            "planted sets",
            data.queries.rows(),
            data.planted.len(),
        ));
    }
    Ok(())
}

pub fn run_experiment(cfg: &ExperimentConfig, data: &Workload) -> Result<RunReport> {
    cfg.validate()?;
    check_shapes(cfg, data)?;
    let sched = cfg.schedule()?;
    let pipeline = Pipeline::new(sched, cfg.lut_split.map(|[h, l]| (h, l)))?;
    let memory = KeyValueMemory::new(data.key.clone(), &data.value, &sched)?;
    let selection = cfg.selection()?;
    let params = cfg.cycle_params();
    let base_cycles = base_report(cfg.n as u64, &params);

    let per_query = (0..data.queries.rows())
        .into_par_iter()
        .map(|a| {
            run_query(
                cfg,
                data,
                &pipeline,
                &memory,
                &selection,
                &params,
                &base_cycles,
                a,
            )
            .map_err(|e| Error::Query {
                index: a,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let luts = pipeline.luts();
    Ok(RunReport {
        config: cfg.clone(),
        resolved_m: selection.m,
        lut_split: [luts.hi_bits(), luts.lo_bits()],
        schedule: sched,
        aggregate: aggregate(&per_query),
        per_query,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_query(
    cfg: &ExperimentConfig,
    data: &Workload,
    pipeline: &Pipeline,
    memory: &KeyValueMemory,
    selection: &SelectionConfig,
    params: &CycleParams,
    base_cycles: &CycleReport,
    a: usize,
) -> Result<QueryReport> {
    let query = data.queries.row(a);
    let exact = attention_exact(&data.key, &data.value, query)?;
    let exact_top = top_k(&true_scores(&data.key, query)?, cfg.top_k)?;

    let qquery = quantize_vector(query, pipeline.schedule().input)?;
    let base =
        pipeline.attention_base(memory.quantized_key(), memory.quantized_value(), &qquery)?;
    let (base_linf_error, base_l2_error) = output_errors(&exact, &base.output_real())?;

    let approx = attention_approx(pipeline, memory, query, selection, params)?;
    let metrics = compute_metrics(
        &exact,
        &exact_top,
        &approx.output_real(),
        &approx.survivors,
        &approx.candidates.rows,
    )?;
    let planted_recall = data
        .planted
        .get(a)
        .filter(|p| !p.is_empty())
        .map(|p| recall_at_k(&approx.survivors, p));

    Ok(QueryReport {
        index: a,
        exact_top_k: exact_top,
        candidates: approx.c(),
        survivors: approx.k(),
        iterations: approx.candidates.iterations,
        fallback: approx.candidates.fallback,
        approx: metrics,
        base_linf_error,
        base_l2_error,
        planted_recall,
        base_expsum: base.expsum.to_real(),
        approx_expsum: approx.expsum.to_real(),
        base_cycles: base_cycles.clone(),
        approx_cycles: approx.cycles,
    })
}

fn aggregate(q: &[QueryReport]) -> Aggregate {
    let count = q.len().max(1) as f64;
    let mean = |f: &dyn Fn(&QueryReport) -> f64| q.iter().map(f).sum::<f64>() / count;
    let max = |f: &dyn Fn(&QueryReport) -> f64| q.iter().map(f).fold(0.0f64, f64::max);
    let planted: Vec<f64> = q.iter().filter_map(|r| r.planted_recall).collect();
    let mean_base_latency = mean(&|r| r.base_cycles.latency_cycles as f64);
    let mean_approx_latency = mean(&|r| r.approx_cycles.latency_cycles as f64);
    Aggregate {
        queries: q.len(),
        mean_candidates: mean(&|r| r.candidates as f64),
        mean_survivors: mean(&|r| r.survivors as f64),
        mean_recall: mean(&|r| r.approx.recall),
        min_recall: q.iter().map(|r| r.approx.recall).fold(1.0, f64::min),
        mean_candidate_recall: mean(&|r| r.approx.candidate_recall),
        min_planted_recall: (!planted.is_empty())
            .then(|| planted.iter().copied().fold(1.0, f64::min)),
        max_approx_linf_error: max(&|r| r.approx.linf_error),
        mean_approx_l2_error: mean(&|r| r.approx.l2_error),
        max_base_linf_error: max(&|r| r.base_linf_error),
        mean_base_l2_error: mean(&|r| r.base_l2_error),
        fallbacks: q.iter().filter(|r| r.fallback.is_some()).count(),
        mean_base_latency,
        mean_approx_latency,
        latency_speedup: if mean_approx_latency > 0.0 {
            mean_base_latency / mean_approx_latency
        } else {
            0.0
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::gen_synthetic;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            n: 64,
            d: 16,
            queries: 6,
            planted: 3,
            top_k: 3,
            seed: 11,
            ..ExperimentConfig::default()
        }
    }

    fn workload(cfg: &ExperimentConfig) -> Workload {
        gen_synthetic(cfg.n, cfg.d, cfg.planted, cfg.queries, cfg.seed).unwrap()
    }

    #[test]
    fn budget_forms() {
        assert_eq!(
            Budget::Fraction { fraction: 0.5 }.resolve(320).unwrap(),
            160
        );
        assert_eq!(Budget::Fraction { fraction: 0.125 }.resolve(50).unwrap(), 6);
        assert_eq!(Budget::Absolute(17).resolve(3).unwrap(), 17);
        assert!(Budget::Fraction { fraction: -1.0 }.resolve(3).is_err());
        let m: Budget = serde_json::from_str("12").unwrap();
        assert_eq!(m, Budget::Absolute(12));
        let m: Budget = serde_json::from_str(r#"{"fraction": 0.25}"#).unwrap();
        assert_eq!(m, Budget::Fraction { fraction: 0.25 });
    }

    #[test]
    fn config_parsing_and_validation() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"n": 16, "d": 4, "m": 8, "top_k": 2}"#).unwrap();
        assert_eq!(cfg.resolved_m().unwrap(), 8);
        assert_eq!(cfg.t_percent, 5.0);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
        let bad = ExperimentConfig {
            top_k: 0,
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig {
            t_percent: 150.0,
            ..ExperimentConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn metrics_examples() {
        let m = compute_metrics(&[1.0, 2.0], &[3, 4], &[1.0, 2.5], &[4, 3, 9], &[3, 4, 9]).unwrap();
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.linf_error, 0.5);
        let m = compute_metrics(&[0.0], &[2], &[0.0], &[0, 1], &[0, 1]).unwrap();
        assert_eq!(m.recall, 0.0);
        assert!(compute_metrics(&[0.0], &[2], &[0.0, 1.0], &[], &[]).is_err());
        assert!(compute_metrics(&[0.0], &[], &[0.0], &[], &[]).is_err());
    }

    #[test]
    fn run_is_deterministic_and_consistent() {
        let cfg = small();
        let data = workload(&cfg);
        let a = run_experiment(&cfg, &data).unwrap();
        let b = run_experiment(&cfg, &data).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.per_query.len(), 6);
        for q in &a.per_query {
            assert!(q.candidates >= q.survivors);
            assert!((0.0..=1.0).contains(&q.approx.recall));
            assert!(q.base_expsum >= 1.0 && q.approx_expsum >= 1.0);
        }
        assert_eq!(a.resolved_m, 32);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let cfg = small();
        let data = gen_synthetic(32, 16, 0, 2, 1).unwrap();
        assert!(matches!(
            run_experiment(&cfg, &data),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn smaller_threshold_never_lowers_recall() {
        let cfg = small();
        let data = workload(&cfg);
        let mut last = run_experiment(&cfg, &data).unwrap();
        for t in [2.0, 0.5, 0.01] {
            let next = run_experiment(
                &ExperimentConfig {
                    t_percent: t,
                    ..cfg.clone()
                },
                &data,
            )
            .unwrap();
            for (a, b) in last.per_query.iter().zip(&next.per_query) {
                assert!(b.approx.recall >= a.approx.recall);
                assert!(b.survivors >= a.survivors);
            }
            last = next;
        }
    }
}
