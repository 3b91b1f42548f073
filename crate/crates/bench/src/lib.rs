//! Shared fixtures for the criterion benchmarks.

use approx_attn::harness::{gen_synthetic, Workload};
use approx_attn::{make_schedule, KeyValueMemory, Pipeline, SelectionConfig};

/// Planted workload plus a prepared pipeline at the given size.
pub struct Fixture {
    pub workload: Workload,
    pub pipeline: Pipeline,
    pub memory: KeyValueMemory,
}

impl Fixture {
    pub fn new(n: usize, d: usize, queries: usize) -> Self {
        let workload = gen_synthetic(n, d, 4, queries, 0x5eed).expect("synthetic workload");
        let sched = make_schedule(n, d, 4, 4).expect("schedule");
        let pipeline = Pipeline::new(sched, None).expect("pipeline");
        let memory =
            KeyValueMemory::new(workload.key.clone(), &workload.value, &sched).expect("memory");
        Fixture {
            workload,
            pipeline,
            memory,
        }
    }
}

pub fn selection(m: usize, t_percent: f64) -> SelectionConfig {
    SelectionConfig {
        m,
        t_percent,
        heuristic: true,
    }
}
