//! Quantized attention with greedy candidate selection.
//!
//! The crate models an attention accelerator at three levels:
//!
//! - [`reference`]: exact double-precision attention, the ground truth.
//! - [`pipeline`]: the fixed-point dot-product / exponent / output pipeline,
//!   with a two-table exponent and per-stage widths from [`fixedpoint`].
//! - [`search`] and [`approx`]: greedy candidate selection over a
//!   column-sorted key matrix, a post-scoring filter, and the approximate
//!   pipeline that runs only on the surviving rows.
//!
//! [`cycles`] attaches closed-form latency and throughput to each run and
//! [`harness`] drives experiments and emits JSON reports.

pub mod approx;
pub mod cycles;
pub mod error;
pub mod fixedpoint;
pub mod harness;
pub mod pipeline;
pub mod reference;
pub mod search;

pub use approx::{attention_approx, ApproxResult, KeyValueMemory};
pub use cycles::{CycleParams, CycleReport};
pub use error::{Error, ErrorCategory, Result};
pub use fixedpoint::{make_schedule, quantize, to_real, PrecisionSchedule, QFormat, QValue};
pub use pipeline::{attention_base, ExpLutPair, Pipeline, PipelineResult, QMatrix};
pub use reference::{attention_exact, softmax, top_k, true_scores, Matrix};
pub use search::{
    candidate_selection, naive_greedy_oracle, post_scoring_select, preprocess_key, CandidateSet,
    SelectionConfig, SortedKey,
};
