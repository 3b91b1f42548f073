//! Approximate attention: greedy candidates, quantized scoring of the
//! candidates only, post-scoring filter, then softmax and weighted sum over
//! the survivors.

use crate::cycles::{approx_report, CycleParams, CycleReport};
use crate::error::{Error, Result};
use crate::fixedpoint::{quantize, PrecisionSchedule, QValue};
use crate::pipeline::{
    dot_products_for_rows, exponent_stage, output_for_rows, quantize_vector, to_real_vector,
    Pipeline, QMatrix,
};
use crate::reference::Matrix;
use crate::search::{
    candidate_selection, post_scoring_threshold, preprocess_key, retain_within, CandidateSet,
    SelectionConfig, SortedKey,
};

/// Key and value matrices prepared ahead of any query: the sorted key for
/// candidate search and both matrices quantized to the input format.
#[derive(Debug, Clone)]
pub struct KeyValueMemory {
    key: Matrix,
    sorted: SortedKey,
    qkey: QMatrix,
    qvalue: QMatrix,
}

impl KeyValueMemory {
    pub fn new(key: Matrix, value: &Matrix, sched: &PrecisionSchedule) -> Result<Self> {
        if key.rows() != value.rows() || key.cols() != value.cols() {
            return Err(Error::InvalidArgument(format!(
                "key is {}x{} but value is {}x{}",
                key.rows(),
                key.cols(),
                value.rows(),
                value.cols()
            )));
        }
        Ok(KeyValueMemory {
            sorted: preprocess_key(&key),
            qkey: QMatrix::quantize(&key, sched.input)?,
            qvalue: QMatrix::quantize(value, sched.input)?,
            key,
        })
    }

    pub fn key(&self) -> &Matrix {
        &self.key
    }

    pub fn sorted_key(&self) -> &SortedKey {
        &self.sorted
    }

    pub fn quantized_key(&self) -> &QMatrix {
        &self.qkey
    }

    pub fn quantized_value(&self) -> &QMatrix {
        &self.qvalue
    }

    pub fn rows(&self) -> usize {
        self.key.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxResult {
    pub output: Vec<QValue>,
    pub candidates: CandidateSet,
    /// Quantized dot product of each candidate, aligned with `candidates.rows`.
    pub dot_products: Vec<QValue>,
    /// Rows that passed post-scoring, ascending.
    pub survivors: Vec<usize>,
    /// Score of each survivor.
    pub score: Vec<QValue>,
    pub expsum: QValue,
    pub dp_max: QValue,
    pub cycles: CycleReport,
}

impl ApproxResult {
    /// Candidate count `C`.
    pub fn c(&self) -> usize {
        self.candidates.len()
    }

    /// Post-scoring survivor count `K`.
    pub fn k(&self) -> usize {
        self.survivors.len()
    }

    pub fn output_real(&self) -> Vec<f64> {
        to_real_vector(&self.output)
    }
}

pub fn attention_approx(
    pipeline: &Pipeline,
    memory: &KeyValueMemory,
    query: &[f64],
    cfg: &SelectionConfig,
    params: &CycleParams,
) -> Result<ApproxResult> {
    cfg.validate()?;
    let sched = pipeline.schedule();
    let candidates = candidate_selection(memory.sorted_key(), query, cfg)?;

    let qquery = quantize_vector(query, sched.input)?;
    let (dot_products, dp_max) =
        dot_products_for_rows(memory.quantized_key(), &candidates.rows, &qquery, sched)?;

    // Compare in the hardware's shifted format; both sides are exact dyadics.
    let gap = quantize(
        post_scoring_threshold(cfg.t_percent)?,
        sched.dot_product_shifted,
    )?;
    let scored: Vec<(usize, f64)> = dot_products
        .iter()
        .enumerate()
        .map(|(j, v)| (j, v.to_real()))
        .collect();
    let kept = retain_within(&scored, gap.to_real())?;

    let survivors: Vec<usize> = kept.iter().map(|&(j, _)| candidates.rows[j]).collect();
    let kept_dp: Vec<QValue> = kept.iter().map(|&(j, _)| dot_products[j]).collect();
    let (score, expsum) = exponent_stage(&kept_dp, dp_max, pipeline.luts(), sched)?;
    let output = output_for_rows(&score, expsum, memory.quantized_value(), &survivors, sched)?;

    let cycles = approx_report(
        candidates.iterations as u64,
        candidates.len() as u64,
        survivors.len() as u64,
        memory.rows() as u64,
        params,
    )?;
    Ok(ApproxResult {
        output,
        candidates,
        dot_products,
        survivors,
        score,
        expsum,
        dp_max,
        cycles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixedpoint::make_schedule;
    use crate::reference::true_scores;

    fn cfg(m: usize, t: f64) -> SelectionConfig {
        SelectionConfig {
            m,
            t_percent: t,
            heuristic: false,
        }
    }

    #[test]
    fn single_row_memory() {
        let sched = make_schedule(1, 2, 4, 4).unwrap();
        let p = Pipeline::new(sched, None).unwrap();
        let key = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let value = Matrix::from_rows(&[vec![-0.75, 3.5]]).unwrap();
        let mem = KeyValueMemory::new(key, &value, &sched).unwrap();
        let r =
            attention_approx(&p, &mem, &[0.5, 0.25], &cfg(1, 5.0), &Default::default()).unwrap();
        assert_eq!(r.candidates.rows, vec![0]);
        assert_eq!(r.survivors, vec![0]);
        assert_eq!(r.output_real(), vec![-0.75, 3.5]);
        assert_eq!(r.expsum.to_real(), 1.0);
    }

    #[test]
    fn full_budget_matches_base_on_positive_rows() {
        let sched = make_schedule(3, 2, 4, 4).unwrap();
        let p = Pipeline::new(sched, None).unwrap();
        let key = Matrix::from_rows(&[vec![2.0, -1.0], vec![-3.0, 1.5], vec![1.0, 1.0]]).unwrap();
        let value = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let q = [1.0, 1.0];
        let mem = KeyValueMemory::new(key.clone(), &value, &sched).unwrap();
        let r = attention_approx(&p, &mem, &q, &cfg(6, 1e-9), &Default::default()).unwrap();

        let positive: Vec<usize> = true_scores(&key, &q)
            .unwrap()
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(positive, vec![0, 2]);
        assert_eq!(r.survivors, positive);

        let sub_k = QMatrix::quantize(&key.select_rows(&positive).unwrap(), sched.input).unwrap();
        let sub_v = QMatrix::quantize(&value.select_rows(&positive).unwrap(), sched.input).unwrap();
        let base = p
            .attention_base(&sub_k, &sub_v, &quantize_vector(&q, sched.input).unwrap())
            .unwrap();
        assert_eq!(r.output, base.output);
        assert_eq!(r.expsum, base.expsum);
    }

    #[test]
    fn cycle_report_uses_counts() {
        let sched = make_schedule(3, 2, 4, 4).unwrap();
        let p = Pipeline::new(sched, None).unwrap();
        let key = Matrix::from_rows(&[vec![2.0, -1.0], vec![-3.0, 4.0], vec![1.0, 1.0]]).unwrap();
        let mem = KeyValueMemory::new(key.clone(), &key, &sched).unwrap();
        let params = CycleParams::default();
        let r = attention_approx(&p, &mem, &[1.0, 1.0], &cfg(2, 5.0), &params).unwrap();
        assert_eq!(r.c(), 2);
        assert!(r.k() <= r.c());
        assert_eq!(
            r.cycles.latency_cycles,
            2 + r.c() as u64 + 2 * r.k() as u64 + params.alpha
        );
    }

    #[test]
    fn rejects_bad_threshold_and_shapes() {
        let sched = make_schedule(3, 2, 4, 4).unwrap();
        let p = Pipeline::new(sched, None).unwrap();
        let key = Matrix::from_rows(&[vec![2.0, -1.0], vec![-3.0, 4.0]]).unwrap();
        let mem = KeyValueMemory::new(key.clone(), &key, &sched).unwrap();
        assert!(
            attention_approx(&p, &mem, &[1.0, 1.0], &cfg(2, 0.0), &Default::default()).is_err()
        );
        assert!(attention_approx(&p, &mem, &[1.0], &cfg(2, 5.0), &Default::default()).is_err());
        let wide = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(KeyValueMemory::new(key, &wide, &sched).is_err());
    }
}
