//! Quantized three-stage attention pipeline.
//!
//! 1. Dot products of every key row with the query, tracking the maximum.
//! 2. `e^(dp - max)` through a pair of lookup tables, accumulated into the
//!    softmax denominator.
//! 3. Normalized weights applied to the value rows.
//!
//! Every stage works on raw fixed-point integers in the formats given by a
//! [`PrecisionSchedule`], so results are bit-exact for a given input.

use crate::error::{Error, Result};
use crate::fixedpoint::{
    pow2, q_add, q_div, q_mul, q_sub, quantize, shift_round, PrecisionSchedule, QFormat, QValue,
};
use crate::reference::Matrix;

/// Upper bound on entries materialized per lookup table.
pub const MAX_LUT_ENTRIES: usize = 1 << 24;

/// Matrix of raw fixed-point values sharing one format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QMatrix {
    rows: usize,
    cols: usize,
    format: QFormat,
    raw: Vec<i64>,
}

impl QMatrix {
    pub fn quantize(m: &Matrix, format: QFormat) -> Result<Self> {
        let raw = m
            .data()
            .iter()
            .map(|&x| quantize(x, format).map(|v| v.raw()))
            .collect::<Result<Vec<_>>>()?;
        Ok(QMatrix {
            rows: m.rows(),
            cols: m.cols(),
            format,
            raw,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn format(&self) -> QFormat {
        self.format
    }

    pub fn row_raw(&self, r: usize) -> &[i64] {
        &self.raw[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> QValue {
        QValue::from_raw(self.raw[r * self.cols + c], self.format)
            .expect("stored raw values are in range")
    }

    pub fn to_real(&self) -> Matrix {
        let res = self.format.resolution();
        Matrix::new(
            self.rows,
            self.cols,
            self.raw.iter().map(|&r| r as f64 * res).collect(),
        )
        .expect("quantized matrix is finite and non-empty")
    }
}

pub fn quantize_vector(v: &[f64], format: QFormat) -> Result<Vec<QValue>> {
    v.iter().map(|&x| quantize(x, format)).collect()
}

pub fn to_real_vector(v: &[QValue]) -> Vec<f64> {
    v.iter().map(QValue::to_real).collect()
}

/// Two-table exponent `e^-x` for a non-negative fixed-point `x`.
///
/// The input's bit pattern is split into a high part `u` and a low part
/// `v`; `e^-x = e^-(u << lo_bits) * e^-v`. Entries are rounded to the score
/// format. Trailing entries that round to zero are not stored and read back
/// as zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpLutPair {
    hi_bits: u32,
    lo_bits: u32,
    frac_bits: u32,
    score_format: QFormat,
    hi: Vec<i64>,
    lo: Vec<i64>,
}

/// Even split of `total` input bits; the high table takes the odd bit.
pub fn equal_split(total: u32) -> (u32, u32) {
    (total - total / 2, total / 2)
}

impl ExpLutPair {
    /// Tables for inputs with `hi_bits + lo_bits` bits, of which
    /// `frac_bits` are fractional; outputs also carry `frac_bits`.
    pub fn new(hi_bits: u32, lo_bits: u32, frac_bits: u32) -> Result<Self> {
        let score_format = QFormat::unsigned(0, frac_bits)?;
        if hi_bits + lo_bits == 0 || hi_bits + lo_bits > 62 {
            return Err(Error::InvalidArgument(format!(
                "exponent table input width {} out of range",
                hi_bits + lo_bits
            )));
        }
        let hi = exp_table(hi_bits, lo_bits, frac_bits)?;
        let lo = exp_table(lo_bits, 0, frac_bits)?;
        Ok(ExpLutPair {
            hi_bits,
            lo_bits,
            frac_bits,
            score_format,
            hi,
            lo,
        })
    }

    pub fn hi_bits(&self) -> u32 {
        self.hi_bits
    }

    pub fn lo_bits(&self) -> u32 {
        self.lo_bits
    }

    pub fn input_bits(&self) -> u32 {
        self.hi_bits + self.lo_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn score_format(&self) -> QFormat {
        self.score_format
    }

    /// Logical table sizes, `2^hi_bits` and `2^lo_bits`.
    pub fn table_sizes(&self) -> (u64, u64) {
        (1u64 << self.hi_bits, 1u64 << self.lo_bits)
    }

    pub fn hi_entry(&self, index: u64) -> QValue {
        self.entry(&self.hi, index)
    }

    pub fn lo_entry(&self, index: u64) -> QValue {
        self.entry(&self.lo, index)
    }

    fn entry(&self, table: &[i64], index: u64) -> QValue {
        let raw = usize::try_from(index)
            .ok()
            .and_then(|i| table.get(i).copied())
            .unwrap_or(0);
        QValue::from_raw(raw, self.score_format).expect("table entries are scores")
    }

    /// Split a raw input into its (high, low) table indices.
    pub fn split_index(&self, x_raw: u64) -> (u64, u64) {
        (x_raw >> self.lo_bits, x_raw & ((1u64 << self.lo_bits) - 1))
    }

    /// `e^-x` for raw `x` (in `2^-frac_bits` units). Inputs beyond the
    /// table width evaluate to zero.
    pub fn eval_raw(&self, x_raw: u64) -> QValue {
        if self.input_bits() < 64 && x_raw >> self.input_bits() != 0 {
            return QValue::zero(self.score_format);
        }
        let (u, v) = self.split_index(x_raw);
        let product = self.hi_entry(u).raw() as i128 * self.lo_entry(v).raw() as i128;
        QValue::saturating(shift_round(product, self.frac_bits), self.score_format)
    }
}

fn exp_table(index_bits: u32, step_shift: u32, frac_bits: u32) -> Result<Vec<i64>> {
    let score = QFormat::unsigned(0, frac_bits)?;
    let logical = 1u128 << index_bits;
    let unit = pow2(-(frac_bits as i32));
    let mut table = Vec::new();
    for idx in 0..logical {
        let x = ((idx << step_shift) as f64) * unit;
        let raw = quantize((-x).exp(), score)?.raw();
        if raw == 0 {
            break;
        }
        if table.len() == MAX_LUT_ENTRIES {
            return Err(Error::InvalidArgument(format!(
                "exponent table with {index_bits} index bits exceeds {MAX_LUT_ENTRIES} entries; \
                 choose a different split"
            )));
        }
        table.push(raw);
    }
    Ok(table)
}

/// Tables covering the schedule's shifted dot-product width.
pub fn build_exp_luts(sched: &PrecisionSchedule, split: (u32, u32)) -> Result<ExpLutPair> {
    let shifted = sched.dot_product_shifted;
    let total = shifted.int_bits() + shifted.frac_bits();
    if split.0 + split.1 != total {
        return Err(Error::InvalidArgument(format!(
            "lookup split {}+{} does not cover the {total}-bit shifted dot product",
            split.0, split.1
        )));
    }
    ExpLutPair::new(split.0, split.1, shifted.frac_bits())
}

/// `e^-x` for a non-negative magnitude in the shifted dot-product format.
pub fn exp_lut_eval(x_mag: QValue, luts: &ExpLutPair) -> Result<QValue> {
    if x_mag.raw() < 0 {
        return Err(Error::Contract(format!(
            "exponent input {} is negative",
            x_mag.to_real()
        )));
    }
    if x_mag.format().frac_bits() != luts.frac_bits() {
        return Err(Error::InvalidArgument(format!(
            "exponent input has {} fraction bits, tables expect {}",
            x_mag.format().frac_bits(),
            luts.frac_bits()
        )));
    }
    Ok(luts.eval_raw(x_mag.raw() as u64))
}

fn check_input(fmt: QFormat, sched: &PrecisionSchedule, what: &str) -> Result<()> {
    if fmt != sched.input {
        return Err(Error::InvalidArgument(format!(
            "{what} is in {fmt}, schedule input is {}",
            sched.input
        )));
    }
    Ok(())
}

/// Dot products for the listed key rows plus their maximum.
pub(crate) fn dot_products_for_rows(
    key: &QMatrix,
    rows: &[usize],
    query: &[QValue],
    sched: &PrecisionSchedule,
) -> Result<(Vec<QValue>, QValue)> {
    if key.cols() != query.len() {
        return Err(Error::dims("query length", key.cols(), query.len()));
    }
    if key.cols() > sched.d || key.rows() > sched.n {
        return Err(Error::InvalidArgument(format!(
            "{}x{} key exceeds the schedule's {}x{} sizing",
            key.rows(),
            key.cols(),
            sched.n,
            sched.d
        )));
    }
    check_input(key.format(), sched, "key")?;
    if let Some(q) = query.iter().find(|q| q.format() != sched.input) {
        check_input(q.format(), sched, "query")?;
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows to score".into()));
    }
    let q_raw: Vec<i128> = query.iter().map(|q| q.raw() as i128).collect();
    let mut dp = Vec::with_capacity(rows.len());
    for &r in rows {
        let sum: i128 = key
            .row_raw(r)
            .iter()
            .zip(&q_raw)
            .map(|(&k, &q)| k as i128 * q)
            .sum();
        dp.push(QValue::saturating(sum, sched.dot_product));
    }
    let dp_max = *dp.iter().max_by_key(|v| v.raw()).expect("non-empty");
    Ok((dp, dp_max))
}

pub fn dot_product_stage(
    key: &QMatrix,
    query: &[QValue],
    sched: &PrecisionSchedule,
) -> Result<(Vec<QValue>, QValue)> {
    let rows: Vec<usize> = (0..key.rows()).collect();
    dot_products_for_rows(key, &rows, query, sched)
}

pub fn exponent_stage(
    dp: &[QValue],
    dp_max: QValue,
    luts: &ExpLutPair,
    sched: &PrecisionSchedule,
) -> Result<(Vec<QValue>, QValue)> {
    let mut expsum = QValue::zero(sched.expsum);
    let mut scores = Vec::with_capacity(dp.len());
    for &x in dp {
        let shifted = q_sub(dp_max, x, sched.dot_product_shifted);
        let s = exp_lut_eval(shifted, luts)?;
        expsum = q_add(expsum, s, sched.expsum);
        scores.push(s);
    }
    Ok((scores, expsum))
}

pub(crate) fn output_for_rows(
    score: &[QValue],
    expsum: QValue,
    value: &QMatrix,
    rows: &[usize],
    sched: &PrecisionSchedule,
) -> Result<Vec<QValue>> {
    if score.len() != rows.len() {
        return Err(Error::dims("score length", rows.len(), score.len()));
    }
    check_input(value.format(), sched, "value")?;
    if expsum.to_real() < 1.0 {
        return Err(Error::Contract(format!(
            "softmax denominator {} is below 1",
            expsum.to_real()
        )));
    }
    let mut out = vec![QValue::zero(sched.output); value.cols()];
    for (&s, &r) in score.iter().zip(rows) {
        let w = q_div(s, expsum, sched.weight)?;
        for (c, acc) in out.iter_mut().enumerate() {
            *acc = q_add(*acc, q_mul(w, value.get(r, c), sched.output), sched.output);
        }
    }
    Ok(out)
}

pub fn output_stage(
    score: &[QValue],
    expsum: QValue,
    value: &QMatrix,
    sched: &PrecisionSchedule,
) -> Result<Vec<QValue>> {
    let rows: Vec<usize> = (0..value.rows()).collect();
    output_for_rows(score, expsum, value, &rows, sched)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineResult {
    pub output: Vec<QValue>,
    pub dot_products: Vec<QValue>,
    pub score: Vec<QValue>,
    pub expsum: QValue,
    pub dp_max: QValue,
}

impl PipelineResult {
    pub fn output_real(&self) -> Vec<f64> {
        to_real_vector(&self.output)
    }
}

pub fn attention_base(
    key: &QMatrix,
    value: &QMatrix,
    query: &[QValue],
    sched: &PrecisionSchedule,
    luts: &ExpLutPair,
) -> Result<PipelineResult> {
    if value.rows() != key.rows() {
        return Err(Error::dims("value rows", key.rows(), value.rows()));
    }
    let (dot_products, dp_max) = dot_product_stage(key, query, sched)?;
    let (score, expsum) = exponent_stage(&dot_products, dp_max, luts, sched)?;
    let output = output_stage(&score, expsum, value, sched)?;
    Ok(PipelineResult {
        output,
        dot_products,
        score,
        expsum,
        dp_max,
    })
}

/// A schedule together with its exponent tables.
#[derive(Debug, Clone)]
pub struct Pipeline {
    sched: PrecisionSchedule,
    luts: ExpLutPair,
}

impl Pipeline {
    /// `split` defaults to [`equal_split`] of the shifted dot-product width.
    pub fn new(sched: PrecisionSchedule, split: Option<(u32, u32)>) -> Result<Self> {
        let shifted = sched.dot_product_shifted;
        let split = split.unwrap_or_else(|| equal_split(shifted.int_bits() + shifted.frac_bits()));
        let luts = build_exp_luts(&sched, split)?;
        Ok(Pipeline { sched, luts })
    }

    pub fn schedule(&self) -> &PrecisionSchedule {
        &self.sched
    }

    pub fn luts(&self) -> &ExpLutPair {
        &self.luts
    }

    pub fn attention_base(
        &self,
        key: &QMatrix,
        value: &QMatrix,
        query: &[QValue],
    ) -> Result<PipelineResult> {
        attention_base(key, value, query, &self.sched, &self.luts)
    }
}
