//! Double-precision attention used as ground truth for the quantized paths.

use crate::error::{Error, Result};

/// Dense row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix must be at least 1x1 (got {rows}x{cols})"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::dims("matrix data length", rows * cols, data.len()));
        }
        if let Some(&bad) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(bad));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::dims("row length", cols, bad.len()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    /// New matrix holding only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            if r >= self.rows {
                return Err(Error::InvalidArgument(format!(
                    "row {r} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(r));
        }
        Self::new(rows.len(), self.cols, data)
    }
}

pub fn true_scores(key: &Matrix, query: &[f64]) -> Result<Vec<f64>> {
    if key.cols() != query.len() {
        return Err(Error::dims("query length", key.cols(), query.len()));
    }
    Ok(key
        .iter_rows()
        .map(|row| row.iter().zip(query).map(|(k, q)| k * q).sum())
        .collect())
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn attention_exact(key: &Matrix, value: &Matrix, query: &[f64]) -> Result<Vec<f64>> {
    if value.rows() != key.rows() {
        return Err(Error::dims("value rows", key.rows(), value.rows()));
    }
    let weights = softmax(&true_scores(key, query)?);
    let mut out = vec![0.0; value.cols()];
    for (w, row) in weights.iter().zip(value.iter_rows()) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Indices of the `k` largest scores, descending; ties go to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::InvalidArgument(format!(
            "top_k needs 1 <= k <= {} (got {k})",
            scores.len()
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}
