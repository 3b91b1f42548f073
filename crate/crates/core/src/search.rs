//! Greedy candidate search over a column-sorted key matrix.
//!
//! Each key column is sorted once ([`preprocess_key`]). For a query, every
//! column yields its component products `key[r][c] * query[c]` in
//! descending order (for the max frontier) and ascending order (for the min
//! frontier) simply by walking the sorted column from one end. A priority
//! queue over the `d` column frontiers then pops products in global order,
//! which makes [`candidate_selection`] a k-way merge with `O(M log d)` work.
//!
//! Positive pops from the max frontier and negative pops from the min
//! frontier accumulate into per-row greedy scores; rows that end with a
//! positive greedy score become candidates.
//!
//! Equal products are ordered by column then row, ascending, on both
//! frontiers. [`naive_greedy_oracle`] sorts all `n * d` products with the
//! same order, so the two routines agree exactly.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reference::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SortedEntry {
    pub value: f64,
    pub row: usize,
}

/// Every key column sorted ascending by value, ties by row.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedKey {
    rows: usize,
    columns: Vec<Vec<SortedEntry>>,
}

impl SortedKey {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, c: usize) -> &[SortedEntry] {
        &self.columns[c]
    }
}

pub fn preprocess_key(key: &Matrix) -> SortedKey {
    let columns = (0..key.cols())
        .map(|c| {
            let mut col: Vec<SortedEntry> = (0..key.rows())
                .map(|r| SortedEntry {
                    value: key.get(r, c),
                    row: r,
                })
                .collect();
            col.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.row.cmp(&b.row)));
            col
        })
        .collect();
    SortedKey {
        rows: key.rows(),
        columns,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Iteration budget.
    pub m: usize,
    /// Post-scoring threshold: keep rows whose softmax weight is at least
    /// this percentage of the top row's.
    pub t_percent: f64,
    /// Skip the min-frontier pop while the running sum of pops is negative.
    pub heuristic: bool,
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_percent > 0.0 && self.t_percent <= 100.0) {
            return Err(Error::Config(format!(
                "t_percent must be in (0, 100], got {}",
                self.t_percent
            )));
        }
        Ok(())
    }
}

/// A component product waiting in a frontier queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierEntry {
    pub score: f64,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// No positive greedy score; the best-scoring touched row was kept.
    BestScoring,
    /// Nothing was touched; every row was kept.
    AllRows,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// Selected rows, ascending.
    pub rows: Vec<usize>,
    /// Greedy score of each selected row (0 for untouched rows under
    /// [`Fallback::AllRows`]).
    pub scores: Vec<f64>,
    /// Greedy score of every touched row.
    pub greedy: BTreeMap<usize, f64>,
    pub fallback: Option<Fallback>,
    /// Loop iterations actually executed (the budget, truncated when both
    /// frontiers run dry).
    pub iterations: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Pops of each frontier in order, for inspection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectionTrace {
    pub max_pops: Vec<FrontierEntry>,
    pub min_pops: Vec<FrontierEntry>,
}

/// Fold `-0.0` into `0.0` so that equal products compare equal under `total_cmp`.
fn product(value: f64, q: f64) -> f64 {
    let p = value * q;
    if p == 0.0 {
        0.0
    } else {
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Max,
    Min,
}

impl Side {
    /// Order in which a frontier releases products: better first.
    fn order(self, a: &FrontierEntry, b: &FrontierEntry) -> Ordering {
        let by_score = match self {
            Side::Max => b.score.total_cmp(&a.score),
            Side::Min => a.score.total_cmp(&b.score),
        };
        by_score.then(a.col.cmp(&b.col)).then(a.row.cmp(&b.row))
    }

    /// Walk direction through an ascending column.
    fn descending(self, q: f64) -> bool {
        match self {
            Side::Max => q > 0.0,
            Side::Min => q <= 0.0,
        }
    }
}

/// Position of one frontier inside one sorted column.
///
/// Runs of equal products are released in ascending row order, whichever
/// way the walk goes.
#[derive(Debug, Clone)]
struct ColumnCursor {
    next: isize,
    step: isize,
    run: Vec<SortedEntry>,
}

impl ColumnCursor {
    fn new(n: usize, descending: bool) -> Self {
        if descending {
            ColumnCursor {
                next: n as isize - 1,
                step: -1,
                run: Vec::new(),
            }
        } else {
            ColumnCursor {
                next: 0,
                step: 1,
                run: Vec::new(),
            }
        }
    }

    fn advance(&mut self, column: &[SortedEntry], q: f64) -> Option<SortedEntry> {
        if self.run.is_empty() {
            let in_range = |i: isize| i >= 0 && (i as usize) < column.len();
            if !in_range(self.next) {
                return None;
            }
            let head = product(column[self.next as usize].value, q);
            while in_range(self.next) && product(column[self.next as usize].value, q) == head {
                self.run.push(column[self.next as usize]);
                self.next += self.step;
            }
            // Popped from the back: smallest row last.
            self.run.sort_by_key(|e| std::cmp::Reverse(e.row));
        }
        self.run.pop()
    }
}

struct HeapItem {
    side: Side,
    entry: FrontierEntry,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap pops the greatest; the best entry must compare greatest.
        self.side.order(&other.entry, &self.entry)
    }
}

struct Frontier<'a> {
    side: Side,
    sk: &'a SortedKey,
    query: &'a [f64],
    cursors: Vec<ColumnCursor>,
    heap: BinaryHeap<HeapItem>,
}

impl<'a> Frontier<'a> {
    fn new(side: Side, sk: &'a SortedKey, query: &'a [f64]) -> Self {
        let mut f = Frontier {
            side,
            sk,
            query,
            cursors: query
                .iter()
                .map(|&q| ColumnCursor::new(sk.rows(), side.descending(q)))
                .collect(),
            heap: BinaryHeap::with_capacity(query.len()),
        };
        for c in 0..query.len() {
            f.refill(c);
        }
        f
    }

    fn refill(&mut self, col: usize) {
        let q = self.query[col];
        if let Some(e) = self.cursors[col].advance(self.sk.column(col), q) {
            self.heap.push(HeapItem {
                side: self.side,
                entry: FrontierEntry {
                    score: product(e.value, q),
                    row: e.row,
                    col,
                },
            });
        }
    }

    fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    fn pop(&mut self) -> Option<FrontierEntry> {
        let item = self.heap.pop()?;
        self.refill(item.entry.col);
        Some(item.entry)
    }
}

/// Greedy-score accumulation shared by both search routines.
#[derive(Debug, Default)]
struct GreedyState {
    greedy: BTreeMap<usize, f64>,
    cum_sum: f64,
}

impl GreedyState {
    fn take_max(&mut self, e: FrontierEntry) {
        if e.score > 0.0 {
            *self.greedy.entry(e.row).or_insert(0.0) += e.score;
        }
        self.cum_sum += e.score;
    }

    fn take_min(&mut self, e: FrontierEntry) {
        if e.score < 0.0 {
            *self.greedy.entry(e.row).or_insert(0.0) += e.score;
        }
        self.cum_sum += e.score;
    }

    fn skip_min(&self, cfg: &SelectionConfig) -> bool {
        cfg.heuristic && self.cum_sum < 0.0
    }

    fn finish(self, n: usize, iterations: usize) -> CandidateSet {
        let (rows, scores): (Vec<usize>, Vec<f64>) = self
            .greedy
            .iter()
            .filter(|(_, &s)| s > 0.0)
            .map(|(&r, &s)| (r, s))
            .unzip();
        if !rows.is_empty() {
            return CandidateSet {
                rows,
                scores,
                greedy: self.greedy,
                fallback: None,
                iterations,
            };
        }
        let best = self
            .greedy
            .iter()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&r, &s)| (r, s));
        let (rows, scores, fallback) = match best {
            Some((r, s)) => (vec![r], vec![s], Fallback::BestScoring),
            None => ((0..n).collect(), vec![0.0; n], Fallback::AllRows),
        };
        CandidateSet {
            rows,
            scores,
            greedy: self.greedy,
            fallback: Some(fallback),
            iterations,
        }
    }
}

fn run_selection(
    sk: &SortedKey,
    query: &[f64],
    cfg: &SelectionConfig,
    mut trace: Option<&mut SelectionTrace>,
) -> Result<CandidateSet> {
    if query.len() != sk.cols() {
        return Err(Error::dims("query length", sk.cols(), query.len()));
    }
    let mut max_q = Frontier::new(Side::Max, sk, query);
    let mut min_q = Frontier::new(Side::Min, sk, query);
    let mut state = GreedyState::default();
    let mut iterations = 0;
    while iterations < cfg.m && !(max_q.is_empty() && min_q.is_empty()) {
        iterations += 1;
        if let Some(e) = max_q.pop() {
            state.take_max(e);
            if let Some(t) = trace.as_deref_mut() {
                t.max_pops.push(e);
            }
        }
        if state.skip_min(cfg) {
            continue;
        }
        if let Some(e) = min_q.pop() {
            state.take_min(e);
            if let Some(t) = trace.as_deref_mut() {
                t.min_pops.push(e);
            }
        }
    }
    Ok(state.finish(sk.rows(), iterations))
}

/// Greedy candidate selection with `cfg.m` iterations over the sorted key.
pub fn candidate_selection(
    sk: &SortedKey,
    query: &[f64],
    cfg: &SelectionConfig,
) -> Result<CandidateSet> {
    run_selection(sk, query, cfg, None)
}

/// [`candidate_selection`] that also records every pop.
pub fn candidate_selection_traced(
    sk: &SortedKey,
    query: &[f64],
    cfg: &SelectionConfig,
) -> Result<(CandidateSet, SelectionTrace)> {
    let mut trace = SelectionTrace::default();
    let set = run_selection(sk, query, cfg, Some(&mut trace))?;
    Ok((set, trace))
}

/// Reference greedy search: materializes and sorts all `n * d` component
/// products, then walks the two sorted lists.
pub fn naive_greedy_oracle(
    key: &Matrix,
    query: &[f64],
    cfg: &SelectionConfig,
) -> Result<CandidateSet> {
    if query.len() != key.cols() {
        return Err(Error::dims("query length", key.cols(), query.len()));
    }
    let mut products = Vec::with_capacity(key.rows() * key.cols());
    for r in 0..key.rows() {
        for (c, &q) in query.iter().enumerate() {
            products.push(FrontierEntry {
                score: product(key.get(r, c), q),
                row: r,
                col: c,
            });
        }
    }
    let mut desc = products.clone();
    desc.sort_by(|a, b| Side::Max.order(a, b));
    let mut asc = products;
    asc.sort_by(|a, b| Side::Min.order(a, b));

    let mut state = GreedyState::default();
    let (mut hi, mut lo) = (0, 0);
    let mut iterations = 0;
    while iterations < cfg.m && (hi < desc.len() || lo < asc.len()) {
        iterations += 1;
        if let Some(&e) = desc.get(hi) {
            state.take_max(e);
            hi += 1;
        }
        if state.skip_min(cfg) {
            continue;
        }
        if let Some(&e) = asc.get(lo) {
            state.take_min(e);
            lo += 1;
        }
    }
    Ok(state.finish(key.rows(), iterations))
}

/// Score gap `t = ln(100 / T)` beyond which a row's softmax weight falls
/// below `T` percent of the top row's.
pub fn post_scoring_threshold(t_percent: f64) -> Result<f64> {
    if !(t_percent > 0.0 && t_percent <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "T must be in (0, 100], got {t_percent}"
        )));
    }
    Ok((100.0 / t_percent).ln())
}

/// Keep entries whose score is within `gap` of the maximum, in input order.
pub fn retain_within(scored: &[(usize, f64)], gap: f64) -> Result<Vec<(usize, f64)>> {
    if scored.is_empty() {
        return Err(Error::InvalidArgument(
            "post-scoring needs at least one candidate".into(),
        ));
    }
    if let Some(&(_, bad)) = scored.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::NonFinite(bad));
    }
    let max = scored
        .iter()
        .map(|&(_, s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(scored
        .iter()
        .copied()
        .filter(|&(_, s)| max - s <= gap)
        .collect())
}

/// Drop candidates whose score trails the best by more than `ln(100 / T)`.
pub fn post_scoring_select(scored: &[(usize, f64)], t_percent: f64) -> Result<Vec<(usize, f64)>> {
    retain_within(scored, post_scoring_threshold(t_percent)?)
}
