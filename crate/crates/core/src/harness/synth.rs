//! Seeded synthetic workloads with planted high-similarity rows.
//!
//! Background key rows, value rows and queries are zero-mean Gaussians
//! clipped to a range the default input format can hold. For each query a
//! disjoint set of `planted` key rows is rebuilt as a scaled copy of the
//! query plus small noise, so those rows are the query's true top rows. A
//! query is redrawn until its planted rows beat every other row by
//! `margin` and sit within `spread` of each other.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::reference::{true_scores, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub key: Matrix,
    pub value: Matrix,
    /// One query per row.
    pub queries: Matrix,
    /// Planted rows of each query (empty when nothing was planted).
    pub planted: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    /// Minimum gap between the weakest planted score and the best other row.
    pub margin: f64,
    /// Maximum gap between planted scores of one query.
    pub spread: f64,
    pub query_std: f64,
    pub key_std: f64,
    pub value_std: f64,
    /// Planted row = `planted_scale * query + noise`.
    pub planted_scale: f64,
    pub planted_noise: f64,
    /// Absolute clip for queries; keys and values clip at twice this.
    pub clip: f64,
    pub max_redraws: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            margin: 4.0,
            spread: 1.0,
            query_std: 0.7,
            key_std: 0.5,
            value_std: 1.0,
            planted_scale: 2.0,
            planted_noise: 0.05,
            clip: 2.0,
            max_redraws: 10_000,
        }
    }
}

pub fn gen_synthetic(
    n: usize,
    d: usize,
    planted: usize,
    queries: usize,
    seed: u64,
) -> Result<Workload> {
    gen_synthetic_with(n, d, planted, queries, seed, &SynthParams::default())
}

fn gaussian(std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(format!("bad deviation {std}: {e}")))
}

fn draw(rng: &mut ChaCha8Rng, dist: &Normal<f64>, clip: f64, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| dist.sample(rng).clamp(-clip, clip))
        .collect()
}

pub fn gen_synthetic_with(
    n: usize,
    d: usize,
    planted: usize,
    queries: usize,
    seed: u64,
    p: &SynthParams,
) -> Result<Workload> {
    if n == 0 || d == 0 || queries == 0 {
        return Err(Error::InvalidArgument(format!(
            "synthetic workload needs n, d, queries >= 1 (got {n}, {d}, {queries})"
        )));
    }
    if planted > n || planted * queries > n {
        return Err(Error::InvalidArgument(format!(
            "{planted} planted rows for each of {queries} queries do not fit in {n} rows"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q_dist = gaussian(p.query_std)?;
    let k_dist = gaussian(p.key_std)?;
    let v_dist = gaussian(p.value_std)?;
    let noise = gaussian(p.planted_noise)?;
    let row_clip = 2.0 * p.clip;

    let mut key = draw(&mut rng, &k_dist, row_clip, n * d);
    let value = draw(&mut rng, &v_dist, row_clip, n * d);
    let mut qs = draw(&mut rng, &q_dist, p.clip, queries * d);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let sets: Vec<Vec<usize>> = if planted == 0 {
        vec![Vec::new(); queries]
    } else {
        order
            .chunks(planted)
            .take(queries)
            .map(|c| {
                let mut c = c.to_vec();
                c.sort_unstable();
                c
            })
            .collect()
    };
    if planted == 0 {
        return Ok(Workload {
            key: Matrix::new(n, d, key)?,
            value: Matrix::new(n, d, value)?,
            queries: Matrix::new(queries, d, qs)?,
            planted: sets,
        });
    }

    let plant = |rng: &mut ChaCha8Rng, key: &mut [f64], qs: &mut [f64], a: usize| {
        let q = draw(rng, &q_dist, p.clip, d);
        qs[a * d..(a + 1) * d].copy_from_slice(&q);
        for &r in &sets[a] {
            for (j, &qj) in q.iter().enumerate() {
                key[r * d + j] =
                    (p.planted_scale * qj + noise.sample(rng)).clamp(-row_clip, row_clip);
            }
        }
    };
    for a in 0..queries {
        plant(&mut rng, &mut key, &mut qs, a);
    }

    let mut redraws = 0;
    loop {
        let km = Matrix::new(n, d, key.clone())?;
        let failing = (0..queries).find(|&a| !separated(&km, &qs[a * d..(a + 1) * d], &sets[a], p));
        let Some(a) = failing else {
            return Ok(Workload {
                key: km,
                value: Matrix::new(n, d, value)?,
                queries: Matrix::new(queries, d, qs)?,
                planted: sets,
            });
        };
        redraws += 1;
        if redraws > p.max_redraws {
            return Err(Error::InvalidArgument(format!(
                "could not separate planted rows for query {a} after {} redraws \
                 (margin {}, spread {}); try a larger d or smaller margin",
                p.max_redraws, p.margin, p.spread
            )));
        }
        plant(&mut rng, &mut key, &mut qs, a);
    }
}

fn separated(key: &Matrix, query: &[f64], planted: &[usize], p: &SynthParams) -> bool {
    let scores = true_scores(key, query).expect("shapes match by construction");
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &r in planted {
        lo = lo.min(scores[r]);
        hi = hi.max(scores[r]);
    }
    let best_other = scores
        .iter()
        .enumerate()
        .filter(|(r, _)| planted.binary_search(r).is_err())
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    hi - lo <= p.spread && lo - best_other >= p.margin
}
