//! Plain-f64 restatement of the fixed-point pipeline, used as an oracle.
//!
//! Every quantity here is a dyadic rational small enough for f64 to hold
//! exactly, so rounding to `b` fraction bits is `round_ties_even(x * 2^b)`.
//! Nothing below calls into the crate's fixed-point code.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn clog2(x: usize) -> u32 {
    let mut b = 0;
    while (1usize << b) < x {
        b += 1;
    }
    b
}

/// Round to `bits` fraction bits, ties to even, then clamp to `[lo, hi]`.
pub fn round_to(x: f64, bits: u32, lo: f64, hi: f64) -> f64 {
    let s = (2f64).powi(bits as i32);
    ((x * s).round_ties_even() / s).clamp(lo, hi)
}

#[derive(Debug, Clone, Copy)]
pub struct Model {
    pub i: u32,
    pub f: u32,
    pub log_n: u32,
    pub log_d: u32,
}

pub struct ModelRun {
    pub dot: Vec<f64>,
    pub score: Vec<f64>,
    pub expsum: f64,
    pub output: Vec<f64>,
}

impl Model {
    pub fn new(n: usize, d: usize, i: u32, f: u32) -> Self {
        Model {
            i,
            f,
            log_n: clog2(n),
            log_d: clog2(d),
        }
    }

    pub fn quantize_input(&self, x: f64) -> f64 {
        let top = (2f64).powi(self.i as i32) - (2f64).powi(-(self.f as i32));
        round_to(x, self.f, -top, top)
    }

    /// Input bits of the exponent: integer and fraction bits of the shifted
    /// dot product.
    fn exp_bits(&self) -> (u32, u32) {
        let total = self.log_d + 2 * self.i + 1 + 2 * self.f;
        let hi = total - total / 2;
        (hi, total - hi)
    }

    /// `e^-x` for `x` on the `2^-2f` grid via the two-table product.
    pub fn exp_neg(&self, x: f64) -> f64 {
        let fb = 2 * self.f;
        let (_, lo_bits) = self.exp_bits();
        let raw = (x * (2f64).powi(fb as i32)) as u64;
        let lo_mask = (1u64 << lo_bits) - 1;
        let unit = (2f64).powi(-(fb as i32));
        let a = ((raw >> lo_bits) << lo_bits) as f64 * unit;
        let b = (raw & lo_mask) as f64 * unit;
        let ea = round_to((-a).exp(), fb, 0.0, 1.0);
        let eb = round_to((-b).exp(), fb, 0.0, 1.0);
        round_to(ea * eb, fb, 0.0, 1.0)
    }

    pub fn run(&self, key: &[Vec<f64>], value: &[Vec<f64>], q: &[f64]) -> ModelRun {
        let qq: Vec<f64> = q.iter().map(|&x| self.quantize_input(x)).collect();
        let dot: Vec<f64> = key
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&qq)
                    .map(|(&k, &q)| self.quantize_input(k) * q)
                    .sum()
            })
            .collect();
        let mx = dot.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let score: Vec<f64> = dot.iter().map(|&x| self.exp_neg(mx - x)).collect();
        let expsum: f64 = score.iter().sum();
        let fb = 2 * self.f;
        let d = value[0].len();
        let mut output = vec![0.0; d];
        for (s, row) in score.iter().zip(value) {
            let w = round_to(s / expsum, fb, 0.0, 1.0);
            for (o, &v) in output.iter_mut().zip(row) {
                *o += w * self.quantize_input(v);
            }
        }
        ModelRun {
            dot,
            score,
            expsum,
            output,
        }
    }
}

pub fn exact_attention(key: &[Vec<f64>], value: &[Vec<f64>], q: &[f64]) -> Vec<f64> {
    let s: Vec<f64> = key
        .iter()
        .map(|r| r.iter().zip(q).map(|(a, b)| a * b).sum())
        .collect();
    let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|x| (x - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    let mut out = vec![0.0; value[0].len()];
    for (w, row) in e.iter().zip(value) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += w / z * v;
        }
    }
    out
}

pub struct Instance {
    pub key: Vec<Vec<f64>>,
    pub value: Vec<Vec<f64>>,
    pub query: Vec<f64>,
}

/// Entries uniform in `[-1, 1]`, `n <= max_n`, `d <= max_d`.
pub fn instance(rng: &mut ChaCha8Rng, max_n: usize, max_d: usize) -> Instance {
    let n = rng.gen_range(1..=max_n);
    let d = rng.gen_range(1..=max_d);
    let mut mat = |rows: usize| -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect())
            .collect()
    };
    let key = mat(n);
    let value = mat(n);
    let query = mat(1).pop().unwrap();
    Instance { key, value, query }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
