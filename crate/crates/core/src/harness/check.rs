//! Quick invariant and oracle checks behind the `check` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cycles::{approx_latency, base_latency, base_throughput, CycleParams};
use crate::error::Result;
use crate::fixedpoint::{make_schedule, quantize, QFormat};
use crate::harness::experiment::{run_experiment, ExperimentConfig};
use crate::harness::synth::gen_synthetic;
use crate::pipeline::{quantize_vector, ExpLutPair, Pipeline, QMatrix};
use crate::reference::{softmax, true_scores, Matrix};
use crate::search::{
    candidate_selection, naive_greedy_oracle, post_scoring_select, preprocess_key, SelectionConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, failure: Option<String>, ok: String) -> CheckOutcome {
    match failure {
        None => CheckOutcome {
            name,
            passed: true,
            detail: ok,
        },
        Some(detail) => CheckOutcome {
            name,
            passed: false,
            detail,
        },
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, span: f64) -> Matrix {
    Matrix::new(
        n,
        d,
        (0..n * d).map(|_| rng.gen_range(-span..span)).collect(),
    )
    .expect("non-empty")
}

fn oracle_equivalence(rng: &mut ChaCha8Rng, trials: usize) -> Result<Option<String>> {
    for t in 0..trials {
        let (n, d) = (rng.gen_range(2..=32), rng.gen_range(2..=8));
        let key = random_matrix(rng, n, d, 2.0);
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let cfg = SelectionConfig {
            m: rng.gen_range(0..=n * d),
            t_percent: 5.0,
            heuristic: false,
        };
        if candidate_selection(&preprocess_key(&key), &q, &cfg)?
            != naive_greedy_oracle(&key, &q, &cfg)?
        {
            return Ok(Some(format!(
                "trial {t} (n={n}, d={d}, M={}) differs",
                cfg.m
            )));
        }
    }
    Ok(None)
}

fn full_consumption(rng: &mut ChaCha8Rng, trials: usize) -> Result<Option<String>> {
    for t in 0..trials {
        let (n, d) = (rng.gen_range(2..=32), rng.gen_range(2..=8));
        let key = random_matrix(rng, n, d, 2.0);
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let cfg = SelectionConfig {
            m: n * d,
            t_percent: 5.0,
            heuristic: false,
        };
        let set = candidate_selection(&preprocess_key(&key), &q, &cfg)?;
        let truth = true_scores(&key, &q)?;
        let bad = set
            .greedy
            .iter()
            .any(|(&r, &s)| (s - truth[r]).abs() > 1e-12);
        let positive: Vec<usize> = (0..n).filter(|&r| truth[r] > 0.0).collect();
        if bad || (set.fallback.is_none() && set.rows != positive) {
            return Ok(Some(format!(
                "trial {t} (n={n}, d={d}) breaks the identity"
            )));
        }
    }
    Ok(None)
}

fn lut_exhaustive() -> Result<Option<String>> {
    let luts = ExpLutPair::new(8, 8, 8)?;
    let score = QFormat::unsigned(0, 8)?;
    for x in 0u64..1 << 16 {
        let direct = quantize((-(x as f64) / 256.0).exp(), score)?.raw();
        if (luts.eval_raw(x).raw() - direct).abs() > 1 {
            return Ok(Some(format!("input {x:#06x} off by more than one unit")));
        }
    }
    Ok(None)
}

fn post_scoring_guarantee(rng: &mut ChaCha8Rng, trials: usize) -> Result<Option<String>> {
    for t in 0..trials {
        let len = rng.gen_range(1..40);
        let scores: Vec<f64> = (0..len).map(|_| rng.gen_range(-8.0..8.0)).collect();
        let weights = softmax(&scores);
        let wmax = weights.iter().copied().fold(0.0, f64::max);
        let items: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        for tp in [1.0, 5.0, 10.0, 50.0, 100.0] {
            let kept = post_scoring_select(&items, tp)?;
            let excluded_ok = (0..len)
                .filter(|r| !kept.iter().any(|k| k.0 == *r))
                .all(|r| weights[r] < tp / 100.0 * wmax);
            if !excluded_ok {
                return Ok(Some(format!("trial {t}, T={tp}: excluded row too heavy")));
            }
        }
    }
    Ok(None)
}

fn pipeline_bounds(rng: &mut ChaCha8Rng, trials: usize) -> Result<Option<String>> {
    let sched = make_schedule(32, 8, 4, 4)?;
    let pipeline = Pipeline::new(sched, None)?;
    for t in 0..trials {
        let (n, d) = (rng.gen_range(1..=32), rng.gen_range(1..=8));
        let key = QMatrix::quantize(&random_matrix(rng, n, d, 2.0), sched.input)?;
        let value = QMatrix::quantize(&random_matrix(rng, n, d, 2.0), sched.input)?;
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let r = pipeline.attention_base(&key, &value, &quantize_vector(&q, sched.input)?)?;
        if r.expsum.to_real() < 1.0 || r.score.iter().any(|s| s.to_real() > 1.0) {
            return Ok(Some(format!("trial {t}: score or expsum out of bounds")));
        }
    }
    Ok(None)
}

fn cycle_formulas() -> Result<Option<String>> {
    for n in [1u64, 16, 50, 320] {
        if base_latency(n) != 3 * n + 27 || base_throughput(n) != n + 9 {
            return Ok(Some(format!("base formula wrong at n={n}")));
        }
    }
    if approx_latency(160, 80, 20, &CycleParams::default())? != 307 {
        return Ok(Some("approximate latency wrong".into()));
    }
    Ok(None)
}

fn run_determinism(seed: u64) -> Result<Option<String>> {
    let cfg = ExperimentConfig {
        n: 64,
        d: 16,
        queries: 4,
        planted: 2,
        top_k: 2,
        seed,
        ..ExperimentConfig::default()
    };
    let data = gen_synthetic(cfg.n, cfg.d, cfg.planted, cfg.queries, cfg.seed)?;
    let a = run_experiment(&cfg, &data)?.to_json();
    let b = run_experiment(&cfg, &data)?.to_json();
    Ok((a != b).then(|| "repeated runs differ".to_string()))
}

/// Run every check; errors inside a check count as failures.
pub fn run_checks(seed: u64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut record = |name, res: Result<Option<String>>, ok: &str| {
        out.push(match res {
            Ok(failure) => outcome(name, failure, ok.to_string()),
            Err(e) => outcome(name, Some(format!("error: {e}")), String::new()),
        })
    };
    record(
        "oracle_equivalence",
        oracle_equivalence(&mut rng, 200),
        "200 instances identical",
    );
    record(
        "full_consumption",
        full_consumption(&mut rng, 100),
        "greedy scores equal true scores at M = nd",
    );
    record(
        "lut_exhaustive",
        lut_exhaustive(),
        "65536 inputs within one unit",
    );
    record(
        "post_scoring_guarantee",
        post_scoring_guarantee(&mut rng, 500),
        "excluded weights below T% of max",
    );
    record(
        "pipeline_bounds",
        pipeline_bounds(&mut rng, 200),
        "scores <= 1, expsum >= 1",
    );
    record("cycle_formulas", cycle_formulas(), "closed forms hold");
    record(
        "run_determinism",
        run_determinism(seed),
        "byte-identical reports",
    );
    out
}
