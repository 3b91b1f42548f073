use approx_attn::pipeline::quantize_vector;
use approx_attn::{
    attention_approx, candidate_selection, naive_greedy_oracle, preprocess_key, CycleParams,
};
use approx_attn_bench::{selection, Fixture};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn candidate_search(c: &mut Criterion) {
    let fx = Fixture::new(320, 64, 8);
    let query = fx.workload.queries.row(0);
    let mut group = c.benchmark_group("candidate_search");
    for m in [40usize, 160, 320] {
        let cfg = selection(m, 5.0);
        group.bench_with_input(BenchmarkId::new("heap", m), &cfg, |b, cfg| {
            b.iter(|| candidate_selection(fx.memory.sorted_key(), black_box(query), cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("naive", m), &cfg, |b, cfg| {
            b.iter(|| naive_greedy_oracle(&fx.workload.key, black_box(query), cfg).unwrap())
        });
    }
    group.finish();
}

fn preprocessing(c: &mut Criterion) {
    let fx = Fixture::new(320, 64, 1);
    c.bench_function("preprocess_key/320x64", |b| {
        b.iter(|| preprocess_key(black_box(&fx.workload.key)))
    });
}

fn end_to_end(c: &mut Criterion) {
    let fx = Fixture::new(320, 64, 8);
    let query = fx.workload.queries.row(0);
    let qquery = quantize_vector(query, fx.pipeline.schedule().input).unwrap();
    let params = CycleParams::default();
    let mut group = c.benchmark_group("attention");
    group.bench_function("base", |b| {
        b.iter(|| {
            fx.pipeline
                .attention_base(
                    fx.memory.quantized_key(),
                    fx.memory.quantized_value(),
                    black_box(&qquery),
                )
                .unwrap()
        })
    });
    for (name, m, t) in [("conservative", 160, 5.0), ("aggressive", 40, 10.0)] {
        let cfg = selection(m, t);
        group.bench_function(name, |b| {
            b.iter(|| {
                attention_approx(&fx.pipeline, &fx.memory, black_box(query), &cfg, &params).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, candidate_search, preprocessing, end_to_end);
criterion_main!(benches);
