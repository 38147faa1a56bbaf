//! Parallel-vs-sequential throughput comparison.
//!
//! With the default `parallel` feature the same workloads run twice: once
//! pinned to a single rayon thread (the sequential baseline) and once on the
//! default pool. Build with `--no-default-features` to measure the true
//! sequential fallback; criterion baselines make the two binaries easy to
//! compare:
//!
//! ```text
//! cargo bench -p kvfunnel-core -- --save-baseline parallel
//! cargo bench -p kvfunnel-core --no-default-features -- --save-baseline sequential
//! ```

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use kvfunnel_core::{
    allocate_pyramid, compress, decode_step, generate_weights, prefill, random_tokens,
    CompressedKv, ModelConfig, ModelWeights, PolicyConfig, PolicyKind,
};

struct Fixture {
    weights: ModelWeights,
    tokens: Vec<u32>,
}

fn fixture() -> Fixture {
    let config = ModelConfig::new(8, 8, 32, 512, 0xBEEF).unwrap();
    let weights = generate_weights(&config).unwrap();
    let tokens = random_tokens(7, 256, config.vocab_size);
    Fixture { weights, tokens }
}

#[cfg(feature = "parallel")]
fn thread_counts() -> Vec<usize> {
    vec![1, rayon::current_num_threads()]
}

#[cfg(not(feature = "parallel"))]
fn thread_counts() -> Vec<usize> {
    vec![1]
}

fn with_threads<R>(threads: usize, f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

fn bench_prefill(c: &mut Criterion) {
    let fx = fixture();
    let mut group = c.benchmark_group("prefill_n256_d256_l8");
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| with_threads(t, || prefill(&fx.weights, &fx.tokens).unwrap()));
        });
    }
    group.finish();
}

fn bench_compress(c: &mut Criterion) {
    let fx = fixture();
    let (trace, kv) = prefill(&fx.weights, &fx.tokens).unwrap();
    let policy = PolicyConfig::new(PolicyKind::Pyramid);
    let schedule = allocate_pyramid(8, 64, policy.alpha, policy.beta, true).unwrap();
    let mut group = c.benchmark_group("compress_pyramid_n256");
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| with_threads(t, || compress(&policy, &schedule, &trace, &kv).unwrap()));
        });
    }
    group.finish();
}

fn bench_decode(c: &mut Criterion) {
    let fx = fixture();
    let config = fx.weights.config();
    let (_, kv) = prefill(&fx.weights, &fx.tokens).unwrap();
    let cache = CompressedKv::from_full(&kv, config.num_heads, config.head_dim).unwrap();
    let mut group = c.benchmark_group("decode_32_steps_full_cache");
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| {
                with_threads(t, || {
                    let mut cache = cache.clone();
                    let mut token = 1u32;
                    for _ in 0..32 {
                        let logits = decode_step(&fx.weights, &mut cache, token).unwrap();
                        token = kvfunnel_core::argmax(&logits) as u32;
                    }
                    cache
                })
            });
        });
    }
    group.finish();
}

criterion_group!(benches, bench_prefill, bench_compress, bench_decode);
criterion_main!(benches);
