//! Acceptance suite.
//!
//! One test per release criterion; each prints a `PASS` line with its
//! runtime and enforces the runtime budget it was specified with. Run with
//!
//! ```text
//! cargo test -p kvfunnel --test acceptance -- --nocapture
//! ```

use std::fs;
use std::process::Command;
use std::time::Instant;

use kvfunnel_core::{
    allocate_pyramid, allocate_uniform, argmax, decode_step, generate_weights, layer_stats,
    memory_account, pool_1d, prefill, pyramid_raw_endpoints, random_tokens, schedule_for,
    score_all_queries, score_instruction_window, select_topk, CompressedKv, ForwardTrace, Matrix,
    ModelConfig, PolicyConfig, PolicyKind, PoolMode, SplitMix64, TieBreak,
};

fn criterion(name: &str, budget_secs: f64, body: impl FnOnce()) {
    let start = Instant::now();
    body();
    let elapsed = start.elapsed().as_secs_f64();
    println!("acceptance: {name} PASS ({elapsed:.2}s, budget {budget_secs}s)");
    assert!(
        elapsed < budget_secs,
        "{name} exceeded its runtime budget: {elapsed:.2}s >= {budget_secs}s"
    );
}

/// Random causal row-stochastic attention matrix.
fn random_causal_map(rng: &mut SplitMix64, n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for q in 0..n {
        let mut sum = 0.0f32;
        for k in 0..=q {
            let v = rng.next_f32() + 1e-3;
            m.set(q, k, v);
            sum += v;
        }
        for k in 0..=q {
            m.set(q, k, m.get(q, k) / sum);
        }
    }
    m
}

#[test]
fn acceptance_compression_ratio_table() {
    criterion("compression-ratio reproduction", 1.0, || {
        let config = ModelConfig::new(32, 8, 128, 1024, 0).unwrap();
        let n = 8192;
        let table = [
            (64usize, 0.8f64),
            (128, 1.6),
            (256, 3.1),
            (512, 6.3),
            (1024, 12.5),
            (2048, 25.0),
        ];
        for (budget, expect_pct) in table {
            let schedule = allocate_uniform(32, budget, 8).unwrap();
            let account = memory_account(&config, n, &schedule, 2).unwrap();
            let pct = account.ratio * 100.0;
            assert!(
                (pct - expect_pct).abs() <= 0.05 + 1e-9,
                "budget {budget}: got {pct}%, expected {expect_pct}% within 0.05pp"
            );
        }
    });
}

#[test]
fn acceptance_pyramid_schedule_algebra() {
    criterion("pyramid schedule algebra", 1.0, || {
        let (bottom, top) = pyramid_raw_endpoints(32, 128, 8, 20.0).unwrap();
        assert_eq!(bottom, 240.0, "pre-rounding bottom endpoint");
        assert_eq!(top, 6.0, "pre-rounding top endpoint");
        assert_eq!(bottom / top, 40.0, "endpoint ratio must be 2*beta");

        let schedule = allocate_pyramid(32, 128, 8, 20.0, true).unwrap();
        assert_eq!(schedule.sum(), 4096, "renormalized schedule sums to m * average");
        assert!(schedule.is_non_increasing(), "{:?}", schedule.per_layer());
    });
}

#[test]
fn acceptance_full_budget_equivalence() {
    criterion("full-budget equivalence", 30.0, || {
        let mut rng = SplitMix64::new(0xACCE);
        for case in 0..10 {
            let n = 8 + rng.next_below(249);
            let config = ModelConfig::new(4, 2, 8, 128, rng.next_u64()).unwrap();
            let weights = generate_weights(&config).unwrap();
            let tokens = random_tokens(rng.next_u64(), n, config.vocab_size);
            let (trace, kv) = prefill(&weights, &tokens).unwrap();

            for kind in PolicyKind::ALL {
                let policy = PolicyConfig {
                    alpha: 4,
                    ..PolicyConfig::new(kind)
                };
                // Oversized average: even the pyramid's top layer stays >= n.
                let average = policy.alpha + (n - policy.alpha) * 21;
                let schedule =
                    schedule_for(kind, config.num_layers, average, n, &policy, true).unwrap();
                assert!(schedule.per_layer().iter().all(|&b| b >= n));

                let mut full =
                    CompressedKv::from_full(&kv, config.num_heads, config.head_dim).unwrap();
                let mut compressed =
                    kvfunnel_core::compress(&policy, &schedule, &trace, &kv).unwrap();
                let mut token = argmax(trace.logits().row(n - 1)) as u32;
                for step in 0..20 {
                    let a = decode_step(&weights, &mut full, token).unwrap();
                    let b = decode_step(&weights, &mut compressed, token).unwrap();
                    for (x, y) in a.iter().zip(&b) {
                        assert_eq!(
                            x.to_bits(),
                            y.to_bits(),
                            "case {case} {kind:?} step {step}: logits diverged"
                        );
                    }
                    token = argmax(&a) as u32;
                }
            }
        }
    });
}

/// Visit every `pick`-subset of `0..pool`.
fn for_each_combination(pool: usize, pick: usize, visit: &mut impl FnMut(&[usize])) {
    fn recurse(
        start: usize,
        pool: usize,
        chosen: &mut Vec<usize>,
        pick: usize,
        visit: &mut impl FnMut(&[usize]),
    ) {
        if chosen.len() == pick {
            visit(chosen);
            return;
        }
        let remaining = pick - chosen.len();
        for i in start..=pool - remaining {
            chosen.push(i);
            recurse(i + 1, pool, chosen, pick, visit);
            chosen.pop();
        }
    }
    if pick == 0 {
        visit(&[]);
        return;
    }
    recurse(0, pool, &mut Vec::new(), pick, visit);
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[test]
fn acceptance_topk_exhaustive_oracle() {
    criterion("top-k exhaustive oracle", 10.0, || {
        // Integer scores keep subset sums exact in f64, so the oracle
        // detects ties exactly: best (sum, recency) over all subsets that
        // contain the forced tail, recency compared on positions sorted
        // descending.
        let mut rng = SplitMix64::new(0x701C);
        let mut done = 0;
        while done < 200 {
            let n = 2 + rng.next_below(31);
            let k = 1 + rng.next_below(n);
            let f = rng.next_below(k.min(4) + 1);
            if binomial(n - f, k - f) > 120_000.0 {
                continue;
            }
            let forced: Vec<usize> = (n - f..n).collect();
            let scores: Vec<f64> = (0..n).map(|_| rng.next_below(6) as f64).collect();

            let free: Vec<usize> = (0..n).filter(|p| !forced.contains(p)).collect();
            let mut best: Option<(f64, Vec<usize>)> = None;
            for_each_combination(free.len(), k - f, &mut |chosen| {
                let mut set: Vec<usize> = forced.clone();
                set.extend(chosen.iter().map(|&i| free[i]));
                set.sort_unstable();
                let sum: f64 = set.iter().map(|&p| scores[p]).sum();
                let key: Vec<usize> = set.iter().rev().copied().collect();
                let better = match &best {
                    None => true,
                    Some((bs, bk)) => sum > *bs || (sum == *bs && key > bk.iter().rev().copied().collect::<Vec<_>>()),
                };
                if better {
                    best = Some((sum, set));
                }
            });
            let expect = best.unwrap().1;

            let selected = select_topk(&scores, k, &forced, TieBreak::PreferRecent).unwrap();
            assert_eq!(selected, expect, "n={n} k={k} f={f} scores={scores:?}");
            done += 1;
        }
    });
}

#[test]
fn acceptance_scoring_oracles() {
    criterion("scoring oracles", 10.0, || {
        let mut rng = SplitMix64::new(0x5C03);
        for _ in 0..100 {
            let n = 2 + rng.next_below(63);
            let alpha = 1 + rng.next_below(n.min(16));
            let attn = random_causal_map(&mut rng, n);

            let window = score_instruction_window(&attn, alpha, 1, PoolMode::Avg).unwrap();
            let all = score_all_queries(&attn);
            for i in 0..n {
                let mut brute_window = 0.0f64;
                for q in n - alpha..n {
                    brute_window += f64::from(attn.get(q, i));
                }
                let mut brute_all = 0.0f64;
                for q in 0..n {
                    brute_all += f64::from(attn.get(q, i));
                }
                brute_all /= n as f64;
                assert!(
                    (window[i] - brute_window).abs() < 1e-6,
                    "window score {i}: {} vs {brute_window}",
                    window[i]
                );
                assert!(
                    (all[i] - brute_all).abs() < 1e-6,
                    "all-query score {i}: {} vs {brute_all}",
                    all[i]
                );
            }
        }
    });
}

#[test]
fn acceptance_retained_mass_dominance() {
    criterion("retained-mass dominance", 30.0, || {
        // Kernel 1 makes the selection signal identical to the measured
        // mass, so the top-k set must dominate every random competitor.
        let mut rng = SplitMix64::new(0xD011);
        for trial in 0..50 {
            let n = 8 + rng.next_below(40);
            let alpha = 1 + rng.next_below(7.min(n - 2));
            let budget = alpha + 1 + rng.next_below(n - alpha - 1);
            let attn = random_causal_map(&mut rng, n);
            let scores = score_instruction_window(&attn, alpha, 1, PoolMode::Avg).unwrap();
            let forced: Vec<usize> = (n - alpha..n).collect();

            let selected = select_topk(&scores, budget, &forced, TieBreak::PreferRecent).unwrap();
            let selected_mass: f64 = selected.iter().map(|&p| scores[p]).sum();

            let free: Vec<usize> = (0..n - alpha).collect();
            for _ in 0..100 {
                let mut pool = free.clone();
                let mut random_set = forced.clone();
                for _ in 0..budget - alpha {
                    let i = rng.next_below(pool.len());
                    random_set.push(pool.swap_remove(i));
                }
                random_set.sort_unstable();
                let random_mass: f64 = random_set.iter().map(|&p| scores[p]).sum();
                assert!(
                    selected_mass + 1e-12 >= random_mass,
                    "trial {trial}: selected {selected_mass} beaten by random {random_mass}"
                );
            }
        }
    });
}

#[test]
fn acceptance_analyzer_identities() {
    criterion("analyzer identities", 1.0, || {
        // Uniform rows over their causal support: entropy is exactly the
        // log of the support size, row by row, so the layer mean matches
        // the analytic mean.
        let n = 6;
        let mut uniform = Matrix::zeros(n, n);
        for q in 0..n {
            let p = 1.0 / (q + 1) as f32;
            for k in 0..=q {
                uniform.set(q, k, p);
            }
        }
        let trace = ForwardTrace::from_attention_maps(vec![vec![uniform]]).unwrap();
        let stats = layer_stats(&trace, 0);
        let expect: f64 = (0..n).map(|q| ((q + 1) as f64).ln()).sum::<f64>() / n as f64;
        assert!(
            (stats[0].entropy - expect).abs() < 1e-6,
            "uniform entropy {} vs ln(support) mean {expect}",
            stats[0].entropy
        );
        for s in 1..=32usize {
            let row = vec![1.0 / s as f32; s];
            let h = kvfunnel_core::row_entropy(&row);
            assert!((h - (s as f64).ln()).abs() < 1e-6, "support {s}: {h}");
        }

        let mut point = Matrix::zeros(n, n);
        for q in 0..n {
            point.set(q, q, 1.0);
        }
        let trace = ForwardTrace::from_attention_maps(vec![vec![point]]).unwrap();
        let stats = layer_stats(&trace, 0);
        assert_eq!(stats[0].top1_mass, 1.0, "point mass rows must give top1 mass exactly 1");
    });
}

#[test]
fn acceptance_bench_determinism() {
    criterion("bench determinism", 60.0, || {
        let bin = env!("CARGO_BIN_EXE_kvfunnel");
        let dir = tempfile::tempdir().unwrap();
        let spec_path = dir.path().join("spec.ini");
        fs::write(
            &spec_path,
            "\
[model]
layers = 4
heads = 2
head_dim = 8
vocab = 64
seed = 42

[tokens]
source = random
length = 40
seed = 7

[policy]
kind = pyramid

[schedule]
average_budget = 16
beta = 20

[run]
decode_steps = 8

[sweep]
budgets = 12,16
seeds = 1,2
",
        )
        .unwrap();

        let mut outputs = Vec::new();
        for name in ["first", "second"] {
            let out = dir.path().join(name);
            let status = Command::new(bin)
                .args([
                    "--spec",
                    spec_path.to_str().unwrap(),
                    "--out",
                    out.to_str().unwrap(),
                    "--workers",
                    "3",
                    "bench",
                ])
                .env_remove("KVFUNNEL_SEED")
                .status()
                .unwrap();
            assert!(status.success());
            outputs.push(fs::read(out.join("bench.csv")).unwrap());
        }
        assert_eq!(
            outputs[0], outputs[1],
            "bench CSV must be byte-identical across consecutive runs"
        );
    });
}

#[test]
fn acceptance_pool_softmax_identities() {
    criterion("pooling/softmax identities", 10.0, || {
        let mut rng = SplitMix64::new(0x9001);
        for _ in 0..200 {
            let len = 1 + rng.next_below(64);
            let v: Vec<f64> = (0..len).map(|_| f64::from(rng.next_symmetric_f32())).collect();
            for mode in [PoolMode::Avg, PoolMode::Max] {
                assert_eq!(pool_1d(&v, 1, mode).unwrap(), v, "kernel 1 must be the identity");
            }

            let rows = 1 + rng.next_below(8);
            let cols = 1 + rng.next_below(64);
            let data: Vec<f32> = (0..rows * cols)
                .map(|_| rng.next_symmetric_f32() * 10.0)
                .collect();
            let m = Matrix::from_vec(rows, cols, data).unwrap();
            let s = m.softmax_rows();
            for r in 0..rows {
                let sum: f64 = s.row(r).iter().map(|&x| f64::from(x)).sum();
                assert!((sum - 1.0).abs() < 1e-5, "row sum {sum}");
            }
        }
    });
}
