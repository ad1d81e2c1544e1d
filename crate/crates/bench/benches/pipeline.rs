use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use distdescribe_bench::task_pair;
use distdescribe_core::discriminator::{self, TrainConfig};
use distdescribe_core::proposer::build_prompt;
use distdescribe_core::verifier::{PairSet, Verifier};
use distdescribe_core::{Backends, Engine, RuleBackend, RunConfig};

const GOLD: &str = "contains a question mark";

fn bench_prompt(c: &mut Criterion) {
    let pair = task_pair(10);
    let (set1, set0) = (&pair.d1.samples()[..5], &pair.d0.samples()[..5]);
    c.bench_function("build_prompt_5x5", |b| b.iter(|| build_prompt(black_box(set1), black_box(set0))));
}

fn bench_verifier(c: &mut Criterion) {
    let pair = task_pair(200);
    let mut group = c.benchmark_group("estimate_ca");
    for n_pairs in [100, 400] {
        let pairs = PairSet::draw(200, 200, n_pairs, 0);
        group.bench_with_input(BenchmarkId::from_parameter(n_pairs), &pairs, |b, pairs| {
            // A fresh verifier per iteration so the judgment cache stays cold.
            b.iter(|| {
                Verifier::new(Arc::new(RuleBackend::default()))
                    .estimate_on(GOLD, &pair, pairs)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_discriminator(c: &mut Criterion) {
    let pair = task_pair(200);
    c.bench_function("train_discriminator_200", |b| {
        b.iter(|| discriminator::train(black_box(&pair), &TrainConfig::default()).unwrap())
    });
}

fn bench_describe(c: &mut Criterion) {
    let pair = task_pair(200);
    let mut group = c.benchmark_group("describe_pair");
    group.sample_size(10);
    group.bench_function("rule_200", |b| {
        b.iter(|| {
            let engine = Engine::new(RunConfig::default(), Backends::rule()).unwrap();
            engine.describe_pair(&pair).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_prompt, bench_verifier, bench_discriminator, bench_describe);
criterion_main!(benches);
