use std::hint::black_box;

use annolab_core::plugins::postcorrect::synth::{CorpusSpec, SyntheticCorpus};
use annolab_core::plugins::postcorrect::{edit_distance, train, TrainConfig};
use criterion::{criterion_group, criterion_main, Criterion, Throughput};

fn bench_postcorrect(c: &mut Criterion) {
    let mut corpus = SyntheticCorpus::new(1, CorpusSpec::default());
    let pages = corpus.pages(10);
    let page = corpus.pair();

    let mut g = c.benchmark_group("postcorrect");
    g.sample_size(10);
    g.bench_function("train_10_pages", |b| {
        b.iter(|| train(black_box(&pages), TrainConfig::default()).unwrap())
    });
    let (model, _) = train(&pages, TrainConfig::default()).unwrap();
    g.throughput(Throughput::Elements(page.source.chars().count() as u64));
    g.bench_function("correct_page", |b| b.iter(|| model.correct_page(black_box(&page.source))));
    g.bench_function("edit_distance_page", |b| {
        b.iter(|| edit_distance(black_box(&page.source), black_box(&page.target)))
    });
    g.finish();
}

criterion_group!(benches, bench_postcorrect);
criterion_main!(benches);
