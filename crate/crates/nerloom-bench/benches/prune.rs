use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use nerloom::prune::{prune_corpus, EmbeddingProvider, HashedNgramEmbedder, PruneConfig};
use nerloom_bench::corpus;

fn bench_prune(c: &mut Criterion) {
    let embedder = HashedNgramEmbedder::default();

    let mut group = c.benchmark_group("prune_corpus");
    for per_dataset in [500usize, 2500] {
        let corpus = corpus(per_dataset);
        let total = corpus.sample_count();
        group.throughput(Throughput::Elements(total as u64));
        group.bench_with_input(
            BenchmarkId::new("diversity_k50", total),
            &corpus,
            |b, corpus| {
                let cfg = PruneConfig { k: 50, ..PruneConfig::default() };
                b.iter(|| prune_corpus(corpus, &embedder, &cfg).unwrap());
            },
        );
    }
    group.finish();

    let corpus = corpus(2500);
    let mut group = c.benchmark_group("embed");
    group.throughput(Throughput::Elements(corpus.sample_count() as u64));
    group.bench_function("char_ngram_10k_texts", |b| {
        b.iter(|| {
            corpus
                .samples()
                .map(|s| embedder.embed(&s.text).unwrap().len())
                .sum::<usize>()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_prune);
criterion_main!(benches);
