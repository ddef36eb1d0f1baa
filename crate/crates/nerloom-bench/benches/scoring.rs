use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use nerloom::corpus::Corpus;
use nerloom::eval::{score_predictions, PredSpan, Prediction, PredictionBody};
use nerloom_bench::corpus;

fn span_predictions(corpus: &Corpus) -> Vec<Prediction> {
    corpus
        .samples()
        .map(|s| Prediction {
            sample_id: s.id.clone(),
            prompted_labels: None,
            body: PredictionBody::Spans(
                s.mentions
                    .iter()
                    .map(|m| PredSpan { label: m.label.render(), start: m.start, end: m.end })
                    .collect(),
            ),
        })
        .collect()
}

/// Gold answers re-serialized the way a model would emit them; every third
/// one is wrapped in a code fence so the repair path gets exercised too.
fn response_predictions(corpus: &Corpus) -> Vec<Prediction> {
    corpus
        .samples()
        .enumerate()
        .map(|(i, s)| {
            let mut body = String::from("{");
            let mut first = true;
            for m in &s.mentions {
                if !first {
                    body.push(',');
                }
                first = false;
                body.push_str(&format!("\"{}\": [\"{}\"]", m.label.render(), m.surface));
            }
            body.push('}');
            if i % 3 == 0 {
                body = format!("```json\n{body}\n```");
            }
            Prediction {
                sample_id: s.id.clone(),
                prompted_labels: None,
                body: PredictionBody::Response(body),
            }
        })
        .collect()
}

fn bench_scoring(c: &mut Criterion) {
    let corpus = corpus(1000);
    let total = corpus.sample_count() as u64;

    let spans = span_predictions(&corpus);
    let mut group = c.benchmark_group("score_predictions");
    group.throughput(Throughput::Elements(total));
    group.bench_function("spans_4k_samples", |b| {
        b.iter(|| score_predictions(&corpus, &spans, None))
    });

    let responses = response_predictions(&corpus);
    group.bench_function("responses_4k_samples", |b| {
        b.iter(|| score_predictions(&corpus, &responses, None))
    });
    group.finish();
}

criterion_group!(benches, bench_scoring);
criterion_main!(benches);
