use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tagseq::corpus::{synth_corpus, FrequencyTable, Side, SynthSpec, TagOrder, Vocab};
use tagseq::infer::{generate_corpus, GenerateConfig};
use tagseq::model::{Model, ModelConfig};
use tagseq::train::{loss_and_gradients, prepare_examples, Batch};

fn setup() -> (Model, Vocab, Vocab, Vec<tagseq::corpus::Document>) {
    let docs = synth_corpus(&SynthSpec {
        train_docs: 64,
        dev_docs: 0,
        test_docs: 0,
        ..SynthSpec::default()
    })
    .unwrap()
    .train;
    let source = Vocab::build(&docs, Side::Source, 80_000);
    let target = Vocab::build(&docs, Side::Target, 80_000);
    let cfg = ModelConfig {
        source_vocab: source.len(),
        target_vocab: target.len(),
        ..ModelConfig::desk()
    };
    (Model::init(cfg, 1).unwrap(), source, target, docs)
}

fn bench(c: &mut Criterion) {
    let (model, source, target, docs) = setup();
    let freq = FrequencyTable::from_corpus(&docs);
    let examples = prepare_examples(&docs, &source, &target, &freq, TagOrder::Asc, 1).unwrap();
    let refs: Vec<_> = examples.iter().take(32).collect();
    let batch = Batch::new(&refs);

    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    for sequential in [false, true] {
        let label = if sequential { "sequential" } else { "parallel" };
        group.bench_with_input(BenchmarkId::from_parameter(label), &sequential, |b, &seq| {
            b.iter(|| loss_and_gradients(&model, &batch, None, seq).unwrap())
        });
    }
    group.finish();

    let gen = GenerateConfig {
        beam: 8,
        n_best: 8,
        threshold: 2.0,
        max_len: 16,
        ..GenerateConfig::default()
    };
    let mut group = c.benchmark_group("generate_corpus");
    group.sample_size(10);
    for sequential in [false, true] {
        let label = if sequential { "sequential" } else { "parallel" };
        group.bench_with_input(BenchmarkId::from_parameter(label), &sequential, |b, &seq| {
            b.iter(|| generate_corpus(&model, &source, &target, &docs[..16], &gen, seq).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
