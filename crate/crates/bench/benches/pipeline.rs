use criterion::{black_box, criterion_group, criterion_main, Criterion};
use radsent_core::autodiff::Tape;
use radsent_core::encode::{DocumentEncoder, EncodedDocument, EncodingShape};
use radsent_core::ids::{flatten_character, DecompositionTable};
use radsent_core::model::{Activation, FilterSpec, Model, ModelConfig};
use radsent_core::synth::{generate, SyntheticSpec};
use radsent_core::vocab::{Variant, Vocab};

const SHAPE: EncodingShape = EncodingShape { max_words: 20, max_chars: 4, radical_slots: 3 };

struct Fixture {
    table: DecompositionTable,
    docs: Vec<radsent_core::data::Document>,
    encoded: Vec<EncodedDocument>,
    model: Model<f32>,
}

fn fixture() -> Fixture {
    let data = generate(&SyntheticSpec::default()).expect("stock spec is valid");
    let table = DecompositionTable::parse(&data.table_text, "bench").expect("minted table parses");
    let vocab = Vocab::build_radical(&data.train, &table).expect("minted table is acyclic");
    let encoder = DocumentEncoder::new(&vocab, Some(&table), SHAPE, 2).expect("clean table");
    let encoded = encoder.encode_corpus(&data.train).expect("labels are binary");
    let config = ModelConfig {
        variant: Variant::Radical,
        shape: SHAPE,
        embed_dim: 8,
        word_dim: 12,
        doc_dim: 8,
        filters: vec![FilterSpec::new(1, 1, 4), FilterSpec::new(2, 1, 4), FilterSpec::new(3, 3, 4)],
        activation: Activation::Relu,
        highway: true,
        num_classes: 2,
    };
    let model = Model::init(config, vocab.len(), 0).expect("config is valid");
    Fixture { table, docs: data.train, encoded, model }
}

fn benches(c: &mut Criterion) {
    let fx = fixture();
    let heads: Vec<char> = fx.table.productions().map(|p| p.head).collect();

    c.bench_function("decompose_table", |b| {
        b.iter(|| {
            for &h in &heads {
                black_box(flatten_character(h, &fx.table).unwrap());
            }
        })
    });

    let vocab = Vocab::build_radical(&fx.docs, &fx.table).unwrap();
    c.bench_function("encode_corpus", |b| {
        let encoder = DocumentEncoder::new(&vocab, Some(&fx.table), SHAPE, 2).unwrap();
        b.iter(|| black_box(encoder.encode_corpus(&fx.docs).unwrap()))
    });

    let batch: Vec<EncodedDocument> = fx.encoded.iter().take(16).cloned().collect();
    c.bench_function("forward_batch16", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let bound = fx.model.bind(&tape, false);
            let (loss, _) = bound.batch_loss(&batch);
            black_box(loss.value().item())
        })
    });

    c.bench_function("train_step_batch16", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let bound = fx.model.bind(&tape, true);
            let (loss, _) = bound.batch_loss(&batch);
            loss.backward().unwrap();
            black_box(bound.grads())
        })
    });
}

criterion_group!(
    name = pipeline;
    config = Criterion::default().sample_size(20);
    targets = benches
);
criterion_main!(pipeline);
