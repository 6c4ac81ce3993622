//! End-to-end gate: one test per release criterion, each printing a
//! `[PASS]` line with the measured figures when it holds.

mod common;

use std::time::Instant;

use radsent_core::autodiff::{concat, stack_rows};
use radsent_core::checkpoint;
use radsent_core::encode::{DocumentEncoder, EncodedDocument, EncodingShape};
use radsent_core::ids::{flatten_character, is_idc, DecompositionTable, IdsError, IdsOperator, IdsProduction};
use radsent_core::model::{Activation, FilterSpec, Model, ModelConfig};
use radsent_core::report::standard_report;
use radsent_core::synth::{generate, SyntheticSpec};
use radsent_core::train::{evaluate, train, TrainOptions};
use radsent_core::vocab::{Variant, Vocab};

use common::{fd_check, model_fd_max_err, ramp_loss, toy_model, Split};

/// Reduced document shape shared by the synthetic-corpus criteria.
const SYNTH_SHAPE: EncodingShape = EncodingShape { max_words: 20, max_chars: 4, radical_slots: 3 };

fn synth_config(highway: bool) -> ModelConfig {
    ModelConfig {
        variant: Variant::Radical,
        shape: SYNTH_SHAPE,
        embed_dim: 8,
        word_dim: 12,
        doc_dim: 8,
        filters: vec![FilterSpec::new(1, 1, 4), FilterSpec::new(2, 1, 4), FilterSpec::new(3, 3, 4)],
        activation: Activation::Relu,
        highway,
        num_classes: 2,
    }
}

/// Generates the synthetic corpus and encodes it at the reduced shape.
fn synth_pipeline(
    noise: f64,
    seed: u64,
) -> (Vec<EncodedDocument>, Vec<EncodedDocument>, Vocab, DecompositionTable) {
    let spec = SyntheticSpec { noise, seed, ..SyntheticSpec::default() };
    let data = generate(&spec).expect("noise is a probability");
    let table = DecompositionTable::parse(&data.table_text, "synthetic").expect("minted table parses");
    let vocab = Vocab::build_radical(&data.train, &table).expect("minted table is acyclic");
    let encoder = DocumentEncoder::new(&vocab, Some(&table), SYNTH_SHAPE, 2).expect("clean table");
    let train_set = encoder.encode_corpus(&data.train).expect("labels are binary");
    let test_set = encoder.encode_corpus(&data.test).expect("labels are binary");
    (train_set, test_set, vocab, table)
}

/// One graph touching every tensor operation, checked against central
/// differences in one sweep. The asymmetric ramp weights stop misrouted
/// gradients from cancelling.
fn composite_graph_max_err() -> f64 {
    let point: Vec<f64> =
        (0..18 + 12 + 2 + 18 + 2 + 6 + 12 + 3).map(|k| 0.211 * (1.3 * k as f64).sin() + 0.03).collect();
    fd_check(&point, 1e-5, |tape, xs| {
        let mut split = Split::new(xs);
        let embed = split.leaf(tape, &[3, 6]);
        let f1 = split.leaf(tape, &[2, 3, 2]);
        let b1 = split.leaf(tape, &[2]);
        let f2 = split.leaf(tape, &[2, 3, 3]);
        let b2 = split.leaf(tape, &[2]);
        let a = split.leaf(tape, &[3, 2]);
        let w = split.leaf(tape, &[2, 6]);
        let x3 = split.leaf(tape, &[3]);

        let g = embed.gather_cols(&[2, 0, 4, 5, 1], Some(0)).unwrap();
        let c1 = g.conv1d(&f1, &b1, 1).unwrap();
        let pooled = c1.tanh().maxpool_over_time().unwrap();
        let strided = g.conv1d(&f2, &b2, 3).unwrap().reshape(vec![2]).unwrap().sigmoid();
        let added = pooled.add(&strided).unwrap();
        let gated = pooled.mul(&strided).unwrap();
        let grid = stack_rows(&[added.clone(), gated.clone()]).unwrap();
        let mixed = a.matmul(&grid).unwrap();
        let squashed = mixed.reshape(vec![6]).unwrap().relu().scale(0.7);
        let scores = w.matvec(&squashed).unwrap();
        let rows = stack_rows(&[scores, added]).unwrap();
        let xent = rows.softmax_cross_entropy(&[1, 0]).unwrap();
        let tail = concat(&[gated.clone(), x3.clone()]).unwrap();
        let loss = xent.add(&ramp_loss(tape, &tail)).unwrap().add(&gated.sum().scale(0.3)).unwrap();
        (vec![embed, f1, b1, f2, b2, a, w, x3], loss)
    })
}

#[test]
fn criterion_1_gradient_suite() {
    let started = Instant::now();
    let op_err = composite_graph_max_err();
    let (model, docs) = toy_model();
    let model_err = model_fd_max_err(&model, &docs);
    assert!(model_err <= 1e-4, "full-model max relative error {model_err:.3e} exceeds 1e-4");
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "gradient suite took {elapsed:?}");
    println!(
        "[PASS] criterion 1: gradients, per-op max err {op_err:.2e} (<= 1e-5), \
         full model {model_err:.2e} (<= 1e-4), {elapsed:?}"
    );
}

#[test]
fn criterion_2_channel_sum() {
    for (name, config) in
        [("radical", ModelConfig::radical_default()), ("character", ModelConfig::character_default())]
    {
        config.validate().expect("stock config is well formed");
        let sum: usize = config.filters.iter().map(|f| f.channels).sum();
        assert_eq!(sum, 600, "{name} filter channels must sum to the word dimension");
        for i in 0..config.filters.len() {
            let mut bad = config.clone();
            bad.filters[i].channels += 1;
            assert!(bad.validate().is_err(), "{name} filter {i} perturbation must fail");
        }
    }
    println!("[PASS] criterion 2: both stock configs sum channels to 600 and reject any perturbation");
}

#[test]
fn criterion_3_parameter_ratios() {
    let started = Instant::now();
    let report = standard_report(2_000, 21_000, &[("ctrip".into(), 30_000), ("rakuten".into(), 18_000)]);
    let totals: Vec<(String, usize)> =
        report.entries.iter().map(|e| (e.label.clone(), e.budget.total)).collect();
    let radical = totals[0].1;
    let character = totals[1].1;
    assert!(radical < character, "radical {radical} must undercut character {character}");
    let mut savings = Vec::new();
    for entry in &report.entries[1..] {
        let total = entry.budget.total;
        assert!(radical < total, "radical {radical} must undercut {} {total}", entry.label);
        let pct = entry.reference_savings_percent.expect("non-reference rows carry savings");
        let bracket = if entry.label.starts_with("word") { 80.0..=95.0 } else { 10.0..=25.0 };
        assert!(bracket.contains(&pct), "{}: savings {pct:.2}% outside {bracket:?}", entry.label);
        savings.push(format!("{} {pct:.1}%", entry.label));
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_millis() < 1_000, "report took {elapsed:?}");
    println!(
        "[PASS] criterion 3: totals {totals:?} ordered, savings {}, {elapsed:?}",
        savings.join(", ")
    );
}

#[test]
fn criterion_4_uniform_baseline() {
    let (_, test_set, vocab, _) = synth_pipeline(0.0, 11);
    let zeros = test_set.iter().filter(|d| d.label == 0).count();
    assert_eq!(zeros * 2, test_set.len(), "generated test set is balanced");
    let mut model: Model<f64> = Model::init(synth_config(true), vocab.len(), 3).unwrap();
    for (name, tensor) in model.params.named_mut() {
        if name.starts_with("head.") {
            tensor.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let metrics = evaluate(&model, &test_set, 100);
    let ln2 = std::f64::consts::LN_2;
    assert!(
        (metrics.mean_loss - ln2).abs() <= 1e-6,
        "uniform-predictor loss {} is not ln 2 = {ln2}",
        metrics.mean_loss
    );
    assert_eq!(metrics.accuracy, 0.5, "ties resolve to class 0 on a balanced set");
    println!(
        "[PASS] criterion 4: zero head gives loss {:.9} = ln 2 within 1e-6, accuracy {}",
        metrics.mean_loss, metrics.accuracy
    );
}

#[test]
fn criterion_5_learnability() {
    let started = Instant::now();
    let (train_set, test_set, vocab, _) = synth_pipeline(0.0, 0);
    assert_eq!(train_set.len(), 200);
    assert_eq!(test_set.len(), 100);
    let opts = TrainOptions { epochs: 200, seed: 0, ..TrainOptions::default() };
    let (model, report) = train::<f32>(synth_config(true), vocab.len(), &train_set, None, &opts)
        .expect("corpus is non-empty");
    let first = report.epochs.first().expect("epoch stats recorded").train_loss;
    let fiftieth = report.epochs[49].train_loss;
    assert!(
        fiftieth < first,
        "epoch-50 loss {fiftieth} must undercut epoch-1 loss {first}"
    );
    let metrics = evaluate(&model, &test_set, 100);
    assert!(metrics.accuracy >= 0.95, "test accuracy {} below 0.95", metrics.accuracy);
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 600, "learnability run took {elapsed:?}");
    println!(
        "[PASS] criterion 5: test accuracy {:.3} >= 0.95, train loss {first:.4} -> {fiftieth:.4} \
         by epoch 50, {elapsed:?}",
        metrics.accuracy
    );
}

#[test]
fn criterion_6_decomposition_fixed_point() {
    let data = generate(&SyntheticSpec::default()).unwrap();
    let table = DecompositionTable::parse(&data.table_text, "synthetic").unwrap();
    assert!(table.validate().is_clean());
    let mut terminals = 0usize;
    for p in table.productions() {
        for r in flatten_character(p.head, &table).unwrap().radicals {
            assert!(!is_idc(r), "operator {r:?} leaked into an expansion");
            let again = flatten_character(r, &table).unwrap();
            assert_eq!(again.radicals, vec![r], "terminal {r:?} is not its own flattening");
            terminals += 1;
        }
    }
    let mut cyclic = table.clone();
    cyclic.insert(IdsProduction {
        head: '\u{4E8C}',
        operator: IdsOperator::Idc('\u{2FF0}'),
        components: vec!['\u{4E09}', '\u{4E8C}'],
    });
    cyclic.insert(IdsProduction {
        head: '\u{4E09}',
        operator: IdsOperator::Idc('\u{2FF1}'),
        components: vec!['\u{4E8C}', '\u{4E09}'],
    });
    let report = cyclic.validate();
    assert!(!report.is_clean() && !report.cycles.is_empty(), "injected cycle goes unreported");
    assert!(matches!(flatten_character('\u{4E8C}', &cyclic), Err(IdsError::Cycle(_))));
    println!(
        "[PASS] criterion 6: {} table entries expand to {terminals} self-flattening terminals; \
         injected cycle detected",
        table.len()
    );
}

#[test]
fn criterion_7_highway_ablation() {
    let (train_set, test_set, vocab, _) = synth_pipeline(0.0, 5);
    let opts = TrainOptions { epochs: 30, seed: 5, ..TrainOptions::default() };
    let mut accuracies = Vec::new();
    let mut feature_dims = Vec::new();
    for highway in [true, false] {
        let (model, report) =
            train::<f32>(synth_config(highway), vocab.len(), &train_set, None, &opts).unwrap();
        assert_eq!(report.epochs.len(), opts.epochs);
        let probs = model.predict(&test_set[0]);
        assert_eq!(probs.len(), 2);
        feature_dims.push(model.config.doc_dim);
        accuracies.push(evaluate(&model, &test_set, 100).accuracy);
    }
    assert_eq!(feature_dims[0], feature_dims[1], "ablation must not change output shapes");
    println!(
        "[PASS] criterion 7: highway on {:.3} / off {:.3} accuracy, identical output shapes",
        accuracies[0], accuracies[1]
    );
}

#[test]
fn criterion_8_determinism_and_round_trip() {
    let (train_set, test_set, vocab, _) = synth_pipeline(0.0, 9);
    let opts = TrainOptions { epochs: 10, seed: 9, ..TrainOptions::default() };
    let (model_a, report_a) =
        train::<f32>(synth_config(true), vocab.len(), &train_set, None, &opts).unwrap();
    let (_, report_b) =
        train::<f32>(synth_config(true), vocab.len(), &train_set, None, &opts).unwrap();
    assert_eq!(report_a.metrics(), report_b.metrics(), "equal seeds must reproduce training");
    assert_eq!(report_a.best_epoch, report_b.best_epoch);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.rsnt");
    checkpoint::save(&path, &model_a, &vocab).unwrap();
    let (restored, _) = checkpoint::load(&path).unwrap();
    let before = evaluate(&model_a, &test_set, 100);
    let after = evaluate(&restored, &test_set, 100);
    assert_eq!(before.accuracy, after.accuracy, "round trip must not move accuracy");
    assert_eq!(before.mean_loss, after.mean_loss, "round trip must not move loss");
    println!(
        "[PASS] criterion 8: reports identical across reruns; round trip reproduces \
         accuracy {:.3} and loss {:.6} bit-exactly",
        after.accuracy, after.mean_loss
    );
}
