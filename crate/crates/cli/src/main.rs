//! Command-line front end: decomposition, vocabulary construction,
//! synthetic data, training, evaluation, and parameter reporting over
//! JSONL corpora.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use radsent_core::checkpoint;
use radsent_core::data::{read_jsonl, write_atomic, write_jsonl};
use radsent_core::encode::DocumentEncoder;
use radsent_core::ids::{flatten_character, DecompositionTable};
use radsent_core::model::ModelConfig;
use radsent_core::report::standard_report;
use radsent_core::synth::{generate, SyntheticSpec};
use radsent_core::train::{evaluate, train, TrainOptions};
use radsent_core::vocab::{Variant, Vocab};

#[derive(Parser)]
#[command(name = "radsent", about = "Radical-level text classification", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Flatten each character of TEXT into terminal radicals.
    Decompose {
        /// Decomposition table in CODEPOINT<TAB>CHAR<TAB>IDS line format.
        #[arg(long)]
        table: PathBuf,
        /// Text to decompose; whitespace is skipped.
        text: String,
    },
    /// Build a vocabulary from a JSONL corpus and save it as JSON.
    BuildVocab {
        /// Granularity of the vocabulary.
        #[arg(long, value_enum)]
        mode: Mode,
        /// Corpus of {"label", "tokens"} lines.
        #[arg(long)]
        data: PathBuf,
        /// Decomposition table; required for radical mode.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Output path for the vocabulary JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a labeled synthetic corpus with a matching table.
    GenSynthetic {
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
        #[arg(long)]
        table_out: PathBuf,
        #[arg(long, default_value_t = 200)]
        train_docs: usize,
        #[arg(long, default_value_t = 100)]
        test_docs: usize,
        /// Label-flip probability in [0, 1).
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a classifier and save a checkpoint.
    Train {
        /// Training corpus (JSONL).
        #[arg(long)]
        data: PathBuf,
        /// Held-out corpus scored after every epoch.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Model configuration JSON; omitted fields keep stock values.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Decomposition table; required for radical-level configs.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        /// Output path for the trained checkpoint.
        #[arg(long)]
        checkpoint_out: PathBuf,
        /// Optional per-epoch metrics JSON.
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Score a checkpoint against a labeled corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Decomposition table; required for radical-level checkpoints.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        batch_size: usize,
    },
    /// Classify one pre-segmented document.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Decomposition table; required for radical-level checkpoints.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Document tokens, one argument per word.
        #[arg(required = true)]
        tokens: Vec<String>,
    },
    /// Compare parameter budgets across the three granularities.
    ParamsReport {
        #[arg(long, default_value_t = 2_000)]
        radical_vocab: usize,
        #[arg(long, default_value_t = 21_000)]
        character_vocab: usize,
        /// Word vocabularies as label=size; repeatable.
        #[arg(long, value_parser = parse_labeled_size)]
        word_vocab: Vec<(String, usize)>,
        /// Emit machine-readable JSON instead of the table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Radical,
    Character,
    Word,
}

fn parse_labeled_size(raw: &str) -> Result<(String, usize), String> {
    let (label, size) = raw.split_once('=').ok_or_else(|| format!("expected label=size, got {raw:?}"))?;
    let size = size.parse().map_err(|e| format!("bad size in {raw:?}: {e}"))?;
    Ok((label.to_string(), size))
}

fn load_table(path: &Path) -> Result<DecompositionTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let table = DecompositionTable::parse(&text, path.display().to_string())
        .with_context(|| format!("parsing {}", path.display()))?;
    for warning in table.warnings() {
        eprintln!("warning: {}: line {} redefines {:?}", path.display(), warning.line, warning.head);
    }
    Ok(table)
}

/// Loads the table when the variant needs one, and rejects a stray table
/// otherwise so a typo cannot silently change nothing.
fn table_for(variant: Variant, table: Option<&PathBuf>) -> Result<Option<DecompositionTable>> {
    match (variant, table) {
        (Variant::Radical, Some(path)) => Ok(Some(load_table(path)?)),
        (Variant::Radical, None) => bail!("radical granularity needs --table"),
        (_, None) => Ok(None),
        (_, Some(_)) => bail!("--table only applies to radical granularity"),
    }
}

fn build_vocab(variant: Variant, data: &Path, table: Option<&DecompositionTable>) -> Result<Vocab> {
    let docs = read_jsonl(data)?;
    Ok(match variant {
        Variant::Radical => {
            Vocab::build_radical(&docs, table.expect("radical table was loaded"))?
        }
        Variant::Character => Vocab::build_character(&docs),
        Variant::Word => Vocab::build_word(&docs),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Decompose { table, text } => {
            let table = load_table(&table)?;
            for c in text.chars().filter(|c| !c.is_whitespace()) {
                let seq = flatten_character(c, &table)?;
                let radicals: Vec<String> = seq.radicals.iter().map(|r| r.to_string()).collect();
                println!("{c}\t{}", radicals.join(" "));
            }
        }
        Command::BuildVocab { mode, data, table, out } => {
            let variant = match mode {
                Mode::Radical => Variant::Radical,
                Mode::Character => Variant::Character,
                Mode::Word => Variant::Word,
            };
            let table = table_for(variant, table.as_ref())?;
            let vocab = build_vocab(variant, &data, table.as_ref())?;
            vocab.save(&out)?;
            println!("{} symbols -> {}", vocab.len(), out.display());
        }
        Command::GenSynthetic {
            train_out,
            test_out,
            table_out,
            train_docs,
            test_docs,
            noise,
            seed,
        } => {
            let spec = SyntheticSpec { train_docs, test_docs, noise, seed };
            let data = generate(&spec)?;
            write_jsonl(&train_out, &data.train)?;
            write_jsonl(&test_out, &data.test)?;
            write_atomic(&table_out, data.table_text.as_bytes())
                .with_context(|| format!("writing {}", table_out.display()))?;
            println!(
                "{} train / {} test documents -> {}, {}; table -> {}",
                data.train.len(),
                data.test.len(),
                train_out.display(),
                test_out.display(),
                table_out.display()
            );
        }
        Command::Train {
            data,
            dev,
            config,
            table,
            epochs,
            seed,
            batch_size,
            learning_rate,
            checkpoint_out,
            report_out,
        } => {
            let config: ModelConfig = match config {
                Some(path) => serde_json::from_str(
                    &fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?,
                )
                .with_context(|| format!("parsing {}", path.display()))?,
                None => ModelConfig::radical_default(),
            };
            let table = table_for(config.variant, table.as_ref())?;
            let vocab = build_vocab(config.variant, &data, table.as_ref())?;
            let encoder =
                DocumentEncoder::new(&vocab, table.as_ref(), config.shape, config.num_classes)?;
            let train_set = encoder.encode_corpus(&read_jsonl(&data)?)?;
            let dev_set = match &dev {
                Some(path) => Some(encoder.encode_corpus(&read_jsonl(path)?)?),
                None => None,
            };
            let opts = TrainOptions { epochs, seed, batch_size, learning_rate, ..TrainOptions::default() };
            let (model, report) =
                train::<f32>(config, vocab.len(), &train_set, dev_set.as_deref(), &opts)?;
            for e in &report.epochs {
                let dev = match (e.dev_loss, e.dev_accuracy) {
                    (Some(l), Some(a)) => format!(" dev loss {l:.4} acc {a:.3}"),
                    _ => String::new(),
                };
                println!(
                    "epoch {}/{} train loss {:.4} acc {:.3}{dev} ({:.1}s)",
                    e.epoch, epochs, e.train_loss, e.train_accuracy, e.seconds
                );
            }
            if let Some(best) = report.best_epoch {
                println!("best epoch {best}");
            }
            checkpoint::save(&checkpoint_out, &model, &vocab)?;
            println!("checkpoint -> {}", checkpoint_out.display());
            if let Some(path) = report_out {
                let json = serde_json::json!({
                    "best_epoch": report.best_epoch,
                    "epochs": report.epochs.iter().map(|e| serde_json::json!({
                        "epoch": e.epoch,
                        "train_loss": e.train_loss,
                        "train_accuracy": e.train_accuracy,
                        "dev_loss": e.dev_loss,
                        "dev_accuracy": e.dev_accuracy,
                        "seconds": e.seconds,
                    })).collect::<Vec<_>>(),
                });
                write_atomic(&path, serde_json::to_string_pretty(&json)?.as_bytes())
                    .with_context(|| format!("writing {}", path.display()))?;
                println!("report -> {}", path.display());
            }
        }
        Command::Eval { checkpoint, data, table, batch_size } => {
            let (model, vocab) = checkpoint::load(&checkpoint)?;
            let table = table_for(model.config.variant, table.as_ref())?;
            let encoder = DocumentEncoder::new(
                &vocab,
                table.as_ref(),
                model.config.shape,
                model.config.num_classes,
            )?;
            let docs = encoder.encode_corpus(&read_jsonl(&data)?)?;
            let metrics = evaluate(&model, &docs, batch_size);
            println!("{} documents: accuracy {:.4} loss {:.4}", docs.len(), metrics.accuracy, metrics.mean_loss);
        }
        Command::Predict { checkpoint, table, tokens } => {
            let (model, vocab) = checkpoint::load(&checkpoint)?;
            let table = table_for(model.config.variant, table.as_ref())?;
            let encoder = DocumentEncoder::new(
                &vocab,
                table.as_ref(),
                model.config.shape,
                model.config.num_classes,
            )?;
            let doc = encoder.encode_document(&tokens, 0)?;
            let probs = model.predict(&doc);
            let class = radsent_core::train::argmax(&probs);
            let rendered: Vec<String> = probs.iter().map(|p| format!("{p:.4}")).collect();
            println!("class {class} p=[{}]", rendered.join(", "));
        }
        Command::ParamsReport { radical_vocab, character_vocab, word_vocab, json } => {
            let words = if word_vocab.is_empty() {
                vec![("ctrip".to_string(), 30_000), ("rakuten".to_string(), 18_000)]
            } else {
                word_vocab
            };
            let report = standard_report(radical_vocab, character_vocab, &words);
            if json {
                println!("{}", serde_json::to_string_pretty(&report.to_json())?);
            } else {
                print!("{report}");
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(err) = run(Cli::parse()) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
