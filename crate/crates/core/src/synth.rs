//! Synthetic bring-up corpus with a known decision rule.
//!
//! Two label classes get disjoint signal radical pools; a shared neutral
//! pool supplies filler. Characters compose radicals through real IDS
//! operators (including one ternary and one nested form per class), words
//! are one or two characters, and a document is mostly neutral words with
//! signal words of its class mixed in. With zero label noise the task is
//! exactly learnable from radicals alone.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::Document;
use crate::rng;

/// Class-0 signal, class-1 signal, neutral radical pools: disjoint slices
/// of the URO block, atomic table entries.
const SIGNAL_RADICALS: usize = 6;
const NEUTRAL_RADICALS: usize = 8;
const RADICAL_BASE: u32 = 0x4E00;

/// Composite character pools per role, heads well above the radical range.
const SIGNAL_CHARS: usize = 10;
const NEUTRAL_CHARS: usize = 12;
const CHAR_BASE: u32 = 0x5100;

const WORDS_PER_CLASS: usize = 12;
const NEUTRAL_WORDS: usize = 16;
const MIN_DOC_WORDS: usize = 10;
const MAX_DOC_WORDS: usize = 20;
const SIGNAL_WORD_RATE: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub train_docs: usize,
    pub test_docs: usize,
    /// Probability that a document's label is flipped after generation.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { train_docs: 200, test_docs: 100, noise: 0.0, seed: 0 }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("label noise must lie in [0, 1), got {0}")]
    BadNoise(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: Vec<Document>,
    pub test: Vec<Document>,
    /// Decomposition table covering every generated character, in the
    /// CODEPOINT<TAB>CHAR<TAB>IDS line format.
    pub table_text: String,
}

fn radical_pools() -> ([char; SIGNAL_RADICALS], [char; SIGNAL_RADICALS], [char; NEUTRAL_RADICALS]) {
    let at = |i: u32| char::from_u32(RADICAL_BASE + i).expect("URO codepoint");
    (
        std::array::from_fn(|i| at(i as u32)),
        std::array::from_fn(|i| at((SIGNAL_RADICALS + i) as u32)),
        std::array::from_fn(|i| at((2 * SIGNAL_RADICALS + i) as u32)),
    )
}

/// One composite character over `pool` (plus neutral glue), cycling the
/// production patterns so the table exercises binary, ternary, and nested
/// forms.
fn compose(head: char, index: usize, pool: &[char], glue: &[char]) -> String {
    let p = |i: usize| pool[i % pool.len()];
    let g = |i: usize| glue[i % glue.len()];
    let ids = match index % 4 {
        0 => format!("⿰{}{}", p(index), g(index)),
        1 => format!("⿱{}{}", g(index), p(index + 1)),
        2 => format!("⿲{}{}{}", p(index), g(index + 1), p(index + 2)),
        _ => format!("⿰{}⿱{}{}", g(index), p(index), p(index + 3)),
    };
    format!("U+{:X}\t{}\t{}\n", head as u32, head, ids)
}

struct Pools {
    signal_words: [Vec<String>; 2],
    neutral_words: Vec<String>,
    table_text: String,
}

fn build_pools() -> Pools {
    let (class0, class1, neutral) = radical_pools();
    let mut table = String::new();
    for r in class0.iter().chain(&class1).chain(&neutral) {
        table.push_str(&format!("U+{:X}\t{}\t{}\n", *r as u32, r, r));
    }
    let mut next_head = CHAR_BASE;
    let mut mint = |pool: &[char], glue: &[char], count: usize| -> Vec<char> {
        (0..count)
            .map(|i| {
                let head = char::from_u32(next_head).expect("URO codepoint");
                next_head += 1;
                table.push_str(&compose(head, i, pool, glue));
                head
            })
            .collect()
    };
    let signal_chars =
        [mint(&class0, &neutral, SIGNAL_CHARS), mint(&class1, &neutral, SIGNAL_CHARS)];
    let neutral_chars = mint(&neutral, &neutral, NEUTRAL_CHARS);

    let words = |chars: &[char], count: usize| -> Vec<String> {
        (0..count)
            .map(|i| {
                let first = chars[i % chars.len()];
                if i % 3 == 0 {
                    first.to_string()
                } else {
                    let second = chars[(i * 5 + 1) % chars.len()];
                    format!("{first}{second}")
                }
            })
            .collect()
    };
    Pools {
        signal_words: [
            words(&signal_chars[0], WORDS_PER_CLASS),
            words(&signal_chars[1], WORDS_PER_CLASS),
        ],
        neutral_words: words(&neutral_chars, NEUTRAL_WORDS),
        table_text: table,
    }
}

fn make_doc(rng: &mut ChaCha8Rng, pools: &Pools, index: usize, noise: f64) -> Document {
    let class = (index % 2) as u32;
    let len = rng.gen_range(MIN_DOC_WORDS..=MAX_DOC_WORDS);
    let mut tokens = Vec::with_capacity(len);
    for _ in 0..len {
        let pool = if rng.gen_bool(SIGNAL_WORD_RATE) {
            &pools.signal_words[class as usize]
        } else {
            &pools.neutral_words
        };
        tokens.push(pool.choose(rng).expect("pools are nonempty").clone());
    }
    let label = if noise > 0.0 && rng.gen_bool(noise) { 1 - class } else { class };
    Document { label, tokens }
}

/// Generates train and test splits plus the covering table. Labels
/// alternate before noise, so both splits stay balanced.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData, SynthError> {
    if !(0.0..1.0).contains(&spec.noise) {
        return Err(SynthError::BadNoise(spec.noise));
    }
    let pools = build_pools();
    let mut rng = rng::stream(spec.seed, rng::SYNTH_STREAM);
    let train =
        (0..spec.train_docs).map(|i| make_doc(&mut rng, &pools, i, spec.noise)).collect();
    let test = (0..spec.test_docs).map(|i| make_doc(&mut rng, &pools, i, spec.noise)).collect();
    Ok(SyntheticData { train, test, table_text: pools.table_text })
}
