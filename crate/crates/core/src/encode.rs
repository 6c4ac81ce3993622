//! Fixed-shape index encoding of documents.
//!
//! A document becomes an `l×m×n` block of vocabulary ids: `l` word slots,
//! `m` character slots per word, `n` radical slots per character. Everything
//! beyond a limit is truncated, everything short of it is right-padded with
//! the reserved pad id, so shape is a function of configuration alone.

use crate::ids::{flatten_character, DecompositionTable};
use crate::vocab::{Variant, Vocab, PAD};
use serde::{Deserialize, Serialize};

/// Truncation/padding limits for one encoded document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingShape {
    /// Words per document (`l`).
    pub max_words: usize,
    /// Characters per word (`m`).
    pub max_chars: usize,
    /// Radicals per character (`n`).
    pub radical_slots: usize,
}

impl Default for EncodingShape {
    fn default() -> Self {
        Self { max_words: 500, max_chars: 4, radical_slots: 3 }
    }
}

impl EncodingShape {
    /// Ids per word: the temporal extent seen by the word encoder.
    pub fn word_len(&self) -> usize {
        self.max_chars * self.radical_slots
    }

    /// Ids per document.
    pub fn doc_len(&self) -> usize {
        self.max_words * self.word_len()
    }
}

/// One document as a dense id block plus its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedDocument {
    pub shape: EncodingShape,
    /// Row-major `[word][char][slot]`, length `shape.doc_len()`.
    pub indices: Vec<u32>,
    pub label: u32,
    /// Word count before truncation/padding, capped at `max_words`.
    pub true_length: usize,
}

impl EncodedDocument {
    pub fn index(&self, word: usize, ch: usize, slot: usize) -> u32 {
        self.indices[(word * self.shape.max_chars + ch) * self.shape.radical_slots + slot]
    }

    /// The `m·n` ids of one word slot.
    pub fn word(&self, word: usize) -> &[u32] {
        let len = self.shape.word_len();
        &self.indices[word * len..(word + 1) * len]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EncodeError {
    #[error("encoding shape dimensions must all be at least 1")]
    BadShape,
    #[error("classifier needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: u32, classes: usize },
    #[error("radical encoding requires a decomposition table")]
    MissingTable,
    #[error("decomposition table fails validation: {cycles} cycle(s), {arities} arity violation(s)")]
    DirtyTable { cycles: usize, arities: usize },
    #[error("character encoding uses one radical slot; word encoding uses one character and one slot")]
    VariantShapeMismatch,
}

/// Encodes documents against one vocabulary, table, and shape.
///
/// Construction validates the table, so the encode methods cannot fail on
/// decomposition and are pure: same inputs, same ids, safe to call from
/// anywhere.
pub struct DocumentEncoder<'a> {
    vocab: &'a Vocab,
    table: Option<&'a DecompositionTable>,
    shape: EncodingShape,
    num_classes: usize,
}

impl<'a> DocumentEncoder<'a> {
    pub fn new(
        vocab: &'a Vocab,
        table: Option<&'a DecompositionTable>,
        shape: EncodingShape,
        num_classes: usize,
    ) -> Result<Self, EncodeError> {
        if shape.max_words == 0 || shape.max_chars == 0 || shape.radical_slots == 0 {
            return Err(EncodeError::BadShape);
        }
        if num_classes < 2 {
            return Err(EncodeError::TooFewClasses(num_classes));
        }
        match vocab.variant() {
            Variant::Radical => {
                let table = table.ok_or(EncodeError::MissingTable)?;
                let report = table.validate();
                if !report.is_clean() {
                    return Err(EncodeError::DirtyTable {
                        cycles: report.cycles.len(),
                        arities: report.arity_violations.len(),
                    });
                }
            }
            Variant::Character => {
                if shape.radical_slots != 1 {
                    return Err(EncodeError::VariantShapeMismatch);
                }
            }
            Variant::Word => {
                if shape.max_chars != 1 || shape.radical_slots != 1 {
                    return Err(EncodeError::VariantShapeMismatch);
                }
            }
        }
        Ok(Self { vocab, table, shape, num_classes })
    }

    pub fn shape(&self) -> EncodingShape {
        self.shape
    }

    /// The `n` radical-slot ids for one character: flattened radicals for the
    /// radical granularity, the character's own id otherwise, truncated to
    /// `n` and right-padded with the pad id.
    pub fn encode_character(&self, c: char) -> Vec<u32> {
        let n = self.shape.radical_slots;
        let mut slots = Vec::with_capacity(n);
        match self.vocab.variant() {
            Variant::Radical => {
                let table = self.table.expect("radical encoder always holds a table");
                let seq = flatten_character(c, table).expect("table was validated acyclic");
                slots.extend(seq.radicals.iter().take(n).map(|&r| self.vocab.char_id_or_unk(r)));
            }
            Variant::Character | Variant::Word => slots.push(self.vocab.char_id_or_unk(c)),
        }
        slots.resize(n, PAD);
        slots
    }

    /// The `m·n` ids for one token. Word granularity stores the token's own
    /// id in the single slot; otherwise the first `m` characters are encoded
    /// and missing characters pad with the pad id.
    pub fn encode_word(&self, token: &str) -> Vec<u32> {
        if self.vocab.variant() == Variant::Word {
            return vec![self.vocab.id_or_unk(token)];
        }
        let mut ids = Vec::with_capacity(self.shape.word_len());
        for c in token.chars().take(self.shape.max_chars) {
            ids.extend(self.encode_character(c));
        }
        ids.resize(self.shape.word_len(), PAD);
        ids
    }

    /// Encodes a full document; fails only on an out-of-range label.
    pub fn encode_document(&self, tokens: &[String], label: u32) -> Result<EncodedDocument, EncodeError> {
        if label as usize >= self.num_classes {
            return Err(EncodeError::InvalidLabel { label, classes: self.num_classes });
        }
        let mut indices = Vec::with_capacity(self.shape.doc_len());
        for token in tokens.iter().take(self.shape.max_words) {
            indices.extend(self.encode_word(token));
        }
        indices.resize(self.shape.doc_len(), PAD);
        Ok(EncodedDocument {
            shape: self.shape,
            indices,
            label,
            true_length: tokens.len().min(self.shape.max_words),
        })
    }

    /// Encodes a whole corpus in order.
    pub fn encode_corpus(&self, docs: &[crate::data::Document]) -> Result<Vec<EncodedDocument>, EncodeError> {
        docs.iter().map(|d| self.encode_document(&d.tokens, d.label)).collect()
    }
}
