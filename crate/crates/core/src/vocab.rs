//! Symbol vocabularies with reserved padding and unknown ids.
//!
//! One vocabulary type serves all three granularities: radicals produced by
//! IDS flattening, whole characters, and whole words. Ids 0 and 1 are always
//! `<pad>` and `<unk>`; corpus symbols follow in first-occurrence order, so a
//! vocabulary is a deterministic function of corpus order.

use crate::data::Document;
use crate::ids::{flatten_character, DecompositionTable, IdsError, UNK_CHAR};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_SYMBOL: &str = "<pad>";
pub const UNK_SYMBOL: &str = "<unk>";

/// Granularity of the symbol inventory and of document encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Characters decompose into radical sequences through an IDS table.
    Radical,
    /// Characters are the symbols; no decomposition.
    Character,
    /// Whole tokens are the symbols.
    Word,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    variant: Variant,
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Debug, thiserror::Error)]
pub enum VocabError {
    #[error("unsupported vocabulary file version {0}")]
    Version(u32),
    #[error("ids 0 and 1 must be {PAD_SYMBOL:?} and {UNK_SYMBOL:?}")]
    Reserved,
    #[error("symbol ids must cover 0..len exactly once; id {0} is duplicated or out of range")]
    NonContiguous(u32),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

impl Vocab {
    fn with_reserved(variant: Variant) -> Self {
        let mut v = Self { variant, symbols: Vec::new(), index: HashMap::new() };
        v.add(PAD_SYMBOL);
        v.add(UNK_SYMBOL);
        v
    }

    fn add(&mut self, symbol: &str) -> u32 {
        if let Some(&id) = self.index.get(symbol) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.symbols.push(symbol.to_string());
        self.index.insert(symbol.to_string(), id);
        id
    }

    fn add_char(&mut self, c: char) {
        self.add(c.encode_utf8(&mut [0u8; 4]));
    }

    /// Radical inventory: every terminal produced by flattening every
    /// character of every token. The UNK sentinel never becomes a symbol of
    /// its own; it is already covered by the reserved id.
    pub fn build_radical(corpus: &[Document], table: &DecompositionTable) -> Result<Self, IdsError> {
        let mut v = Self::with_reserved(Variant::Radical);
        for doc in corpus {
            for token in &doc.tokens {
                for ch in token.chars() {
                    for &radical in &flatten_character(ch, table)?.radicals {
                        if radical != UNK_CHAR {
                            v.add_char(radical);
                        }
                    }
                }
            }
        }
        Ok(v)
    }

    /// Character inventory: every character of every token, verbatim.
    pub fn build_character(corpus: &[Document]) -> Self {
        let mut v = Self::with_reserved(Variant::Character);
        for doc in corpus {
            for token in &doc.tokens {
                token.chars().for_each(|c| v.add_char(c));
            }
        }
        v
    }

    /// Word inventory: every token, verbatim.
    pub fn build_word(corpus: &[Document]) -> Self {
        let mut v = Self::with_reserved(Variant::Word);
        for doc in corpus {
            doc.tokens.iter().for_each(|t| {
                v.add(t);
            });
        }
        v
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    pub fn id_or_unk(&self, symbol: &str) -> u32 {
        self.id(symbol).unwrap_or(UNK)
    }

    pub fn char_id_or_unk(&self, c: char) -> u32 {
        self.id_or_unk(c.encode_utf8(&mut [0u8; 4]))
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn to_file(&self) -> VocabFile {
        VocabFile {
            version: VOCAB_FORMAT_VERSION,
            variant: self.variant,
            symbols: self
                .symbols
                .iter()
                .enumerate()
                .map(|(id, s)| (s.clone(), id as u32))
                .collect(),
        }
    }

    pub fn from_file(file: VocabFile) -> Result<Self, VocabError> {
        if file.version != VOCAB_FORMAT_VERSION {
            return Err(VocabError::Version(file.version));
        }
        let mut symbols = vec![String::new(); file.symbols.len()];
        let mut seen = vec![false; file.symbols.len()];
        for (symbol, id) in file.symbols {
            let slot = seen.get_mut(id as usize).ok_or(VocabError::NonContiguous(id))?;
            if *slot {
                return Err(VocabError::NonContiguous(id));
            }
            *slot = true;
            symbols[id as usize] = symbol;
        }
        if symbols.len() < 2 || symbols[0] != PAD_SYMBOL || symbols[1] != UNK_SYMBOL {
            return Err(VocabError::Reserved);
        }
        let index = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
        Ok(Self { variant: file.variant, symbols, index })
    }

    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        let json = serde_json::to_vec_pretty(&self.to_file())
            .map_err(|source| VocabError::Json { path: path.display().to_string(), source })?;
        crate::data::write_atomic(path, &json)
            .map_err(|source| VocabError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let bytes = std::fs::read(path)
            .map_err(|source| VocabError::Io { path: path.display().to_string(), source })?;
        let file = serde_json::from_slice(&bytes)
            .map_err(|source| VocabError::Json { path: path.display().to_string(), source })?;
        Self::from_file(file)
    }
}

pub const VOCAB_FORMAT_VERSION: u32 = 1;

/// On-disk form: a versioned map from symbol to id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabFile {
    pub version: u32,
    pub variant: Variant,
    pub symbols: BTreeMap<String, u32>,
}
