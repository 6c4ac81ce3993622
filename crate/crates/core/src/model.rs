//! Classifier: embedding lookup, per-word convolutional encoder with
//! max-over-time pooling, optional highway layer, bidirectional LSTM over
//! word features, linear softmax head.
//!
//! Shapes follow the encoder: a document is `l` words of `m * n` slot ids.
//! The word encoder turns the embedded `d_c x (m * n)` slot matrix into a
//! `d_x` feature vector; the BiLSTM turns the `l` feature vectors into a
//! `d_z` document vector (forward state after the last word next to
//! backward state after the first).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat, stack_rows, Tape, Tensor};
use crate::encode::{EncodedDocument, EncodingShape};
use crate::rng;
use crate::tensor::{scalar, to_f64, Scalar, TensorData};
use crate::vocab::{Variant, PAD, UNK};

/// Nonlinearity applied to convolution outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x.clone(),
        }
    }
}

/// One filter bank: `channels` kernels of `width` slots sliding by `stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub width: usize,
    pub stride: usize,
    pub channels: usize,
}

impl FilterSpec {
    pub const fn new(width: usize, stride: usize, channels: usize) -> Self {
        FilterSpec { width, stride, channels }
    }

    /// Pooled positions for a word of `slots` columns.
    pub fn output_positions(&self, slots: usize) -> usize {
        (slots - self.width) / self.stride + 1
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("filter channels sum to {sum}, word feature size is {expected}")]
    ChannelSum { sum: usize, expected: usize },
    #[error("document feature size {0} must be even to split across directions")]
    OddDocDim(usize),
    #[error("filter {index}: width {width} exceeds the {slots} slots per word")]
    FilterTooWide { index: usize, width: usize, slots: usize },
    #[error("filter {index}: stride {stride} must be 1 or the per-character slot count {slots}")]
    BadStride { index: usize, stride: usize, slots: usize },
    #[error("filter {index}: width {width} must be a multiple of {slots} when striding character blocks")]
    UnalignedWidth { index: usize, width: usize, slots: usize },
    #[error("filter {index}: width, stride, and channels must be nonzero")]
    ZeroFilterField { index: usize },
    #[error("{variant:?} granularity requires {field} = 1, got {got}")]
    VariantShape { variant: Variant, field: &'static str, got: usize },
    #[error("word granularity embeds tokens directly and takes no filters")]
    WordFilters,
    #[error("need at least one filter bank")]
    NoFilters,
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("embedding dimension must be nonzero")]
    ZeroEmbedDim,
    #[error("vocabulary must contain the reserved pad and unknown ids, got {0} entries")]
    VocabTooSmall(usize),
}

/// Full architecture description. Serializable so checkpoints carry it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub shape: EncodingShape,
    /// Embedding size per slot symbol (d_c).
    pub embed_dim: usize,
    /// Word feature size after pooling and concatenation (d_x).
    pub word_dim: usize,
    /// Document feature size, split evenly across the two directions (d_z).
    pub doc_dim: usize,
    pub filters: Vec<FilterSpec>,
    pub activation: Activation,
    pub highway: bool,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::radical_default()
    }
}

/// Standard banks: three character-aligned widths at stride 1 and, when a
/// character spans several slots, three more covering whole characters at
/// stride `n`. Channels grow linearly with width.
fn filter_banks(slots_per_char: usize, channels_per_step: usize) -> Vec<FilterSpec> {
    let mut filters: Vec<FilterSpec> =
        (1..=3).map(|k| FilterSpec::new(k, 1, k * channels_per_step)).collect();
    if slots_per_char > 1 {
        filters.extend(
            (1..=3).map(|k| FilterSpec::new(k * slots_per_char, slots_per_char, k * channels_per_step)),
        );
    }
    filters
}

impl ModelConfig {
    /// Radical granularity: 500 x 4 x 3 encoding, six banks totalling 600
    /// channels.
    pub fn radical_default() -> Self {
        let shape = EncodingShape::default();
        ModelConfig {
            variant: Variant::Radical,
            filters: filter_banks(shape.radical_slots, 50),
            shape,
            embed_dim: 15,
            word_dim: 600,
            doc_dim: 300,
            activation: Activation::Relu,
            highway: true,
            num_classes: 2,
        }
    }

    /// Character granularity: one slot per character, three banks.
    pub fn character_default() -> Self {
        let shape = EncodingShape { radical_slots: 1, ..EncodingShape::default() };
        ModelConfig {
            variant: Variant::Character,
            filters: filter_banks(shape.radical_slots, 100),
            shape,
            embed_dim: 15,
            word_dim: 600,
            doc_dim: 300,
            activation: Activation::Relu,
            highway: true,
            num_classes: 2,
        }
    }

    /// Word granularity: whole tokens embedded directly, no convolution.
    pub fn word_default() -> Self {
        ModelConfig {
            variant: Variant::Word,
            shape: EncodingShape { max_chars: 1, radical_slots: 1, ..EncodingShape::default() },
            embed_dim: 600,
            word_dim: 600,
            doc_dim: 300,
            filters: Vec::new(),
            activation: Activation::Relu,
            highway: true,
            num_classes: 2,
        }
    }

    /// Slot columns per word seen by the convolutions.
    pub fn slots_per_word(&self) -> usize {
        self.shape.word_len()
    }

    /// Hidden size of each directional LSTM.
    pub fn hidden_dim(&self) -> usize {
        self.doc_dim / 2
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.embed_dim == 0 {
            return Err(ConfigError::ZeroEmbedDim);
        }
        if self.num_classes < 2 {
            return Err(ConfigError::TooFewClasses(self.num_classes));
        }
        if self.doc_dim == 0 || !self.doc_dim.is_multiple_of(2) {
            return Err(ConfigError::OddDocDim(self.doc_dim));
        }
        match self.variant {
            Variant::Word => {
                if !self.filters.is_empty() {
                    return Err(ConfigError::WordFilters);
                }
                for (field, got) in
                    [("max_chars", self.shape.max_chars), ("radical_slots", self.shape.radical_slots)]
                {
                    if got != 1 {
                        return Err(ConfigError::VariantShape { variant: self.variant, field, got });
                    }
                }
                if self.embed_dim != self.word_dim {
                    return Err(ConfigError::ChannelSum { sum: self.embed_dim, expected: self.word_dim });
                }
                return Ok(());
            }
            Variant::Character => {
                if self.shape.radical_slots != 1 {
                    return Err(ConfigError::VariantShape {
                        variant: self.variant,
                        field: "radical_slots",
                        got: self.shape.radical_slots,
                    });
                }
            }
            Variant::Radical => {}
        }
        if self.filters.is_empty() {
            return Err(ConfigError::NoFilters);
        }
        let slots = self.slots_per_word();
        let n = self.shape.radical_slots;
        let mut sum = 0;
        for (index, f) in self.filters.iter().enumerate() {
            if f.width == 0 || f.stride == 0 || f.channels == 0 {
                return Err(ConfigError::ZeroFilterField { index });
            }
            if f.width > slots {
                return Err(ConfigError::FilterTooWide { index, width: f.width, slots });
            }
            if f.stride > 1 {
                if f.stride != n {
                    return Err(ConfigError::BadStride { index, stride: f.stride, slots: n });
                }
                if f.width % n != 0 {
                    return Err(ConfigError::UnalignedWidth { index, width: f.width, slots: n });
                }
            }
            sum += f.channels;
        }
        if sum != self.word_dim {
            return Err(ConfigError::ChannelSum { sum, expected: self.word_dim });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams<T: Scalar> {
    /// hidden x (word_dim + hidden), applied to the joined [h; x] vector.
    pub weight: TensorData<T>,
    pub bias: TensorData<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T: Scalar> {
    pub forget: GateParams<T>,
    pub input: GateParams<T>,
    pub cell: GateParams<T>,
    pub output: GateParams<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams<T: Scalar> {
    /// channels x embed_dim x width.
    pub weight: TensorData<T>,
    pub bias: TensorData<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighwayParams<T: Scalar> {
    pub gate_weight: TensorData<T>,
    pub gate_bias: TensorData<T>,
    pub block_weight: TensorData<T>,
    pub block_bias: TensorData<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T: Scalar> {
    pub weight: TensorData<T>,
    pub bias: TensorData<T>,
}

/// All trainable tensors. [`ModelParams::named`] fixes the canonical
/// parameter order shared by optimizers, gradients, and checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar> {
    pub embedding: TensorData<T>,
    pub filters: Vec<FilterParams<T>>,
    pub highway: Option<HighwayParams<T>>,
    pub forward_lstm: LstmParams<T>,
    pub backward_lstm: LstmParams<T>,
    pub head: HeadParams<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn named(&self) -> Vec<(String, &TensorData<T>)> {
        let mut out: Vec<(String, &TensorData<T>)> =
            vec![("embedding".to_string(), &self.embedding)];
        for (i, f) in self.filters.iter().enumerate() {
            out.push((format!("filter.{i}.weight"), &f.weight));
            out.push((format!("filter.{i}.bias"), &f.bias));
        }
        if let Some(h) = &self.highway {
            out.push(("highway.gate.weight".to_string(), &h.gate_weight));
            out.push(("highway.gate.bias".to_string(), &h.gate_bias));
            out.push(("highway.block.weight".to_string(), &h.block_weight));
            out.push(("highway.block.bias".to_string(), &h.block_bias));
        }
        for (dir, lstm) in [("forward", &self.forward_lstm), ("backward", &self.backward_lstm)] {
            for (gate, g) in [
                ("forget", &lstm.forget),
                ("input", &lstm.input),
                ("cell", &lstm.cell),
                ("output", &lstm.output),
            ] {
                out.push((format!("lstm.{dir}.{gate}.weight"), &g.weight));
                out.push((format!("lstm.{dir}.{gate}.bias"), &g.bias));
            }
        }
        out.push(("head.weight".to_string(), &self.head.weight));
        out.push(("head.bias".to_string(), &self.head.bias));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut TensorData<T>)> {
        let mut out: Vec<(String, &mut TensorData<T>)> =
            vec![("embedding".to_string(), &mut self.embedding)];
        for (i, f) in self.filters.iter_mut().enumerate() {
            out.push((format!("filter.{i}.weight"), &mut f.weight));
            out.push((format!("filter.{i}.bias"), &mut f.bias));
        }
        if let Some(h) = &mut self.highway {
            out.push(("highway.gate.weight".to_string(), &mut h.gate_weight));
            out.push(("highway.gate.bias".to_string(), &mut h.gate_bias));
            out.push(("highway.block.weight".to_string(), &mut h.block_weight));
            out.push(("highway.block.bias".to_string(), &mut h.block_bias));
        }
        for (dir, lstm) in
            [("forward", &mut self.forward_lstm), ("backward", &mut self.backward_lstm)]
        {
            for (gate, g) in [
                ("forget", &mut lstm.forget),
                ("input", &mut lstm.input),
                ("cell", &mut lstm.cell),
                ("output", &mut lstm.output),
            ] {
                out.push((format!("lstm.{dir}.{gate}.weight"), &mut g.weight));
                out.push((format!("lstm.{dir}.{gate}.bias"), &mut g.bias));
            }
        }
        out.push(("head.weight".to_string(), &mut self.head.weight));
        out.push(("head.bias".to_string(), &mut self.head.bias));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Size of every trainable tensor under a configuration, before allocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamBudget {
    pub items: Vec<(String, usize)>,
    pub total: usize,
}

/// Parameter counts from dimensions alone, in canonical order.
pub fn count_parameters(config: &ModelConfig, vocab_size: usize) -> ParamBudget {
    let mut items: Vec<(String, usize)> =
        vec![("embedding".to_string(), config.embed_dim * vocab_size)];
    for (i, f) in config.filters.iter().enumerate() {
        items.push((format!("filter.{i}.weight"), f.channels * config.embed_dim * f.width));
        items.push((format!("filter.{i}.bias"), f.channels));
    }
    if config.highway {
        items.push(("highway.gate.weight".to_string(), config.word_dim * config.word_dim));
        items.push(("highway.gate.bias".to_string(), config.word_dim));
        items.push(("highway.block.weight".to_string(), config.word_dim * config.word_dim));
        items.push(("highway.block.bias".to_string(), config.word_dim));
    }
    let hidden = config.hidden_dim();
    let gate = hidden * (config.word_dim + hidden);
    for dir in ["forward", "backward"] {
        for gate_name in ["forget", "input", "cell", "output"] {
            items.push((format!("lstm.{dir}.{gate_name}.weight"), gate));
            items.push((format!("lstm.{dir}.{gate_name}.bias"), hidden));
        }
    }
    items.push(("head.weight".to_string(), config.num_classes * config.doc_dim));
    items.push(("head.bias".to_string(), config.num_classes));
    let total = items.iter().map(|(_, n)| n).sum();
    ParamBudget { items, total }
}

/// Configuration plus parameter values: the unit of training, evaluation,
/// and checkpointing.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub params: ModelParams<T>,
}

fn glorot_shaped<T: Scalar, R: Rng>(
    rng: &mut R,
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
) -> TensorData<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    TensorData::uniform(rng, shape, -bound, bound)
}

fn glorot<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize) -> TensorData<T> {
    glorot_shaped(rng, vec![rows, cols], cols, rows)
}

fn gate_init<T: Scalar, R: Rng>(rng: &mut R, hidden: usize, input: usize) -> GateParams<T> {
    GateParams { weight: glorot(rng, hidden, input + hidden), bias: TensorData::zeros(vec![hidden]) }
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters under the init stream of `seed`. Embeddings are
    /// uniform in [-0.05, 0.05] with the pad column pinned to zero; weight
    /// matrices are uniform with Glorot bounds; biases start at zero.
    pub fn init(config: ModelConfig, vocab_size: usize, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        if vocab_size <= UNK as usize {
            return Err(ConfigError::VocabTooSmall(vocab_size));
        }
        let mut rng = rng::stream(seed, rng::INIT_STREAM);
        let mut embedding =
            TensorData::uniform(&mut rng, vec![config.embed_dim, vocab_size], -0.05, 0.05);
        for row in 0..config.embed_dim {
            embedding.data_mut()[row * vocab_size + PAD as usize] = T::zero();
        }
        let filters = config
            .filters
            .iter()
            .map(|f| FilterParams {
                weight: glorot_shaped(
                    &mut rng,
                    vec![f.channels, config.embed_dim, f.width],
                    config.embed_dim * f.width,
                    f.channels,
                ),
                bias: TensorData::zeros(vec![f.channels]),
            })
            .collect();
        let highway = config.highway.then(|| HighwayParams {
            gate_weight: glorot(&mut rng, config.word_dim, config.word_dim),
            gate_bias: TensorData::zeros(vec![config.word_dim]),
            block_weight: glorot(&mut rng, config.word_dim, config.word_dim),
            block_bias: TensorData::zeros(vec![config.word_dim]),
        });
        let hidden = config.hidden_dim();
        let mut lstm = || LstmParams {
            forget: gate_init(&mut rng, hidden, config.word_dim),
            input: gate_init(&mut rng, hidden, config.word_dim),
            cell: gate_init(&mut rng, hidden, config.word_dim),
            output: gate_init(&mut rng, hidden, config.word_dim),
        };
        let forward_lstm = lstm();
        let backward_lstm = lstm();
        let head = HeadParams {
            weight: glorot(&mut rng, config.num_classes, config.doc_dim),
            bias: TensorData::zeros(vec![config.num_classes]),
        };
        Ok(Model {
            config,
            vocab_size,
            params: ModelParams { embedding, filters, highway, forward_lstm, backward_lstm, head },
        })
    }

    /// Registers every parameter on `tape` and returns a graph-building view.
    pub fn bind(&self, tape: &Tape<T>, trainable: bool) -> BoundModel<T> {
        let named: Vec<(String, Tensor<T>)> = self
            .params
            .named()
            .into_iter()
            .map(|(name, data)| (name, tape.leaf(data.clone(), trainable)))
            .collect();
        let get = |name: &str| -> Tensor<T> {
            named
                .iter()
                .find(|(n, _)| n == name)
                .unwrap_or_else(|| panic!("parameter {name} missing from canonical order"))
                .1
                .clone()
        };
        let filters = (0..self.config.filters.len())
            .map(|i| (get(&format!("filter.{i}.weight")), get(&format!("filter.{i}.bias"))))
            .collect();
        let highway = self.params.highway.as_ref().map(|_| HighwayBound {
            gate_weight: get("highway.gate.weight"),
            gate_bias: get("highway.gate.bias"),
            block_weight: get("highway.block.weight"),
            block_bias: get("highway.block.bias"),
            ones: tape.constant(TensorData::new(
                vec![self.config.word_dim],
                vec![T::one(); self.config.word_dim],
            )),
        });
        let bind_lstm = |dir: &str| LstmBound {
            forget: (
                get(&format!("lstm.{dir}.forget.weight")),
                get(&format!("lstm.{dir}.forget.bias")),
            ),
            input: (get(&format!("lstm.{dir}.input.weight")), get(&format!("lstm.{dir}.input.bias"))),
            cell: (get(&format!("lstm.{dir}.cell.weight")), get(&format!("lstm.{dir}.cell.bias"))),
            output: (
                get(&format!("lstm.{dir}.output.weight")),
                get(&format!("lstm.{dir}.output.bias")),
            ),
        };
        BoundModel {
            config: self.config.clone(),
            embedding: get("embedding"),
            filters,
            highway,
            forward_lstm: bind_lstm("forward"),
            backward_lstm: bind_lstm("backward"),
            head_weight: get("head.weight"),
            head_bias: get("head.bias"),
            zero_hidden: tape.constant(TensorData::zeros(vec![self.config.hidden_dim()])),
            activation: self.config.activation,
            leaves: named.into_iter().map(|(_, t)| t).collect(),
        }
    }

    /// Class probabilities for one encoded document, no gradients involved.
    pub fn predict(&self, doc: &EncodedDocument) -> Vec<f64> {
        let tape = Tape::new();
        let scores = self.bind(&tape, false).scores(doc);
        softmax(&scores.value().data().iter().map(|&v| to_f64(v)).collect::<Vec<_>>())
    }
}

/// Numerically stable softmax over raw scores.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.iter().map(|e| e / sum).collect()
}

struct LstmBound<T: Scalar> {
    forget: (Tensor<T>, Tensor<T>),
    input: (Tensor<T>, Tensor<T>),
    cell: (Tensor<T>, Tensor<T>),
    output: (Tensor<T>, Tensor<T>),
}

struct HighwayBound<T: Scalar> {
    gate_weight: Tensor<T>,
    gate_bias: Tensor<T>,
    block_weight: Tensor<T>,
    block_bias: Tensor<T>,
    ones: Tensor<T>,
}

/// Model parameters registered on a tape, ready to build loss graphs.
/// Methods panic on shape violations; `ModelConfig::validate` plus a
/// matching encoder make them unreachable.
pub struct BoundModel<T: Scalar> {
    config: ModelConfig,
    embedding: Tensor<T>,
    filters: Vec<(Tensor<T>, Tensor<T>)>,
    highway: Option<HighwayBound<T>>,
    forward_lstm: LstmBound<T>,
    backward_lstm: LstmBound<T>,
    head_weight: Tensor<T>,
    head_bias: Tensor<T>,
    zero_hidden: Tensor<T>,
    activation: Activation,
    leaves: Vec<Tensor<T>>,
}

fn affine<T: Scalar>((weight, bias): &(Tensor<T>, Tensor<T>), x: &Tensor<T>) -> Tensor<T> {
    weight.matvec(x).expect("gate weight matches input").add(bias).expect("gate bias matches rows")
}

impl<T: Scalar> BoundModel<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_doc(&self, doc: &EncodedDocument) {
        assert_eq!(doc.shape, self.config.shape, "document was encoded under a different shape");
    }

    /// Feature vector x (d_x) for word slot `word` of `doc`.
    pub fn word_feature(&self, doc: &EncodedDocument, word: usize) -> Tensor<T> {
        self.check_doc(doc);
        let ids: Vec<usize> = doc.word(word).iter().map(|&i| i as usize).collect();
        let embedded = self
            .embedding
            .gather_cols(&ids, Some(PAD as usize))
            .expect("slot ids stay below the vocabulary size");
        let feature = match self.config.variant {
            Variant::Word => {
                embedded.reshape(vec![self.config.embed_dim]).expect("word slot embeds one column")
            }
            _ => {
                let pooled: Vec<Tensor<T>> = self
                    .filters
                    .iter()
                    .zip(&self.config.filters)
                    .map(|((weight, bias), spec)| {
                        self.activation
                            .apply(
                                &embedded
                                    .conv1d(weight, bias, spec.stride)
                                    .expect("filter fits the word block"),
                            )
                            .maxpool_over_time()
                            .expect("convolution output is nonempty")
                    })
                    .collect();
                concat(&pooled).expect("filter banks produce at least one feature")
            }
        };
        match &self.highway {
            None => feature,
            Some(h) => {
                let gate =
                    affine(&(h.gate_weight.clone(), h.gate_bias.clone()), &feature).sigmoid();
                let block =
                    affine(&(h.block_weight.clone(), h.block_bias.clone()), &feature).relu();
                let carry = h
                    .ones
                    .add(&gate.scale(scalar(-1.0)))
                    .expect("carry complement matches gate length");
                gate.mul(&block)
                    .expect("gate and block share d_x")
                    .add(&carry.mul(&feature).expect("carry and feature share d_x"))
                    .expect("highway arms share d_x")
            }
        }
    }

    fn lstm_step(
        lstm: &LstmBound<T>,
        x: &Tensor<T>,
        h: &Tensor<T>,
        c: &Tensor<T>,
    ) -> (Tensor<T>, Tensor<T>) {
        let joined = concat(&[h.clone(), x.clone()]).expect("state and input are vectors");
        let forget = affine(&lstm.forget, &joined).sigmoid();
        let input = affine(&lstm.input, &joined).sigmoid();
        let candidate = affine(&lstm.cell, &joined).tanh();
        let cell = forget
            .mul(c)
            .expect("gates share the hidden size")
            .add(&input.mul(&candidate).expect("gates share the hidden size"))
            .expect("cell update shares the hidden size");
        let hidden = affine(&lstm.output, &joined)
            .sigmoid()
            .mul(&cell.tanh())
            .expect("output gate shares the hidden size");
        (hidden, cell)
    }

    /// Final hidden state after consuming `features` in the given direction.
    fn run_direction(&self, lstm: &LstmBound<T>, features: &[Tensor<T>], reversed: bool) -> Tensor<T> {
        let mut h = self.zero_hidden.clone();
        let mut c = self.zero_hidden.clone();
        let mut order: Vec<&Tensor<T>> = features.iter().collect();
        if reversed {
            order.reverse();
        }
        for x in order {
            let (nh, nc) = Self::lstm_step(lstm, x, &h, &c);
            h = nh;
            c = nc;
        }
        h
    }

    /// Document vector z (d_z). Every word slot participates; trailing pad
    /// words contribute through their zero embedding columns.
    pub fn document_feature(&self, doc: &EncodedDocument) -> Tensor<T> {
        self.check_doc(doc);
        let features: Vec<Tensor<T>> =
            (0..doc.shape.max_words).map(|w| self.word_feature(doc, w)).collect();
        let fwd = self.run_direction(&self.forward_lstm, &features, false);
        let bwd = self.run_direction(&self.backward_lstm, &features, true);
        concat(&[fwd, bwd]).expect("direction states share the hidden size")
    }

    /// Raw class scores (pre-softmax) for one document.
    pub fn scores(&self, doc: &EncodedDocument) -> Tensor<T> {
        let z = self.document_feature(doc);
        self.head_weight
            .matvec(&z)
            .expect("head width matches d_z")
            .add(&self.head_bias)
            .expect("head bias matches class count")
    }

    /// Mean cross-entropy over `docs`, plus per-document raw scores for
    /// accuracy bookkeeping.
    pub fn batch_loss(&self, docs: &[EncodedDocument]) -> (Tensor<T>, Vec<Vec<f64>>) {
        assert!(!docs.is_empty(), "batch must be nonempty");
        let scores: Vec<Tensor<T>> = docs.iter().map(|d| self.scores(d)).collect();
        let raw: Vec<Vec<f64>> =
            scores.iter().map(|s| s.value().data().iter().map(|&v| to_f64(v)).collect()).collect();
        let labels: Vec<usize> = docs.iter().map(|d| d.label as usize).collect();
        let loss = stack_rows(&scores)
            .expect("documents share the class count")
            .softmax_cross_entropy(&labels)
            .expect("labels validated at encode time");
        (loss, raw)
    }

    /// Leaf gradients in canonical parameter order. Call after `backward`;
    /// absent gradients (untrainable binding) come back as zeros.
    pub fn grads(&self) -> Vec<TensorData<T>> {
        self.leaves
            .iter()
            .map(|t| t.grad().unwrap_or_else(|| TensorData::zeros(t.shape())))
            .collect()
    }

    pub fn leaves(&self) -> &[Tensor<T>] {
        &self.leaves
    }
}
