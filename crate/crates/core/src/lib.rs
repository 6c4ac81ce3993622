//! Radical-level text classification for Chinese and Japanese.
//!
//! Characters are decomposed into radicals through Ideographic Description
//! Sequences, embedded, composed into word features by a convolutional
//! encoder, and read by a bidirectional LSTM whose final states feed a
//! softmax classifier. Everything runs on a small reverse-mode autodiff
//! engine built for exactly these operations.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod encode;
pub mod ids;
pub mod model;
pub mod report;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use autodiff::{concat, stack_rows, AutodiffError, Tape, Tensor};
pub use model::{Model, ModelConfig};
pub use tensor::{Scalar, TensorData};
