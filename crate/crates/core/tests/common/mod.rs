//! Helpers shared by the integration test targets.

use radsent_core::autodiff::{Tape, Tensor};
use radsent_core::encode::{EncodedDocument, EncodingShape};
use radsent_core::gradcheck::{max_rel_err, numeric_gradient};
use radsent_core::model::{Activation, FilterSpec, Model, ModelConfig};
use radsent_core::tensor::TensorData;
use radsent_core::vocab::Variant;

pub const FD_EPS: f64 = 1e-5;

/// Walks a flat probe vector, carving it into tape leaves.
pub struct Split<'a> {
    xs: &'a [f64],
    pos: usize,
}

impl<'a> Split<'a> {
    pub fn new(xs: &'a [f64]) -> Self {
        Split { xs, pos: 0 }
    }

    pub fn leaf(&mut self, tape: &Tape<f64>, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let t = tape.leaf(
            TensorData::new(shape.to_vec(), self.xs[self.pos..self.pos + n].to_vec()),
            true,
        );
        self.pos += n;
        t
    }
}

/// Compares reverse-mode gradients against central differences. `build`
/// splits the flat point into leaves and returns them with a scalar loss;
/// it runs once per probe, so it must be deterministic in the point.
pub fn fd_check<F>(point: &[f64], tol: f64, build: F) -> f64
where
    F: Fn(&Tape<f64>, &[f64]) -> (Vec<Tensor<f64>>, Tensor<f64>),
{
    let tape = Tape::new();
    let (leaves, loss) = build(&tape, point);
    loss.backward().expect("loss is scalar");
    let analytic: Vec<f64> = leaves
        .iter()
        .flat_map(|l| l.grad().expect("leaf tracks gradients").into_parts().1)
        .collect();
    assert_eq!(analytic.len(), point.len(), "leaves must cover the whole probe point");
    let numeric = numeric_gradient(
        |xs| {
            let tape = Tape::new();
            let (_, loss) = build(&tape, xs);
            loss.value().item()
        },
        point,
        FD_EPS,
    );
    let err = max_rel_err(&analytic, &numeric);
    assert!(err <= tol, "max relative error {err:.3e} exceeds {tol:.0e}");
    err
}

/// Asymmetric weighted sum, so permuted or misrouted gradients cannot
/// cancel out.
pub fn ramp_loss(tape: &Tape<f64>, t: &Tensor<f64>) -> Tensor<f64> {
    let shape = t.shape();
    let n: usize = shape.iter().product();
    let weights: Vec<f64> = (1..=n).map(|i| i as f64 * 0.37 - 1.1).collect();
    let c = tape.constant(TensorData::new(shape, weights));
    t.mul(&c).expect("ramp matches shape").sum()
}

/// Small full model over two hand-written documents covering both labels,
/// pad and unknown ids, and a partially filled final word.
pub fn toy_model() -> (Model<f64>, Vec<EncodedDocument>) {
    let config = ModelConfig {
        variant: Variant::Radical,
        shape: EncodingShape { max_words: 4, max_chars: 2, radical_slots: 2 },
        embed_dim: 3,
        word_dim: 5,
        doc_dim: 8,
        filters: vec![FilterSpec::new(1, 1, 2), FilterSpec::new(2, 2, 3)],
        activation: Activation::Tanh,
        highway: true,
        num_classes: 2,
    };
    let mut model = Model::init(config, 8, 42).unwrap();
    // Init zeroes every bias, which parks the highway relu and the maxpool
    // ties exactly on their kinks for the all-pad word. Central differences
    // are only meaningful at a differentiable point, so nudge every
    // parameter off those hinges deterministically.
    let mut k = 0u32;
    for (_, t) in model.params.named_mut() {
        for x in t.data_mut().iter_mut() {
            k += 1;
            *x += 0.013 * (f64::from(k) * 0.7).sin() + 0.004;
        }
    }
    let shape = model.config.shape;
    let docs = vec![
        EncodedDocument {
            shape,
            indices: vec![2, 3, 4, 5, 6, 7, 1, 2, 3, 4, 5, 6, 0, 0, 0, 0],
            label: 0,
            true_length: 3,
        },
        EncodedDocument {
            shape,
            indices: vec![7, 6, 5, 4, 3, 2, 1, 0, 2, 2, 3, 3, 4, 5, 6, 7],
            label: 1,
            true_length: 4,
        },
    ];
    (model, docs)
}

/// Finite-difference check of the whole pipeline: every parameter of
/// `model` against the batch loss on `docs`.
pub fn model_fd_max_err(model: &Model<f64>, docs: &[EncodedDocument]) -> f64 {
    let point: Vec<f64> =
        model.params.named().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
    let with_params = |xs: &[f64]| {
        let mut m = model.clone();
        let mut pos = 0;
        for (_, t) in m.params.named_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&xs[pos..pos + n]);
            pos += n;
        }
        assert_eq!(pos, xs.len());
        m
    };
    let tape = Tape::new();
    let bound = with_params(&point).bind(&tape, true);
    let (loss, _) = bound.batch_loss(docs);
    loss.backward().expect("loss is scalar");
    let analytic: Vec<f64> = bound.grads().iter().flat_map(|g| g.data().to_vec()).collect();
    let numeric = numeric_gradient(
        |xs| {
            let tape = Tape::new();
            let bound = with_params(xs).bind(&tape, false);
            let (loss, _) = bound.batch_loss(docs);
            loss.value().item()
        },
        &point,
        FD_EPS,
    );
    max_rel_err(&analytic, &numeric)
}
