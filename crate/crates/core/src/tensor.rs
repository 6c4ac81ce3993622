//! Dense row-major tensors used for parameters, gradients, and optimizer state.
//!
//! `f32` is the working precision for training and checkpoints; `f64` is
//! selectable through the same [`Scalar`] trait for finite-difference tests.

use rand::Rng;
use std::fmt::Debug;

/// Floating-point element type for tensors and tape nodes.
pub trait Scalar: num_traits::Float + num_traits::NumCast + Debug + Default + Copy + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` constant into the working precision.
pub fn scalar<T: Scalar>(x: f64) -> T {
    T::from(x).expect("finite f64 converts to any Scalar")
}

/// Widens any scalar to `f64`, mostly for reporting.
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().expect("Scalar widens to f64")
}

/// Dense tensor value: a shape and a row-major buffer of `shape.product()` elements.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> TensorData<T> {
    /// Builds a tensor from a buffer; the buffer length must equal the shape product.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "buffer length must match shape product"
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![T::zero(); len] }
    }

    pub fn from_scalar(x: T) -> Self {
        Self { shape: vec![1], data: vec![x] }
    }

    /// Samples every element uniformly from `[lo, hi)`. Draws in `f64` so the
    /// stream of random values is identical across element types.
    pub fn uniform<R: Rng>(rng: &mut R, shape: Vec<usize>, lo: f64, hi: f64) -> Self {
        let len = shape.iter().product();
        let data = (0..len).map(|_| scalar(rng.gen_range(lo..hi))).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<T>) {
        (self.shape, self.data)
    }

    /// The sole element of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() requires a single-element tensor");
        self.data[0]
    }

    pub fn fill(&mut self, x: T) {
        self.data.iter_mut().for_each(|v| *v = x);
    }

    /// Element of a rank-2 tensor at `(row, col)`.
    pub fn at2(&self, row: usize, col: usize) -> T {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[row * self.shape[1] + col]
    }

    /// Casts every element, e.g. to narrow `f64` test tensors to `f32` checkpoints.
    pub fn cast<U: Scalar>(&self) -> TensorData<U> {
        TensorData {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from(x).expect("cast")).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length() {
        let t = TensorData::new(vec![2, 3], vec![0.0f32; 6]);
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.len(), 6);
    }

    #[test]
    #[should_panic(expected = "buffer length")]
    fn new_rejects_mismatched_buffer() {
        TensorData::new(vec![2, 3], vec![0.0f32; 5]);
    }

    #[test]
    fn uniform_is_reproducible_and_bounded() {
        use rand::SeedableRng;
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x = TensorData::<f32>::uniform(&mut a, vec![32], -0.05, 0.05);
        let y = TensorData::<f32>::uniform(&mut b, vec![32], -0.05, 0.05);
        assert_eq!(x, y);
        assert!(x.data().iter().all(|v| (-0.05..0.05).contains(v)));
    }

    #[test]
    fn at2_is_row_major() {
        let t = TensorData::new(vec![2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(t.at2(0, 2), 3.0);
        assert_eq!(t.at2(1, 0), 4.0);
    }
}
