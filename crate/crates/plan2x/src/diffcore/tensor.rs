use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

static NEXT_TENSOR_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed)
}

/// Dense row-major `f64` array of rank 1 or 2.
///
/// Every tensor carries a process-unique id. Lifting the same tensor onto
/// a tape twice yields the same leaf, which is what makes weight sharing
/// (e.g. a recurrent cell applied at every step) accumulate gradients
/// correctly. Cloning produces an independent tensor with a fresh id.
#[derive(Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    id: u64,
}

impl Tensor {
    /// Creates a tensor, rejecting empty shapes and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert!(
            !shape.is_empty() && shape.len() <= 2 && shape.iter().all(|&d| d > 0),
            "tensor shape must be rank 1 or 2 with positive dims, got {shape:?}"
        );
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} values",
            data.len()
        );
        assert!(
            data.iter().all(|v| v.is_finite()),
            "tensor values must be finite"
        );
        Tensor {
            shape,
            data,
            requires_grad: false,
            id: fresh_id(),
        }
    }

    /// Creates a tensor without the finiteness check. For internal buffers
    /// (extracted activations, gradients) where divergence is caught by
    /// the optimizer-step check instead.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data,
            requires_grad: false,
            id: fresh_id(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(vec![rows, cols], vec![0.0; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1, 1], vec![v])
    }

    pub fn row(values: Vec<f64>) -> Self {
        let n = values.len();
        Tensor::new(vec![1, n], values)
    }

    /// Xavier-uniform initialization for a `[fan_in, fan_out]` weight.
    pub fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Tensor::new(vec![rows, cols], data)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// (rows, cols) view of the shape; rank-1 tensors are rows of one.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1]),
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            requires_grad: self.requires_grad,
            id: fresh_id(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        let err = std::panic::catch_unwind(|| Tensor::new(vec![2, 3], vec![0.0; 5]));
        assert!(err.is_err());
    }

    #[test]
    fn non_finite_values_rejected_at_creation() {
        let err = std::panic::catch_unwind(|| Tensor::new(vec![1, 2], vec![1.0, f64::NAN]));
        assert!(err.is_err());
        let err = std::panic::catch_unwind(|| Tensor::new(vec![1, 2], vec![1.0, f64::INFINITY]));
        assert!(err.is_err());
    }

    #[test]
    fn clones_are_independent_parameters() {
        let t = Tensor::scalar(1.0).with_grad();
        let c = t.clone();
        assert_ne!(t.id(), c.id());
        assert_eq!(t.data(), c.data());
    }
}
