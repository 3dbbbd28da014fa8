//! A small CPU neural-network engine: dense `f64` tensors, layers with
//! hand-written backward passes, and Adam.
//!
//! Layers cache what their backward pass needs during `forward`; calling
//! `backward` accumulates parameter gradients and returns the input gradient.

mod layers;
mod optim;

pub use layers::{BatchNorm, Conv2d, ConvTranspose2d, Linear, MaxPool2, Relu, Sigmoid};
pub use optim::Adam;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense NCHW tensor. Matrices are stored as `[n, features, 1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not match shape {shape:?}"
        );
        Self { shape, data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self::from_vec([rows, cols, 1, 1], data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn item(&self, i: usize) -> &[f64] {
        let len = self.item_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn reshape(mut self, shape: [usize; 4]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len(), "bad reshape to {shape:?}");
        self.shape = shape;
        self
    }
}

/// A named parameter array. Non-trainable parameters (batch-norm running
/// statistics) are persisted with the model but skipped by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Self {
            name: name.into(),
            shape,
            value,
            grad,
            trainable: true,
        }
    }

    pub fn buffer(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        Self {
            trainable: false,
            ..Self::new(name, shape, value)
        }
    }

    /// `U(-bound, bound)` initialization.
    pub fn uniform(name: impl Into<String>, shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        let value = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Self::new(name, shape, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything owning parameters.
pub trait Module {
    fn visit_params(&self, f: &mut dyn FnMut(&Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.grad.iter_mut().for_each(|g| *g = 0.0));
    }

    fn num_trainable(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| {
            if p.trainable {
                n += p.len()
            }
        });
        n
    }

    /// Flattened copy of every trainable value, in visiting order.
    fn flat_trainable(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| {
            if p.trainable {
                out.extend_from_slice(&p.value)
            }
        });
        out
    }
}
