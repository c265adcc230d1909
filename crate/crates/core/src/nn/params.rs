use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    /// Running statistics are stored alongside weights but never optimized.
    pub trainable: bool,
}

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetParams<T> {
    tensors: Vec<ParamTensor<T>>,
}

impl<T: Scalar> NetParams<T> {
    pub fn new() -> Self {
        NetParams { tensors: Vec::new() }
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<T>, trainable: bool) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(ParamTensor {
            name: name.into(),
            shape,
            data,
            trainable,
        });
        self.tensors.len() - 1
    }

    pub(crate) fn push_gaussian<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        std: f64,
        rng: &mut R,
    ) -> usize {
        let len = shape.iter().product();
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..len).map(|_| T::lit(normal.sample(rng))).collect();
        self.push(name, shape, data, true)
    }

    pub(crate) fn push_const(&mut self, name: impl Into<String>, shape: Vec<usize>, value: T, trainable: bool) -> usize {
        let len = shape.iter().product();
        self.push(name, shape, vec![value; len], trainable)
    }

    pub fn tensors(&self) -> &[ParamTensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub(crate) fn data(&self, idx: usize) -> &[T] {
        &self.tensors[idx].data
    }

    pub(crate) fn data_mut(&mut self, idx: usize) -> &mut [T] {
        &mut self.tensors[idx].data
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Number of scalar parameters, trainable or not.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        NetParams {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: vec![T::zero(); t.data.len()],
                    trainable: t.trainable,
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data.fill(T::zero());
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn convert<U: Scalar>(&self) -> NetParams<U> {
        NetParams {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| U::lit(v.to_f64_lossy())).collect(),
                    trainable: t.trainable,
                })
                .collect(),
        }
    }
}
