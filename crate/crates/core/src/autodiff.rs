//! Reverse-mode differentiation: shared parameters, gradient buffers, and
//! the operation tape that is replayed backward.
//!
//! A forward pass optionally records every differentiable operation onto a
//! [`Tape`] together with the activations the backward rule needs. Calling
//! [`Tape::backward`] walks the record in reverse, accumulating per-layer
//! weight gradients into a [`GradBuffer`]. Buffers from parallel batch
//! chunks are merged in a fixed order so results do not depend on thread
//! scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::Architecture;
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Scalar, Tensor};

/// One trainable weight tensor and its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter<S: Scalar> {
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    /// Position in the model's layer order.
    pub index: usize,
}

/// The ordered per-layer weights shared by the analog and spiking engines.
/// There is exactly one store; neither engine ever copies it.
#[derive(Debug, Clone)]
pub struct ModelParams<S: Scalar> {
    pub params: Vec<Parameter<S>>,
}

impl<S: Scalar> ModelParams<S> {
    /// Kaiming-uniform fan-in initialization (`U(±sqrt(6/fan_in))`), drawn
    /// in layer order from a seeded generator.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .param_shapes
            .iter()
            .enumerate()
            .map(|(index, shape)| {
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                let value =
                    Tensor::from_fn(shape, |_| S::from_f64(rng.random_range(-bound..bound)));
                Parameter { grad: Tensor::zeros(shape), value, index }
            })
            .collect();
        ModelParams { params }
    }

    /// Wrap existing weight tensors (checkpoint load, conversion).
    pub fn from_tensors(tensors: Vec<Tensor<S>>) -> Self {
        let params = tensors
            .into_iter()
            .enumerate()
            .map(|(index, value)| Parameter {
                grad: Tensor::zeros(value.shape()),
                value,
                index,
            })
            .collect();
        ModelParams { params }
    }

    /// Check that the stored weight shapes are exactly what `arch` expects.
    pub fn check_shapes(&self, arch: &Architecture) -> Result<()> {
        if self.params.len() != arch.param_shapes.len() {
            return Err(Error::shape(
                "model parameters",
                format!("{} weighted layers", arch.param_shapes.len()),
                format!("{}", self.params.len()),
            ));
        }
        for (p, want) in self.params.iter().zip(&arch.param_shapes) {
            if p.value.shape() != want.as_slice() {
                return Err(Error::shape(
                    format!("weights of layer {}", p.index),
                    format!("{want:?}"),
                    format!("{:?}", p.value.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn value(&self, index: usize) -> &Tensor<S> {
        &self.params[index].value
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::ZERO);
        }
    }

    /// Accumulate a chunk buffer into the parameter gradients.
    pub fn add_grads(&mut self, buf: &GradBuffer<S>) {
        for (p, g) in self.params.iter_mut().zip(&buf.grads) {
            p.grad.add_scaled(g, S::ONE);
        }
    }

    /// Convert every weight to another precision (gradients reset to zero).
    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams::from_tensors(self.params.iter().map(|p| p.value.cast()).collect())
    }
}

/// Weight-gradient accumulator with one slot per model parameter. Each
/// parallel chunk owns a private buffer; the trainer merges them in chunk
/// order so the sum is identical for any thread count.
#[derive(Debug, Clone)]
pub struct GradBuffer<S: Scalar> {
    pub grads: Vec<Tensor<S>>,
}

impl<S: Scalar> GradBuffer<S> {
    pub fn zeros_like(params: &ModelParams<S>) -> Self {
        GradBuffer {
            grads: params.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    /// Add a gradient contribution for one parameter.
    pub fn add(&mut self, param: usize, g: &Tensor<S>) {
        self.grads[param].add_scaled(g, S::ONE);
    }

    /// Fold another buffer into this one (elementwise sum).
    pub fn merge(&mut self, other: &GradBuffer<S>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_scaled(b, S::ONE);
        }
    }
}

#[derive(Debug)]
enum TapeOp<S: Scalar> {
    Conv { param: usize, input: Tensor<S>, stride: usize, pad: usize },
    Pool { indices: Vec<u32>, input_shape: Vec<usize> },
    Flatten { input_shape: Vec<usize> },
    Relu { input: Tensor<S> },
    Dense { param: usize, input: Tensor<S> },
}

/// Ordered record of one sample's differentiable operations.
#[derive(Debug, Default)]
pub struct Tape<S: Scalar> {
    ops: Vec<TapeOp<S>>,
    consumed: bool,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { ops: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub(crate) fn push_conv(&mut self, param: usize, input: Tensor<S>, stride: usize, pad: usize) {
        self.ops.push(TapeOp::Conv { param, input, stride, pad });
    }

    pub(crate) fn push_pool(&mut self, indices: Vec<u32>, input_shape: Vec<usize>) {
        self.ops.push(TapeOp::Pool { indices, input_shape });
    }

    pub(crate) fn push_flatten(&mut self, input_shape: Vec<usize>) {
        self.ops.push(TapeOp::Flatten { input_shape });
    }

    pub(crate) fn push_relu(&mut self, input: Tensor<S>) {
        self.ops.push(TapeOp::Relu { input });
    }

    pub(crate) fn push_dense(&mut self, param: usize, input: Tensor<S>) {
        self.ops.push(TapeOp::Dense { param, input });
    }

    /// Replay the tape backward from an output-gradient seed, accumulating
    /// weight gradients into `buf`. A tape can be walked exactly once.
    pub fn backward(
        &mut self,
        params: &ModelParams<S>,
        seed: Tensor<S>,
        buf: &mut GradBuffer<S>,
    ) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.consumed = true;
        if self.ops.is_empty() {
            return Err(Error::Config("backward on an empty tape".into()));
        }

        let mut g = seed;
        for (i, op) in self.ops.iter().enumerate().rev() {
            // The first recorded op consumes the raw input sample, which is
            // not trainable — its input gradient is never needed.
            let need_input = i > 0;
            match op {
                TapeOp::Conv { param, input, stride, pad } => {
                    let w = &params.params[*param].value;
                    let (gw, gin) = ops::conv2d_grads(input, w, &g, *stride, *pad, need_input)?;
                    buf.add(*param, &gw);
                    match gin {
                        Some(next) => g = next,
                        None => break,
                    }
                }
                TapeOp::Dense { param, input } => {
                    let w = &params.params[*param].value;
                    let (gw, gin) = ops::dense_grads(input, w, &g, need_input)?;
                    buf.add(*param, &gw);
                    match gin {
                        Some(next) => g = next,
                        None => break,
                    }
                }
                TapeOp::Relu { input } => {
                    g = ops::relu_backward(input, &g)?;
                }
                TapeOp::Pool { indices, input_shape } => {
                    g = ops::maxpool2d_backward(&g, indices, input_shape)?;
                }
                TapeOp::Flatten { input_shape } => {
                    g = g.reshape(input_shape.clone())?;
                }
            }
        }
        Ok(())
    }
}
