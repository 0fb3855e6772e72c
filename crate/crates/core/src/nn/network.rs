use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::layer::{Layer, LayerCache};
use super::{checkpoint, NetworkSpec};

/// Read-only view of one trainable parameter.
pub struct ParamRef<'a, S: Scalar> {
    pub name: String,
    pub tensor: &'a Tensor<S>,
    /// Whether L2 regularization applies (weights yes, biases and batchnorm
    /// affine parameters no).
    pub decay: bool,
}

/// Mutable view of one trainable parameter.
pub struct ParamMut<'a, S: Scalar> {
    pub name: String,
    pub tensor: &'a mut Tensor<S>,
    pub decay: bool,
}

/// Per-parameter gradients, aligned with `Network::params()` order.
#[derive(Debug, Clone)]
pub struct Gradients<S: Scalar> {
    pub tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(shapes: &[Vec<usize>]) -> Gradients<S> {
        Gradients {
            tensors: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Element-wise accumulate another gradient set.
    pub fn add_assign(&mut self, other: &Gradients<S>) {
        debug_assert_eq!(self.tensors.len(), other.tensors.len());
        for (a, b) in self.tensors.iter_mut().zip(other.tensors.iter()) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data().iter()) {
                *x += y;
            }
        }
    }
}

/// A network instance: spec, parameters, and the cache of the most recent
/// training-mode forward pass (consumed by `backward`).
#[derive(Debug, Clone)]
pub struct Network<S: Scalar> {
    spec: NetworkSpec,
    layers: Vec<Layer<S>>,
    trace: Option<Vec<LayerCache<S>>>,
}

impl<S: Scalar> Network<S> {
    pub fn new<R: Rng>(spec: NetworkSpec, rng: &mut R) -> Result<Network<S>> {
        spec.validate()?;
        let shapes = spec.layer_shapes()?;
        let layers = spec
            .layers
            .iter()
            .zip(shapes.iter())
            .map(|(layer_spec, input_shape)| Layer::build(layer_spec, input_shape, rng))
            .collect();
        Ok(Network {
            spec,
            layers,
            trace: None,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    pub fn output_size(&self) -> usize {
        self.spec
            .output_shape()
            .expect("validated at construction")
            .iter()
            .product()
    }

    fn check_input(&self, input: &Tensor<S>) -> Result<()> {
        if input.rank() != self.spec.input_shape.len() + 1
            || input.shape()[1..] != self.spec.input_shape[..]
        {
            return Err(Error::ShapeMismatch {
                context: format!("network {} input (leading batch dimension)", self.spec.name),
                expected: self.spec.input_shape.clone(),
                got: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Training-mode forward pass over a batch (`[N, ...input_shape]`).
    /// Retains intermediates for exactly one `backward` call.
    pub fn forward(&mut self, input: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_input(input)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for layer in self.layers.iter_mut() {
            let (next, cache) = layer.forward_train(&current);
            caches.push(cache);
            current = next;
        }
        self.trace = Some(caches);
        Ok(current)
    }

    /// Inference-mode forward pass over a batch; deterministic and cache-free.
    pub fn infer(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_input(input)?;
        let mut current = input.clone();
        for layer in &self.layers {
            current = layer.infer(&current);
        }
        Ok(current)
    }

    /// Inference on a single un-batched input.
    pub fn infer_one(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let batched = Tensor::stack(&[input])?;
        Ok(self.infer(&batched)?.batch_item(0))
    }

    /// Backpropagate from the output gradient of the most recent `forward`.
    /// Returns parameter gradients and the gradient w.r.t. the input batch.
    pub fn backward(&mut self, grad_out: &Tensor<S>) -> Result<(Gradients<S>, Tensor<S>)> {
        let caches = self.trace.take().ok_or(Error::NoForwardCache)?;
        let mut per_layer: Vec<Vec<Tensor<S>>> = Vec::with_capacity(self.layers.len());
        let mut grad = grad_out.clone();
        for (layer, cache) in self.layers.iter().zip(caches.iter()).rev() {
            let (param_grads, din) = layer.backward(cache, &grad)?;
            per_layer.push(param_grads);
            grad = din;
        }
        per_layer.reverse();
        Ok((
            Gradients {
                tensors: per_layer.into_iter().flatten().collect(),
            },
            grad,
        ))
    }

    pub fn params(&self) -> Vec<ParamRef<'_, S>> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, layer)| {
                let kind = layer.kind_name();
                layer
                    .params()
                    .into_iter()
                    .map(move |(name, tensor, decay)| ParamRef {
                        name: format!("{i}.{kind}.{name}"),
                        tensor,
                        decay,
                    })
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, S>> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, layer)| {
                let kind = layer.kind_name();
                layer
                    .params_mut()
                    .into_iter()
                    .map(move |(name, tensor, decay)| ParamMut {
                        name: format!("{i}.{kind}.{name}"),
                        tensor,
                        decay,
                    })
            })
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params()
            .iter()
            .map(|p| p.tensor.shape().to_vec())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.tensor.len()).sum()
    }

    /// All tensors belonging in a checkpoint: trainable parameters plus
    /// non-trainable state such as batchnorm running statistics.
    pub fn state_tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let kind = layer.kind_name();
            for (name, tensor) in layer.tensors() {
                out.push((format!("{i}.{kind}.{name}"), tensor));
            }
        }
        out
    }

    pub(crate) fn state_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kind = layer.kind_name();
            for (name, tensor) in layer.tensors_mut() {
                out.push((format!("{i}.{kind}.{name}"), tensor));
            }
        }
        out
    }

    /// Copy all parameters and state bit-exactly from a network with an
    /// identical spec.
    pub fn assign_from(&mut self, other: &Network<S>) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::InvalidArgument(format!(
                "cannot copy parameters between mismatched specs {} and {}",
                other.spec.name, self.spec.name
            )));
        }
        let src: Vec<Tensor<S>> = other
            .state_tensors()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        for ((_, dst), s) in self.state_tensors_mut().into_iter().zip(src) {
            *dst = s;
        }
        Ok(())
    }

    /// Write all parameters and state to a checkpoint file.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save_tensors(path, &self.state_tensors())
    }

    /// Load a checkpoint into a freshly built network of the given spec.
    pub fn load<R: Rng>(spec: NetworkSpec, path: &Path, rng: &mut R) -> Result<Network<S>> {
        let mut net: Network<S> = Network::new(spec, rng)?;
        let loaded = checkpoint::load_tensors::<S>(path)?;
        let mut by_name: std::collections::HashMap<String, Tensor<S>> =
            loaded.into_iter().collect();
        for (name, tensor) in net.state_tensors_mut() {
            let found = by_name.remove(&name).ok_or_else(|| {
                Error::Checkpoint(format!("missing tensor {name} in {}", path.display()))
            })?;
            if found.shape() != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    found.shape(),
                    tensor.shape()
                )));
            }
            *tensor = found;
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Checkpoint(format!(
                "unexpected tensor {extra} in {}",
                path.display()
            )));
        }
        Ok(net)
    }
}
