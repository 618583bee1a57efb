use crate::error::{Result, SimexError};
use crate::rng::RngStream;

use super::{Cache, Layer, Scalar, Tensor};

/// A strict chain of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential<T> {
    layers: Vec<Layer<T>>,
}

/// Forward caches for layers `start..` of a [`Sequential`].
#[derive(Debug, Clone)]
pub struct Trace<T> {
    start: usize,
    caches: Vec<Cache<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Sequential { layers }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn init_params(&mut self, rng: &mut RngStream) {
        for layer in &mut self.layers {
            layer.init_params(rng);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Parameter tensors of layers `from..`, in layer order.
    pub fn params_from(&self, from: usize) -> Vec<&Tensor<T>> {
        self.layers[from..].iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut_from(&mut self, from: usize) -> Vec<&mut Tensor<T>> {
        self.layers[from..].iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.params_from(0)
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |shape, l| l.output_shape(&shape))
    }

    /// Inference through layers `range`, without caches.
    pub fn apply_range(&self, input: Tensor<T>, range: std::ops::Range<usize>) -> Result<Tensor<T>> {
        self.layers[range].iter().try_fold(input, |x, l| l.apply(x))
    }

    pub fn predict(&self, input: Tensor<T>) -> Result<Tensor<T>> {
        self.apply_range(input, 0..self.layers.len())
    }

    /// Forward pass recording caches for layers `start..`. Layers before
    /// `start` run in inference mode (they will not be differentiated).
    pub fn forward_from(&self, input: Tensor<T>, start: usize) -> Result<(Tensor<T>, Trace<T>)> {
        let mut x = self.apply_range(input, 0..start)?;
        let mut caches = Vec::with_capacity(self.layers.len() - start);
        for layer in &self.layers[start..] {
            let (y, cache) = layer.forward(&x)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, Trace { start, caches }))
    }

    pub fn forward(&self, input: Tensor<T>) -> Result<(Tensor<T>, Trace<T>)> {
        self.forward_from(input, 0)
    }

    /// Back-propagate `grad_output` through the traced layers. Returns the
    /// gradient w.r.t. the traced input (when `want_input`) and the parameter
    /// gradients in the order of [`Sequential::params_from`]`(trace.start)`.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        grad_output: Tensor<T>,
        want_input: bool,
    ) -> Result<(Option<Tensor<T>>, Vec<Tensor<T>>)> {
        if trace.caches.len() != self.layers.len() - trace.start {
            return Err(SimexError::MissingCache("sequential"));
        }
        let mut grad = grad_output;
        let mut per_layer: Vec<Vec<Tensor<T>>> = Vec::with_capacity(trace.caches.len());
        let mut input_grad = None;
        for (offset, cache) in trace.caches.iter().enumerate().rev() {
            let idx = trace.start + offset;
            let layer = &self.layers[idx];
            let need_input = offset > 0 || want_input;
            let (gi, gp) = layer.backward_impl(cache, &grad, need_input)?;
            per_layer.push(gp);
            match gi {
                Some(g) if offset > 0 => grad = g,
                other => input_grad = other,
            }
        }
        per_layer.reverse();
        Ok((input_grad, per_layer.into_iter().flatten().collect()))
    }
}
