//! Fully connected network with ReLU hidden layers and a linear output
//! layer, trained with hand-written backpropagation.
//!
//! Parameters live in one flat buffer, layer by layer: the `out × in`
//! row-major weight matrix followed by the `out` biases.

use rand::Rng;

use crate::error::{CfsError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputInit {
    /// Same scaled-uniform draw as the hidden layers.
    Uniform,
    /// Zero weights and bias: a constant output before training.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    params: Vec<T>,
}

/// Activations of every layer from the last forward pass; `layers[0]` is
/// the input and the last entry is the raw output.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache<T> {
    layers: Vec<Vec<T>>,
    delta: Vec<T>,
    delta_prev: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl<T: Scalar> Mlp<T> {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(CfsError::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params: vec![T::zero(); param_count(sizes)],
        })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn random<G: Rng + ?Sized>(sizes: &[usize], output: OutputInit, rng: &mut G) -> Result<Self> {
        let mut mlp = Self::zeros(sizes)?;
        let last = sizes.len() - 2;
        let mut offset = 0;
        for (i, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut mlp.params[offset..offset + fan_in * fan_out] {
                // draw even when zeroing so layer draws do not shift
                let v = rng.random_range(-bound..bound);
                *p = if i == last && output == OutputInit::Zero { T::zero() } else { T::lit(v) };
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(mlp)
    }

    pub fn from_params(sizes: &[usize], params: Vec<T>) -> Result<Self> {
        let mut mlp = Self::zeros(sizes)?;
        if params.len() != mlp.params.len() {
            return Err(CfsError::Shape(format!(
                "{} parameters given for layer sizes {sizes:?} (need {})",
                params.len(),
                mlp.params.len()
            )));
        }
        mlp.params = params;
        Ok(mlp)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        let mut cache = ForwardCache::default();
        self.forward_cached(input, &mut cache)?;
        Ok(cache.layers.pop().unwrap_or_default())
    }

    pub fn forward_cached<'c>(&self, input: &[T], cache: &'c mut ForwardCache<T>) -> Result<&'c [T]> {
        if input.len() != self.input_dim() {
            return Err(CfsError::Shape(format!(
                "network input has dimension {}, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let depth = self.sizes.len();
        cache.layers.resize_with(depth, Vec::new);
        cache.layers[0].clear();
        cache.layers[0].extend_from_slice(input);
        let mut offset = 0;
        for i in 0..depth - 1 {
            let (n_in, n_out) = (self.sizes[i], self.sizes[i + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let (prev, rest) = cache.layers.split_at_mut(i + 1);
            let a = &prev[i];
            let out = &mut rest[0];
            out.clear();
            let hidden = i + 2 < depth;
            for (row, &bias) in w.chunks_exact(n_in).zip(b) {
                let mut z = bias;
                for (&wij, &aj) in row.iter().zip(a) {
                    z += wij * aj;
                }
                out.push(if hidden && z < T::zero() { T::zero() } else { z });
            }
        }
        Ok(cache.output())
    }

    /// Gradient of `Σ_i grad_output[i] · output[i]` with respect to every
    /// parameter, added into `grad`. `cache` must come from the last
    /// forward pass with the current parameters.
    pub fn backward(&self, cache: &mut ForwardCache<T>, grad_output: &[T], grad: &mut [T]) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size");
        assert_eq!(grad_output.len(), self.output_dim(), "output gradient size");
        let depth = self.sizes.len();
        let mut offsets = Vec::with_capacity(depth - 1);
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let ForwardCache { layers, delta, delta_prev } = cache;
        delta.clear();
        delta.extend_from_slice(grad_output);
        for i in (0..depth - 1).rev() {
            let (n_in, n_out) = (self.sizes[i], self.sizes[i + 1]);
            let off = offsets[i];
            let a = &layers[i];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for ((grow, gbias), &d) in gw.chunks_exact_mut(n_in).zip(gb.iter_mut()).zip(delta.iter()) {
                *gbias += d;
                if d != T::zero() {
                    for (g, &aj) in grow.iter_mut().zip(a) {
                        *g += d * aj;
                    }
                }
            }
            if i == 0 {
                break;
            }
            let w = &self.params[off..off + n_in * n_out];
            delta_prev.clear();
            delta_prev.resize(n_in, T::zero());
            for (row, &d) in w.chunks_exact(n_in).zip(delta.iter()) {
                if d != T::zero() {
                    for (dp, &wij) in delta_prev.iter_mut().zip(row) {
                        *dp += wij * d;
                    }
                }
            }
            // ReLU derivative: hidden activation is positive iff pre-activation was
            for (dp, &aj) in delta_prev.iter_mut().zip(a) {
                if aj <= T::zero() {
                    *dp = T::zero();
                }
            }
            std::mem::swap(delta, delta_prev);
        }
    }
}
