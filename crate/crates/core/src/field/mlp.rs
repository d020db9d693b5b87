//! Small fully connected network with ReLU hidden layers and a linear
//! output, plus its hand-written reverse pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::{join, Parameters, Tensor, TensorClass, TensorMut};
use crate::scalar::{axpy, dot, gemv_acc, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// Input-major `inputs x outputs`: the weights leaving input `i` are
    /// contiguous, so both passes run as axpy updates over the outputs.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![T::zero(); inputs * outputs], bias: vec![T::zero(); outputs] }
    }

    /// He-uniform weights, zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        let mut l = Self::zeros(inputs, outputs);
        for w in &mut l.weight {
            *w = T::lit(rng.gen_range(-bound..bound));
        }
        l
    }

    /// Weights from input `i` to every output.
    #[inline]
    pub fn col(&self, i: usize) -> &[T] {
        &self.weight[i * self.outputs..(i + 1) * self.outputs]
    }

    /// `W[o][i]`.
    #[inline]
    pub fn at(&self, o: usize, i: usize) -> T {
        self.weight[i * self.outputs + o]
    }
}

/// Layer stack `widths[0] -> widths[1] -> ... -> widths[n]`.
///
/// The first layer may be fed only a prefix ("head") of its input; the
/// contribution of the remaining columns is then supplied as a precomputed
/// offset (see [`Mlp::first_layer_offset`]). This lets inputs that are
/// constant along a ray be multiplied once per ray instead of per sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

impl<T: Real> Mlp<T> {
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        Self { layers: widths.windows(2).map(|w| Linear::he_uniform(w[0], w[1], rng)).collect() }
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Linear::zeros(l.inputs, l.outputs)).collect() }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// Total length of the per-sample activation record.
    pub fn acts_len(&self) -> usize {
        self.layers.iter().map(|l| l.outputs).sum()
    }

    pub fn max_width(&self) -> usize {
        self.layers.iter().map(|l| l.outputs.max(l.inputs)).max().unwrap_or(0)
    }

    /// `bias + W[:, head_len..] * tail` for the first layer.
    pub fn first_layer_offset(&self, head_len: usize, tail: &[T], out: &mut [T]) {
        let l0 = &self.layers[0];
        debug_assert_eq!(head_len + tail.len(), l0.inputs);
        out.copy_from_slice(&l0.bias);
        for (k, &x) in tail.iter().enumerate() {
            if x != T::zero() {
                axpy(x, l0.col(head_len + k), out);
            }
        }
    }

    /// Forward pass writing every layer output into `acts` (hidden outputs
    /// post-ReLU, final output raw).
    pub fn forward_with_offset(&self, head: &[T], offset: &[T], acts: &mut [T]) {
        debug_assert_eq!(acts.len(), self.acts_len());
        let last = self.layers.len() - 1;
        let mut start = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let (done, rest) = acts.split_at_mut(start);
            let out = &mut rest[..layer.outputs];
            let input = if i == 0 {
                out.copy_from_slice(offset);
                head
            } else {
                out.copy_from_slice(&layer.bias);
                &done[start - layer.inputs..]
            };
            let cols = if i == 0 { &layer.weight[..head.len() * layer.outputs] } else { &layer.weight[..] };
            gemv_acc(input, cols, out);
            if i != last {
                for v in out.iter_mut() {
                    *v = v.max(T::zero());
                }
            }
            start += layer.outputs;
        }
    }

    pub fn forward(&self, input: &[T], acts: &mut [T]) {
        debug_assert_eq!(input.len(), self.input_dim());
        self.forward_with_offset(input, &self.layers[0].bias, acts);
    }

    /// Convenience forward returning only the final output.
    pub fn eval(&self, input: &[T]) -> Vec<T> {
        let mut acts = vec![T::zero(); self.acts_len()];
        self.forward(input, &mut acts);
        acts[acts.len() - self.output_dim()..].to_vec()
    }

    pub fn output<'a>(&self, acts: &'a [T]) -> &'a [T] {
        &acts[acts.len() - self.output_dim()..]
    }

    /// Reverse pass for one sample.
    ///
    /// With `grads` given, accumulates weight gradients for every layer
    /// (first layer: head columns only) and biases of layers after the
    /// first. The adjoint of
    /// the first pre-activation is written to `d_pre0`; when `first_bias` is
    /// set it is also added to the first layer's bias gradient. If `d_head`
    /// is given it receives the adjoint of `head`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        head: &[T],
        acts: &[T],
        d_out: &[T],
        mut grads: Option<&mut Mlp<T>>,
        d_pre0: &mut [T],
        first_bias: bool,
        mut d_head: Option<&mut [T]>,
        scratch: &mut Vec<T>,
    ) {
        let n = self.layers.len();
        let width = self.max_width();
        scratch.clear();
        scratch.resize(2 * width, T::zero());
        let (delta, next) = scratch.split_at_mut(width);
        let out_len = self.output_dim();
        delta[..out_len].copy_from_slice(d_out);

        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let mut g = grads.as_deref_mut().map(|g| &mut g.layers[i]);
            let d = &delta[..layer.outputs];
            let input: &[T] = if i == 0 {
                head
            } else {
                let start: usize = self.layers[..i - 1].iter().map(|l| l.outputs).sum();
                &acts[start..start + layer.inputs]
            };
            let m = layer.outputs;
            if let Some(g) = g.as_deref_mut() {
                for (k, &x) in input.iter().enumerate() {
                    if x != T::zero() {
                        axpy(x, d, &mut g.weight[k * m..(k + 1) * m]);
                    }
                }
                if i > 0 || first_bias {
                    for (gb, &dv) in g.bias.iter_mut().zip(d) {
                        *gb += dv;
                    }
                }
            }
            if i > 0 {
                let nd = &mut next[..layer.inputs];
                // ReLU mask from the previous layer's post-activation
                for (k, (v, &a)) in nd.iter_mut().zip(input).enumerate() {
                    *v = if a > T::zero() { dot(layer.col(k), d) } else { T::zero() };
                }
                delta[..layer.inputs].copy_from_slice(nd);
            } else {
                d_pre0.copy_from_slice(d);
                if let Some(dh) = d_head.as_deref_mut() {
                    for (k, v) in dh.iter_mut().enumerate() {
                        *v = dot(layer.col(k), d);
                    }
                }
            }
        }
    }

    /// Folds a summed first-layer adjoint back onto the offset columns:
    /// bias, `W[:, head_len..]`, and the adjoint of `tail` into `d_tail`.
    pub fn backward_offset(&self, head_len: usize, tail: &[T], d_pre0_sum: &[T], grads: &mut Mlp<T>, d_tail: &mut [T]) {
        let l0 = &self.layers[0];
        let g = &mut grads.layers[0];
        let m = l0.outputs;
        for (gb, &dv) in g.bias.iter_mut().zip(d_pre0_sum) {
            *gb += dv;
        }
        for (k, (&x, dt)) in tail.iter().zip(d_tail.iter_mut()).enumerate() {
            let col = head_len + k;
            if x != T::zero() {
                axpy(x, d_pre0_sum, &mut g.weight[col * m..(col + 1) * m]);
            }
            *dt = dot(l0.col(col), d_pre0_sum);
        }
    }

    pub(crate) fn tensors_as(&self, prefix: &str, weight: TensorClass, bias: TensorClass) -> Vec<Tensor<'_, T>> {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            v.push(Tensor { name: join(prefix, &format!("layer{i}.weight")), class: weight, data: &l.weight });
            v.push(Tensor { name: join(prefix, &format!("layer{i}.bias")), class: bias, data: &l.bias });
        }
        v
    }

    pub(crate) fn tensors_mut_as(&mut self, prefix: &str, weight: TensorClass, bias: TensorClass) -> Vec<TensorMut<'_, T>> {
        let mut v = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            v.push(TensorMut { name: join(prefix, &format!("layer{i}.weight")), class: weight, data: &mut l.weight });
            v.push(TensorMut { name: join(prefix, &format!("layer{i}.bias")), class: bias, data: &mut l.bias });
        }
        v
    }
}

impl<T: Real> Parameters<T> for Mlp<T> {
    fn tensors(&self, prefix: &str) -> Vec<Tensor<'_, T>> {
        self.tensors_as(prefix, TensorClass::DensityWeight, TensorClass::DensityBias)
    }

    fn tensors_mut(&mut self, prefix: &str) -> Vec<TensorMut<'_, T>> {
        self.tensors_mut_as(prefix, TensorClass::DensityWeight, TensorClass::DensityBias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_linear_layer_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mlp = Mlp::<f64>::new(&[3, 2], &mut rng);
        let x = [0.5, -1.0, 2.0];
        let mut acts = vec![0.0; 2];
        mlp.forward(&x, &mut acts);
        let mut grads = mlp.zeros_like();
        let mut d_pre0 = vec![0.0; 2];
        let mut dx = vec![0.0; 3];
        let adj = [0.3, -0.7];
        mlp.backward(&x, &acts, &adj, Some(&mut grads), &mut d_pre0, true, Some(&mut dx), &mut Vec::new());
        for o in 0..2 {
            for i in 0..3 {
                assert!((grads.layers[0].at(o, i) - adj[o] * x[i]).abs() < 1e-15);
            }
            assert_eq!(grads.layers[0].bias[o], adj[o]);
        }
        for i in 0..3 {
            let expect = adj[0] * mlp.layers[0].at(0, i) + adj[1] * mlp.layers[0].at(1, i);
            assert!((dx[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_adjoint_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mlp = Mlp::<f64>::new(&[4, 8, 8, 3], &mut rng);
        let x = [0.1, 0.2, -0.3, 0.4];
        let mut acts = vec![0.0; mlp.acts_len()];
        mlp.forward(&x, &mut acts);
        let mut grads = mlp.zeros_like();
        mlp.backward(&x, &acts, &[0.0; 3], Some(&mut grads), &mut [0.0; 8], true, None, &mut Vec::new());
        assert!(grads.tensors("").iter().all(|t| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn offset_split_matches_full_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mlp = Mlp::<f64>::new(&[6, 8, 3], &mut rng);
        let x = [0.1, 0.2, -0.3, 0.4, 0.9, -0.2];
        let full = mlp.eval(&x);
        let mut offset = vec![0.0; 8];
        mlp.first_layer_offset(2, &x[2..], &mut offset);
        let mut acts = vec![0.0; mlp.acts_len()];
        mlp.forward_with_offset(&x[..2], &offset, &mut acts);
        for (a, b) in mlp.output(&acts).iter().zip(&full) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
