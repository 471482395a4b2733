use indexmap::IndexMap;

use super::Tensor;
use crate::{Error, Result};

/// A trainable tensor and its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered collection of named parameters.
///
/// Parameters are addressed by position ([`ParamId`]) on hot paths and by
/// name for persistence. Insertion order is stable and defines the iteration
/// order everywhere (optimizer, checkpoints, gradient reductions).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Param>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        let grad = Tensor::zeros(value.rows(), value.cols());
        let (idx, _) = self.params.insert_full(name, Param { value, grad });
        Ok(ParamId(idx))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    #[inline]
    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    #[inline]
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    #[inline]
    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    #[inline]
    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.get_index_of(name).map(ParamId)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.params.get_index(id.0).map(|(k, _)| k.as_str()).unwrap()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Zero-filled tensors shaped like every parameter, in store order.
    pub fn zeros_like(&self) -> Gradients {
        Gradients(
            self.params
                .values()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect(),
        )
    }

    /// Adds `scale * grads` into the gradient accumulators.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) -> Result<()> {
        if grads.0.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "gradient set has {} tensors, store has {}",
                grads.0.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.values_mut().zip(&grads.0) {
            p.grad.add_scaled(g, scale)?;
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .map(|p| p.grad.sum_squares())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let k = max_norm / norm;
            for p in self.params.values_mut() {
                p.grad.as_mut_slice().iter_mut().for_each(|g| *g *= k);
            }
        }
        norm
    }

    /// True when every parameter in `other` has the same name and shape, in
    /// the same order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((a, pa), (b, pb))| a == b && pa.value.shape() == pb.value.shape())
    }

    /// Largest absolute elementwise difference between parameter values.
    pub fn max_abs_diff(&self, other: &ParamStore) -> Result<f64> {
        if !self.same_layout(other) {
            return Err(Error::InvalidArgument("parameter layouts differ".into()));
        }
        Ok(self
            .params
            .values()
            .zip(other.params.values())
            .map(|(a, b)| a.value.sub(&b.value).map(|d| d.max_abs()).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max))
    }
}

/// Gradient tensors aligned with a [`ParamStore`]'s order. Used for
/// per-chunk accumulation before a deterministic reduction.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.0[id.0]
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            super::tensor::axpy(1.0, b.as_slice(), a.as_mut_slice());
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|t| t.as_slice().iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut s = ParamStore::new();
        let a = s.insert("a", Tensor::zeros(2, 2)).unwrap();
        let b = s.insert("b", Tensor::zeros(1, 3)).unwrap();
        assert!(s.insert("a", Tensor::zeros(1, 1)).is_err());
        assert_eq!(s.name(a), "a");
        assert_eq!(s.name(b), "b");
        assert_eq!(s.grad(b).shape(), (1, 3));
        assert_eq!(s.num_scalars(), 7);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut s = ParamStore::new();
        let a = s.insert("a", Tensor::zeros(1, 2)).unwrap();
        s.grad_mut(a).as_mut_slice().copy_from_slice(&[3.0, 4.0]);
        assert_eq!(s.clip_grad_norm(1.0), 5.0);
        assert!((s.grad_norm() - 1.0).abs() < 1e-15);
        assert!((s.grad(a).get(0, 0) - 0.6).abs() < 1e-15);
    }
}
