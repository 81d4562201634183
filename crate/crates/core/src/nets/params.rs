use std::collections::HashMap;

use pano_autodiff::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Standard deviation of the normal weight initializer.
pub const INIT_STD: f64 = 0.02;

/// Named trainable tensors in insertion order. Every stored tensor is a
/// gradient-tracking leaf.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter and returns its position.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let idx = self.tensors.len();
        self.index.insert(name.clone(), idx);
        self.names.push(name);
        self.tensors.push(value.detach().requires_grad());
        Ok(idx)
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.tensors.iter().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces the values of parameter `idx`, keeping its shape. The new
    /// tensor is a fresh leaf, so graphs built on the old value are unaffected.
    pub fn set_values(&mut self, idx: usize, data: Vec<f64>) -> Result<()> {
        let shape = self.tensors[idx].shape().to_vec();
        if data.len() != self.tensors[idx].numel() {
            return Err(Error::Shape(format!(
                "parameter {} has {} values, got {}",
                self.names[idx],
                self.tensors[idx].numel(),
                data.len()
            )));
        }
        self.tensors[idx] = Tensor::new(data, &shape)?.requires_grad();
        Ok(())
    }
}

pub(crate) fn normal_tensor(rng: &mut impl Rng, shape: &[usize], mean: f64, std: f64) -> Result<Tensor> {
    let dist = Normal::new(mean, std).map_err(|e| Error::Config(e.to_string()))?;
    let n = shape.iter().product();
    Ok(Tensor::new((0..n).map(|_| dist.sample(rng)).collect(), shape)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut ps = ParameterStore::new();
        ps.add("a", Tensor::zeros(&[2]).unwrap()).unwrap();
        ps.add("b", Tensor::ones(&[3]).unwrap()).unwrap();
        assert!(ps.add("a", Tensor::zeros(&[1]).unwrap()).is_err());
        assert_eq!(ps.names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(ps.num_scalars(), 5);
        assert!(ps.get(1).requires_grad_flag());
    }

    #[test]
    fn set_values_checks_length() {
        let mut ps = ParameterStore::new();
        ps.add("w", Tensor::zeros(&[2, 2]).unwrap()).unwrap();
        assert!(ps.set_values(0, vec![1.0; 3]).is_err());
        ps.set_values(0, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(ps.by_name("w").unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ps.get(0).shape(), &[2, 2]);
    }
}
