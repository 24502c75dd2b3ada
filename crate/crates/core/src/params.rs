//! Named learnable tensors.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// One learnable array. `dims` is its logical shape (rank 1 to 4); the
/// backing tensor pads it with leading unit extents.
#[derive(Clone, Debug)]
pub struct Param {
    dims: Vec<usize>,
    tensor: Tensor,
}

impl Param {
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }
}

pub(crate) fn padded_shape(dims: &[usize]) -> Result<Shape> {
    if dims.is_empty() || dims.len() > 4 {
        return Err(Error::invalid("param", format!("rank {} not in 1..=4", dims.len())));
    }
    let mut d = [1usize; 4];
    d[4 - dims.len()..].copy_from_slice(dims);
    Ok(Shape::new(d[0], d[1], d[2], d[3]))
}

/// Parameters keyed by name, iterated in lexicographic order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, dims: &[usize], data: Vec<f64>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        let tensor = Tensor::parameter(padded_shape(dims)?, data)?;
        self.params.insert(
            name.to_string(),
            Param {
                dims: dims.to_vec(),
                tensor,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    /// Replaces the values of `name` with a fresh leaf (gradient cleared).
    pub fn set(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        p.tensor = Tensor::parameter(p.tensor.shape(), data)?;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grad(&self) {
        self.params.values().for_each(|p| p.tensor.zero_grad());
    }

    /// True when names, dims and every value agree bit for bit.
    pub fn bit_identical(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.dims == b.dims
                    && a.tensor.data().iter().zip(b.tensor.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Registers parameters with seeded initial values. Weights are uniform in
/// ±1/sqrt(fan_in); biases start at zero.
pub struct Initializer<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl<'a> Initializer<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Initializer {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, name: &str, dims: &[usize], fan_in: usize) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.store.insert(name, dims, data)
    }

    pub fn zeros(&mut self, name: &str, dims: &[usize]) -> Result<()> {
        let n: usize = dims.iter().product();
        self.store.insert(name, dims, vec![0.0; n])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_iterate_lexicographically_and_reject_duplicates() {
        let mut s = ParamStore::new();
        s.insert("b.weight", &[2], vec![1.0, 2.0]).unwrap();
        s.insert("a.bias", &[1], vec![0.0]).unwrap();
        assert!(matches!(s.insert("a.bias", &[1], vec![0.0]), Err(Error::DuplicateParameter(_))));
        assert_eq!(s.names().collect::<Vec<_>>(), vec!["a.bias", "b.weight"]);
        assert_eq!(s.num_scalars(), 3);
        assert!(matches!(s.get("zzz"), Err(Error::UnknownParameter(_))));
    }

    #[test]
    fn padded_shapes() {
        assert_eq!(padded_shape(&[5]).unwrap(), Shape::new(1, 1, 1, 5));
        assert_eq!(padded_shape(&[4, 3, 3, 3]).unwrap(), Shape::new(4, 3, 3, 3));
        assert!(padded_shape(&[]).is_err());
    }

    #[test]
    fn initializer_is_seeded() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        Initializer::new(&mut a, 7).uniform("w", &[3, 3], 9).unwrap();
        Initializer::new(&mut b, 7).uniform("w", &[3, 3], 9).unwrap();
        assert!(a.bit_identical(&b));
        assert!(a.get("w").unwrap().data().iter().all(|v| v.abs() < 1.0 / 3.0));
    }
}
