use std::collections::HashMap;

use rand::Rng;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// A named trainable tensor with its Adam moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub adam_m: Vec<T>,
    pub adam_v: Vec<T>,
    pub step_count: u64,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, tensor: Tensor<T>) -> Self {
        let n = tensor.len();
        Parameter {
            name: name.into(),
            tensor,
            adam_m: vec![T::zero(); n],
            adam_v: vec![T::zero(); n],
            step_count: 0,
        }
    }

    pub fn reset_optimizer(&mut self) {
        self.adam_m.iter_mut().for_each(|v| *v = T::zero());
        self.adam_v.iter_mut().for_each(|v| *v = T::zero());
        self.step_count = 0;
    }
}

/// Ordered collection of uniquely named parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn push(&mut self, param: Parameter<T>) -> Result<usize> {
        if self.index.contains_key(&param.name) {
            return Err(Error::Config(format!("duplicate parameter name `{}`", param.name)));
        }
        let idx = self.params.len();
        self.index.insert(param.name.clone(), idx);
        self.params.push(param);
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, index: usize) -> &Parameter<T> {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Parameter<T> {
        &mut self.params[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Copy of the values at another precision, with fresh optimizer state.
    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for p in &self.params {
            out.push(Parameter::new(p.name.clone(), p.tensor.cast()))
                .expect("names already unique");
        }
        out
    }

    /// Overwrite values of same-named, same-shaped parameters from `other`.
    /// Returns the number of parameters copied.
    pub fn copy_matching<U: Scalar>(&mut self, other: &ParamSet<U>, prefix: &str) -> Result<usize> {
        let mut copied = 0;
        for p in other.iter().filter(|p| p.name.starts_with(prefix)) {
            let Some(idx) = self.index_of(&p.name) else {
                return Err(Error::MissingParam(p.name.clone()));
            };
            let dst = &mut self.params[idx];
            if dst.tensor.shape() != p.tensor.shape() {
                return Err(Error::shape(
                    "copy_matching",
                    format!("{} {:?}", dst.name, dst.tensor.shape()),
                    format!("{:?}", p.tensor.shape()),
                ));
            }
            dst.tensor = p.tensor.cast();
            copied += 1;
        }
        Ok(copied)
    }
}

/// Uniform Glorot initialization, `limit = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar>(
    rng: &mut impl Rng,
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.gen_range(-limit..limit))).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn duplicate_names_rejected() {
        let mut ps = ParamSet::<f32>::new();
        ps.push(Parameter::new("a", Tensor::zeros(vec![2]))).unwrap();
        assert!(ps.push(Parameter::new("a", Tensor::zeros(vec![2]))).is_err());
        assert_eq!(ps.get(0).adam_m, vec![0.0; 2]);
    }

    #[test]
    fn glorot_is_seeded_and_bounded() {
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let a: Tensor<f32> = glorot_uniform(&mut r1, vec![24, 4, 8], 96, 192);
        let b: Tensor<f32> = glorot_uniform(&mut r2, vec![24, 4, 8], 96, 192);
        assert_eq!(a, b);
        let lim = (6.0f32 / 288.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= lim));
    }
}
