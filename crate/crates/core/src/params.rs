//! Named learnable tensors, bound into a [`Graph`] once per forward pass.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a tensor in a [`ParamStore`]; also its index in the bound
/// `&[Var]` slice handed to forward functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Glorot-uniform `[fan_in, fan_out]` weight.
    pub fn add_weight<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Ok(self.add(name, Tensor::uniform(&[fan_in, fan_out], bound, rng)?))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, dims: &[usize]) -> Result<ParamId> {
        Ok(self.add(name, Tensor::zeros(dims)?))
    }

    pub fn add_full(&mut self, name: impl Into<String>, dims: &[usize], v: f64) -> Result<ParamId> {
        Ok(self.add(name, Tensor::full(dims, v)?))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Number of learnable scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Replaces every tensor, keeping names. Shapes must match.
    pub fn load(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        if tensors.len() != self.tensors.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                self.tensors.len(),
                tensors.len()
            )));
        }
        for (i, (old, new)) in self.tensors.iter().zip(&tensors).enumerate() {
            if old.dims() != new.dims() {
                return Err(Error::Contract(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    self.names[i],
                    old.dims(),
                    new.dims()
                )));
            }
        }
        self.tensors = tensors;
        Ok(())
    }

    /// Registers every tensor as a grad-requiring leaf, in id order.
    pub fn bind(&self, g: &mut Graph) -> Result<Vec<Var>> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }

    /// Registers every tensor as a constant; for inference without gradients.
    pub fn bind_frozen(&self, g: &mut Graph) -> Result<Vec<Var>> {
        self.tensors.iter().map(|t| g.constant(t.clone())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn square_linear_without_bias_counts_d_squared() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        s.add_weight("w", 16, 16, &mut rng).unwrap();
        assert_eq!(s.count(), 256);
    }

    #[test]
    fn load_checks_shapes() {
        let mut s = ParamStore::new();
        s.add_zeros("a", &[2, 2]).unwrap();
        assert!(s.load(vec![Tensor::zeros(&[4]).unwrap()]).is_err());
        assert!(s.load(vec![]).is_err());
        s.load(vec![Tensor::full(&[2, 2], 1.0).unwrap()]).unwrap();
        assert_eq!(s.get(ParamId(0)).data(), &[1.0; 4]);
    }
}
