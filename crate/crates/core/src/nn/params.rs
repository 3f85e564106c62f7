//! Named parameter tensors with seeded initialization.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::NumError;
use crate::tensor::Tensor2;

/// A flat, ordered map from parameter path (e.g. `actor.enc.l0.w`) to tensor.
/// Shapes are fixed at insertion; the init seed is kept for reproducibility.
#[derive(Debug, Clone)]
pub struct ParamSet {
    map: BTreeMap<String, Tensor2>,
    seed: u64,
    rng: ChaCha20Rng,
}

/// Equality is over the tensors only; init seed and rng position are
/// bookkeeping, not model state.
impl PartialEq for ParamSet {
    fn eq(&self, other: &Self) -> bool {
        self.map == other.map
    }
}

impl ParamSet {
    pub fn new(seed: u64) -> Self {
        Self { map: BTreeMap::new(), seed, rng: ChaCha20Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Glorot-uniform initialized weight matrix.
    pub fn insert_glorot(&mut self, name: &str, rows: usize, cols: usize) {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let t = {
            let rng = &mut self.rng;
            Tensor2::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
        };
        self.insert(name, t);
    }

    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, Tensor2::zeros(rows, cols));
    }

    pub fn insert(&mut self, name: &str, t: Tensor2) {
        debug_assert!(!self.map.contains_key(name), "duplicate parameter `{name}`");
        self.map.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> &Tensor2 {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor2> {
        self.map.get(name)
    }

    /// Overwrites an existing parameter; the shape must not change.
    pub fn assign(&mut self, name: &str, t: Tensor2) -> Result<(), NumError> {
        let cur = self
            .map
            .get_mut(name)
            .ok_or_else(|| NumError::Shape(format!("unknown parameter `{name}`")))?;
        if cur.shape() != t.shape() {
            return Err(NumError::Shape(format!(
                "parameter `{name}` is {:?}, assignment is {:?}",
                cur.shape(),
                t.shape()
            )));
        }
        *cur = t;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor2)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor2)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn num_values(&self) -> usize {
        self.map.values().map(Tensor2::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_respects_bound_and_seed() {
        let mut a = ParamSet::new(9);
        a.insert_glorot("w", 4, 6);
        let bound = (6.0 / 10.0_f64).sqrt();
        assert!(a.get("w").as_slice().iter().all(|v| v.abs() < bound));

        let mut b = ParamSet::new(9);
        b.insert_glorot("w", 4, 6);
        assert_eq!(a.get("w"), b.get("w"));

        let mut c = ParamSet::new(10);
        c.insert_glorot("w", 4, 6);
        assert_ne!(a.get("w"), c.get("w"));
    }

    #[test]
    fn assign_rejects_shape_change() {
        let mut p = ParamSet::new(0);
        p.insert_zeros("b", 1, 3);
        assert!(p.assign("b", Tensor2::zeros(1, 4)).is_err());
        assert!(p.assign("b", Tensor2::zeros(1, 3)).is_ok());
    }
}
