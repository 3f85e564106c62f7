//! Categorical distribution over flat action slots with hard masking.

use rand::Rng;

use crate::error::PolicyError;

/// Probabilities renormalized over unmasked slots; masked slots hold exactly
/// zero probability.
#[derive(Debug, Clone)]
pub struct MaskedCategorical {
    probs: Vec<f64>,
}

impl MaskedCategorical {
    pub fn from_logits(logits: &[f64], mask: &[bool]) -> Result<Self, PolicyError> {
        if logits.len() != mask.len() {
            return Err(PolicyError::InvalidAction(format!(
                "{} logits vs {} mask entries",
                logits.len(),
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(PolicyError::AllMasked);
        }
        let max = logits
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&l, _)| l)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut probs = vec![0.0; logits.len()];
        let mut sum = 0.0;
        for i in 0..logits.len() {
            if mask[i] {
                probs[i] = (logits[i] - max).exp();
                sum += probs[i];
            }
        }
        for p in &mut probs {
            *p /= sum;
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Seeded-deterministic draw. Never returns a masked slot.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last_unmasked = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_unmasked = i;
                if u < acc {
                    return i;
                }
            }
        }
        last_unmasked // u landed in the rounding tail
    }

    pub fn log_prob(&self, slot: usize) -> f64 {
        self.probs[slot].ln()
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    /// Highest-probability slot; ties break toward the lowest flat index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}
