//! Adaptive-moment optimizer with bias correction, plus global gradient-norm
//! clipping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::NumError;
use crate::nn::tape::GradMap;
use crate::nn::ParamSet;
use crate::tensor::Tensor2;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First/second moment estimates per parameter and the shared step counter.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    #[serde(skip)]
    m: BTreeMap<String, Tensor2>,
    #[serde(skip)]
    v: BTreeMap<String, Tensor2>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Moment tensors for serialization (name, m, v).
    pub fn moments(&self) -> impl Iterator<Item = (&str, &Tensor2, &Tensor2)> {
        self.m
            .iter()
            .map(|(k, m)| (k.as_str(), m, &self.v[k]))
    }

    pub fn restore_moment(&mut self, name: &str, m: Tensor2, v: Tensor2) {
        self.m.insert(name.to_string(), m);
        self.v.insert(name.to_string(), v);
    }
}

/// One optimizer step over the parameters named in `grads`. Parameters not
/// present in `grads` are untouched. Rejects non-finite gradients, naming
/// the offending parameter.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &GradMap,
    lr: f64,
    state: &mut AdamState,
) -> Result<(), NumError> {
    for (name, g) in grads {
        if !g.is_finite() {
            return Err(NumError::NanGradient(name.clone()));
        }
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - BETA1.powf(t);
    let bc2 = 1.0 - BETA2.powf(t);
    for (name, g) in grads {
        let p = params
            .try_get(name)
            .ok_or_else(|| NumError::Shape(format!("gradient for unknown parameter `{name}`")))?;
        if p.shape() != g.shape() {
            return Err(NumError::Shape(format!(
                "gradient shape {:?} for parameter `{name}` of shape {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor2::zeros(g.rows(), g.cols()));
        *m = m.scale(BETA1).add(&g.scale(1.0 - BETA1))?;
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor2::zeros(g.rows(), g.cols()));
        *v = v.scale(BETA2).add(&g.map(|x| x * x).scale(1.0 - BETA2))?;

        let m_hat = m.scale(1.0 / bc1);
        let v_hat = v.scale(1.0 / bc2);
        let step = m_hat.zip_with(&v_hat, |mh, vh| lr * mh / (vh.sqrt() + EPS))?;
        let updated = params.get(name).sub(&step)?;
        params.assign(name, updated)?;
    }
    Ok(())
}

/// Scales all gradients down so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut GradMap, max_norm: f64) -> f64 {
    let norm: f64 = grads.values().map(Tensor2::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.values_mut() {
            *g = g.scale(k);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_map(name: &str, t: Tensor2) -> GradMap {
        let mut m = GradMap::new();
        m.insert(name.to_string(), t);
        m
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut ps = ParamSet::new(1);
        ps.insert_glorot("w", 2, 2);
        let before = ps.get("w").clone();
        let mut st = AdamState::new();
        adam_step(&mut ps, &grad_map("w", Tensor2::zeros(2, 2)), 0.1, &mut st).unwrap();
        assert_eq!(ps.get("w"), &before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // at t=1 the bias-corrected update is lr * g / (|g| + eps') ~ lr * sign(g)
        let mut ps = ParamSet::new(1);
        ps.insert_zeros("w", 1, 3);
        let g = Tensor2::from_rows(&[vec![0.5, -2.0, 1e-3]]).unwrap();
        let mut st = AdamState::new();
        adam_step(&mut ps, &grad_map("w", g.clone()), 0.01, &mut st).unwrap();
        for i in 0..3 {
            let expect = -0.01 * g.get(0, i).signum();
            assert!((ps.get("w").get(0, i) - expect).abs() < 1e-5);
        }
    }

    #[test]
    fn steps_are_deterministic() {
        let run = || {
            let mut ps = ParamSet::new(5);
            ps.insert_glorot("w", 2, 2);
            let mut st = AdamState::new();
            let g = Tensor2::from_fn(2, 2, |r, c| (r + c) as f64 - 0.5);
            adam_step(&mut ps, &grad_map("w", g.clone()), 3e-4, &mut st).unwrap();
            adam_step(&mut ps, &grad_map("w", g), 3e-4, &mut st).unwrap();
            ps.get("w").clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut ps = ParamSet::new(0);
        ps.insert_zeros("layer.b", 1, 1);
        let mut bad = Tensor2::zeros(1, 1);
        bad.set(0, 0, f64::NAN);
        let mut st = AdamState::new();
        let err = adam_step(&mut ps, &grad_map("layer.b", bad), 0.1, &mut st).unwrap_err();
        assert!(err.to_string().contains("layer.b"), "{err}");
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut grads = grad_map("w", Tensor2::from_rows(&[vec![3.0, 4.0]]).unwrap());
        let pre = clip_grad_norm(&mut grads, 0.5);
        assert!((pre - 5.0).abs() < 1e-12);
        let post: f64 = grads.values().map(Tensor2::sq_norm).sum::<f64>().sqrt();
        assert!((post - 0.5).abs() < 1e-12);
    }
}
