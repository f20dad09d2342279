//! SGD with momentum over named parameter sets.

use std::collections::HashMap;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Named, ordered collection of trainable tensors. Names are stable
/// identifiers used in checkpoints, freeze sets and diagnostics.
#[derive(Clone, Default)]
pub struct ParamSet<E: Element = f32> {
    entries: Vec<(String, Tensor<E>)>,
}

impl<E: Element> ParamSet<E> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<E>) {
        let name = name.into();
        debug_assert!(
            !self.entries.iter().any(|(n, _)| *n == name),
            "duplicate parameter name {name}"
        );
        self.entries.push((name, tensor));
    }

    /// Append every entry of `other` under `prefix/`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParamSet<E>) {
        for (name, t) in &other.entries {
            self.push(format!("{prefix}/{name}"), t.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Enable/disable gradient tracking for every parameter whose name
    /// starts with `prefix`. Returns how many parameters matched.
    pub fn set_trainable(&self, prefix: &str, trainable: bool) -> usize {
        let mut hits = 0;
        for (name, t) in &self.entries {
            if name.starts_with(prefix) {
                t.set_requires_grad(trainable);
                hits += 1;
            }
        }
        hits
    }

    pub fn clear_grads(&self) {
        for (_, t) in &self.entries {
            t.clear_grad();
        }
    }

    /// Order-independent FNV-1a fingerprint of the exact bit patterns of
    /// every parameter whose name starts with `prefix` (names included).
    /// Equal fingerprints before/after a training run certify the group
    /// was untouched.
    pub fn fingerprint(&self, prefix: &str) -> u64 {
        let mut entries: Vec<&(String, Tensor<E>)> = self
            .entries
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut hash = 0xcbf29ce484222325u64;
        let mut eat = |byte: u8| {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        };
        for (name, t) in entries {
            for b in name.as_bytes() {
                eat(*b);
            }
            for v in t.data().iter() {
                for b in v.as_f64().to_bits().to_le_bytes() {
                    eat(b);
                }
            }
        }
        hash
    }
}

/// Optimizer state: step size, momentum coefficient and per-parameter
/// velocity buffers (allocated lazily, matched by tensor identity).
pub struct SgdState<E: Element = f32> {
    learning_rate: E,
    momentum: E,
    velocity: HashMap<usize, Vec<E>>,
}

impl<E: Element> SgdState<E> {
    pub fn new(learning_rate: E, momentum: E) -> Result<Self> {
        if learning_rate < E::zero() || !learning_rate.is_finite() {
            return Err(TensorError::InvalidArg {
                op: "sgd",
                detail: format!("learning rate {learning_rate} must be >= 0"),
            });
        }
        if momentum < E::zero() || momentum >= E::one() {
            return Err(TensorError::InvalidArg {
                op: "sgd",
                detail: format!("momentum {momentum} outside [0,1)"),
            });
        }
        Ok(SgdState {
            learning_rate,
            momentum,
            velocity: HashMap::new(),
        })
    }

    pub fn learning_rate(&self) -> E {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: E) {
        self.learning_rate = lr;
    }

    pub fn momentum(&self) -> E {
        self.momentum
    }

    /// Velocity buffers keyed by parameter name, for mid-run checkpoints.
    pub fn velocities(&self, params: &ParamSet<E>) -> Vec<(String, Vec<E>)> {
        params
            .iter()
            .filter_map(|(name, t)| {
                self.velocity
                    .get(&t.id())
                    .map(|v| (name.to_string(), v.clone()))
            })
            .collect()
    }

    pub fn load_velocity(&mut self, params: &ParamSet<E>, name: &str, buffer: Vec<E>) -> bool {
        match params.get(name) {
            Some(t) if t.numel() == buffer.len() => {
                self.velocity.insert(t.id(), buffer);
                true
            }
            _ => false,
        }
    }
}

/// One SGD step over every trainable parameter:
/// v ← momentum·v + grad, p ← p − lr·v, then gradients are cleared.
/// Frozen parameters (requires_grad false) are skipped; a trainable
/// parameter without a populated gradient is an error naming it.
pub fn sgd_step<E: Element>(params: &ParamSet<E>, state: &mut SgdState<E>) -> Result<()> {
    for (name, t) in params.iter() {
        if !t.requires_grad() {
            continue;
        }
        let grad = t
            .grad()
            .ok_or_else(|| TensorError::MissingGradient(name.to_string()))?;
        let v = state
            .velocity
            .entry(t.id())
            .or_insert_with(|| vec![E::zero(); t.numel()]);
        let (mu, lr) = (state.momentum, state.learning_rate);
        t.with_data_mut(|data| {
            for ((p, vel), g) in data.iter_mut().zip(v.iter_mut()).zip(grad) {
                *vel = mu * *vel + g;
                *p = *p - lr * *vel;
            }
        });
        t.clear_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f32) -> (ParamSet, Tensor) {
        let t = Tensor::parameter(&[1], vec![v]).unwrap();
        let mut set = ParamSet::new();
        set.push("p", t.clone());
        (set, t)
    }

    #[test]
    fn vanilla_step() {
        let (set, t) = param(1.0);
        t.accumulate_grad(&[2.0]);
        let mut sgd = SgdState::new(0.1, 0.0).unwrap();
        sgd_step(&set, &mut sgd).unwrap();
        assert_eq!(t.item(), 0.8);
        assert!(t.grad().is_none());
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (set, t) = param(1.5);
        t.accumulate_grad(&[3.0]);
        let mut sgd = SgdState::new(0.0, 0.9).unwrap();
        sgd_step(&set, &mut sgd).unwrap();
        assert_eq!(t.item(), 1.5);
    }

    #[test]
    fn momentum_two_step_recurrence() {
        // v1 = g, v2 = 0.9g + g; p2 = p0 − lr·(g + 1.9g) = p0 − lr·2.9g.
        let (set, t) = param(1.0);
        let (lr, g) = (0.01f32, 0.5f32);
        let mut sgd = SgdState::new(lr, 0.9).unwrap();
        t.accumulate_grad(&[g]);
        sgd_step(&set, &mut sgd).unwrap();
        t.accumulate_grad(&[g]);
        sgd_step(&set, &mut sgd).unwrap();
        let expected = 1.0 - lr * 2.9 * g;
        assert!((t.item() - expected).abs() < 1e-7);
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let (set, _t) = param(1.0);
        let mut sgd = SgdState::new(0.1, 0.0).unwrap();
        let err = sgd_step(&set, &mut sgd).unwrap_err();
        assert!(err.to_string().contains("`p`"));
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let (set, t) = param(1.0);
        set.set_trainable("p", false);
        let mut sgd = SgdState::new(0.1, 0.0).unwrap();
        sgd_step(&set, &mut sgd).unwrap();
        assert_eq!(t.item(), 1.0);
    }
}
