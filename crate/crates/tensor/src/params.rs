//! Named parameter storage and the Adam optimizer.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::tensor::Tensor;
use crate::TensorError;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TensorError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Rounds to the nearest `f32`. Parameters are stored at 32-bit precision
/// while all arithmetic runs in `f64`.
#[inline]
pub fn to_storage(x: f64) -> f64 {
    x as f32 as f64
}

#[derive(Clone, Debug)]
struct Slot {
    name: String,
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Name → tensor map with per-parameter Adam moments and a step counter.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    slots: Vec<Slot>,
    index: HashMap<String, ParamId>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Values are rounded to storage precision.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId, TensorError> {
        if self.index.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        let (r, c) = value.shape();
        let id = ParamId(self.slots.len());
        self.slots.push(Slot {
            name: name.to_string(),
            value: value.map(to_storage),
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn expect_id(&self, name: &str) -> Result<ParamId, TensorError> {
        self.id(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].value
    }

    /// Direct write access; bypasses storage rounding (used by finite
    /// differencing, which needs sub-`f32` perturbations).
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.slots[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].grad
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    /// Adds the gradients of every parameter leaf bound in `graph`.
    pub fn accumulate(&mut self, graph: &Graph) {
        for &(var, id) in graph.bindings() {
            if let Some(g) = graph.grad(var) {
                self.slots[id.0].grad.add_assign(g);
            }
        }
    }

    /// Adds an externally computed gradient.
    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        self.slots[id.0].grad.add_assign(g);
    }

    pub fn zero_grad(&mut self) {
        for s in &mut self.slots {
            s.grad.fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for s in &mut self.slots {
            s.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Copies values (not optimizer state) from `other`, which must have the
    /// same names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<(), TensorError> {
        if self.slots.len() != other.slots.len() {
            return Err(TensorError::InvalidConfig(format!(
                "parameter count {} vs {}",
                self.slots.len(),
                other.slots.len()
            )));
        }
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(TensorError::UnknownParam(b.name.clone()));
            }
            a.value = b.value.clone();
        }
        Ok(())
    }

    /// One bias-corrected Adam update followed by zeroing the gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for s in &mut self.slots {
            let n = s.value.len();
            let (value, grad, m, v) = (
                s.value.data_mut(),
                s.grad.data(),
                s.m.data_mut(),
                s.v.data_mut(),
            );
            for i in 0..n {
                let g = grad[i];
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] = to_storage(value[i] - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon));
            }
        }
        self.zero_grad();
    }
}

/// Glorot-uniform initialization for a `fan_in × fan_out` matrix.
pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("sized")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with_grad(g: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("w", Tensor::scalar(0.5)).unwrap();
        s.accumulate_grad(id, &Tensor::scalar(g));
        (s, id)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.0, -0.02, 1e-3] {
            let (mut s, id) = store_with_grad(g);
            let cfg = AdamConfig::default();
            s.adam_step(&cfg);
            let delta = s.value(id).data()[0] - 0.5;
            assert!((delta.abs() - cfg.learning_rate).abs() < 1e-6, "g={g} delta={delta}");
            assert_eq!(delta.signum(), -g.signum());
            assert_eq!(s.grad(id).data()[0], 0.0);
            assert_eq!(s.step_count(), 1);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = store_with_grad(0.0);
        s.adam_step(&AdamConfig::default());
        assert_eq!(s.value(id).data()[0], 0.5);
    }

    #[test]
    fn identical_histories_give_identical_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = ParamStore::new();
        a.insert("w", glorot_uniform(4, 3, &mut rng)).unwrap();
        let mut b = a.clone();
        let id = a.id("w").unwrap();
        for k in 0..20 {
            let g = Tensor::filled(4, 3, (k as f64 * 0.37).sin());
            a.accumulate_grad(id, &g);
            b.accumulate_grad(id, &g);
            a.adam_step(&AdamConfig::default());
            b.adam_step(&AdamConfig::default());
        }
        assert_eq!(a.value(id), b.value(id));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(1, 1)).unwrap();
        assert!(matches!(
            s.insert("w", Tensor::zeros(1, 1)),
            Err(TensorError::DuplicateParam(_))
        ));
    }

    #[test]
    fn invalid_adam_config() {
        let cfg = AdamConfig {
            learning_rate: 0.0,
            ..AdamConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(AdamConfig::default().validate().is_ok());
    }
}
