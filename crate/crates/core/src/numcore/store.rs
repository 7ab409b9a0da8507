//! Named parameter storage shared by all trainable networks, plus the Adam
//! optimizer that updates it.

use crate::error::{FearError, Result};
use crate::numcore::tensor::Tensor;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Flat registry of named parameter tensors. Networks hold `ParamId`s; the
/// store owns the data, gradients, and checkpoint names.
#[derive(Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        tensor.requires_grad = true;
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push((name, tensor));
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[f32]) {
        let t = &mut self.entries[id.0].1;
        match t.grad.as_mut() {
            Some(g) => {
                for (a, &b) in g.iter_mut().zip(grad.iter()) {
                    *a += b;
                }
            }
            None => t.grad = Some(grad.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        for (_, t) in self.entries.iter_mut() {
            t.zero_grad();
        }
    }

    /// Total parameter count, for logging.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Adam with bias correction. Moment buffers are kept per parameter and
/// allocated on first use.
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    moments: HashMap<ParamId, (Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: HashMap::new() }
    }

    /// Applies one update to every parameter that has a gradient buffer.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.step += 1;
        let t = self.step as f32;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for id in store.ids().collect::<Vec<_>>() {
            let tensor = store.get_mut(id);
            let n = tensor.data.len();
            let grad = match tensor.grad.as_ref() {
                Some(g) => g.clone(),
                None => continue,
            };
            if grad.len() != n {
                return Err(FearError::dim(format!(
                    "adam: grad len {} != param len {n}",
                    grad.len()
                )));
            }
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            if m.len() != n {
                return Err(FearError::dim(format!(
                    "adam: moment len {} != param len {n}",
                    m.len()
                )));
            }
            for i in 0..n {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                tensor.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(vec![1.0, -2.0, 3.0]));
        store.zero_grad();
        let before = store.get(id).data.clone();
        let mut adam = Adam::new(0.1);
        for _ in 0..5 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.get(id).data, before);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // With a constant gradient, bias correction makes the first update
        // exactly lr * g / (|g| + eps) ≈ lr * sign(g).
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(vec![0.0, 0.0]));
        store.zero_grad();
        store.accumulate_grad(id, &[0.5, -2.0]);
        let mut adam = Adam::new(1e-3);
        adam.step(&mut store).unwrap();
        let d = &store.get(id).data;
        assert!((d[0] + 1e-3).abs() < 1e-6, "{}", d[0]);
        assert!((d[1] - 1e-3).abs() < 1e-6, "{}", d[1]);
    }

    #[test]
    fn quadratic_converges_and_matches_reference_loop() {
        // Reference Adam written independently over scalar f(x) = x^2.
        let (mut x_ref, mut m, mut v) = (5.0f32, 0.0f32, 0.0f32);
        let (b1, b2, eps, lr) = (0.9f32, 0.999f32, 1e-8f32, 0.1f32);
        let mut trace = Vec::new();
        for t in 1..=100u64 {
            let g = 2.0 * x_ref;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powf(t as f32));
            let v_hat = v / (1.0 - b2.powf(t as f32));
            x_ref -= lr * m_hat / (v_hat.sqrt() + eps);
            trace.push(x_ref);
        }
        assert!(x_ref.abs() < 1.0, "reference failed to converge: {x_ref}");

        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::from_vec(vec![5.0]));
        let mut adam = Adam::new(0.1);
        for t in 0..100usize {
            store.zero_grad();
            let g = 2.0 * store.get(id).data[0];
            store.accumulate_grad(id, &[g]);
            adam.step(&mut store).unwrap();
            assert!(
                (store.get(id).data[0] - trace[t]).abs() < 1e-5,
                "step {t}: {} vs {}",
                store.get(id).data[0],
                trace[t]
            );
        }
        assert!(store.get(id).data[0].abs() < 1.0);
    }
}
