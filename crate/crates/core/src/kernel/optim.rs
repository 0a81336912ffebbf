use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernel::rng::SeedRng;
use crate::kernel::tensor::Tensor;

/// A named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered collection of named parameters.
///
/// Insertion order is the canonical order for optimizer state, checkpoint
/// records and gradient clipping, so runs are reproducible byte for byte.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParameter { name: name.into() });
        }
        let slot = self.entries.len();
        self.index.insert(name.to_string(), slot);
        self.entries.push(Parameter {
            name: name.to_string(),
            grad: Tensor::zeros_like(&value),
            value,
        });
        Ok(slot)
    }

    /// Fresh tensor with entries drawn uniformly from (-k, k),
    /// k = 1/sqrt(hidden_dim). Used for recurrent and affine weights.
    pub fn insert_uniform(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        hidden_dim: usize,
        rng: &mut SeedRng,
    ) -> Result<usize> {
        let k = 1.0 / (hidden_dim as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.uniform(-k, k)).collect();
        self.insert(name, Tensor::new(shape, data).expect("shape/data agree"))
    }

    pub fn insert_zeros(&mut self, name: &str, shape: Vec<usize>) -> Result<usize> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn slot(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter { name: name.into() })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        Ok(&self.entries[self.slot(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter> {
        let slot = self.slot(name)?;
        Ok(&mut self.entries[slot])
    }

    pub fn by_slot(&self, slot: usize) -> &Parameter {
        &self.entries[slot]
    }

    pub fn by_slot_mut(&mut self, slot: usize) -> &mut Parameter {
        &mut self.entries[slot]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|p| p.name.as_str())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.fill(0.0);
        }
    }

    /// Total number of scalar values across all parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }
}

/// Scale all gradients so their global L2 norm does not exceed `max_norm`.
/// Returns the scale that was applied (1.0 when already within bounds).
///
/// The comparison carries a tiny relative slack so that a second application
/// is always an exact no-op.
pub fn clip_global_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let sq: f64 = store.iter().map(|p| p.grad.sq_norm()).sum();
    let norm = sq.sqrt();
    if norm <= max_norm * (1.0 + 1e-9) {
        return 1.0;
    }
    let scale = max_norm / norm;
    for p in store.iter_mut() {
        p.grad.scale_in_place(scale);
    }
    scale
}

/// Adam optimizer state: per-parameter moment estimates plus the step
/// counter and hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// beta1/beta2/epsilon fixed at 0.9 / 0.999 / 1e-8.
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        AdamState {
            first_moment: store.iter().map(|p| Tensor::zeros_like(&p.value)).collect(),
            second_moment: store.iter().map(|p| Tensor::zeros_like(&p.value)).collect(),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn decay_learning_rate(&mut self, factor: f64) {
        self.learning_rate *= factor;
    }
}

/// One bias-corrected Adam update, in place. Gradients are left untouched;
/// the caller resets them. Fails on the first non-finite gradient found,
/// naming the parameter.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    assert_eq!(
        state.first_moment.len(),
        store.len(),
        "optimizer state does not match parameter store"
    );
    for p in store.iter() {
        if !p.grad.all_finite() {
            return Err(Error::NonFiniteGradient {
                name: p.name.clone(),
            });
        }
    }
    state.step += 1;
    let t = state.step;
    let bias1 = 1.0 - state.beta1.powi(t as i32);
    let bias2 = 1.0 - state.beta2.powi(t as i32);
    let lr = state.learning_rate;
    for (slot, p) in store.iter_mut().enumerate() {
        let m = state.first_moment[slot].data_mut();
        let v = state.second_moment[slot].data_mut();
        let g = p.grad.data();
        let x = p.value.data_mut();
        for i in 0..g.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            x[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::vector(values)).unwrap();
        s
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = store_with("w", vec![1.0]);
        assert!(s.insert("w", Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn clip_halves_when_norm_is_double() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::vector(vec![0.0, 0.0])).unwrap();
        s.get_mut("a").unwrap().grad = Tensor::vector(vec![6.0, 8.0]); // norm 10
        let scale = clip_global_norm(&mut s, 5.0);
        assert_eq!(scale, 0.5);
        assert_eq!(s.get("a").unwrap().grad.data(), &[3.0, 4.0]);
    }

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let mut s = store_with("a", vec![0.0]);
        s.get_mut("a").unwrap().grad = Tensor::vector(vec![3.0]);
        assert_eq!(clip_global_norm(&mut s, 5.0), 1.0);
        assert_eq!(s.get("a").unwrap().grad.data(), &[3.0]);
    }

    #[test]
    fn clip_three_four_five_untouched() {
        // Two blocks [3,0] and [0,4]: global norm exactly 5.
        let mut s = ParamStore::new();
        s.insert("a", Tensor::vector(vec![0.0, 0.0])).unwrap();
        s.insert("b", Tensor::vector(vec![0.0, 0.0])).unwrap();
        s.get_mut("a").unwrap().grad = Tensor::vector(vec![3.0, 0.0]);
        s.get_mut("b").unwrap().grad = Tensor::vector(vec![0.0, 4.0]);
        assert_eq!(clip_global_norm(&mut s, 5.0), 1.0);
        assert_eq!(s.get("a").unwrap().grad.data(), &[3.0, 0.0]);
        assert_eq!(s.get("b").unwrap().grad.data(), &[0.0, 4.0]);
    }

    #[test]
    fn clip_is_idempotent() {
        let mut s = store_with("a", vec![0.0; 3]);
        s.get_mut("a").unwrap().grad = Tensor::vector(vec![7.0, -2.0, 11.0]);
        clip_global_norm(&mut s, 5.0);
        let after_once = s.get("a").unwrap().grad.clone();
        let scale = clip_global_norm(&mut s, 5.0);
        assert_eq!(scale, 1.0);
        assert_eq!(s.get("a").unwrap().grad, after_once);
    }

    #[test]
    fn adam_zero_gradients_is_identity() {
        let mut s = store_with("p", vec![1.0, -2.0, 3.0]);
        let mut adam = AdamState::new(&s, 0.1);
        adam.step = 17; // identity must hold for any step counter
        adam_step(&mut s, &mut adam).unwrap();
        assert_eq!(s.get("p").unwrap().value.data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        // Constant gradient 1.0: bias correction makes step one move by ~lr.
        let mut s = store_with("p", vec![0.0]);
        s.get_mut("p").unwrap().grad = Tensor::vector(vec![1.0]);
        let mut adam = AdamState::new(&s, 0.1);
        adam_step(&mut s, &mut adam).unwrap();
        let p = s.get("p").unwrap().value.data()[0];
        assert!((p + 0.1).abs() < 1e-6, "step was {p}");
    }

    #[test]
    fn adam_minimizes_quadratic() {
        // d/dp (p-3)^2 = 2(p-3); start at 0, lr 0.01, 2000 steps.
        let mut s = store_with("p", vec![0.0]);
        let mut adam = AdamState::new(&s, 0.01);
        for _ in 0..2000 {
            let p = s.get("p").unwrap().value.data()[0];
            s.get_mut("p").unwrap().grad = Tensor::vector(vec![2.0 * (p - 3.0)]);
            adam_step(&mut s, &mut adam).unwrap();
        }
        let p = s.get("p").unwrap().value.data()[0];
        assert!((p - 3.0).abs() < 1e-3, "converged to {p}");
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut s = store_with("p", vec![0.0]);
        s.get_mut("p").unwrap().grad = Tensor::vector(vec![f64::NAN]);
        let mut adam = AdamState::new(&s, 0.1);
        let err = adam_step(&mut s, &mut adam).unwrap_err();
        assert!(err.to_string().contains("`p`"));
    }
}
