//! Named parameters and the adaptive-moment optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
    pub grad: Option<Tensor>,
}

/// Ordered collection of named parameters. Order is insertion order and
/// is what checkpoints serialize.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name,
            value,
            trainable: true,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Marks every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for p in self
            .params
            .iter_mut()
            .filter(|p| p.name.starts_with(prefix))
        {
            p.trainable = trainable;
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Places every parameter on `tape`; trainable ones are grad-enabled
    /// when `with_grad` is set.
    pub fn bind(&self, tape: &mut Tape, with_grad: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), with_grad && p.trainable))
            .collect();
        Bound { vars }
    }

    /// Adds the tape's gradients into each trainable parameter's `grad`.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &Bound) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if !p.trainable {
                continue;
            }
            let g = tape
                .grad(v)
                .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()));
            match &mut p.grad {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => p.grad = Some(g),
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled L2 penalty added to the gradient (`weight_decay * w`).
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Per-parameter first/second moments and the step counter.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Result<Self> {
        if !(config.lr > 0.0) || !(config.eps > 0.0) {
            return Err(TensorError::Contract(
                "learning rate and epsilon must be positive".into(),
            ));
        }
        for beta in [config.beta1, config.beta2] {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(TensorError::Contract(format!(
                    "moment decay {beta} outside (0, 1)"
                )));
            }
        }
        Ok(Adam {
            config,
            first: store.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            second: store.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update to every trainable parameter and
    /// clears its gradient. Every trainable parameter must carry a
    /// gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(TensorError::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        if let Some(p) = store.iter().find(|p| p.trainable && p.grad.is_none()) {
            return Err(TensorError::Contract(format!(
                "parameter {} has no gradient",
                p.name
            )));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let grad = p.grad.take().expect("checked above");
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (k, (w, &g0)) in p.value.data_mut().iter_mut().zip(grad.data()).enumerate() {
                let g = g0 + weight_decay * *w;
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(w));
        (store, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut store, id) = scalar_store(1.25);
        let mut adam = Adam::new(AdamConfig::default(), &store).unwrap();
        store.get_mut(id).grad = Some(Tensor::scalar(0.0));
        adam.step(&mut store).unwrap();
        assert_eq!(store.get(id).value.item(), 1.25);
        assert!(store.get(id).grad.is_none());
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut store, id) = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &store).unwrap();
        store.get_mut(id).grad = Some(Tensor::scalar(1.0));
        adam.step(&mut store).unwrap();
        let moved = -store.get(id).value.item();
        assert!((moved - 1e-3).abs() < 1e-10, "{moved}");
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let (mut store, _) = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &store).unwrap();
        assert!(matches!(
            adam.step(&mut store),
            Err(TensorError::Contract(_))
        ));
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn frozen_parameters_need_no_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("enc.w", Tensor::scalar(1.0));
        let b = store.add("head.w", Tensor::scalar(1.0));
        store.set_trainable_prefix("enc.", false);
        let mut adam = Adam::new(AdamConfig::default(), &store).unwrap();
        store.get_mut(b).grad = Some(Tensor::scalar(1.0));
        adam.step(&mut store).unwrap();
        assert_eq!(store.get(a).value.item(), 1.0);
        assert!(store.get(b).value.item() < 1.0);
    }

    #[test]
    fn quadratic_descends() {
        // f(w) = (w - 2)^2 from w = 0
        let (mut store, id) = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &store).unwrap();
        for _ in 0..100 {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape, true);
            let two = tape.constant(Tensor::scalar(2.0));
            let d = tape.sub(bound[id], two).unwrap();
            let f = tape.mul(d, d).unwrap();
            tape.backward(f).unwrap();
            store.accumulate_grads(&tape, &bound);
            adam.step(&mut store).unwrap();
        }
        assert!((store.get(id).value.item() - 2.0).abs() < 2.0);
        assert_eq!(adam.step_count(), 100);
    }
}
