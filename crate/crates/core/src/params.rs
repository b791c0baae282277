//! Named trainable parameters, Xavier initialization and the Adam optimizer.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitKind {
    /// Xavier-uniform, fan-in = rows, fan-out = cols.
    Xavier,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: InitKind,
}

impl ParamSpec {
    pub fn weight(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            init: InitKind::Xavier,
        }
    }

    pub fn bias(name: impl Into<String>, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows: 1,
            cols,
            init: InitKind::Zeros,
        }
    }

    pub fn gain(name: impl Into<String>, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows: 1,
            cols,
            init: InitKind::Ones,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 9e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Ordered, uniquely named parameter tensors plus per-parameter Adam moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    state: Vec<AdamState>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(alloc::format!(
                "duplicate parameter `{name}`"
            )));
        }
        let id = self.names.len();
        self.index.insert(name.clone(), id);
        let n = tensor.len();
        self.names.push(name);
        self.tensors.push(tensor);
        self.state.push(AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        });
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        Ok(self.get(self.id(name)?))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let id = self.id(name)?;
        Ok(self.get_mut(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    /// Adds `grad` into the parameter's gradient buffer.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[f64]) {
        let g = self.tensors[id.0].grad_mut_or_zero();
        for (a, b) in g.iter_mut().zip(grad) {
            *a += b;
        }
    }

    /// Materializes zero gradients for every parameter that has none yet.
    pub fn ensure_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad_mut_or_zero();
        }
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.clear_grad();
        }
    }

    pub fn step_count(&self, id: ParamId) -> u64 {
        self.state[id.0].step
    }

    /// One bias-corrected Adam update over every parameter; clears gradients.
    pub fn adam_step(&mut self, opt: &Adam) -> Result<()> {
        if let Some(i) = self.tensors.iter().position(|t| t.grad().is_none()) {
            return Err(Error::MissingGrad(self.names[i].clone()));
        }
        for (t, st) in self.tensors.iter_mut().zip(self.state.iter_mut()) {
            st.step += 1;
            let bc1 = 1.0 - libm::pow(opt.beta1, st.step as f64);
            let bc2 = 1.0 - libm::pow(opt.beta2, st.step as f64);
            let g = t.take_grad().expect("checked above");
            let vals = t.values_mut();
            for k in 0..vals.len() {
                st.m[k] = opt.beta1 * st.m[k] + (1.0 - opt.beta1) * g[k];
                st.v[k] = opt.beta2 * st.v[k] + (1.0 - opt.beta2) * g[k] * g[k];
                let m_hat = st.m[k] / bc1;
                let v_hat = st.v[k] / bc2;
                vals[k] -= opt.lr * m_hat / (libm::sqrt(v_hat) + opt.eps);
            }
        }
        Ok(())
    }

    /// Copies parameter values (not optimizer state) from `other` by name.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for (name, t) in other.iter() {
            let dst = self.by_name_mut(name)?;
            if dst.shape() != t.shape() {
                return Err(Error::Shape {
                    op: "load_values",
                    lhs: dst.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            dst.values_mut().copy_from_slice(t.values());
        }
        Ok(())
    }
}

/// Builds a store from `specs` in order, drawing Xavier-uniform weights from
/// a ChaCha stream seeded with `seed`.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for spec in specs {
        if spec.rows == 0 || spec.cols == 0 {
            return Err(Error::Config(alloc::format!(
                "parameter `{}` has a zero dimension",
                spec.name
            )));
        }
        let n = spec.rows * spec.cols;
        let values = match spec.init {
            InitKind::Zeros => vec![0.0; n],
            InitKind::Ones => vec![1.0; n],
            InitKind::Xavier => {
                let bound = xavier_bound(spec.rows, spec.cols);
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            }
        };
        store.insert(
            spec.name.clone(),
            Tensor::from_rows(spec.rows, spec.cols, values),
        )?;
    }
    Ok(store)
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    libm::sqrt(6.0 / (fan_in + fan_out) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<ParamSpec> {
        vec![
            ParamSpec::weight("w", 1, 1),
            ParamSpec::weight("w2", 4, 3),
            ParamSpec::bias("b", 3),
        ]
    }

    #[test]
    fn xavier_one_by_one_within_sqrt3() {
        let s = init_params(&specs(), 7).unwrap();
        let w = s.by_name("w").unwrap().item();
        assert!(w.abs() <= libm::sqrt(3.0));
    }

    #[test]
    fn init_is_seed_deterministic_and_biases_zero() {
        let a = init_params(&specs(), 11).unwrap();
        let b = init_params(&specs(), 11).unwrap();
        assert_eq!(a, b);
        assert!(a.by_name("b").unwrap().values().iter().all(|&v| v == 0.0));
        let c = init_params(&specs(), 12).unwrap();
        assert_ne!(a.by_name("w2").unwrap(), c.by_name("w2").unwrap());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::scalar(1.0)).unwrap();
        assert!(s.insert("a", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut s = init_params(&specs(), 3).unwrap();
        let before = s.clone();
        s.ensure_grads();
        s.adam_step(&Adam::default()).unwrap();
        for ((_, a), (_, b)) in s.iter().zip(before.iter()) {
            assert_eq!(a.values(), b.values());
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = ParamStore::new();
        let id = s
            .insert("p", Tensor::from_rows(1, 2, vec![1.0, -1.0]))
            .unwrap();
        s.accumulate_grad(id, &[0.5, -3.0]);
        let opt = Adam::with_lr(1e-3);
        s.adam_step(&opt).unwrap();
        let v = s.get(id).values();
        assert!((v[0] - (1.0 - 1e-3)).abs() < 1e-10);
        assert!((v[1] - (-1.0 + 1e-3)).abs() < 1e-10);
        assert_eq!(s.step_count(id), 1);
        assert!(s.get(id).grad().is_none());
    }

    #[test]
    fn adam_requires_grads() {
        let mut s = init_params(&specs(), 3).unwrap();
        assert!(matches!(
            s.adam_step(&Adam::default()),
            Err(Error::MissingGrad(_))
        ));
    }
}
