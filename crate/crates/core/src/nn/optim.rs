use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{kaiming_bound, mismatch, NamedTensor, NnError, Scalar, Tensor, TensorPayload};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named gradients, summed across sub-batches before a step.
#[derive(Debug, Clone, Default)]
pub struct GradientSet<T> {
    grads: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn insert(&mut self, name: String, g: Tensor<T>) {
        self.grads.insert(name, g);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.grads.get(name)
    }

    /// `self += weight · other`
    pub fn accumulate(&mut self, other: &GradientSet<T>, weight: f64) {
        let w = T::of(weight);
        for (name, g) in &other.grads {
            let slot = self
                .grads
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            slot.data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, &b)| *a += w * b);
        }
    }

    pub fn norm(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|g| g.data())
            .map(|x| x.to_f64().unwrap_or(f64::NAN).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Slot<T> {
    value: Tensor<T>,
    m: Vec<T>,
    v: Vec<T>,
}

/// Parameters with their Adam moments.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore<T> {
    slots: BTreeMap<String, Slot<T>>,
    step: u64,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            slots: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>) {
        let n = value.len();
        self.slots.insert(
            name.to_string(),
            Slot {
                value,
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
            },
        );
    }

    /// `[fan_in, fan_out]` weight with uniform Kaiming init plus a zero `[1, fan_out]` bias.
    pub fn init_linear<R: Rng + ?Sized>(
        &mut self,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) {
        let bound = kaiming_bound(fan_in);
        let w = (0..fan_in * fan_out)
            .map(|_| T::of(rng.random_range(-bound..bound)))
            .collect();
        self.insert(
            &format!("{prefix}.w"),
            Tensor::matrix(fan_in, fan_out, w).expect("sized"),
        );
        self.insert(&format!("{prefix}.b"), Tensor::zeros(vec![1, fan_out]));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.slots.get_mut(name).map(|s| &mut s.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update with decoupled weight decay. Parameters without a
    /// gradient entry are treated as having zero gradient.
    pub fn adam_step(&mut self, grads: &GradientSet<T>, cfg: &AdamConfig) -> Result<(), NnError> {
        for (name, g) in &grads.grads {
            let slot = self
                .slots
                .get(name)
                .ok_or_else(|| NnError::UnknownParameter(name.clone()))?;
            if slot.value.shape() != g.shape() {
                return Err(mismatch(
                    "adam_step",
                    format!("gradient for '{name}' has shape {:?}", g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(NnError::NonFinite {
                    op: format!("adam_step gradient '{name}'"),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (name, slot) in self.slots.iter_mut() {
            let g = grads.get(name);
            for i in 0..slot.value.len() {
                let gi = g.map_or(0.0, |g| g.data()[i].to_f64().unwrap_or(f64::NAN));
                let m = b1 * slot.m[i].to_f64().unwrap_or(0.0) + (1.0 - b1) * gi;
                let v = b2 * slot.v[i].to_f64().unwrap_or(0.0) + (1.0 - b2) * gi * gi;
                let x = slot.value.data()[i].to_f64().unwrap_or(f64::NAN);
                let x = x
                    - cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps)
                    - cfg.lr * cfg.weight_decay * x;
                slot.m[i] = T::of(m);
                slot.v[i] = T::of(v);
                slot.value.data_mut()[i] = T::of(x);
            }
            if !slot.value.is_finite() {
                return Err(NnError::NonFinite {
                    op: format!("adam_step parameter '{name}'"),
                });
            }
        }
        Ok(())
    }

    /// Parameters followed by `adam.m.*`, `adam.v.*` and `adam.step`.
    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::with_capacity(3 * self.slots.len() + 1);
        let payload = |d: &[T]| -> TensorPayload {
            match T::DTYPE {
                0 => TensorPayload::F32(d.iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect()),
                _ => TensorPayload::F64(d.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect()),
            }
        };
        for (name, s) in &self.slots {
            out.push(NamedTensor {
                name: name.clone(),
                shape: s.value.shape().to_vec(),
                payload: payload(s.value.data()),
            });
        }
        for (name, s) in &self.slots {
            out.push(NamedTensor {
                name: format!("adam.m.{name}"),
                shape: s.value.shape().to_vec(),
                payload: payload(&s.m),
            });
            out.push(NamedTensor {
                name: format!("adam.v.{name}"),
                shape: s.value.shape().to_vec(),
                payload: payload(&s.v),
            });
        }
        out.push(NamedTensor {
            name: "adam.step".into(),
            shape: vec![1],
            payload: TensorPayload::F64(vec![self.step as f64]),
        });
        out
    }

    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<Self, NnError> {
        let mut store = Self::new();
        let to_vec = |t: &NamedTensor| -> Vec<T> {
            match &t.payload {
                TensorPayload::F32(d) => d.iter().map(|&x| T::of(x as f64)).collect(),
                TensorPayload::F64(d) => d.iter().map(|&x| T::of(x)).collect(),
            }
        };
        for t in tensors.iter().filter(|t| !t.name.starts_with("adam.")) {
            store.insert(&t.name, Tensor::new(t.shape.clone(), to_vec(t))?);
        }
        for t in tensors.iter().filter(|t| t.name.starts_with("adam.")) {
            if t.name == "adam.step" {
                store.step = to_vec(t).first().and_then(|x| x.to_u64()).unwrap_or(0);
                continue;
            }
            let (kind, name) = t.name["adam.".len()..].split_at(1);
            let slot = store
                .slots
                .get_mut(&name[1..])
                .ok_or_else(|| NnError::UnknownParameter(t.name.clone()))?;
            let data = to_vec(t);
            if data.len() != slot.value.len() {
                return Err(mismatch(
                    "checkpoint",
                    format!("moment '{}' has wrong size", t.name),
                ));
            }
            match kind {
                "m" => slot.m = data,
                _ => slot.v = data,
            }
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Graph;

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        let mut store = ParameterStore::<f64>::new();
        store.insert("x", Tensor::scalar(0.0));
        let mut g = GradientSet::default();
        g.insert("x".into(), Tensor::scalar(1.0));
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        store.adam_step(&g, &cfg).unwrap();
        assert!((store.get("x").unwrap().data()[0] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_without_decay_leaves_parameter() {
        let mut store = ParameterStore::<f64>::new();
        store.insert("x", Tensor::scalar(0.7));
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        store.adam_step(&GradientSet::default(), &cfg).unwrap();
        assert_eq!(store.get("x").unwrap().data()[0], 0.7);
    }

    #[test]
    fn trajectory_on_square_matches_scalar_adam() {
        let cfg = AdamConfig::default();
        let mut store = ParameterStore::<f64>::new();
        store.insert("x", Tensor::scalar(1.5));
        // plain scalar Adam written out independently
        let (mut x, mut m, mut v) = (1.5f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let mut graph = Graph::new();
            let xv = graph.param(&store, "x").unwrap();
            let sq = graph.mul(xv, xv).unwrap();
            let loss = graph.sum(sq);
            graph.backward(loss).unwrap();
            store.adam_step(&graph.param_grads(), &cfg).unwrap();

            let grad = 2.0 * x;
            m = 0.9 * m + 0.1 * grad;
            v = 0.999 * v + 0.001 * grad * grad;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x = x - 1e-3 * mh / (vh.sqrt() + 1e-8) - 1e-3 * 1e-6 * x;
            assert!((store.get("x").unwrap().data()[0] - x).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut store = ParameterStore::<f32>::new();
        store.insert("x", Tensor::scalar(0.0));
        let mut g = GradientSet::default();
        g.insert("x".into(), Tensor::scalar(f32::NAN));
        assert!(matches!(
            store.adam_step(&g, &AdamConfig::default()),
            Err(NnError::NonFinite { .. })
        ));
        assert_eq!(store.step_count(), 0);
    }

    #[test]
    fn tensors_round_trip_with_moments() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let mut store = ParameterStore::<f32>::new();
        store.init_linear("l0", 3, 4, &mut rng);
        let mut g = GradientSet::default();
        g.insert("l0.w".into(), Tensor::matrix(3, 4, vec![0.5; 12]).unwrap());
        store.adam_step(&g, &AdamConfig::default()).unwrap();
        let back = ParameterStore::<f32>::from_tensors(&store.to_tensors()).unwrap();
        assert_eq!(back, store);
    }
}
