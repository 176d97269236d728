use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::Tensor2;
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor2,
    pub grad: Tensor2,
    pub(crate) m: Tensor2,
    pub(crate) v: Tensor2,
}

/// Named parameter tensors with gradient accumulators and Adam moments.
///
/// Parameters keep their insertion order; every sweep (optimizer updates,
/// gradient clipping) walks them in that order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
    pub(crate) step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor2) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Input(format!("duplicate parameter name {name}")));
        }
        let (r, c) = value.shape();
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            grad: Tensor2::zeros(r, c),
            m: Tensor2::zeros(r, c),
            v: Tensor2::zeros(r, c),
        });
        Ok(ParamId(id))
    }

    /// Xavier-uniform initialised weight matrix.
    pub fn add_xavier<R: Rng>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)).collect();
        self.add(name, Tensor2::from_vec(fan_in, fan_out, data))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Result<ParamId> {
        self.add(name, Tensor2::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor2 {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad.fill(0.0));
    }

    /// Adds `scale · grads` into the accumulators.
    pub fn accumulate(&mut self, grads: &Grads, scale: f64) {
        for (p, g) in self.params.iter_mut().zip(&grads.0) {
            if let Some(g) = g {
                for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *a += scale * b;
                }
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().map(|p| p.grad.norm_sq()).sum::<f64>().sqrt()
    }

    /// Rescales accumulated gradients so their global norm is at most
    /// `max_norm`; returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let k = max_norm / norm;
            self.params.iter_mut().for_each(|p| p.grad.scale_assign(k));
        }
        norm
    }

    /// Parameter values keyed by name, for serialization.
    pub fn snapshot(&self) -> BTreeMap<String, Tensor2> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Overwrites values from a snapshot; every parameter must be present
    /// with a matching shape.
    pub fn load_snapshot(&mut self, values: &BTreeMap<String, Tensor2>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Input(format!(
                "checkpoint has {} parameters, model expects {}",
                values.len(),
                self.params.len()
            )));
        }
        for p in &mut self.params {
            let v = values
                .get(&p.name)
                .ok_or_else(|| Error::Input(format!("checkpoint lacks parameter {}", p.name)))?;
            if v.shape() != p.value.shape() {
                return Err(Error::shape(
                    p.name.clone(),
                    format!("checkpoint shape {:?}, model shape {:?}", v.shape(), p.value.shape()),
                ));
            }
            p.value = v.clone();
        }
        Ok(())
    }
}

/// Per-parameter gradients from one backward pass; `None` means the
/// parameter did not take part.
#[derive(Debug, Clone)]
pub struct Grads(pub(crate) Vec<Option<Tensor2>>);

impl Grads {
    pub fn empty(num_params: usize) -> Self {
        Self(vec![None; num_params])
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor2> {
        self.0[id.0].as_ref()
    }

    /// Gradient entry, zero when the parameter did not take part.
    pub fn at(&self, id: ParamId, index: usize) -> f64 {
        self.0[id.0].as_ref().map_or(0.0, |g| g.data()[index])
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().flatten().for_each(|g| g.scale_assign(k));
    }
}
