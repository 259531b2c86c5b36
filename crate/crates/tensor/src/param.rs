use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Result, TensorError};
use crate::graph::Gradients;
use crate::tensor::{Element, Tensor};

static NEXT_STORE_TAG: AtomicU32 = AtomicU32::new(1);

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) u32);

impl ParamId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Globally unique key of a parameter: store tag plus index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub store: u32,
    pub id: ParamId,
}

#[derive(Clone, Debug)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Option<Tensor<F>>,
    /// Buffers (batch-norm running statistics) are checkpointed but never
    /// touched by optimizers or clipping.
    pub trainable: bool,
}

/// Named collection of parameters and buffers owned by one model.
#[derive(Clone, Debug)]
pub struct ParamStore<F> {
    tag: u32,
    params: Vec<Parameter<F>>,
    by_name: HashMap<String, ParamId>,
}

impl<F: Element> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Element> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            tag: NEXT_STORE_TAG.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn tag(&self) -> u32 {
        self.tag
    }

    pub fn key(&self, id: ParamId) -> ParamKey {
        ParamKey { store: self.tag, id }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        self.insert(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        self.insert(name.into(), value, false)
    }

    fn insert(&mut self, name: String, value: Tensor<F>, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(&name) {
            return Err(TensorError::DuplicateName(name));
        }
        let id = ParamId(self.params.len() as u32);
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad: None,
            trainable,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<F> {
        &self.params[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<F> {
        &mut self.params[id.index()]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.index()].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<F>) -> Result<()> {
        let p = &mut self.params[id.index()];
        if p.value.shape() != value.shape() {
            return Err(TensorError::shapes("set_value", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<F>)> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| (ParamId(i as u32), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<F>> {
        self.params.iter_mut()
    }

    pub fn trainable(&self) -> impl Iterator<Item = (ParamId, &Parameter<F>)> {
        self.iter().filter(|(_, p)| p.trainable)
    }

    pub fn num_trainable_values(&self) -> usize {
        self.trainable().map(|(_, p)| p.value.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Add the gradients recorded for this store to each trainable
    /// parameter. Parameters the loss never reached receive zeros, so
    /// after this call every trainable parameter carries a gradient.
    pub fn accumulate(&mut self, grads: &Gradients<F>) -> Result<()> {
        let tag = self.tag;
        for (i, p) in self.params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let key = ParamKey {
                store: tag,
                id: ParamId(i as u32),
            };
            let g = p
                .grad
                .get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            if let Some(contrib) = grads.param(key) {
                g.add_assign(contrib)?;
            }
        }
        Ok(())
    }

    /// Global L2 norm of all trainable gradients present.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .filter_map(|p| p.grad.as_ref())
            .map(|g| g.l2_norm_sq().to_f64_lossy())
            .sum::<f64>()
            .sqrt()
    }

    /// Scale gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = F::from_f64_lossy(max_norm / norm);
            for p in self.params.iter_mut().filter(|p| p.trainable) {
                if let Some(g) = p.grad.as_mut() {
                    for v in g.data_mut() {
                        *v = *v * s;
                    }
                }
            }
        }
        norm
    }

    /// Largest absolute trainable value.
    pub fn max_abs_value(&self) -> f64 {
        self.trainable()
            .map(|(_, p)| p.value.abs_max().to_f64_lossy())
            .fold(0.0, f64::max)
    }

    /// Copy every value from `other`, which must have identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<F>) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(TensorError::Checkpoint(format!(
                "parameter count {} != {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(TensorError::Checkpoint(format!(
                    "layout mismatch at `{}`",
                    a.name
                )));
            }
            a.value = b.value.clone();
        }
        Ok(())
    }

    /// Same parameters converted to another element type under a fresh tag.
    pub fn cast<G: Element>(&self) -> ParamStore<G> {
        ParamStore {
            tag: NEXT_STORE_TAG.fetch_add(1, Ordering::Relaxed),
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.as_ref().map(Tensor::cast),
                    trainable: p.trainable,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}
