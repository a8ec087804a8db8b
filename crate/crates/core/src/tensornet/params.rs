use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

fn fresh_tag() -> u64 {
    NEXT_TAG.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug)]
pub struct Block {
    pub name: String,
    pub value: Arc<Tensor>,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    /// Running statistics and other buffers are stored but never optimized.
    pub trainable: bool,
}

impl Clone for Block {
    fn clone(&self) -> Self {
        Block {
            name: self.name.clone(),
            value: Arc::new((*self.value).clone()),
            grad: self.grad.clone(),
            m: self.m.clone(),
            v: self.v.clone(),
            trainable: self.trainable,
        }
    }
}

/// Named parameter blocks with gradient and Adam moment buffers.
///
/// Each store carries a unique tag so that gradients produced by a graph
/// spanning several stores are routed back to the right one.
#[derive(Debug)]
pub struct ParameterStore {
    tag: u64,
    blocks: Vec<Block>,
    index: HashMap<String, usize>,
    pub step: u64,
}

impl Default for ParameterStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParameterStore {
    fn clone(&self) -> Self {
        Self {
            tag: fresh_tag(),
            blocks: self.blocks.clone(),
            index: self.index.clone(),
            step: self.step,
        }
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self {
            tag: fresh_tag(),
            blocks: Vec::new(),
            index: HashMap::new(),
            step: 0,
        }
    }

    pub fn tag(&self) -> u64 {
        self.tag
    }

    pub fn add(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter block {name}");
        let shape = value.shape().to_vec();
        let id = ParamId(self.blocks.len());
        self.blocks.push(Block {
            name: name.to_string(),
            value: Arc::new(value),
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            trainable,
        });
        self.index.insert(name.to_string(), id.0);
        id
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn add_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut RngStream) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
        self.add(name, Tensor::from_vec(shape, data).expect("sized"), true)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.blocks[id.0].value
    }

    pub(crate) fn shared_value(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.blocks[id.0].value)
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.blocks[id.0].value)
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.blocks[id.0].grad
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.blocks[id.0].value.shape() {
            return Err(Error::shape(format!(
                "block {} has shape {:?}, got {:?}",
                self.blocks[id.0].name,
                self.blocks[id.0].value.shape(),
                value.shape()
            )));
        }
        self.blocks[id.0].value = Arc::new(value);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for b in &mut self.blocks {
            b.grad.fill(0.0);
        }
    }

    pub fn num_trainable(&self) -> usize {
        self.blocks.iter().filter(|b| b.trainable).map(|b| b.value.len()).sum()
    }

    /// Trainable values concatenated in block order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .filter(|b| b.trainable)
            .flat_map(|b| b.value.data().iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .filter(|b| b.trainable)
            .flat_map(|b| b.grad.data().iter().copied())
            .collect()
    }

    /// Overwrites trainable values from a flat vector in block order.
    pub fn set_flat_values(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_trainable() {
            return Err(Error::shape(format!(
                "flat vector has {} entries, store has {}",
                flat.len(),
                self.num_trainable()
            )));
        }
        let mut off = 0;
        for b in self.blocks.iter_mut().filter(|b| b.trainable) {
            let n = b.value.len();
            Arc::make_mut(&mut b.value).data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Adds every gradient in `grads` addressed to this store.
    pub fn accumulate(&mut self, grads: &super::graph::Gradients) -> Result<()> {
        for (tag, id, g) in grads.iter() {
            if tag != self.tag {
                continue;
            }
            let b = self.blocks.get_mut(id.0).ok_or_else(|| Error::shape(format!("no block {}", id.0)))?;
            if b.grad.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "gradient {:?} for block {} of shape {:?}",
                    g.shape(),
                    b.name,
                    b.grad.shape()
                )));
            }
            b.grad.axpy(1.0, g);
        }
        Ok(())
    }

    /// `target <- tau * online + (1 - tau) * target` for every block.
    pub fn soft_update_from(&mut self, online: &ParameterStore, tau: f64) -> Result<()> {
        self.check_same_layout(online)?;
        for (t, o) in self.blocks.iter_mut().zip(&online.blocks) {
            let tv = Arc::make_mut(&mut t.value);
            for (a, b) in tv.data_mut().iter_mut().zip(o.value.data()) {
                *a = tau * b + (1.0 - tau) * *a;
            }
        }
        Ok(())
    }

    pub fn check_same_layout(&self, other: &ParameterStore) -> Result<()> {
        if self.blocks.len() != other.blocks.len() {
            return Err(Error::CheckpointMismatch(format!(
                "{} blocks vs {}",
                self.blocks.len(),
                other.blocks.len()
            )));
        }
        for (a, b) in self.blocks.iter().zip(&other.blocks) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "block {} {:?} vs {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
        }
        Ok(())
    }

    /// Copies values (and running buffers) from a store with the same layout.
    pub fn load_values_from(&mut self, other: &ParameterStore) -> Result<()> {
        self.check_same_layout(other)?;
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.value = Arc::new((*b.value).clone());
        }
        Ok(())
    }

    pub(crate) fn apply_running_updates(&mut self, updates: &[super::graph::RunningUpdate]) {
        for u in updates.iter().filter(|u| u.tag == self.tag) {
            let mean = Arc::make_mut(&mut self.blocks[u.mean.0].value);
            for (r, b) in mean.data_mut().iter_mut().zip(&u.batch_mean) {
                *r = (1.0 - u.momentum) * *r + u.momentum * b;
            }
            let var = Arc::make_mut(&mut self.blocks[u.var.0].value);
            for (r, b) in var.data_mut().iter_mut().zip(&u.batch_var) {
                *r = (1.0 - u.momentum) * *r + u.momentum * b;
            }
        }
    }
}
