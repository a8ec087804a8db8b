use super::Transition;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Fixed-capacity ring of transitions; the oldest entry is overwritten first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    cursor: usize,
}

/// Column-major view of sampled transitions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub q: Vec<f64>,
    pub a: Vec<f64>,
    pub q_next: Vec<f64>,
    pub reward: Vec<f64>,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    pub fn from_transitions<'a>(ts: impl IntoIterator<Item = &'a Transition>) -> Self {
        let mut b = Batch::default();
        for t in ts {
            b.q.extend([t.q.x, t.q.y]);
            b.a.extend(t.a);
            b.q_next.extend([t.q_next.x, t.q_next.y]);
            b.reward.push(t.reward);
            b.done.push(t.done);
        }
        b
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            items: Vec::with_capacity(capacity),
            capacity,
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// `batch` draws with replacement, uniform over stored items.
    pub fn sample(&self, batch: usize, rng: &mut RngStream) -> Result<Batch> {
        if self.items.len() < batch || batch == 0 {
            return Err(Error::BufferTooSmall {
                size: self.items.len(),
                batch,
            });
        }
        Ok(Batch::from_transitions(
            (0..batch).map(|_| &self.items[rng.index(self.items.len())]),
        ))
    }
}
