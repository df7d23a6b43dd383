//! FIFO replay buffer of window transitions with uniform without-replacement
//! batch sampling.

use crate::core::Rng;

/// One stored transition. `action` is the physical estimate; `action_norm`
/// caches the same action in the trainer's normalized space so batches never
/// re-derive it.
#[derive(Clone, Debug)]
pub struct TransitionRecord {
    pub window: Vec<f64>,
    pub action: Vec<f64>,
    pub action_norm: Vec<f64>,
    pub cost: f64,
    pub next_window: Vec<f64>,
    pub terminal: bool,
}

pub struct ReplayBuffer {
    capacity: usize,
    records: Vec<TransitionRecord>,
    /// Ring cursor: position of the next overwrite once full.
    next: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            records: Vec::new(),
            next: 0,
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, record: TransitionRecord) {
        if self.records.len() < self.capacity {
            self.records.push(record);
        } else {
            self.records[self.next] = record;
            self.next = (self.next + 1) % self.capacity;
        }
        self.inserted += 1;
    }

    /// Oldest surviving record.
    pub fn oldest(&self) -> Option<&TransitionRecord> {
        if self.records.is_empty() {
            None
        } else if self.records.len() < self.capacity {
            self.records.first()
        } else {
            Some(&self.records[self.next])
        }
    }

    /// Uniform sample of `batch` distinct records.
    pub fn sample<'a>(&'a self, batch: usize, rng: &mut Rng) -> Vec<&'a TransitionRecord> {
        assert!(batch <= self.records.len(), "batch exceeds buffer size");
        let mut chosen = Vec::with_capacity(batch);
        let mut indices = Vec::with_capacity(batch);
        while chosen.len() < batch {
            let idx = rng.index(self.records.len());
            if !indices.contains(&idx) {
                indices.push(idx);
                chosen.push(&self.records[idx]);
            }
        }
        chosen
    }
}
