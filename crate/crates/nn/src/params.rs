use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::Tensor;

static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

fn fresh_tag() -> u64 {
    NEXT_TAG.fetch_add(1, Ordering::Relaxed)
}

/// Index of a parameter tensor inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub group: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Named parameter tensors partitioned into groups.
///
/// Every store carries a process-unique tag so a [`crate::Graph`] can bind
/// several stores side by side. Cloning yields a fresh tag.
#[derive(Debug)]
pub struct ParamStore {
    tag: u64,
    entries: Vec<ParamEntry>,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        ParamStore {
            tag: fresh_tag(),
            entries: self.entries.clone(),
        }
    }
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            tag: fresh_tag(),
            entries: Vec::new(),
        }
    }

    pub(crate) fn tag(&self) -> u64 {
        self.tag
    }

    pub fn add(&mut self, group: &str, name: &str, value: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.to_string(),
            group: group.to_string(),
            value,
            trainable: true,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    /// Group names in order of first appearance.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.group) {
                out.push(e.group.clone());
            }
        }
        out
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for e in &mut self.entries {
            e.trainable = trainable;
        }
    }

    pub fn set_group_trainable(&mut self, group: &str, trainable: bool) {
        for e in self.entries.iter_mut().filter(|e| e.group == group) {
            e.trainable = trainable;
        }
    }

    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn group_count(&self, group: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.group == group)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// SHA-256 over names, shapes and little-endian values of one group.
    pub fn group_digest(&self, group: &str) -> String {
        let mut h = Sha256::new();
        for e in self.entries.iter().filter(|e| e.group == group) {
            hash_entry(&mut h, e);
        }
        hex::encode(h.finalize())
    }

    /// SHA-256 over every entry of the store.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            hash_entry(&mut h, e);
        }
        hex::encode(h.finalize())
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.is_finite())
    }
}

fn hash_entry(h: &mut Sha256, e: &ParamEntry) {
    h.update(e.group.as_bytes());
    h.update([0u8]);
    h.update(e.name.as_bytes());
    h.update([0u8]);
    for d in e.value.shape() {
        h.update((*d as u64).to_le_bytes());
    }
    for v in e.value.data() {
        h.update(v.to_le_bytes());
    }
}

/// He-normal initialisation with standard deviation `gain / sqrt(fan_in)`.
pub fn kaiming_normal<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize, gain: f64) -> Tensor {
    let std = gain / (fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(shape, data).expect("shape/len agree")
}
