//! Shared-object layer: swap objects, readable stores, and lap counters.
//!
//! A swap object atomically installs a new value and returns the previous
//! one; it does not support `Read` unless the store was created readable.
//! Stores are plain values: a simulation step mutates one cell, and whole
//! stores are cloned freely for branching exploration.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a process, `p0, p1, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(pub u32);

impl ProcessId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// 0-based position of an object in its store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub u32);

impl ObjectId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B{}", self.0 + 1)
    }
}

/// Per-value lap tally: entry `j` is the highest lap observed for value `j`.
///
/// Lap values are fixed-width naturals; increments are checked and abort on
/// overflow, which is unreachable at the schedule depths this crate targets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LapCounter(Vec<u64>);

/// Outcome of comparing two lap counters componentwise.
///
/// The domination order is partial: two counters may each lead in a
/// different component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterOrder {
    Equal,
    /// Left is dominated by right and they differ.
    Below,
    /// Left dominates right and they differ.
    Above,
    Incomparable,
}

impl LapCounter {
    /// All-zero counter of length `m`.
    pub fn zeroed(m: u32) -> Self {
        LapCounter(vec![0; m as usize])
    }

    /// Counter a process starts with: zero everywhere, one at its input.
    pub fn for_input(m: u32, input: u32) -> Self {
        let mut laps = vec![0; m as usize];
        laps[input as usize] = 1;
        LapCounter(laps)
    }

    pub fn from_laps(laps: Vec<u64>) -> Self {
        LapCounter(laps)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, value: u32) -> u64 {
        self.0[value as usize]
    }

    pub fn laps(&self) -> &[u64] {
        &self.0
    }

    /// Componentwise maximum with `other`. Returns true if anything changed.
    pub fn merge_max(&mut self, other: &LapCounter) -> bool {
        debug_assert_eq!(self.len(), other.len());
        let mut changed = false;
        for (mine, theirs) in self.0.iter_mut().zip(&other.0) {
            if *theirs > *mine {
                *mine = *theirs;
                changed = true;
            }
        }
        changed
    }

    /// True iff `self ⪯ other` componentwise.
    pub fn dominated_by(&self, other: &LapCounter) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    pub fn compare(&self, other: &LapCounter) -> CounterOrder {
        let below = self.dominated_by(other);
        let above = other.dominated_by(self);
        match (below, above) {
            (true, true) => CounterOrder::Equal,
            (true, false) => CounterOrder::Below,
            (false, true) => CounterOrder::Above,
            (false, false) => CounterOrder::Incomparable,
        }
    }

    pub fn max_value(&self) -> u64 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    /// Smallest index holding the maximum entry.
    pub fn leader(&self) -> u32 {
        let max = self.max_value();
        self.0.iter().position(|&v| v == max).unwrap_or(0) as u32
    }

    /// True iff entry `v` is at least two ahead of every other entry.
    pub fn has_decisive_lead(&self, v: u32) -> bool {
        let lead = self.0[v as usize];
        self.0
            .iter()
            .enumerate()
            .all(|(j, &x)| j == v as usize || lead >= x + 2)
    }

    pub fn increment(&mut self, v: u32) {
        let slot = &mut self.0[v as usize];
        *slot = slot.checked_add(1).expect("lap counter overflow");
    }
}

impl fmt::Display for LapCounter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

/// Contents of one swap object in the lap-race protocol: a lap counter
/// plus the identifier of the last process that swapped, `None` until the
/// first swap (rendered as `"bot"` in trace files).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SwapCellValue {
    pub counter: LapCounter,
    #[serde(with = "owner_repr")]
    pub owner: Option<ProcessId>,
}

impl SwapCellValue {
    pub fn initial(m: u32) -> Self {
        SwapCellValue {
            counter: LapCounter::zeroed(m),
            owner: None,
        }
    }

    pub fn owned(counter: LapCounter, pid: ProcessId) -> Self {
        SwapCellValue {
            counter,
            owner: Some(pid),
        }
    }
}

/// Serializes the owner field as the process index, with `"bot"` for the
/// initial unowned state.
mod owner_repr {
    use super::ProcessId;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<ProcessId>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(p) => s.serialize_u32(p.0),
            None => s.serialize_str("bot"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<ProcessId>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Id(u32),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Id(i) => Ok(Some(ProcessId(i))),
            Repr::Text(t) if t == "bot" => Ok(None),
            Repr::Text(t) => Err(D::Error::custom(format!("bad owner {t:?}"))),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MemoryError {
    #[error("object {id} out of range for store of {len} objects")]
    OutOfRange { id: u32, len: usize },
    #[error("read applied to a store without read support")]
    NotReadable,
}

/// Fixed-size array of shared objects, all holding values of type `V`.
///
/// The cell count never changes after construction. `readable` gates the
/// `Read` operation; the agreement protocols run on non-readable stores so
/// that an accidental read is caught as a usage error instead of silently
/// weakening the object model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectStore<V> {
    cells: Vec<V>,
    readable: bool,
}

impl<V: Clone + PartialEq> ObjectStore<V> {
    /// Swap-only store with every cell set to `init`.
    pub fn new(count: u32, init: V) -> Self {
        ObjectStore {
            cells: vec![init; count as usize],
            readable: false,
        }
    }

    /// Store that additionally supports `Read`.
    pub fn new_readable(count: u32, init: V) -> Self {
        ObjectStore {
            cells: vec![init; count as usize],
            readable: true,
        }
    }

    pub fn object_count(&self) -> u32 {
        self.cells.len() as u32
    }

    pub fn is_readable(&self) -> bool {
        self.readable
    }

    fn slot(&self, id: ObjectId) -> Result<usize, MemoryError> {
        if id.index() < self.cells.len() {
            Ok(id.index())
        } else {
            Err(MemoryError::OutOfRange {
                id: id.0,
                len: self.cells.len(),
            })
        }
    }

    /// Installs `new` at `id` and returns the value held immediately before.
    pub fn swap(&mut self, id: ObjectId, new: V) -> Result<V, MemoryError> {
        let slot = self.slot(id)?;
        Ok(std::mem::replace(&mut self.cells[slot], new))
    }

    /// Current value at `id`; errors unless the store supports `Read`.
    pub fn read(&self, id: ObjectId) -> Result<&V, MemoryError> {
        if !self.readable {
            return Err(MemoryError::NotReadable);
        }
        Ok(&self.cells[self.slot(id)?])
    }

    /// Model-level accessor for the value at `id`: this is how the
    /// simulator and checkers inspect configurations, independent of
    /// whether the processes themselves may read.
    pub fn value(&self, id: ObjectId) -> Result<&V, MemoryError> {
        Ok(&self.cells[self.slot(id)?])
    }

    pub fn values(&self) -> &[V] {
        &self.cells
    }
}
