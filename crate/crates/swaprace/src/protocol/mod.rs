//! Agreement protocols as explicit step machines.
//!
//! A protocol describes, per process, which shared-memory operation it is
//! poised to apply and how its local state advances once the response
//! arrives. One simulator step is one shared-memory operation plus all
//! local computation up to the next one (or up to a decision), so process
//! states only exist at operation boundaries.

use std::fmt::Debug;
use std::hash::Hash;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{ObjectId, ProcessId};

mod lap_race;
mod pairwise;

pub use lap_race::{LapPc, LapRace, LapState};
pub use pairwise::{PairCell, PairState, PairwiseAgreement};

/// Instance parameters: `n` processes, at most `k` distinct outputs,
/// inputs in `{0..m-1}`, and the number of shared objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub n: u32,
    pub k: u32,
    pub m: u32,
    pub object_count: u32,
}

impl ProtocolParams {
    /// Parameters with the canonical `n - k` objects.
    pub fn new(n: u32, k: u32, m: u32) -> Result<Self, ProtocolError> {
        Self::with_objects(n, k, m, n.saturating_sub(k))
    }

    /// Parameters with an explicit object count. Counts below `n - k`
    /// are allowed: under-provisioned instances stay executable so the
    /// lower-bound driver can refute them.
    pub fn with_objects(n: u32, k: u32, m: u32, object_count: u32) -> Result<Self, ProtocolError> {
        if k < 1 || n <= k {
            return Err(ProtocolError::BadParams(format!(
                "need n > k >= 1, got n={n} k={k}"
            )));
        }
        if m < 2 {
            return Err(ProtocolError::BadParams(format!("need m >= 2, got m={m}")));
        }
        if object_count < 1 {
            return Err(ProtocolError::BadParams("need at least one object".into()));
        }
        Ok(ProtocolParams {
            n,
            k,
            m,
            object_count,
        })
    }

    pub fn validate_input(&self, input: u32) -> Result<(), ProtocolError> {
        if input < self.m {
            Ok(())
        } else {
            Err(ProtocolError::InvalidInput { input, m: self.m })
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("input {input} outside value domain 0..{m}")]
    InvalidInput { input: u32, m: u32 },
    #[error("response counter has length {got}, expected {expected}")]
    CounterLength { expected: usize, got: usize },
    #[error("step applied to a decided process")]
    AlreadyDecided,
}

/// Shared-memory operation a process is poised to apply.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PendingOp<V> {
    Swap { object: ObjectId, argument: V },
    Read { object: ObjectId },
}

impl<V> PendingOp<V> {
    pub fn object(&self) -> ObjectId {
        match self {
            PendingOp::Swap { object, .. } | PendingOp::Read { object } => *object,
        }
    }
}

/// New local state after a response, plus the decision if this step ended
/// the process's participation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome<S> {
    pub state: S,
    pub decision: Option<u32>,
}

/// A recorded output event. `step_index` is the number of shared-memory
/// steps the run had completed when the decision was made; zero means the
/// process decided in the initial configuration without taking a step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Decision {
    pub process: ProcessId,
    pub value: u32,
    pub step_index: u64,
}

/// A deterministic shared-memory agreement protocol.
///
/// Implementations are pure: `apply_response` builds a fresh state, so
/// configurations can be cloned and advanced independently on any number
/// of exploration branches.
pub trait Protocol: Sync {
    /// Full local state of one process.
    type State: Clone + PartialEq + Eq + Hash + Debug + Serialize + DeserializeOwned + Send + Sync;
    /// Value stored in each shared object.
    type Value: Clone + PartialEq + Eq + Hash + Debug + Serialize + DeserializeOwned + Send + Sync;

    /// Short identifier written into trace headers, e.g. `"lap-race"`.
    fn name(&self) -> &'static str;

    fn params(&self) -> &ProtocolParams;

    /// Value every object holds before any process takes a step.
    fn initial_value(&self) -> Self::Value;

    fn init_process(&self, pid: ProcessId, input: u32) -> Result<Self::State, ProtocolError>;

    /// The value this state has decided, if any. Decided processes take no
    /// further steps.
    fn decided_value(&self, state: &Self::State) -> Option<u32>;

    /// Operation the process applies next; `None` iff it has decided.
    fn poised(&self, state: &Self::State, pid: ProcessId) -> Option<PendingOp<Self::Value>>;

    fn apply_response(
        &self,
        state: &Self::State,
        pid: ProcessId,
        response: &Self::Value,
    ) -> Result<StepOutcome<Self::State>, ProtocolError>;
}
