//! Obstruction-free m-valued k-set agreement from `n - k` swap objects.
//!
//! The protocol races the input values: each process keeps a lap counter
//! with one entry per value and repeatedly swaps `⟨counter, id⟩` through
//! the objects in order. A clean pass — every response echoing its own
//! pair — completes a lap; the process then either increments the entry of
//! the leading value or, once that value is two laps ahead of every other,
//! decides it. Any foreign pair in a response marks the pass conflicted
//! and the counters seen along the way are merged in componentwise.

use serde::{Deserialize, Serialize};

use crate::memory::{LapCounter, ObjectId, ProcessId, SwapCellValue};
use crate::protocol::{PendingOp, Protocol, ProtocolError, ProtocolParams, StepOutcome};

/// Where a process stands between two of its shared-memory steps.
///
/// `SwapAt(i)` means the next operation is the swap on the 1-based slot
/// `i`; slot 1 is the head of a fresh pass, where the conflict flag has
/// already been reset by the trailing local computation of the previous
/// step (or by initialization).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LapPc {
    SwapAt(u32),
    Decided(u32),
}

/// Full local state of one lap-race process.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LapState {
    pub pc: LapPc,
    pub input: u32,
    pub counter: LapCounter,
    pub conflict: bool,
    /// Leading value as of the last conflict-free pass; unset until one
    /// completes.
    pub preference: Option<u32>,
}

/// The lap-race protocol instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LapRace {
    params: ProtocolParams,
}

impl LapRace {
    /// Instance on the canonical `n - k` objects.
    pub fn new(n: u32, k: u32, m: u32) -> Result<Self, ProtocolError> {
        Ok(LapRace {
            params: ProtocolParams::new(n, k, m)?,
        })
    }

    /// Instance with an explicit object count; the swap pass covers
    /// whatever objects exist, so under-provisioned instances still run.
    pub fn with_objects(n: u32, k: u32, m: u32, object_count: u32) -> Result<Self, ProtocolError> {
        Ok(LapRace {
            params: ProtocolParams::with_objects(n, k, m, object_count)?,
        })
    }

    pub fn from_params(params: ProtocolParams) -> Self {
        LapRace { params }
    }

    /// Upper bound on the length of any solo run, in swap steps.
    pub fn solo_step_bound(&self) -> u64 {
        8 * self.params.object_count as u64
    }
}

impl Protocol for LapRace {
    type State = LapState;
    type Value = SwapCellValue;

    fn name(&self) -> &'static str {
        "lap-race"
    }

    fn params(&self) -> &ProtocolParams {
        &self.params
    }

    fn initial_value(&self) -> SwapCellValue {
        SwapCellValue::initial(self.params.m)
    }

    fn init_process(&self, _pid: ProcessId, input: u32) -> Result<LapState, ProtocolError> {
        self.params.validate_input(input)?;
        Ok(LapState {
            pc: LapPc::SwapAt(1),
            input,
            counter: LapCounter::for_input(self.params.m, input),
            conflict: false,
            preference: None,
        })
    }

    fn decided_value(&self, state: &LapState) -> Option<u32> {
        match state.pc {
            LapPc::Decided(v) => Some(v),
            LapPc::SwapAt(_) => None,
        }
    }

    fn poised(&self, state: &LapState, pid: ProcessId) -> Option<PendingOp<SwapCellValue>> {
        match state.pc {
            LapPc::Decided(_) => None,
            LapPc::SwapAt(slot) => Some(PendingOp::Swap {
                object: ObjectId(slot - 1),
                argument: SwapCellValue::owned(state.counter.clone(), pid),
            }),
        }
    }

    fn apply_response(
        &self,
        state: &LapState,
        pid: ProcessId,
        response: &SwapCellValue,
    ) -> Result<StepOutcome<LapState>, ProtocolError> {
        let slot = match state.pc {
            LapPc::SwapAt(slot) => slot,
            LapPc::Decided(_) => return Err(ProtocolError::AlreadyDecided),
        };
        if response.counter.len() != self.params.m as usize {
            return Err(ProtocolError::CounterLength {
                expected: self.params.m as usize,
                got: response.counter.len(),
            });
        }

        let mut next = state.clone();
        let own = SwapCellValue::owned(state.counter.clone(), pid);
        if *response != own {
            next.conflict = true;
            if response.counter != next.counter {
                next.counter.merge_max(&response.counter);
            }
        }

        if slot < self.params.object_count {
            next.pc = LapPc::SwapAt(slot + 1);
            return Ok(StepOutcome {
                state: next,
                decision: None,
            });
        }

        // End of the pass.
        if next.conflict {
            next.conflict = false;
            next.pc = LapPc::SwapAt(1);
            return Ok(StepOutcome {
                state: next,
                decision: None,
            });
        }

        let leader = next.counter.leader();
        next.preference = Some(leader);
        if next.counter.has_decisive_lead(leader) {
            next.pc = LapPc::Decided(leader);
            Ok(StepOutcome {
                state: next,
                decision: Some(leader),
            })
        } else {
            next.counter.increment(leader);
            next.pc = LapPc::SwapAt(1);
            Ok(StepOutcome {
                state: next,
                decision: None,
            })
        }
    }
}
