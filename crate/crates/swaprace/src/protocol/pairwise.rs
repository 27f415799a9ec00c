//! Wait-free k-set agreement for `k >= ceil(n/2)` built from two-process
//! consensus.
//!
//! Two processes solve consensus with a single swap object holding `⊥`:
//! each swaps its input in once; whoever gets `⊥` back decides its own
//! input, the other decides the value it received. The composition runs
//! `n - k` disjoint pairs on dedicated objects and lets the remaining
//! `2k - n` processes decide their inputs outright, so at most `k`
//! distinct values ever appear.

use serde::{Deserialize, Serialize};

use crate::memory::{ObjectId, ProcessId};
use crate::protocol::{PendingOp, Protocol, ProtocolError, ProtocolParams, StepOutcome};

/// One pair object's content: `⊥` until the first swap, then an input
/// value. Rendered as `"bot"` in trace files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairCell(pub Option<u32>);

impl Serialize for PairCell {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_u32(v),
            None => s.serialize_str("bot"),
        }
    }
}

impl<'de> Deserialize<'de> for PairCell {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Value(u32),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Value(v) => Ok(PairCell(Some(v))),
            Repr::Text(t) if t == "bot" => Ok(PairCell(None)),
            Repr::Text(t) => Err(D::Error::custom(format!("bad pair cell {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairState {
    pub input: u32,
    /// Object this process shares with its partner; `None` for the
    /// leftover processes that decide without communicating.
    pub object: Option<ObjectId>,
    pub decided: Option<u32>,
}

/// The pairing composition. Process `2i` and `2i + 1` share object `i`;
/// processes `2(n-k)..n` are leftovers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairwiseAgreement {
    params: ProtocolParams,
}

impl PairwiseAgreement {
    pub fn new(n: u32, k: u32, m: u32) -> Result<Self, ProtocolError> {
        let params = ProtocolParams::new(n, k, m)?;
        if 2 * k < n {
            return Err(ProtocolError::BadParams(format!(
                "pairing needs k >= ceil(n/2), got n={n} k={k}"
            )));
        }
        Ok(PairwiseAgreement { params })
    }

    fn role(&self, pid: ProcessId) -> Option<ObjectId> {
        let pairs = self.params.object_count;
        if pid.0 < 2 * pairs {
            Some(ObjectId(pid.0 / 2))
        } else {
            None
        }
    }
}

impl Protocol for PairwiseAgreement {
    type State = PairState;
    type Value = PairCell;

    fn name(&self) -> &'static str {
        "paired"
    }

    fn params(&self) -> &ProtocolParams {
        &self.params
    }

    fn initial_value(&self) -> PairCell {
        PairCell(None)
    }

    fn init_process(&self, pid: ProcessId, input: u32) -> Result<PairState, ProtocolError> {
        self.params.validate_input(input)?;
        let object = self.role(pid);
        Ok(PairState {
            input,
            object,
            // Leftover processes decide their input before taking any step.
            decided: if object.is_none() { Some(input) } else { None },
        })
    }

    fn decided_value(&self, state: &PairState) -> Option<u32> {
        state.decided
    }

    fn poised(&self, state: &PairState, _pid: ProcessId) -> Option<PendingOp<PairCell>> {
        if state.decided.is_some() {
            return None;
        }
        state.object.map(|object| PendingOp::Swap {
            object,
            argument: PairCell(Some(state.input)),
        })
    }

    fn apply_response(
        &self,
        state: &PairState,
        _pid: ProcessId,
        response: &PairCell,
    ) -> Result<StepOutcome<PairState>, ProtocolError> {
        if state.decided.is_some() {
            return Err(ProtocolError::AlreadyDecided);
        }
        let value = match response.0 {
            None => state.input,
            Some(partner) => partner,
        };
        let mut next = state.clone();
        next.decided = Some(value);
        Ok(StepOutcome {
            state: next,
            decision: Some(value),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_k_below_half() {
        assert!(PairwiseAgreement::new(4, 1, 2).is_err());
        assert!(PairwiseAgreement::new(5, 2, 3).is_err());
        assert!(PairwiseAgreement::new(4, 2, 3).is_ok());
        assert!(PairwiseAgreement::new(2, 1, 2).is_ok());
    }

    #[test]
    fn pair_members_share_an_object_and_leftovers_decide_at_init() {
        let p = PairwiseAgreement::new(3, 2, 6).unwrap();
        let s0 = p.init_process(ProcessId(0), 3).unwrap();
        let s1 = p.init_process(ProcessId(1), 5).unwrap();
        let s2 = p.init_process(ProcessId(2), 4).unwrap();
        assert_eq!(s0.object, Some(ObjectId(0)));
        assert_eq!(s1.object, Some(ObjectId(0)));
        assert_eq!(s2.object, None);
        assert_eq!(s2.decided, Some(4));
        assert!(p.poised(&s2, ProcessId(2)).is_none());
    }

    /// Hand enumeration of both interleavings of the two-process protocol.
    #[test]
    fn both_interleavings_agree_on_the_first_swapper() {
        let p = PairwiseAgreement::new(2, 1, 6).unwrap();
        for first in [0u32, 1] {
            let second = 1 - first;
            let inputs = [3u32, 5];
            let mut cell = PairCell(None);
            let mut states = [
                p.init_process(ProcessId(0), inputs[0]).unwrap(),
                p.init_process(ProcessId(1), inputs[1]).unwrap(),
            ];
            for pid in [first, second] {
                let op = p.poised(&states[pid as usize], ProcessId(pid)).unwrap();
                let arg = match op {
                    PendingOp::Swap { argument, .. } => argument,
                    PendingOp::Read { .. } => unreachable!("pairing never reads"),
                };
                let resp = std::mem::replace(&mut cell, arg);
                let out = p
                    .apply_response(&states[pid as usize], ProcessId(pid), &resp)
                    .unwrap();
                states[pid as usize] = out.state;
            }
            let expected = inputs[first as usize];
            assert_eq!(states[0].decided, Some(expected));
            assert_eq!(states[1].decided, Some(expected));
        }
    }

    #[test]
    fn equal_inputs_decide_that_value_either_way() {
        let p = PairwiseAgreement::new(2, 1, 6).unwrap();
        let s0 = p.init_process(ProcessId(0), 4).unwrap();
        for resp in [PairCell(None), PairCell(Some(4))] {
            let out = p.apply_response(&s0, ProcessId(0), &resp).unwrap();
            assert_eq!(out.decision, Some(4));
        }
    }
}
