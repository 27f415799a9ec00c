//! Deterministic simulator and verification toolkit for k-set agreement
//! over swap objects.
//!
//! The pieces, bottom up:
//!
//! - [`memory`]: swap objects and lap counters; stores are plain values.
//! - [`protocol`]: the agreement protocols as pure step machines — the
//!   lap-race algorithm on `n - k` swap objects and the wait-free pairing
//!   composition for `k >= ceil(n/2)`.
//! - [`harness`]: schedulers, trace recording, byte-stable trace files,
//!   replay, and indistinguishability mirroring.
//! - [`checkers`]: trace oracles for agreement, validity, the solo step
//!   bound, and the lap-race structural observations.
//! - [`adversary`]: the overwrite-and-hide driver that turns missing
//!   objects into replayable agreement violations, and certifies object
//!   consumption otherwise.
//! - [`analysis`]: exhaustive bounded exploration, valency
//!   classification, covers, and block swaps.
//!
//! Batch entry points take a `parallel` flag and fan out on rayon when
//! the `parallel` feature (default) is enabled; without it they fall back
//! to sequential execution with identical results.

pub mod adversary;
pub mod analysis;
pub mod checkers;
pub mod exec;
pub mod harness;
pub mod memory;
pub mod protocol;

pub use harness::{Config, Configuration, ProtocolTrace, Schedule, Trace};
pub use memory::{LapCounter, ObjectId, ProcessId, SwapCellValue};
pub use protocol::{LapRace, PairwiseAgreement, Protocol, ProtocolParams};
