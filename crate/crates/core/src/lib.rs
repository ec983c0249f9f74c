//! Shared-buffer packet scheduling with probabilistic fair drop (PAFD).
//!
//! The crate models a wireless access point whose flows share one byte
//! buffer. Admission is decided by a drop policy (PAFD, its DiffServ
//! variant, RED or tail drop) and transmission by a scheduler (BCF, LQF or
//! round robin). [`engine::run`] drives a discrete-event simulation and
//! returns a [`metrics::RunReport`]. [`npdataplane`] models the queue
//! manager of a network processor hosting the same policy.

pub mod buffer;
pub mod droppolicy;
pub mod engine;
pub mod metrics;
pub mod npdataplane;
pub mod sched;
pub mod traffic;
pub mod types;

pub use buffer::{Channel, ChannelState, ServiceFlow, SharedBuffer, Thresholds};
pub use droppolicy::{PafdConfig, Policy, PolicyDecision};
pub use engine::{run, sweep, Combo, PolicyKind, PolicySpec, SimConfig};
pub use metrics::RunReport;
pub use sched::SchedulerKind;
pub use types::{FlowId, Packet, PriorityClass, SimTime};
