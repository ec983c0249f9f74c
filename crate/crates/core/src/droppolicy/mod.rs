//! Admission control for the shared buffer.
//!
//! Every policy looks at an arriving packet and the current buffer and
//! returns a [`PolicyDecision`]. Policies never mutate the buffer themselves;
//! [`apply_decision`] does that, so a decision can be inspected (or compared
//! against a reference model) before it takes effect.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::buffer::SharedBuffer;
use crate::types::{FlowId, Packet, PacketId, PriorityClass, SimTime};

mod pafd;
mod red;

pub use pafd::{
    compute_alpha, compute_beta, pafd_admit, select_victim, select_victim_by_weights,
    synthetic_weight, PafdConfig, VictimParams,
};
pub use red::{red_admit, red_drop_probability, RedConfig, RedState};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("degenerate weight")]
    DegenerateWeight,
    #[error("no victim available")]
    NoVictim,
    #[error("invalid {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}

/// A queued packet chosen for eviction. Evictions always take the head of
/// the named flow's queue, in list order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Eviction {
    pub flow: FlowId,
    pub packet: PacketId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    /// Longer than the whole buffer.
    Oversize,
    /// Not enough room and the policy does not evict.
    BufferFull,
    /// Early or probabilistic drop chosen by the policy.
    Policy,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PolicyDecision {
    Admit,
    /// Evict the listed head packets, then admit the arrival. Never empty.
    EvictThenAdmit(Vec<Eviction>),
    /// Drop the arrival. Evictions chosen before the drop still apply.
    DropArrival {
        evicted: Vec<Eviction>,
        reason: DropReason,
    },
}

impl PolicyDecision {
    pub fn drop(reason: DropReason) -> Self {
        PolicyDecision::DropArrival {
            evicted: Vec::new(),
            reason,
        }
    }

    pub fn admits(&self) -> bool {
        !matches!(self, PolicyDecision::DropArrival { .. })
    }

    pub fn evictions(&self) -> &[Eviction] {
        match self {
            PolicyDecision::Admit => &[],
            PolicyDecision::EvictThenAdmit(v) => v,
            PolicyDecision::DropArrival { evicted, .. } => evicted,
        }
    }
}

/// What actually happened when a decision was applied.
#[derive(Debug, Default)]
pub struct Applied {
    pub admitted: bool,
    pub evicted: Vec<Packet>,
}

/// Applies `decision` for `packet` to `buffer`.
///
/// Panics if the decision names a packet that is not at the head of its flow
/// or admits a packet that does not fit; both are policy bugs.
pub fn apply_decision(buffer: &mut SharedBuffer, packet: Packet, decision: &PolicyDecision) -> Applied {
    let mut applied = Applied::default();
    for ev in decision.evictions() {
        let victim = buffer
            .pop_head(ev.flow)
            .unwrap_or_else(|| panic!("eviction from empty flow {}", ev.flow));
        assert_eq!(victim.id, ev.packet, "eviction must take the head packet");
        applied.evicted.push(victim);
    }
    if decision.admits() {
        buffer
            .enqueue(packet)
            .expect("policy admitted a packet that does not fit");
        applied.admitted = true;
    }
    applied
}

/// Tail drop: admit iff the packet fits.
pub fn td_admit(packet: &Packet, buffer: &SharedBuffer) -> PolicyDecision {
    if u64::from(packet.length) > buffer.capacity() {
        PolicyDecision::drop(DropReason::Oversize)
    } else if buffer.fits(packet.length) {
        PolicyDecision::Admit
    } else {
        PolicyDecision::drop(DropReason::BufferFull)
    }
}

/// Looks up the contracted class of the packet's flow. Flows without an
/// agreement are best effort.
pub fn classify_sla(packet: &Packet, sla: &HashMap<FlowId, PriorityClass>) -> PriorityClass {
    sla.get(&packet.flow).copied().unwrap_or(PriorityClass::Low)
}

/// A configured admission policy together with any running state it needs.
#[derive(Clone, Debug)]
pub enum Policy {
    Pafd(PafdConfig),
    Red { cfg: RedConfig, state: RedState },
    TailDrop,
}

impl Policy {
    /// `load` is the offered load ratio used by the DiffServ variant of PAFD.
    pub fn admit<R: Rng + ?Sized>(
        &mut self,
        packet: &Packet,
        buffer: &SharedBuffer,
        now: SimTime,
        load: f64,
        rng: &mut R,
    ) -> PolicyDecision {
        match self {
            Policy::Pafd(cfg) => pafd_admit(packet, buffer, cfg, load, rng),
            Policy::Red { cfg, state } => red_admit(packet, buffer, state, cfg, now, rng),
            Policy::TailDrop => td_admit(packet, buffer),
        }
    }

    /// Informs the policy that the buffer just drained.
    pub fn on_buffer_empty(&mut self, now: SimTime) {
        if let Policy::Red { state, .. } = self {
            state.mark_idle(now);
        }
    }
}
