//! Shared-buffer state: per-flow FIFO queues drawing on one byte pool.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{FlowId, Packet, PriorityClass};

#[derive(Debug, Error, PartialEq)]
pub enum BufferError {
    #[error("buffer capacity must be positive")]
    ZeroCapacity,
    #[error("flow at position {position} has id {found}, expected {expected}")]
    FlowOrder {
        position: usize,
        found: FlowId,
        expected: FlowId,
    },
    #[error("flow {0}: weight must be positive")]
    Weight(FlowId),
    #[error("flow {0}: phi must be in (0, 1]")]
    Phi(FlowId),
    #[error("thresholds must satisfy 0 < min < medium < max <= 1")]
    Thresholds,
    #[error("unknown flow {0}")]
    UnknownFlow(FlowId),
    #[error("packet of {length} bytes does not fit in {remaining} remaining bytes")]
    Overflow { length: u32, remaining: u64 },
    #[error("empty buffer has no shares")]
    Empty,
}

/// Channel quality seen by a flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Good,
    Bad,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelState {
    pub state: Channel,
    /// Fraction of the nominal link rate available, in (0, 1].
    pub rate_multiplier: f64,
}

impl ChannelState {
    pub fn good(multiplier: f64) -> Self {
        ChannelState {
            state: Channel::Good,
            rate_multiplier: multiplier,
        }
    }

    pub fn bad(multiplier: f64) -> Self {
        ChannelState {
            state: Channel::Bad,
            rate_multiplier: multiplier,
        }
    }
}

impl Default for ChannelState {
    fn default() -> Self {
        ChannelState::good(1.0)
    }
}

/// Per-flow state: QoS weight, GPS weight, class, queue and channel.
#[derive(Clone, Debug)]
pub struct ServiceFlow {
    pub id: FlowId,
    /// Static QoS weight `u`.
    pub weight: f64,
    /// GPS weight `phi`.
    pub phi: f64,
    pub priority: PriorityClass,
    pub channel: ChannelState,
    queue: VecDeque<Packet>,
    queued_bytes: u64,
}

impl ServiceFlow {
    pub fn new(id: FlowId, weight: f64, phi: f64, priority: PriorityClass) -> Self {
        ServiceFlow {
            id,
            weight,
            phi,
            priority,
            channel: ChannelState::default(),
            queue: VecDeque::new(),
            queued_bytes: 0,
        }
    }

    /// Buffer space held by this flow, in bytes.
    pub fn queued_bytes(&self) -> u64 {
        self.queued_bytes
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn head(&self) -> Option<&Packet> {
        self.queue.front()
    }

    pub fn packets(&self) -> impl Iterator<Item = &Packet> {
        self.queue.iter()
    }
}

/// Occupancy ratios delimiting minor, moderate and severe congestion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub min: f64,
    pub medium: f64,
    pub max: f64,
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), BufferError> {
        let ok = self.min > 0.0
            && self.min < self.medium
            && self.medium < self.max
            && self.max <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(BufferError::Thresholds)
        }
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            min: 0.85,
            medium: 0.92,
            max: 0.98,
        }
    }
}

/// A byte-capacity buffer shared by a fixed population of flows.
#[derive(Clone, Debug)]
pub struct SharedBuffer {
    capacity: u64,
    flows: Vec<ServiceFlow>,
    occupied: u64,
    pub thresholds: Thresholds,
}

impl SharedBuffer {
    /// Flows must be numbered 1..=N in order.
    pub fn new(
        capacity: u64,
        flows: Vec<ServiceFlow>,
        thresholds: Thresholds,
    ) -> Result<Self, BufferError> {
        if capacity == 0 {
            return Err(BufferError::ZeroCapacity);
        }
        thresholds.validate()?;
        for (position, flow) in flows.iter().enumerate() {
            let expected = FlowId::from_index(position);
            if flow.id != expected {
                return Err(BufferError::FlowOrder {
                    position,
                    found: flow.id,
                    expected,
                });
            }
            if !(flow.weight > 0.0) || !flow.weight.is_finite() {
                return Err(BufferError::Weight(flow.id));
            }
            if !(flow.phi > 0.0 && flow.phi <= 1.0) {
                return Err(BufferError::Phi(flow.id));
            }
        }
        let occupied = flows.iter().map(|f| f.queued_bytes).sum();
        Ok(SharedBuffer {
            capacity,
            flows,
            occupied,
            thresholds,
        })
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn occupied(&self) -> u64 {
        self.occupied
    }

    pub fn remaining(&self) -> u64 {
        self.capacity - self.occupied
    }

    pub fn flows(&self) -> &[ServiceFlow] {
        &self.flows
    }

    pub fn num_flows(&self) -> usize {
        self.flows.len()
    }

    pub fn flow(&self, id: FlowId) -> Option<&ServiceFlow> {
        id.0.checked_sub(1).and_then(|i| self.flows.get(i as usize))
    }

    pub fn set_channel(&mut self, id: FlowId, channel: ChannelState) -> Result<(), BufferError> {
        let flow = self.flow_mut(id)?;
        flow.channel = channel;
        Ok(())
    }

    pub fn set_priority(&mut self, id: FlowId, priority: PriorityClass) -> Result<(), BufferError> {
        self.flow_mut(id)?.priority = priority;
        Ok(())
    }

    fn flow_mut(&mut self, id: FlowId) -> Result<&mut ServiceFlow, BufferError> {
        id.0.checked_sub(1)
            .and_then(|i| self.flows.get_mut(i as usize))
            .ok_or(BufferError::UnknownFlow(id))
    }

    /// `Buffer_cur`: occupied / capacity.
    pub fn occupancy_rate(&self) -> f64 {
        self.occupied as f64 / self.capacity as f64
    }

    /// Fraction of the occupied bytes held by `flow`.
    pub fn occupancy_share(&self, flow: FlowId) -> Result<f64, BufferError> {
        let f = self.flow(flow).ok_or(BufferError::UnknownFlow(flow))?;
        if self.occupied == 0 {
            return Err(BufferError::Empty);
        }
        Ok(f.queued_bytes as f64 / self.occupied as f64)
    }

    pub fn is_empty(&self) -> bool {
        self.occupied == 0
    }

    pub fn fits(&self, length: u32) -> bool {
        u64::from(length) <= self.remaining()
    }

    /// Appends `packet` to the tail of its flow's queue.
    pub fn enqueue(&mut self, packet: Packet) -> Result<(), BufferError> {
        if !self.fits(packet.length) {
            return Err(BufferError::Overflow {
                length: packet.length,
                remaining: self.remaining(),
            });
        }
        let flow = self.flow_mut(packet.flow)?;
        flow.queued_bytes += u64::from(packet.length);
        flow.queue.push_back(packet);
        self.occupied += u64::from(packet.length);
        Ok(())
    }

    /// Removes the head packet of `flow`, for transmission or eviction alike.
    pub fn pop_head(&mut self, flow: FlowId) -> Option<Packet> {
        let f = self.flow_mut(flow).ok()?;
        let packet = f.queue.pop_front()?;
        f.queued_bytes -= u64::from(packet.length);
        self.occupied -= u64::from(packet.length);
        Some(packet)
    }

    /// Full rescan of the byte counters. Returns the first inconsistency found.
    pub fn audit(&self) -> Result<(), String> {
        let mut total = 0u64;
        for f in &self.flows {
            let sum: u64 = f.queue.iter().map(|p| u64::from(p.length)).sum();
            if sum != f.queued_bytes {
                return Err(format!(
                    "flow {}: counter {} != rescanned {}",
                    f.id, f.queued_bytes, sum
                ));
            }
            total += sum;
        }
        if total != self.occupied {
            return Err(format!("occupied {} != rescanned {}", self.occupied, total));
        }
        if self.occupied > self.capacity {
            return Err(format!(
                "occupied {} exceeds capacity {}",
                self.occupied, self.capacity
            ));
        }
        Ok(())
    }
}
