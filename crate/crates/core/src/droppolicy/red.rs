//! Random Early Detection over the shared buffer's byte occupancy
//! (Floyd & Jacobson, 1993).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DropReason, PolicyDecision, PolicyError};
use crate::buffer::SharedBuffer;
use crate::types::{Packet, SimTime};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedConfig {
    /// EWMA gain.
    pub w_q: f64,
    /// Average-queue thresholds, in bytes.
    pub min_th: f64,
    pub max_th: f64,
    pub max_p: f64,
}

impl RedConfig {
    /// Standard parameters scaled to a buffer of `capacity` bytes.
    pub fn for_capacity(capacity: u64) -> Self {
        RedConfig {
            w_q: 0.002,
            min_th: 0.25 * capacity as f64,
            max_th: 0.75 * capacity as f64,
            max_p: 0.1,
        }
    }

    pub fn validate(&self, capacity: u64) -> Result<(), PolicyError> {
        let bad = |field, reason: &str| {
            Err(PolicyError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.w_q > 0.0 && self.w_q <= 1.0) {
            return bad("w_q", "must be in (0, 1]");
        }
        if !(self.min_th >= 0.0 && self.min_th < self.max_th) {
            return bad("min_th", "must be non-negative and below max_th");
        }
        if self.max_th > capacity as f64 {
            return bad("max_th", "must not exceed the buffer capacity");
        }
        if !(self.max_p > 0.0 && self.max_p <= 1.0) {
            return bad("max_p", "must be in (0, 1]");
        }
        Ok(())
    }
}

/// Running RED state.
#[derive(Clone, Debug, PartialEq)]
pub struct RedState {
    /// Average queue size in bytes.
    pub avg: f64,
    /// Arrivals since the last drop while between the thresholds; -1 when
    /// the average is below `min_th`.
    pub count: i64,
    idle_since: Option<SimTime>,
    /// Time to transmit a typical packet, used to age the average across
    /// idle periods.
    idle_slot: SimTime,
}

impl RedState {
    pub fn new(idle_slot: SimTime) -> Self {
        RedState {
            avg: 0.0,
            count: -1,
            idle_since: None,
            idle_slot: SimTime(idle_slot.0.max(1)),
        }
    }

    pub fn mark_idle(&mut self, now: SimTime) {
        self.idle_since = Some(now);
    }

    fn update_average(&mut self, occupied: u64, now: SimTime, w_q: f64) {
        match self.idle_since {
            Some(since) if occupied == 0 => {
                let slots = now.saturating_sub(since).0 as f64 / self.idle_slot.0 as f64;
                self.avg *= (1.0 - w_q).powf(slots);
                self.idle_since = Some(now);
            }
            _ => {
                self.avg = (1.0 - w_q) * self.avg + w_q * occupied as f64;
                if occupied > 0 {
                    self.idle_since = None;
                }
            }
        }
    }
}

/// `p_a = p_b / (1 - count * p_b)` with
/// `p_b = max_p * (avg - min_th) / (max_th - min_th)`, capped at 1.
pub fn red_drop_probability(avg: f64, count: i64, cfg: &RedConfig) -> f64 {
    let pb = cfg.max_p * (avg - cfg.min_th) / (cfg.max_th - cfg.min_th);
    let denom = 1.0 - count as f64 * pb;
    if denom <= 0.0 {
        1.0
    } else {
        (pb / denom).clamp(0.0, 1.0)
    }
}

pub fn red_admit<R: Rng + ?Sized>(
    packet: &Packet,
    buffer: &SharedBuffer,
    state: &mut RedState,
    cfg: &RedConfig,
    now: SimTime,
    rng: &mut R,
) -> PolicyDecision {
    state.update_average(buffer.occupied(), now, cfg.w_q);
    if u64::from(packet.length) > buffer.capacity() {
        return PolicyDecision::drop(DropReason::Oversize);
    }

    let early_drop = if state.avg < cfg.min_th {
        state.count = -1;
        false
    } else if state.avg >= cfg.max_th {
        true
    } else {
        state.count += 1;
        let pa = red_drop_probability(state.avg, state.count, cfg);
        rng.random::<f64>() < pa
    };

    if early_drop {
        state.count = 0;
        PolicyDecision::drop(DropReason::Policy)
    } else if !buffer.fits(packet.length) {
        state.count = 0;
        PolicyDecision::drop(DropReason::BufferFull)
    } else {
        PolicyDecision::Admit
    }
}
