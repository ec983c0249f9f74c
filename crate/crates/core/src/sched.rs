//! Link schedulers and the GPS ideal-share reference.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buffer::SharedBuffer;
use crate::types::FlowId;

#[derive(Debug, Error, PartialEq)]
pub enum SchedError {
    #[error("no backlogged flows")]
    NoBacklog,
    #[error("phi must sum to 1 (got {0})")]
    PhiSum(f64),
    #[error("backlogged flow {0} has no phi")]
    UnknownFlow(FlowId),
    #[error("unknown scheduler {0:?}")]
    UnknownName(String),
}

/// Argmax over non-empty flows with ties to the lowest id.
fn argmax_nonempty<F>(buffer: &SharedBuffer, key: F) -> Option<FlowId>
where
    F: Fn(&crate::buffer::ServiceFlow) -> f64,
{
    let mut best: Option<(FlowId, f64)> = None;
    for f in buffer.flows().iter().filter(|f| !f.is_empty()) {
        let k = key(f);
        if best.is_none_or(|(_, b)| k > b) {
            best = Some((f.id, k));
        }
    }
    best.map(|(id, _)| id)
}

/// Longest Queue First on the weighted queue length `u_i * queued_bytes`.
pub fn lqf_next(buffer: &SharedBuffer) -> Option<FlowId> {
    argmax_nonempty(buffer, |f| f.weight * f.queued_bytes() as f64)
}

/// Best Channel First: highest current channel rate multiplier.
pub fn bcf_next(buffer: &SharedBuffer) -> Option<FlowId> {
    argmax_nonempty(buffer, |f| f.channel.rate_multiplier)
}

/// Round-robin position: the flow served last.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RoundRobin {
    pub last: Option<FlowId>,
}

/// Next non-empty flow after the cursor in cyclic id order.
pub fn rr_next(state: &mut RoundRobin, buffer: &SharedBuffer) -> Option<FlowId> {
    let n = buffer.num_flows();
    if n == 0 {
        return None;
    }
    let start = state.last.map_or(0, |id| id.index() + 1);
    let flows = buffer.flows();
    let next = (0..n)
        .map(|k| (start + k) % n)
        .find(|&i| !flows[i].is_empty())
        .map(FlowId::from_index)?;
    state.last = Some(next);
    Some(next)
}

/// Bandwidth each backlogged flow gets under GPS:
/// `phi_i / sum_{j backlogged} phi_j * bandwidth`, zero for idle flows.
///
/// `phi[i]` belongs to flow `i + 1` and must sum to 1.
pub fn gps_ideal_share(
    phi: &[f64],
    backlogged: &BTreeSet<FlowId>,
    bandwidth: f64,
) -> Result<Vec<f64>, SchedError> {
    let total: f64 = phi.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SchedError::PhiSum(total));
    }
    if backlogged.is_empty() {
        return Err(SchedError::NoBacklog);
    }
    let mut active = 0.0;
    for id in backlogged {
        active += phi.get(id.index()).ok_or(SchedError::UnknownFlow(*id))?;
    }
    Ok(phi
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if backlogged.contains(&FlowId::from_index(i)) {
                p / active * bandwidth
            } else {
                0.0
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Bcf,
    Lqf,
    Rr,
}

impl SchedulerKind {
    pub fn label(self) -> &'static str {
        match self {
            SchedulerKind::Bcf => "BCF",
            SchedulerKind::Lqf => "LQF",
            SchedulerKind::Rr => "RR",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SchedulerKind {
    type Err = SchedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bcf" => Ok(SchedulerKind::Bcf),
            "lqf" => Ok(SchedulerKind::Lqf),
            "rr" => Ok(SchedulerKind::Rr),
            _ => Err(SchedError::UnknownName(s.to_string())),
        }
    }
}

/// A scheduler instance owned by one simulation.
#[derive(Clone, Debug)]
pub struct Scheduler {
    kind: SchedulerKind,
    rr: RoundRobin,
}

impl Scheduler {
    pub fn new(kind: SchedulerKind) -> Self {
        Scheduler {
            kind,
            rr: RoundRobin::default(),
        }
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    pub fn next(&mut self, buffer: &SharedBuffer) -> Option<FlowId> {
        match self.kind {
            SchedulerKind::Bcf => bcf_next(buffer),
            SchedulerKind::Lqf => lqf_next(buffer),
            SchedulerKind::Rr => rr_next(&mut self.rr, buffer),
        }
    }
}
