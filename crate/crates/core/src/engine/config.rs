//! Simulation configuration: the JSON document accepted by the runner.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::droppolicy::{PafdConfig, PolicyError, RedConfig};
use crate::sched::SchedulerKind;
use crate::traffic::{ChannelProcess, LengthConfig, OnOffParams, TrafficError};
use crate::types::{PriorityClass, SimTime};

/// A validation failure, naming the offending field.
#[derive(Clone, Debug, Error, PartialEq)]
#[error("invalid {field}: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            reason: reason.into(),
        }
    }

    fn nested(prefix: &str, err: ConfigError) -> Self {
        ConfigError::new(format!("{prefix}.{}", err.field), err.reason)
    }
}

impl From<PolicyError> for ConfigError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::InvalidConfig { field, reason } => ConfigError::new(format!("policy.{field}"), reason),
            other => ConfigError::new("policy", other.to_string()),
        }
    }
}

impl From<TrafficError> for ConfigError {
    fn from(e: TrafficError) -> Self {
        match e {
            TrafficError::Invalid { field, reason } => ConfigError::new(field, reason),
            other => ConfigError::new("lengths", other.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RedSpec {
    pub w_q: f64,
    /// Bytes; defaults to a quarter of the buffer.
    pub min_th: Option<f64>,
    /// Bytes; defaults to three quarters of the buffer.
    pub max_th: Option<f64>,
    pub max_p: f64,
}

impl Default for RedSpec {
    fn default() -> Self {
        let base = RedConfig::for_capacity(0);
        RedSpec {
            w_q: base.w_q,
            min_th: None,
            max_th: None,
            max_p: base.max_p,
        }
    }
}

impl RedSpec {
    pub fn resolve(&self, capacity: u64) -> RedConfig {
        let base = RedConfig::for_capacity(capacity);
        RedConfig {
            w_q: self.w_q,
            min_th: self.min_th.unwrap_or(base.min_th),
            max_th: self.max_th.unwrap_or(base.max_th),
            max_p: self.max_p,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicySpec {
    Pafd(PafdConfig),
    PafdDs(PafdConfig),
    Red(RedSpec),
    Td,
}

impl PolicySpec {
    pub fn kind(&self) -> PolicyKind {
        match self {
            PolicySpec::Pafd(_) => PolicyKind::Pafd,
            PolicySpec::PafdDs(_) => PolicyKind::PafdDs,
            PolicySpec::Red(_) => PolicyKind::Red,
            PolicySpec::Td => PolicyKind::Td,
        }
    }

    /// PAFD parameters with the DiffServ switch matching the variant.
    pub fn pafd(&self) -> Option<PafdConfig> {
        match *self {
            PolicySpec::Pafd(cfg) => Some(PafdConfig { diffserv: false, ..cfg }),
            PolicySpec::PafdDs(cfg) => Some(PafdConfig { diffserv: true, ..cfg }),
            _ => None,
        }
    }

    /// Builds a policy of `kind`, reusing this spec's parameters where the
    /// family matches.
    pub fn with_kind(&self, kind: PolicyKind) -> PolicySpec {
        let pafd = self.pafd().unwrap_or_default();
        match kind {
            PolicyKind::Pafd => PolicySpec::Pafd(pafd),
            PolicyKind::PafdDs => PolicySpec::PafdDs(pafd),
            PolicyKind::Red => match self {
                PolicySpec::Red(r) => PolicySpec::Red(*r),
                _ => PolicySpec::Red(RedSpec::default()),
            },
            PolicyKind::Td => PolicySpec::Td,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    Pafd,
    PafdDs,
    Red,
    Td,
}

impl PolicyKind {
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Pafd => "PAFD",
            PolicyKind::PafdDs => "DSPAFD",
            PolicyKind::Red => "RED",
            PolicyKind::Td => "TD",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Pafd => "pafd",
            PolicyKind::PafdDs => "pafd-ds",
            PolicyKind::Red => "red",
            PolicyKind::Td => "td",
        }
    }
}

/// A (policy, scheduler) pair such as `PAFD-BCF`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Combo {
    pub policy: PolicyKind,
    pub scheduler: SchedulerKind,
}

impl Combo {
    pub const fn new(policy: PolicyKind, scheduler: SchedulerKind) -> Self {
        Combo { policy, scheduler }
    }

    /// The six policy/scheduler combinations of the evaluation.
    pub fn paper_six() -> Vec<Combo> {
        use PolicyKind::*;
        use SchedulerKind::*;
        vec![
            Combo::new(Pafd, Bcf),
            Combo::new(Pafd, Lqf),
            Combo::new(Red, Bcf),
            Combo::new(Red, Lqf),
            Combo::new(Td, Bcf),
            Combo::new(Td, Lqf),
        ]
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.policy.label(), self.scheduler.label())
    }
}

impl FromStr for Combo {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConfigError::new("combos", format!("unknown combination {s:?}"));
        let (p, sch) = s.rsplit_once('-').ok_or_else(bad)?;
        let policy = match p.to_ascii_uppercase().as_str() {
            "PAFD" => PolicyKind::Pafd,
            "DSPAFD" | "PAFD-DS" | "DS-PAFD" => PolicyKind::PafdDs,
            "RED" => PolicyKind::Red,
            "TD" => PolicyKind::Td,
            _ => return Err(bad()),
        };
        let scheduler = sch.parse().map_err(|_| bad())?;
        Ok(Combo { policy, scheduler })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    /// QoS weight `u`.
    pub weight: f64,
    /// GPS weight; when omitted for every flow it is `weight / sum(weight)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    /// Contracted class. Flows without one are best effort.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<PriorityClass>,
    pub source: OnOffParams,
    /// Overrides the run-wide channel process.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelProcess>,
}

fn default_duration() -> u64 {
    60_000_000
}

fn default_load_window() -> u64 {
    100_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_duration")]
    pub duration_us: u64,
    /// Excluded from metrics; defaults to 10% of the duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_us: Option<u64>,
    /// Nominal link rate in bytes per second.
    pub link_rate: f64,
    /// Shared buffer size in bytes.
    pub buffer_capacity: u64,
    pub policy: PolicySpec,
    pub scheduler: SchedulerKind,
    #[serde(default)]
    pub channel: ChannelProcess,
    pub flows: Vec<FlowSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Sliding window for the offered-load estimate.
    #[serde(default = "default_load_window")]
    pub load_window_us: u64,
}

pub const DEFAULT_LINK_RATE: f64 = 1_250_000.0;
pub const DEFAULT_BUFFER: u64 = 64_000;

impl SimConfig {
    /// The default 16-flow experiment: flows 1-8 have twice the rate and
    /// twice the weight of flows 9-16, scaled to `load` times the link rate.
    pub fn paper_default(load: f64, policy: PolicySpec, scheduler: SchedulerKind) -> Self {
        let flows = (1..=16)
            .map(|i| {
                let fast = i <= 8;
                FlowSpec {
                    weight: if fast { 2.0 } else { 1.0 },
                    phi: None,
                    priority: None,
                    source: OnOffParams {
                        on_rate: if fast { 2.0 } else { 1.0 },
                        ..OnOffParams::default()
                    },
                    channel: None,
                }
            })
            .collect();
        let mut cfg = SimConfig {
            duration_us: default_duration(),
            warmup_us: None,
            link_rate: DEFAULT_LINK_RATE,
            buffer_capacity: DEFAULT_BUFFER,
            policy,
            scheduler,
            channel: ChannelProcess::default(),
            flows,
            seed: 0,
            load_window_us: default_load_window(),
        };
        cfg.scale_to_load(load).expect("default flows have traffic");
        cfg
    }

    /// Marks alternate flows (odd ids) High and the rest Low.
    pub fn with_alternating_priorities(mut self) -> Self {
        for (i, f) in self.flows.iter_mut().enumerate() {
            f.priority = Some(if i % 2 == 0 { PriorityClass::High } else { PriorityClass::Low });
        }
        self
    }

    pub fn with_lengths(mut self, lengths: LengthConfig) -> Self {
        for f in &mut self.flows {
            f.source.lengths = lengths;
        }
        self
    }

    pub fn duration(&self) -> SimTime {
        SimTime(self.duration_us)
    }

    pub fn warmup(&self) -> SimTime {
        SimTime(self.warmup_us.unwrap_or(self.duration_us / 10))
    }

    /// Long-run offered bytes per second over all flows.
    pub fn offered_rate(&self) -> f64 {
        self.flows.iter().map(|f| f.source.mean_rate()).sum()
    }

    /// Offered load relative to the link rate.
    pub fn offered_load(&self) -> f64 {
        self.offered_rate() / self.link_rate
    }

    /// Rescales every source's ON rate so the total offered load becomes `load`.
    pub fn scale_to_load(&mut self, load: f64) -> Result<(), ConfigError> {
        if !(load > 0.0 && load.is_finite()) {
            return Err(ConfigError::new("load", "must be positive"));
        }
        let current = self.offered_rate();
        if !(current > 0.0) {
            return Err(ConfigError::new("flows", "no traffic to scale"));
        }
        let factor = load * self.link_rate / current;
        for f in &mut self.flows {
            f.source.on_rate *= factor;
        }
        Ok(())
    }

    /// GPS weights, explicit or derived from the QoS weights.
    pub fn phis(&self) -> Vec<f64> {
        if self.flows.iter().all(|f| f.phi.is_none()) {
            let total: f64 = self.flows.iter().map(|f| f.weight).sum();
            self.flows.iter().map(|f| f.weight / total).collect()
        } else {
            self.flows.iter().map(|f| f.phi.unwrap_or(0.0)).collect()
        }
    }

    pub fn combo(&self) -> Combo {
        Combo::new(self.policy.kind(), self.scheduler)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.duration_us == 0 {
            return Err(ConfigError::new("duration_us", "must be positive"));
        }
        if self.warmup().0 >= self.duration_us {
            return Err(ConfigError::new("warmup_us", "must be shorter than the duration"));
        }
        if !(self.link_rate > 0.0 && self.link_rate.is_finite()) {
            return Err(ConfigError::new("link_rate", "must be positive"));
        }
        if self.buffer_capacity == 0 {
            return Err(ConfigError::new("buffer_capacity", "must be positive"));
        }
        if self.load_window_us == 0 {
            return Err(ConfigError::new("load_window_us", "must be positive"));
        }
        if self.flows.is_empty() {
            return Err(ConfigError::new("flows", "at least one flow is required"));
        }
        self.channel
            .validate()
            .map_err(|e| ConfigError::nested("channel", e.into()))?;
        for (i, f) in self.flows.iter().enumerate() {
            let prefix = format!("flows[{i}]");
            if !(f.weight > 0.0 && f.weight.is_finite()) {
                return Err(ConfigError::new(format!("{prefix}.weight"), "must be positive"));
            }
            f.source
                .validate()
                .map_err(|e| ConfigError::nested(&format!("{prefix}.source"), e.into()))?;
            if let Some(ch) = &f.channel {
                ch.validate()
                    .map_err(|e| ConfigError::nested(&format!("{prefix}.channel"), e.into()))?;
            }
        }
        let some_phi = self.flows.iter().filter(|f| f.phi.is_some()).count();
        if some_phi != 0 && some_phi != self.flows.len() {
            return Err(ConfigError::new("phi", "give phi for every flow or for none"));
        }
        let phis = self.phis();
        if let Some(i) = phis.iter().position(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(ConfigError::new("phi", format!("flow {} has phi outside (0, 1]", i + 1)));
        }
        let sum: f64 = phis.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ConfigError::new("phi", format!("weights sum to {sum}, expected 1")));
        }
        match &self.policy {
            PolicySpec::Pafd(c) | PolicySpec::PafdDs(c) => c.validate()?,
            PolicySpec::Red(r) => r.resolve(self.buffer_capacity).validate(self.buffer_capacity)?,
            PolicySpec::Td => {}
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| ConfigError::new(json_field(&e), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Best-effort name of the field a serde_json error refers to.
fn json_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    for marker in ["missing field `", "unknown field `", "unknown variant `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "config".to_string()
}
