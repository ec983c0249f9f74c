//! Workload generation: ON-OFF packet sources and a two-state channel
//! process per flow.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, Geometric};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::buffer::{Channel, ChannelState};
use crate::types::{FlowId, SimTime};

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("unknown packet length configuration {0:?}")]
    UnknownLengths(String),
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: &str) -> TrafficError {
    TrafficError::Invalid {
        field,
        reason: reason.to_string(),
    }
}

/// Packet length distribution, in bytes. Uniform bounds are inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LengthConfig {
    Fixed(u32),
    Uniform(u32, u32),
}

impl LengthConfig {
    /// The eight configurations of the evaluation workload.
    pub const ALL: [LengthConfig; 8] = [
        LengthConfig::Fixed(64),
        LengthConfig::Fixed(65),
        LengthConfig::Fixed(128),
        LengthConfig::Fixed(129),
        LengthConfig::Fixed(256),
        LengthConfig::Uniform(64, 128),
        LengthConfig::Uniform(64, 256),
        LengthConfig::Uniform(64, 1500),
    ];

    pub fn mean(self) -> f64 {
        match self {
            LengthConfig::Fixed(n) => n as f64,
            LengthConfig::Uniform(a, b) => (a as f64 + b as f64) / 2.0,
        }
    }

    pub fn max(self) -> u32 {
        match self {
            LengthConfig::Fixed(n) => n,
            LengthConfig::Uniform(_, b) => b,
        }
    }

    pub fn min(self) -> u32 {
        match self {
            LengthConfig::Fixed(n) => n,
            LengthConfig::Uniform(a, _) => a,
        }
    }
}

impl fmt::Display for LengthConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LengthConfig::Fixed(n) => write!(f, "fixed{n}"),
            LengthConfig::Uniform(a, b) => write!(f, "rand{a}-{b}"),
        }
    }
}

impl FromStr for LengthConfig {
    type Err = TrafficError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || TrafficError::UnknownLengths(s.to_string());
        let parsed = if let Some(n) = s.strip_prefix("fixed") {
            LengthConfig::Fixed(n.parse().map_err(|_| unknown())?)
        } else if let Some(range) = s.strip_prefix("rand") {
            let (a, b) = range.split_once('-').ok_or_else(unknown)?;
            LengthConfig::Uniform(a.parse().map_err(|_| unknown())?, b.parse().map_err(|_| unknown())?)
        } else {
            return Err(unknown());
        };
        if parsed.min() == 0 || parsed.min() > parsed.max() {
            return Err(unknown());
        }
        Ok(parsed)
    }
}

impl Serialize for LengthConfig {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LengthConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn sample_packet_length<R: Rng + ?Sized>(cfg: LengthConfig, rng: &mut R) -> u32 {
    match cfg {
        LengthConfig::Fixed(n) => n,
        LengthConfig::Uniform(a, b) => rng.random_range(a..=b),
    }
}

/// Parameters of one ON-OFF source.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnOffParams {
    /// Mean ON dwell, in microseconds.
    pub mean_on_us: f64,
    /// Mean OFF dwell, in microseconds.
    pub mean_off_us: f64,
    /// Emission rate while ON, bytes per second.
    pub on_rate: f64,
    pub lengths: LengthConfig,
}

impl Default for OnOffParams {
    fn default() -> Self {
        OnOffParams {
            mean_on_us: 400_000.0,
            mean_off_us: 600_000.0,
            on_rate: 0.0,
            lengths: LengthConfig::Uniform(64, 1500),
        }
    }
}

impl OnOffParams {
    pub fn on_fraction(&self) -> f64 {
        self.mean_on_us / (self.mean_on_us + self.mean_off_us)
    }

    /// Long-run mean offered rate in bytes per second.
    pub fn mean_rate(&self) -> f64 {
        self.on_rate * self.on_fraction()
    }

    /// `on_rate == 0` is allowed and describes a silent source.
    pub fn validate(&self) -> Result<(), TrafficError> {
        if !(self.mean_on_us > 0.0 && self.mean_on_us.is_finite()) {
            return Err(invalid("mean_on_us", "must be positive"));
        }
        if !(self.mean_off_us > 0.0 && self.mean_off_us.is_finite()) {
            return Err(invalid("mean_off_us", "must be positive"));
        }
        if !(self.on_rate >= 0.0 && self.on_rate.is_finite()) {
            return Err(invalid("on_rate", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceState {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceEvent {
    /// The source switches to the given state.
    Toggle(SourceState),
    Emit { length: u32 },
}

/// ON-OFF source with exponential dwell times. While ON it behaves as a
/// constant-rate fluid cut into packets: each packet is emitted once its
/// bytes have been generated at `on_rate`. Generation progress carries over
/// OFF periods, so the long-run rate is exactly `on_rate * on_fraction`.
#[derive(Clone, Debug)]
pub struct OnOffSource {
    pub flow: FlowId,
    params: OnOffParams,
    state: SourceState,
    phase_end: SimTime,
    /// Point up to which generation has been accounted, in microseconds.
    gen_point: f64,
    /// Generation time still owed for `pending_len`, in microseconds.
    owed: f64,
    pending_len: u32,
    last_event: Option<SimTime>,
    on_dwell: Exp<f64>,
    off_dwell: Exp<f64>,
}

impl OnOffSource {
    /// Creates a source in its stationary state at `now`: ON with probability
    /// `on_fraction`, with a fresh exponential residual dwell.
    pub fn new<R: Rng + ?Sized>(
        flow: FlowId,
        params: OnOffParams,
        now: SimTime,
        rng: &mut R,
    ) -> Result<Self, TrafficError> {
        params.validate()?;
        if params.on_rate <= 0.0 {
            return Err(invalid("on_rate", "a source needs a positive rate"));
        }
        let on_dwell = Exp::new(1.0 / params.mean_on_us).map_err(|e| invalid("mean_on_us", &e.to_string()))?;
        let off_dwell = Exp::new(1.0 / params.mean_off_us).map_err(|e| invalid("mean_off_us", &e.to_string()))?;
        let mut src = OnOffSource {
            flow,
            params,
            state: SourceState::Off,
            phase_end: now,
            gen_point: now.0 as f64,
            owed: 0.0,
            pending_len: 0,
            last_event: None,
            on_dwell,
            off_dwell,
        };
        src.pending_len = sample_packet_length(params.lengths, rng);
        // Random phase inside the first packet.
        src.owed = src.generation_time(src.pending_len) * rng.random::<f64>();
        if rng.random_bool(params.on_fraction().clamp(0.0, 1.0)) {
            src.state = SourceState::On;
            src.phase_end = now + src.draw(SourceState::On, rng);
        } else {
            src.phase_end = now + src.draw(SourceState::Off, rng);
        }
        Ok(src)
    }

    pub fn state(&self) -> SourceState {
        self.state
    }

    pub fn params(&self) -> &OnOffParams {
        &self.params
    }

    fn generation_time(&self, length: u32) -> f64 {
        length as f64 / self.params.on_rate * 1e6
    }

    fn draw<R: Rng + ?Sized>(&self, state: SourceState, rng: &mut R) -> SimTime {
        let us = match state {
            SourceState::On => self.on_dwell.sample(rng),
            SourceState::Off => self.off_dwell.sample(rng),
        };
        SimTime((us.round() as u64).max(1))
    }

    /// Advances the source to its next event and returns it with its time.
    /// Event times are strictly increasing.
    pub fn next_event<R: Rng + ?Sized>(&mut self, rng: &mut R) -> (SimTime, SourceEvent) {
        let floor = self.last_event.map_or(0, |t| t.0 + 1);
        let (at, event) = match self.state {
            SourceState::On => {
                let due = self.gen_point + self.owed;
                let at = (due.round() as u64).max(floor);
                if at < self.phase_end.0 {
                    let length = self.pending_len;
                    self.gen_point = due;
                    self.pending_len = sample_packet_length(self.params.lengths, rng);
                    self.owed = self.generation_time(self.pending_len);
                    (SimTime(at), SourceEvent::Emit { length })
                } else {
                    let end = self.phase_end;
                    self.owed = (self.owed - (end.0 as f64 - self.gen_point)).max(0.0);
                    self.state = SourceState::Off;
                    self.phase_end = end + self.draw(SourceState::Off, rng);
                    (end, SourceEvent::Toggle(SourceState::Off))
                }
            }
            SourceState::Off => {
                let start = self.phase_end;
                self.state = SourceState::On;
                self.gen_point = start.0 as f64;
                self.phase_end = start + self.draw(SourceState::On, rng);
                (start, SourceEvent::Toggle(SourceState::On))
            }
        };
        let at = SimTime(at.0.max(floor));
        self.last_event = Some(at);
        (at, event)
    }
}

/// Two-state (Gilbert-Elliott style) channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelProcess {
    /// Per-step probability of Good -> Bad.
    pub p_gb: f64,
    /// Per-step probability of Bad -> Good.
    pub p_bg: f64,
    pub r_good: f64,
    pub r_bad: f64,
    pub step_us: u64,
}

impl Default for ChannelProcess {
    fn default() -> Self {
        ChannelProcess {
            p_gb: 0.1,
            p_bg: 0.3,
            r_good: 1.0,
            r_bad: 0.25,
            step_us: 1_000,
        }
    }
}

impl ChannelProcess {
    /// A channel that never leaves Good at full rate.
    pub fn ideal() -> Self {
        ChannelProcess {
            p_gb: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        if !(0.0..=1.0).contains(&self.p_gb) {
            return Err(invalid("p_gb", "must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.p_bg) {
            return Err(invalid("p_bg", "must be in [0, 1]"));
        }
        if !(self.r_good > 0.0 && self.r_good <= 1.0) {
            return Err(invalid("r_good", "must be in (0, 1]"));
        }
        if !(self.r_bad > 0.0 && self.r_bad < self.r_good) {
            return Err(invalid("r_bad", "must be in (0, r_good)"));
        }
        if self.step_us == 0 {
            return Err(invalid("step_us", "must be positive"));
        }
        Ok(())
    }

    pub fn state_of(&self, channel: Channel) -> ChannelState {
        match channel {
            Channel::Good => ChannelState::good(self.r_good),
            Channel::Bad => ChannelState::bad(self.r_bad),
        }
    }

    /// Long-run fraction of steps spent Good.
    pub fn stationary_good(&self) -> f64 {
        if self.p_gb + self.p_bg == 0.0 {
            1.0
        } else {
            self.p_bg / (self.p_gb + self.p_bg)
        }
    }

    /// Draws a channel state from the stationary distribution.
    pub fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Channel {
        if rng.random_bool(self.stationary_good()) {
            Channel::Good
        } else {
            Channel::Bad
        }
    }

    /// One Markov step from `from`.
    pub fn channel_step<R: Rng + ?Sized>(&self, from: Channel, rng: &mut R) -> ChannelState {
        let next = match from {
            Channel::Good if rng.random_bool(self.p_gb) => Channel::Bad,
            Channel::Bad if rng.random_bool(self.p_bg) => Channel::Good,
            same => same,
        };
        self.state_of(next)
    }

    /// Time spent in `state` before the next transition: a geometric number
    /// of steps, which is how many `channel_step` calls it would take.
    /// `None` when the state is absorbing.
    pub fn sojourn<R: Rng + ?Sized>(&self, state: Channel, rng: &mut R) -> Option<SimTime> {
        let p = match state {
            Channel::Good => self.p_gb,
            Channel::Bad => self.p_bg,
        };
        if p <= 0.0 {
            return None;
        }
        let failures = Geometric::new(p).ok()?.sample(rng);
        Some(SimTime((failures + 1).saturating_mul(self.step_us)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_round_trip() {
        let names = [
            "fixed64", "fixed65", "fixed128", "fixed129", "fixed256", "rand64-128", "rand64-256",
            "rand64-1500",
        ];
        for (name, cfg) in names.iter().zip(LengthConfig::ALL) {
            assert_eq!(name.parse::<LengthConfig>().unwrap(), cfg);
            assert_eq!(cfg.to_string(), *name);
        }
        assert!("fixed0".parse::<LengthConfig>().is_err());
        assert!("rand9-3".parse::<LengthConfig>().is_err());
        assert!("jumbo".parse::<LengthConfig>().is_err());
    }

    #[test]
    fn fixed_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_packet_length(LengthConfig::Fixed(64), &mut rng), 64);
    }

    #[test]
    fn uniform_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let sum: u64 = (0..n)
            .map(|_| u64::from(sample_packet_length(LengthConfig::Uniform(64, 1500), &mut rng)))
            .sum();
        let mean = sum as f64 / n as f64;
        assert!((mean - 782.0).abs() / 782.0 < 0.02, "mean {mean}");
    }

    fn params(rate: f64) -> OnOffParams {
        OnOffParams {
            on_rate: rate,
            ..Default::default()
        }
    }

    #[test]
    fn off_toggle_turns_on_then_emits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Find a seed-start that begins OFF.
        let mut src = loop {
            let s = OnOffSource::new(FlowId(1), params(1e6), SimTime::ZERO, &mut rng).unwrap();
            if s.state() == SourceState::Off {
                break s;
            }
        };
        let (t_on, ev) = src.next_event(&mut rng);
        assert_eq!(ev, SourceEvent::Toggle(SourceState::On));
        assert_eq!(src.state(), SourceState::On);
        let (t_next, _) = src.next_event(&mut rng);
        assert!(t_next > t_on);
    }

    /// Offered bytes over `horizon` seconds.
    fn offered(src: &mut OnOffSource, rng: &mut ChaCha8Rng, horizon: f64) -> u64 {
        let end = SimTime::from_secs_f64(horizon);
        let mut bytes = 0;
        loop {
            let (t, ev) = src.next_event(rng);
            if t >= end {
                return bytes;
            }
            if let SourceEvent::Emit { length } = ev {
                bytes += u64::from(length);
            }
        }
    }

    #[test]
    fn long_run_rate_matches_renewal_mean() {
        // Short dwell means give enough ON/OFF cycles in 60 s for the sample
        // average to settle; with 400/600 ms the cycle count alone leaves a
        // ~13% spread.
        let p = OnOffParams {
            mean_on_us: 4_000.0,
            mean_off_us: 6_000.0,
            on_rate: 250_000.0,
            lengths: LengthConfig::Uniform(64, 1500),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut src = OnOffSource::new(FlowId(1), p, SimTime::ZERO, &mut rng).unwrap();
        let rate = offered(&mut src, &mut rng, 60.0) as f64 / 60.0;
        let expected = p.mean_rate();
        assert!((rate - expected).abs() / expected < 0.03, "rate {rate} vs {expected}");
    }

    #[test]
    fn two_to_one_rate_split() {
        let base = OnOffParams {
            mean_on_us: 4_000.0,
            mean_off_us: 6_000.0,
            on_rate: 100_000.0,
            lengths: LengthConfig::Fixed(128),
        };
        let mut fast_total = 0;
        let mut slow_total = 0;
        for flow in 1..=16u32 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + flow as u64);
            let p = OnOffParams {
                on_rate: if flow <= 8 { 2.0 * base.on_rate } else { base.on_rate },
                ..base
            };
            let mut src = OnOffSource::new(FlowId(flow), p, SimTime::ZERO, &mut rng).unwrap();
            let b = offered(&mut src, &mut rng, 60.0);
            if flow <= 8 {
                fast_total += b;
            } else {
                slow_total += b;
            }
        }
        let ratio = fast_total as f64 / slow_total as f64;
        assert!((ratio - 2.0).abs() / 2.0 < 0.05, "ratio {ratio}");
    }

    #[test]
    fn channel_absorbing_good() {
        let ch = ChannelProcess {
            p_gb: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut state = Channel::Good;
        for _ in 0..10_000 {
            let s = ch.channel_step(state, &mut rng);
            assert_eq!(s, ChannelState::good(1.0));
            state = s.state;
        }
        assert_eq!(ch.sojourn(Channel::Good, &mut rng), None);
    }

    fn good_fraction(ch: ChannelProcess, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = Channel::Good;
        let steps = 100_000;
        let mut good = 0;
        for _ in 0..steps {
            state = ch.channel_step(state, &mut rng).state;
            if state == Channel::Good {
                good += 1;
            }
        }
        good as f64 / steps as f64
    }

    #[test]
    fn channel_stationary_fractions() {
        let even = ChannelProcess {
            p_gb: 0.5,
            p_bg: 0.5,
            ..Default::default()
        };
        assert!((good_fraction(even, 9) - 0.5).abs() < 0.02 * 0.5);
        let skewed = ChannelProcess {
            p_gb: 0.1,
            p_bg: 0.3,
            ..Default::default()
        };
        assert!((skewed.stationary_good() - 0.75).abs() < 1e-12);
        assert!((good_fraction(skewed, 9) - 0.75).abs() < 0.02 * 0.75);
    }

    #[test]
    fn sojourn_mean_matches_step_model() {
        let ch = ChannelProcess::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 50_000;
        let total: u64 = (0..n).map(|_| ch.sojourn(Channel::Good, &mut rng).unwrap().0).sum();
        let mean_steps = total as f64 / n as f64 / ch.step_us as f64;
        assert!((mean_steps - 1.0 / ch.p_gb).abs() / (1.0 / ch.p_gb) < 0.02);
    }

    #[test]
    fn channel_validation() {
        assert!(ChannelProcess::default().validate().is_ok());
        let bad = ChannelProcess {
            r_bad: 1.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(TrafficError::Invalid { field: "r_bad", .. })));
    }

    proptest! {
        #[test]
        fn lengths_within_bounds(idx in 0usize..8, seed in any::<u64>()) {
            let cfg = LengthConfig::ALL[idx];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..200 {
                let l = sample_packet_length(cfg, &mut rng);
                prop_assert!(l >= cfg.min() && l <= cfg.max());
            }
        }

        #[test]
        fn source_events_strictly_increase_and_replay(seed in any::<u64>(), rate in 1_000.0f64..5e7, idx in 0usize..8) {
            let p = OnOffParams {
                mean_on_us: 2_000.0,
                mean_off_us: 3_000.0,
                on_rate: rate,
                lengths: LengthConfig::ALL[idx],
            };
            let trace = |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut src = OnOffSource::new(FlowId(3), p, SimTime::ZERO, &mut rng).unwrap();
                (0..300).map(|_| src.next_event(&mut rng)).collect::<Vec<_>>()
            };
            let a = trace(seed);
            for w in a.windows(2) {
                prop_assert!(w[1].0 > w[0].0);
            }
            prop_assert_eq!(a, trace(seed));
        }
    }
}
