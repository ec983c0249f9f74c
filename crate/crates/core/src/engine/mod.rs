//! Discrete-event simulation of one shared-buffer output link.
//!
//! Per-flow ON-OFF sources feed an admission policy guarding a shared byte
//! buffer; a scheduler picks which flow's head packet goes on the link next.
//! Each flow sees its own two-state channel, which scales the link rate for
//! packets it sends. A run is single-threaded and is a pure function of its
//! configuration (seed included).

use std::collections::{HashMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod config;
mod events;
mod sweep;

pub use config::{
    Combo, ConfigError, FlowSpec, PolicyKind, PolicySpec, RedSpec, SimConfig, DEFAULT_BUFFER,
    DEFAULT_LINK_RATE,
};
pub use events::EventQueue;
pub use sweep::{sweep, SweepCell};

use crate::buffer::{Channel, ServiceFlow, SharedBuffer, Thresholds};
use crate::droppolicy::{apply_decision, classify_sla, DropReason, Policy, PolicyDecision, RedState};
use crate::metrics::{
    fairness_index, throughput_effectiveness, DelayStats, FlowReport, RunReport, Totals,
};
use crate::sched::Scheduler;
use crate::traffic::{ChannelProcess, OnOffSource, SourceEvent};
use crate::types::{FlowId, Packet, PacketId, PriorityClass, SimTime};

const STREAM_SOURCE: u64 = 1;
const STREAM_CHANNEL: u64 = 2;
const STREAM_POLICY: u64 = 3;

/// Independent random stream for one purpose and flow of a run.
fn stream_rng(seed: u64, purpose: u64, flow: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | u64::from(flow));
    rng
}

#[derive(Clone, Copy, Debug)]
enum Event {
    Source(FlowId, SourceEvent),
    TransmissionComplete,
    ChannelTransition(FlowId),
}

#[derive(Clone, Copy, Debug)]
struct InFlight {
    packet: Packet,
}

#[derive(Default, Clone)]
struct FlowStats {
    arrivals: u64,
    admitted: u64,
    dropped: u64,
    evicted: u64,
    delivered: u64,
    delivered_bytes: u64,
    delay: DelayStats,
}

/// Offered bytes over a trailing window.
struct LoadMeter {
    window: SimTime,
    capacity_bytes: f64,
    arrivals: VecDeque<(SimTime, u64)>,
    bytes: u64,
}

impl LoadMeter {
    fn new(window: SimTime, link_rate: f64) -> Self {
        LoadMeter {
            window,
            capacity_bytes: link_rate * window.as_secs_f64(),
            arrivals: VecDeque::new(),
            bytes: 0,
        }
    }

    fn record(&mut self, now: SimTime, bytes: u64) {
        self.arrivals.push_back((now, bytes));
        self.bytes += bytes;
        while let Some(&(t, b)) = self.arrivals.front() {
            if t.0 + self.window.0 > now.0 {
                break;
            }
            self.arrivals.pop_front();
            self.bytes -= b;
        }
    }

    fn load(&self) -> f64 {
        self.bytes as f64 / self.capacity_bytes
    }
}

struct Simulation {
    now: SimTime,
    end: SimTime,
    warmup: SimTime,
    link_rate: f64,
    events: EventQueue<Event>,
    buffer: SharedBuffer,
    policy: Policy,
    scheduler: Scheduler,
    sources: Vec<Option<OnOffSource>>,
    source_rngs: Vec<ChaCha8Rng>,
    channels: Vec<ChannelProcess>,
    channel_rngs: Vec<ChaCha8Rng>,
    policy_rng: ChaCha8Rng,
    link: Option<InFlight>,
    meter: LoadMeter,
    next_packet: PacketId,
    stats: Vec<FlowStats>,
    totals: Totals,
}

impl Simulation {
    fn new(cfg: &SimConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let n = cfg.flows.len();
        let phis = cfg.phis();
        let sla: HashMap<FlowId, PriorityClass> = cfg
            .flows
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.priority.map(|p| (FlowId::from_index(i), p)))
            .collect();

        let mut flows = Vec::with_capacity(n);
        for (i, f) in cfg.flows.iter().enumerate() {
            let id = FlowId::from_index(i);
            // Classification is per flow, so any packet of the flow will do.
            let priority = classify_sla(&Packet::new(0, id, 1, SimTime::ZERO), &sla);
            flows.push(ServiceFlow::new(id, f.weight, phis[i], priority));
        }

        let pafd = cfg.policy.pafd();
        let thresholds = match pafd {
            Some(p) => Thresholds {
                min: p.buf_min.max(f64::MIN_POSITIVE),
                medium: p.buf_medium,
                max: p.buf_max,
            },
            None => Thresholds::default(),
        };
        let buffer = SharedBuffer::new(cfg.buffer_capacity, flows, thresholds)
            .map_err(|e| ConfigError::new("flows", e.to_string()))?;

        let policy = match &cfg.policy {
            PolicySpec::Pafd(_) | PolicySpec::PafdDs(_) => Policy::Pafd(pafd.expect("pafd variant")),
            PolicySpec::Red(spec) => {
                let mean_len: f64 =
                    cfg.flows.iter().map(|f| f.source.lengths.mean()).sum::<f64>() / n as f64;
                let slot = SimTime::from_secs_f64(mean_len / cfg.link_rate);
                Policy::Red {
                    cfg: spec.resolve(cfg.buffer_capacity),
                    state: RedState::new(slot),
                }
            }
            PolicySpec::Td => Policy::TailDrop,
        };

        let mut sim = Simulation {
            now: SimTime::ZERO,
            end: cfg.duration(),
            warmup: cfg.warmup(),
            link_rate: cfg.link_rate,
            events: EventQueue::new(),
            buffer,
            policy,
            scheduler: Scheduler::new(cfg.scheduler),
            sources: Vec::with_capacity(n),
            source_rngs: (0..n).map(|i| stream_rng(cfg.seed, STREAM_SOURCE, i as u32 + 1)).collect(),
            channels: cfg.flows.iter().map(|f| f.channel.unwrap_or(cfg.channel)).collect(),
            channel_rngs: (0..n).map(|i| stream_rng(cfg.seed, STREAM_CHANNEL, i as u32 + 1)).collect(),
            policy_rng: stream_rng(cfg.seed, STREAM_POLICY, 0),
            link: None,
            meter: LoadMeter::new(SimTime(cfg.load_window_us), cfg.link_rate),
            next_packet: 0,
            stats: vec![FlowStats::default(); n],
            totals: Totals::default(),
        };

        for (i, f) in cfg.flows.iter().enumerate() {
            let id = FlowId::from_index(i);
            let source = if f.source.on_rate > 0.0 {
                let mut src = OnOffSource::new(id, f.source, SimTime::ZERO, &mut sim.source_rngs[i])
                    .map_err(|e| ConfigError::nested_flow(i, e.into()))?;
                let (at, ev) = src.next_event(&mut sim.source_rngs[i]);
                sim.events.push(at, Event::Source(id, ev));
                Some(src)
            } else {
                None
            };
            sim.sources.push(source);

            let ch = sim.channels[i];
            let state = ch.initial(&mut sim.channel_rngs[i]);
            sim.buffer
                .set_channel(id, ch.state_of(state))
                .expect("flow exists");
            sim.schedule_channel(id, state);
        }
        Ok(sim)
    }

    fn measuring(&self) -> bool {
        self.now >= self.warmup
    }

    fn schedule_channel(&mut self, flow: FlowId, state: Channel) {
        let i = flow.index();
        if let Some(dwell) = self.channels[i].sojourn(state, &mut self.channel_rngs[i]) {
            self.events.push(self.now + dwell, Event::ChannelTransition(flow));
        }
    }

    fn run(mut self) -> (SharedBuffer, Vec<FlowStats>, Totals, Option<InFlight>) {
        while let Some(at) = self.events.peek_time() {
            if at >= self.end {
                break;
            }
            let (at, event) = self.events.pop().expect("peeked");
            self.now = at;
            match event {
                Event::Source(flow, ev) => self.on_source(flow, ev),
                Event::TransmissionComplete => self.on_transmission_complete(),
                Event::ChannelTransition(flow) => self.on_channel(flow),
            }
            assert!(
                self.link.is_some() || self.buffer.is_empty(),
                "link idle with a backlog at {}",
                self.now
            );
        }
        (self.buffer, self.stats, self.totals, self.link)
    }

    fn on_source(&mut self, flow: FlowId, ev: SourceEvent) {
        let i = flow.index();
        if let SourceEvent::Emit { length } = ev {
            self.on_arrival(flow, length);
        }
        let src = self.sources[i].as_mut().expect("event from a live source");
        let (at, next) = src.next_event(&mut self.source_rngs[i]);
        self.events.push(at, Event::Source(flow, next));
    }

    fn on_arrival(&mut self, flow: FlowId, length: u32) {
        let packet = Packet::new(self.next_packet, flow, length, self.now);
        self.next_packet += 1;
        let bytes = u64::from(length);
        self.meter.record(self.now, bytes);
        self.totals.offered_bytes += bytes;
        let measuring = self.measuring();
        if measuring {
            self.stats[flow.index()].arrivals += 1;
        }

        let load = self.meter.load();
        let decision = self
            .policy
            .admit(&packet, &self.buffer, self.now, load, &mut self.policy_rng);
        if let PolicyDecision::DropArrival {
            reason: DropReason::Oversize,
            ..
        } = decision
        {
            self.totals.oversize_drops += 1;
        }
        let was_empty = self.buffer.is_empty();
        let applied = apply_decision(&mut self.buffer, packet, &decision);
        for victim in &applied.evicted {
            self.totals.evicted_bytes += u64::from(victim.length);
            if measuring {
                self.stats[victim.flow.index()].evicted += 1;
            }
        }
        if applied.admitted {
            self.totals.admitted_bytes += bytes;
            if measuring {
                self.stats[flow.index()].admitted += 1;
            }
        } else {
            self.totals.dropped_bytes += bytes;
            if measuring {
                self.stats[flow.index()].dropped += 1;
            }
        }
        if !was_empty && self.buffer.is_empty() {
            self.policy.on_buffer_empty(self.now);
        }
        self.try_transmit();
    }

    fn try_transmit(&mut self) {
        if self.link.is_some() {
            return;
        }
        let Some(flow) = self.scheduler.next(&self.buffer) else {
            return;
        };
        let multiplier = self
            .buffer
            .flow(flow)
            .expect("scheduled flow exists")
            .channel
            .rate_multiplier;
        let packet = self.buffer.pop_head(flow).expect("scheduler picks a backlogged flow");
        if self.buffer.is_empty() {
            self.policy.on_buffer_empty(self.now);
        }
        let secs = f64::from(packet.length) / (self.link_rate * multiplier);
        let airtime = SimTime(((secs * 1e6).round() as u64).max(1));
        self.link = Some(InFlight { packet });
        self.events.push(self.now + airtime, Event::TransmissionComplete);
    }

    fn on_transmission_complete(&mut self) {
        let InFlight { packet } = self.link.take().expect("a packet was on the link");
        self.totals.delivered_bytes += u64::from(packet.length);
        if self.measuring() {
            let s = &mut self.stats[packet.flow.index()];
            s.delivered += 1;
            s.delivered_bytes += u64::from(packet.length);
            s.delay.record(packet.arrival, self.now);
        }
        self.try_transmit();
    }

    fn on_channel(&mut self, flow: FlowId) {
        let i = flow.index();
        let current = self.buffer.flow(flow).expect("flow exists").channel.state;
        let next = match current {
            Channel::Good => Channel::Bad,
            Channel::Bad => Channel::Good,
        };
        let ch = self.channels[i];
        self.buffer.set_channel(flow, ch.state_of(next)).expect("flow exists");
        self.schedule_channel(flow, next);
    }
}

impl ConfigError {
    fn nested_flow(i: usize, err: ConfigError) -> Self {
        ConfigError::new(format!("flows[{i}].source.{}", err.field), err.reason)
    }
}

/// Runs one simulation and summarizes it.
pub fn run(config: &SimConfig) -> Result<RunReport, ConfigError> {
    let sim = Simulation::new(config)?;
    let window = config.duration() - config.warmup();
    let (buffer, stats, mut totals, link) = sim.run();
    totals.residual_bytes = buffer.occupied() + link.map_or(0, |l| u64::from(l.packet.length));
    debug_assert!(buffer.audit().is_ok());
    debug_assert!(totals.conserved(), "{totals:?}");

    let secs = window.as_secs_f64();
    let flows: Vec<FlowReport> = buffer
        .flows()
        .iter()
        .zip(&stats)
        .map(|(f, s)| FlowReport {
            flow: f.id,
            priority: f.priority,
            weight: f.weight,
            goodput: s.delivered_bytes as f64 / secs,
            arrivals: s.arrivals,
            admitted: s.admitted,
            dropped: s.dropped,
            evicted: s.evicted,
            delivered: s.delivered,
            mean_delay_us: s.delay.mean_us(),
        })
        .collect();
    let delivered: u64 = stats.iter().map(|s| s.delivered_bytes).sum();
    let mut delay = DelayStats::default();
    for s in &stats {
        delay.merge(&s.delay);
    }
    let goodputs: Vec<f64> = flows.iter().map(|f| f.goodput).collect();
    let weights: Vec<f64> = flows.iter().map(|f| f.weight).collect();

    Ok(RunReport {
        combo: config.combo().to_string(),
        policy: config.policy.kind().name().to_string(),
        scheduler: config.scheduler.label().to_ascii_lowercase(),
        load: config.offered_load(),
        seed: config.seed,
        window_us: window.0,
        link_rate: config.link_rate,
        goodput_total: goodputs.iter().sum(),
        throughput_effectiveness: throughput_effectiveness(delivered, config.link_rate, window),
        avg_delay_us: delay.mean_us(),
        fairness: fairness_index(&goodputs, &weights).ok(),
        flows,
        totals,
    })
}
