//! Behavioral model of a network-processor queue manager.
//!
//! 1024 queues (64 ports x 16 queues) live as linked lists in simulated
//! SRAM. Only 16 queue descriptors are resident in the local cache at a
//! time; lookups go through a CAM-style search and misses write the least
//! recently used descriptor back before loading the requested one. Whenever
//! a queue turns non-empty on enqueue or empty on dequeue, a transition
//! message is posted to a bounded ring for the scheduler stage.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

pub const PORTS: u16 = 64;
pub const QUEUES_PER_PORT: u16 = 16;
pub const NUM_QUEUES: usize = (PORTS * QUEUES_PER_PORT) as usize;
pub const CACHE_ENTRIES: usize = 16;
pub const RING_CAPACITY: usize = 128;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NpError {
    #[error("queue id {port}/{queue} out of range")]
    QueueRange { port: u16, queue: u16 },
    #[error("packet counter overflow on queue {0}")]
    CounterOverflow(QueueId),
    #[error("message ring overflow")]
    RingOverflow,
    #[error("cache holds {0} descriptors, limit is 16")]
    CacheOverfull(usize),
    #[error("queue {queue}: descriptor count {count} != list length {actual}")]
    CountMismatch {
        queue: QueueId,
        count: u16,
        actual: usize,
    },
    #[error("queue {0}: transition messages out of order")]
    MessageOrder(QueueId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueueId {
    port: u16,
    queue: u16,
}

impl QueueId {
    pub fn new(port: u16, queue: u16) -> Result<Self, NpError> {
        if port >= PORTS || queue >= QUEUES_PER_PORT {
            return Err(NpError::QueueRange { port, queue });
        }
        Ok(QueueId { port, queue })
    }

    pub fn from_flat(flat: usize) -> Self {
        assert!(flat < NUM_QUEUES);
        QueueId {
            port: (flat / QUEUES_PER_PORT as usize) as u16,
            queue: (flat % QUEUES_PER_PORT as usize) as u16,
        }
    }

    pub fn port(self) -> u16 {
        self.port
    }

    pub fn queue(self) -> u16 {
        self.queue
    }

    /// `port * 16 + queue`, in `0..1024`.
    pub fn flat(self) -> usize {
        (self.port * QUEUES_PER_PORT + self.queue) as usize
    }
}

impl fmt::Display for QueueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.port, self.queue)
    }
}

/// Handle to a packet buffer held elsewhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PacketRef {
    pub id: u64,
    pub len: u32,
}

type NodeIdx = u32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Descriptor {
    pub head: Option<NodeIdx>,
    pub tail: Option<NodeIdx>,
    /// 16-bit packet counter.
    pub packet_count: u16,
}

#[derive(Clone, Copy, Debug)]
struct Node {
    packet: PacketRef,
    next: Option<NodeIdx>,
}

/// Linked-list buffer descriptors in simulated SRAM, with a free list.
#[derive(Default)]
struct NodePool {
    nodes: Vec<Node>,
    free: Vec<NodeIdx>,
}

impl NodePool {
    fn alloc(&mut self, packet: PacketRef) -> NodeIdx {
        let node = Node { packet, next: None };
        match self.free.pop() {
            Some(i) => {
                self.nodes[i as usize] = node;
                i
            }
            None => {
                self.nodes.push(node);
                (self.nodes.len() - 1) as NodeIdx
            }
        }
    }

    fn release(&mut self, i: NodeIdx) -> Node {
        self.free.push(i);
        self.nodes[i as usize]
    }

    fn list_len(&self, desc: &Descriptor) -> usize {
        let mut n = 0;
        let mut cur = desc.head;
        while let Some(i) = cur {
            n += 1;
            cur = self.nodes[i as usize].next;
        }
        n
    }

    fn collect(&self, desc: &Descriptor) -> Vec<PacketRef> {
        let mut out = Vec::new();
        let mut cur = desc.head;
        while let Some(i) = cur {
            out.push(self.nodes[i as usize].packet);
            cur = self.nodes[i as usize].next;
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub writebacks: u64,
}

#[derive(Clone, Copy, Debug)]
struct CacheEntry {
    queue: QueueId,
    desc: Descriptor,
    last_use: u64,
}

/// 16-entry descriptor cache over a 1024-descriptor backing store.
pub struct DescriptorCache {
    entries: Vec<CacheEntry>,
    backing: Vec<Descriptor>,
    clock: u64,
    stats: CacheStats,
}

impl Default for DescriptorCache {
    fn default() -> Self {
        DescriptorCache {
            entries: Vec::with_capacity(CACHE_ENTRIES),
            backing: vec![Descriptor::default(); NUM_QUEUES],
            clock: 0,
            stats: CacheStats::default(),
        }
    }
}

impl DescriptorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn resident(&self) -> Vec<QueueId> {
        self.entries.iter().map(|e| e.queue).collect()
    }

    pub fn is_resident(&self, q: QueueId) -> bool {
        self.entries.iter().any(|e| e.queue == q)
    }

    /// Returns the resident descriptor for `q`, loading it on a miss and
    /// writing back the least recently used entry if the cache is full.
    pub fn lookup_or_load(&mut self, q: QueueId) -> &mut Descriptor {
        self.clock += 1;
        // CAM search
        let slot = match self.entries.iter().position(|e| e.queue == q) {
            Some(i) => {
                self.stats.hits += 1;
                i
            }
            None => {
                self.stats.misses += 1;
                let entry = CacheEntry {
                    queue: q,
                    desc: self.backing[q.flat()],
                    last_use: 0,
                };
                if self.entries.len() < CACHE_ENTRIES {
                    self.entries.push(entry);
                    self.entries.len() - 1
                } else {
                    let lru = self
                        .entries
                        .iter()
                        .enumerate()
                        .min_by_key(|(_, e)| e.last_use)
                        .map(|(i, _)| i)
                        .expect("cache is full");
                    let old = self.entries[lru];
                    self.backing[old.queue.flat()] = old.desc;
                    self.stats.writebacks += 1;
                    self.entries[lru] = entry;
                    lru
                }
            }
        };
        self.entries[slot].last_use = self.clock;
        &mut self.entries[slot].desc
    }

    /// Current descriptor of `q` without touching recency.
    pub fn peek(&self, q: QueueId) -> Descriptor {
        self.entries
            .iter()
            .find(|e| e.queue == q)
            .map_or(self.backing[q.flat()], |e| e.desc)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransitionKind {
    BecameNonEmpty,
    BecameEmpty,
}

impl fmt::Display for TransitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransitionKind::BecameNonEmpty => "BecameNonEmpty",
            TransitionKind::BecameEmpty => "BecameEmpty",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransitionMessage {
    pub queue: QueueId,
    pub kind: TransitionKind,
    pub seq: u64,
}

impl fmt::Display for TransitionMessage {
    /// `M <seq> <kind> <port> <queue>`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M {} {} {}", self.seq, self.kind, self.queue)
    }
}

/// Bounded FIFO between the queue manager and the scheduler stage.
pub struct MessageRing {
    buf: VecDeque<TransitionMessage>,
    capacity: usize,
}

impl MessageRing {
    pub fn new(capacity: usize) -> Self {
        MessageRing {
            buf: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, msg: TransitionMessage) -> Result<(), NpError> {
        if self.buf.len() >= self.capacity {
            return Err(NpError::RingOverflow);
        }
        self.buf.push_back(msg);
        Ok(())
    }

    pub fn pop(&mut self) -> Option<TransitionMessage> {
        self.buf.pop_front()
    }

    pub fn drain(&mut self) -> Vec<TransitionMessage> {
        self.buf.drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

/// Queue manager: descriptor cache, SRAM lists and the outgoing ring.
pub struct QueueManager {
    cache: DescriptorCache,
    pool: NodePool,
    ring: MessageRing,
    seq: u64,
    last_kind: Vec<Option<TransitionKind>>,
}

impl Default for QueueManager {
    fn default() -> Self {
        QueueManager {
            cache: DescriptorCache::new(),
            pool: NodePool::default(),
            ring: MessageRing::new(RING_CAPACITY),
            seq: 0,
            last_kind: vec![None; NUM_QUEUES],
        }
    }
}

impl QueueManager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cache(&self) -> &DescriptorCache {
        &self.cache
    }

    pub fn ring(&mut self) -> &mut MessageRing {
        &mut self.ring
    }

    fn emit(&mut self, queue: QueueId, kind: TransitionKind) -> Result<TransitionMessage, NpError> {
        let expected_prev = match kind {
            TransitionKind::BecameNonEmpty => [None, Some(TransitionKind::BecameEmpty)],
            TransitionKind::BecameEmpty => [Some(TransitionKind::BecameNonEmpty); 2],
        };
        if !expected_prev.contains(&self.last_kind[queue.flat()]) {
            return Err(NpError::MessageOrder(queue));
        }
        self.seq += 1;
        let msg = TransitionMessage {
            queue,
            kind,
            seq: self.seq,
        };
        self.ring.push(msg)?;
        self.last_kind[queue.flat()] = Some(kind);
        Ok(msg)
    }

    /// Enqueues `packet` on `q` if `admit` agrees. Returns the transition
    /// messages emitted (also posted to the ring).
    pub fn np_enqueue<F>(&mut self, q: QueueId, packet: PacketRef, admit: F) -> Result<Vec<TransitionMessage>, NpError>
    where
        F: FnOnce(QueueId, &Descriptor, &PacketRef) -> bool,
    {
        let desc = *self.cache.lookup_or_load(q);
        if !admit(q, &desc, &packet) {
            return Ok(Vec::new());
        }
        if desc.packet_count == u16::MAX {
            return Err(NpError::CounterOverflow(q));
        }
        let node = self.pool.alloc(packet);
        if let Some(tail) = desc.tail {
            self.pool.nodes[tail as usize].next = Some(node);
        }
        let updated = Descriptor {
            head: desc.head.or(Some(node)),
            tail: Some(node),
            packet_count: desc.packet_count + 1,
        };
        *self.cache.lookup_or_load(q) = updated;
        if desc.packet_count == 0 {
            Ok(vec![self.emit(q, TransitionKind::BecameNonEmpty)?])
        } else {
            Ok(Vec::new())
        }
    }

    /// Removes the head of `q`, if any.
    pub fn np_dequeue(&mut self, q: QueueId) -> Result<(Option<PacketRef>, Vec<TransitionMessage>), NpError> {
        let desc = self.cache.lookup_or_load(q);
        let Some(head) = desc.head else {
            return Ok((None, Vec::new()));
        };
        let node = self.pool.release(head);
        let desc = self.cache.lookup_or_load(q);
        desc.head = node.next;
        if desc.head.is_none() {
            desc.tail = None;
        }
        desc.packet_count -= 1;
        let emptied = desc.packet_count == 0;
        let msgs = if emptied {
            vec![self.emit(q, TransitionKind::BecameEmpty)?]
        } else {
            Vec::new()
        };
        Ok((Some(node.packet), msgs))
    }

    /// Packets currently queued on `q`, head first.
    pub fn contents(&self, q: QueueId) -> Vec<PacketRef> {
        self.pool.collect(&self.cache.peek(q))
    }

    /// Full consistency check of cache, backing store and lists.
    pub fn check_invariants(&self) -> Result<(), NpError> {
        if self.cache.entries.len() > CACHE_ENTRIES {
            return Err(NpError::CacheOverfull(self.cache.entries.len()));
        }
        for flat in 0..NUM_QUEUES {
            let q = QueueId::from_flat(flat);
            let desc = self.cache.peek(q);
            let actual = self.pool.list_len(&desc);
            if actual != desc.packet_count as usize {
                return Err(NpError::CountMismatch {
                    queue: q,
                    count: desc.packet_count,
                    actual,
                });
            }
            let nonempty = desc.packet_count > 0;
            let flagged = self.last_kind[flat] == Some(TransitionKind::BecameNonEmpty);
            if nonempty != flagged {
                return Err(NpError::MessageOrder(q));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceOp {
    Enqueue { queue: QueueId, len: u32 },
    Dequeue { queue: QueueId },
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

/// Parses `E <port> <queue> <len>` / `D <port> <queue>` lines. Blank lines
/// and lines starting with `#` are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<TraceOp>, TraceError> {
    let mut ops = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| TraceError { line, message };
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let num = |s: &str, what: &str| -> Result<u32, TraceError> {
            s.parse::<u32>()
                .map_err(|_| err(format!("bad {what} {s:?}")))
        };
        let queue_id = |p: &str, q: &str| -> Result<QueueId, TraceError> {
            let port = num(p, "port")?;
            let queue = num(q, "queue")?;
            let (port, queue) = (u16::try_from(port).unwrap_or(u16::MAX), u16::try_from(queue).unwrap_or(u16::MAX));
            QueueId::new(port, queue).map_err(|e| err(e.to_string()))
        };
        let op = match fields.as_slice() {
            ["E", p, q, len] => {
                let len = num(len, "length")?;
                if len == 0 {
                    return Err(err("length must be positive".into()));
                }
                TraceOp::Enqueue {
                    queue: queue_id(p, q)?,
                    len,
                }
            }
            ["D", p, q] => TraceOp::Dequeue {
                queue: queue_id(p, q)?,
            },
            _ => return Err(err(format!("unrecognized operation {trimmed:?}"))),
        };
        ops.push(op);
    }
    Ok(ops)
}

/// Replays `ops` on a fresh queue manager, admitting every packet, and
/// returns all messages in emission order. The ring is drained after every
/// operation, as a scheduler stage keeping up would.
pub fn replay(ops: &[TraceOp]) -> Result<Vec<TransitionMessage>, NpError> {
    let mut qm = QueueManager::new();
    let mut out = Vec::new();
    for (i, op) in ops.iter().enumerate() {
        match *op {
            TraceOp::Enqueue { queue, len } => {
                qm.np_enqueue(queue, PacketRef { id: i as u64, len }, |_, _, _| true)?;
            }
            TraceOp::Dequeue { queue } => {
                qm.np_dequeue(queue)?;
            }
        }
        out.extend(qm.ring().drain());
    }
    qm.check_invariants()?;
    Ok(out)
}
