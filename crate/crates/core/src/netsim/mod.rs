//! Deterministic discrete-event radio simulator.
//!
//! Events pop in `(time, insertion)` order and every random draw comes from a
//! seeded generator, so a scenario and seed fully determine the trace.
//! Sensor-to-sensor traffic crosses the radio graph described by a topology
//! file; traffic to and from the base station uses a lossless backhaul with a
//! fixed latency (routing is not modeled), except ALERTs, which the nodes
//! flood over the radio graph.

pub mod channel;
pub mod queue;
pub mod topology;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::adversary::{Adversary, AdversaryAction, ScheduledAction};
use crate::base_station::{BaseStation, BsConfig, BsEffects, BsSend, BsTimer};
use crate::crypto::KeyMaterial;
use crate::metrics::{EnergyCosts, EnergyLedger, LedgerEvent};
use crate::node::{ConfigError, Effects, Node, NodeTimer, ProtocolConfig};
use crate::packet::{Packet, HEADER_LEN};
use crate::{NodeId, SimTime};

pub use channel::{Channel, ChannelConfig, Delivery};
pub use queue::EventQueue;
pub use topology::{
    load_noise, load_topology, InputError, LinkGain, NoiseTrace, Topology, MEYER_HEAVY_EXCERPT,
    MIN_NOISE_SAMPLES,
};
pub use trace::{TraceLine, TraceRecord};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("cannot schedule at {at}, simulation is already at {now}")]
    PastTime { at: SimTime, now: SimTime },
    #[error("no such node {0}")]
    NoSuchNode(NodeId),
    #[error("node {0} already deployed")]
    DuplicateNode(NodeId),
    #[error("node id {0} is reserved")]
    ReservedId(NodeId),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    pub protocol: ProtocolConfig,
    pub channel: ChannelConfig,
    pub bs: BsConfig,
    pub energy: EnergyCosts,
    /// Latency of the node/base-station backhaul.
    pub backhaul_ticks: SimTime,
    /// Also scan full key-store dumps for the initial key after each event.
    pub check_dumps: bool,
}

impl SimConfig {
    pub fn new(seed: u64) -> Self {
        SimConfig {
            seed,
            protocol: ProtocolConfig::default(),
            channel: ChannelConfig::default(),
            bs: BsConfig::default(),
            energy: EnergyCosts::default(),
            backhaul_ticks: 1_000,
            check_dumps: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunLimit {
    /// Process every event scheduled at or before this time.
    Until(SimTime),
    /// Process at most this many events.
    Events(u64),
    /// Run until the queue is empty.
    Exhaust,
}

#[derive(Debug, Clone)]
pub(crate) enum Event {
    Boot(NodeId),
    Deliver {
        to: NodeId,
        frame: Vec<u8>,
        injected: bool,
    },
    Timer(NodeId, NodeTimer),
    Bs(BsTimer),
    Adversary(AdversaryAction),
}

/// Invariant counters maintained while the simulation runs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Violations {
    /// A node still held its initial key (or neighbor masters) past `boot + t_min`.
    pub erasure: u64,
    /// An event was scheduled before the time of the event that caused it.
    pub causality: u64,
}

pub struct Simulation {
    cfg: SimConfig,
    now: SimTime,
    queue: EventQueue<Event>,
    nodes: BTreeMap<NodeId, Node>,
    boot_plan: BTreeMap<NodeId, SimTime>,
    bs: BaseStation,
    kin: KeyMaterial,
    topology: Topology,
    channel: Channel,
    ledger: EnergyLedger,
    trace: Vec<String>,
    violations: Violations,
    events_processed: u64,
    pub(crate) adversary: Adversary,
}

impl Simulation {
    pub fn new(cfg: SimConfig, topology: Topology, noise: NoiseTrace) -> Result<Self, SimError> {
        cfg.protocol.validate()?;
        let mut bs = BaseStation::new(cfg.seed, cfg.bs);
        let kin = bs.generate_initial_key();
        let channel = Channel::new(noise, cfg.channel, cfg.seed);
        Ok(Simulation {
            ledger: EnergyLedger::new(cfg.energy),
            adversary: Adversary::new(cfg.seed),
            cfg,
            now: 0,
            queue: EventQueue::new(),
            nodes: BTreeMap::new(),
            boot_plan: BTreeMap::new(),
            bs,
            kin,
            topology,
            channel,
            trace: Vec::new(),
            violations: Violations::default(),
            events_processed: 0,
        })
    }

    /// Preloads node `id` and schedules its boot.
    pub fn add_node(&mut self, id: NodeId, boot_at: SimTime) -> Result<(), SimError> {
        if !id.is_sensor() {
            return Err(SimError::ReservedId(id));
        }
        if self.nodes.contains_key(&id) {
            return Err(SimError::DuplicateNode(id));
        }
        if boot_at < self.now {
            return Err(SimError::PastTime {
                at: boot_at,
                now: self.now,
            });
        }
        let prov = self
            .bs
            .provision(id, self.cfg.protocol.chain_len)
            .map_err(|_| SimError::ReservedId(id))?;
        let node = Node::new(id, self.kin, prov, self.cfg.protocol.clone(), self.cfg.seed);
        self.nodes.insert(id, node);
        self.queue.push(boot_at, Event::Boot(id));
        self.boot_plan.insert(id, boot_at);
        self.register_expected();
        Ok(())
    }

    /// Whether `u` and `v` are bound to run the handshake, given their boot
    /// times: both HELLOs land before the other side erases, or (with late
    /// joining) `u` boots after `v` has already erased. The older node has
    /// reported by then, so only the joiner counts such a pair.
    fn expect_pair(&self, u: NodeId, v: NodeId) -> bool {
        let p = &self.cfg.protocol;
        let (bu, bv) = (self.boot_plan[&u], self.boot_plan[&v]);
        let gap = bu.abs_diff(bv);
        gap + p.hello_jitter < p.t_min || (p.accept_late_joiners && bu >= bv + p.t_min)
    }

    fn register_expected(&mut self) {
        let members = self.deployed();
        let expected = members
            .iter()
            .map(|&u| {
                let nb = self
                    .topology
                    .mutual_neighbors(u)
                    .intersection(&members)
                    .copied()
                    .filter(|&v| self.expect_pair(u, v))
                    .collect();
                (u, nb)
            })
            .collect();
        self.bs.register(expected);
    }

    pub fn schedule_action(&mut self, action: ScheduledAction) -> Result<(), SimError> {
        if action.at < self.now {
            return Err(SimError::PastTime {
                at: action.at,
                now: self.now,
            });
        }
        for id in action.kind.referenced_nodes() {
            if !self.nodes.contains_key(&id) {
                return Err(SimError::NoSuchNode(id));
            }
        }
        if matches!(action.kind, AdversaryAction::Replay { .. }) {
            self.adversary.enable_recording();
        }
        self.queue.push(action.at, Event::Adversary(action.kind));
        Ok(())
    }

    /// Delivers `pkt` to `target` at `at` exactly as if it came off the radio.
    pub fn inject(&mut self, pkt: &Packet, target: NodeId, at: SimTime) -> Result<(), SimError> {
        if at < self.now {
            return Err(SimError::PastTime { at, now: self.now });
        }
        if target != NodeId::BASE_STATION && !self.nodes.contains_key(&target) {
            return Err(SimError::NoSuchNode(target));
        }
        self.queue.push(
            at,
            Event::Deliver {
                to: target,
                frame: pkt.encode(),
                injected: true,
            },
        );
        Ok(())
    }

    /// Like [`inject`](Self::inject) but for raw, possibly malformed octets.
    pub fn inject_raw(
        &mut self,
        frame: Vec<u8>,
        target: NodeId,
        at: SimTime,
    ) -> Result<(), SimError> {
        if at < self.now {
            return Err(SimError::PastTime { at, now: self.now });
        }
        if target != NodeId::BASE_STATION && !self.nodes.contains_key(&target) {
            return Err(SimError::NoSuchNode(target));
        }
        self.queue.push(
            at,
            Event::Deliver {
                to: target,
                frame,
                injected: true,
            },
        );
        Ok(())
    }

    pub fn run(&mut self, limit: RunLimit) -> &[String] {
        let mut budget = match limit {
            RunLimit::Events(n) => n,
            _ => u64::MAX,
        };
        while budget > 0 {
            let Some(t) = self.queue.peek_time() else {
                break;
            };
            if let RunLimit::Until(until) = limit {
                if t > until {
                    break;
                }
            }
            let ev = self.queue.pop().expect("peeked");
            if ev.time < self.now {
                self.violations.causality += 1;
            }
            self.now = ev.time;
            self.dispatch(ev.item);
            self.events_processed += 1;
            budget -= 1;
        }
        if let RunLimit::Until(until) = limit {
            self.now = self.now.max(until);
        }
        self.check_all_erasure();
        &self.trace
    }

    fn schedule(&mut self, at: SimTime, ev: Event) {
        if at < self.now {
            self.violations.causality += 1;
        }
        self.queue.push(at, ev);
    }

    fn dispatch(&mut self, ev: Event) {
        match ev {
            Event::Boot(id) => self.with_node(id, |n, now, fx| n.on_boot(now, fx)),
            Event::Timer(id, timer) => self.with_node(id, |n, now, fx| n.on_timer(timer, now, fx)),
            Event::Deliver {
                to,
                frame,
                injected,
            } => self.on_deliver(to, frame, injected),
            Event::Bs(timer) => {
                let mut fx = BsEffects::default();
                self.bs.on_timer(timer, self.now, &mut fx);
                self.apply_bs(fx);
            }
            Event::Adversary(action) => self.run_adversary(action),
        }
    }

    fn on_deliver(&mut self, to: NodeId, frame: Vec<u8>, injected: bool) {
        let pkt = Packet::decode(&frame);
        if to == NodeId::BASE_STATION {
            let mut fx = BsEffects::default();
            match pkt {
                Ok(p) => self.bs.on_packet(&p, self.now, &mut fx),
                Err(e) => fx.trace.push(
                    TraceRecord::new(NodeId::BASE_STATION, "drop")
                        .with("reason", "malformed")
                        .with("error", e.to_string().replace([' ', ','], "_")),
                ),
            }
            self.apply_bs(fx);
            return;
        }
        self.ledger.record(&LedgerEvent::Rx {
            node: to,
            octets: frame.len() as u64,
        });
        match pkt {
            Ok(p) => self.with_node(to, |n, now, fx| {
                if injected {
                    fx.trace.push(
                        TraceRecord::new(n.id(), "injected")
                            .with("type", p.ptype)
                            .with("from", p.src),
                    );
                }
                n.on_packet(&p, now, fx)
            }),
            Err(e) => {
                if let Some(n) = self.nodes.get_mut(&to) {
                    n.stats.frames_received += 1;
                    n.stats.dropped += 1;
                }
                let line = TraceRecord::new(to, "drop")
                    .with("reason", "malformed")
                    .with("error", e.to_string().replace([' ', ','], "_"))
                    .format(self.now);
                self.trace.push(line);
            }
        }
    }

    fn with_node<F>(&mut self, id: NodeId, f: F)
    where
        F: FnOnce(&mut Node, SimTime, &mut Effects),
    {
        let now = self.now;
        let mut fx = Effects::new();
        let Some(node) = self.nodes.get_mut(&id) else {
            return;
        };
        f(node, now, &mut fx);
        self.check_erasure(id);
        self.apply_node(id, fx);
    }

    fn check_erasure(&mut self, id: NodeId) {
        let Some(node) = self.nodes.get(&id) else {
            return;
        };
        let Some(boot) = node.boot_time() else {
            return;
        };
        if self.now <= boot + node.config().t_min {
            return;
        }
        let store = node.store();
        let mut bad = store.initial_key().is_some() || store.neighbor_masters().is_some();
        if self.cfg.check_dumps && !bad {
            bad = store.dump().contains(&self.kin.to_hex());
        }
        if bad {
            self.violations.erasure += 1;
        }
    }

    fn check_all_erasure(&mut self) {
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            self.check_erasure(id);
        }
    }

    fn apply_node(&mut self, id: NodeId, fx: Effects) {
        for rec in &fx.trace {
            self.trace.push(rec.format(self.now));
        }
        self.ledger.record_ops(id, fx.ops);
        for (at, timer) in fx.timers {
            self.schedule(at, Event::Timer(id, timer));
        }
        for pkt in fx.sends {
            self.transmit(id, &pkt);
        }
    }

    fn apply_bs(&mut self, fx: BsEffects) {
        for rec in &fx.trace {
            self.trace.push(rec.format(self.now));
        }
        self.trace.extend(fx.verdicts);
        for (at, timer) in fx.timers {
            self.schedule(at, Event::Bs(timer));
        }
        let at = self.now + self.cfg.backhaul_ticks;
        for send in fx.sends {
            match send {
                BsSend::Unicast(pkt) => {
                    if self.nodes.contains_key(&pkt.dst) {
                        self.schedule(
                            at,
                            Event::Deliver {
                                to: pkt.dst,
                                frame: pkt.encode(),
                                injected: false,
                            },
                        );
                    }
                }
                BsSend::Flood(pkt) => {
                    let frame = pkt.encode();
                    for gw in self.gateways() {
                        self.schedule(
                            at,
                            Event::Deliver {
                                to: gw,
                                frame: frame.clone(),
                                injected: false,
                            },
                        );
                    }
                }
            }
        }
    }

    /// Nodes that hear the base station directly: its topology out-neighbors,
    /// or the lowest deployed id when the topology does not place it.
    pub fn gateways(&self) -> Vec<NodeId> {
        let direct: Vec<NodeId> = self
            .topology
            .out_links(NodeId::BASE_STATION)
            .map(|l| l.dst)
            .filter(|d| self.nodes.contains_key(d))
            .collect();
        if direct.is_empty() {
            self.nodes.keys().next().copied().into_iter().collect()
        } else {
            direct
        }
    }

    fn transmit(&mut self, tx: NodeId, pkt: &Packet) {
        let frame = pkt.encode();
        self.ledger.record(&LedgerEvent::Tx {
            node: tx,
            octets: frame.len() as u64,
        });
        if pkt.dst == NodeId::BASE_STATION {
            let at = self.now + self.cfg.backhaul_ticks;
            self.schedule(
                at,
                Event::Deliver {
                    to: NodeId::BASE_STATION,
                    frame,
                    injected: false,
                },
            );
            return;
        }
        self.adversary.overhear(self.now, tx, pkt);
        let links: Vec<LinkGain> = self
            .topology
            .out_links(tx)
            .filter(|l| l.dst != tx && self.nodes.contains_key(&l.dst))
            .filter(|l| pkt.is_broadcast() || l.dst == pkt.dst)
            .collect();
        for link in links {
            let mut bytes = frame.clone();
            self.adversary
                .alter(self.now, &link, &mut bytes, HEADER_LEN);
            match self.channel.deliver(bytes.len(), &link, self.now) {
                Delivery::Delivered { at } => self.schedule(
                    at,
                    Event::Deliver {
                        to: link.dst,
                        frame: bytes,
                        injected: false,
                    },
                ),
                Delivery::Lost => {
                    let line = TraceRecord::new(tx, "lost")
                        .with("type", pkt.ptype)
                        .with("to", link.dst)
                        .format(self.now);
                    self.trace.push(line);
                }
            }
        }
    }

    pub(crate) fn push_trace(&mut self, rec: TraceRecord) {
        let line = rec.format(self.now);
        self.trace.push(line);
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn seed(&self) -> u64 {
        self.cfg.seed
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    pub fn trace_text(&self) -> String {
        let mut s = self.trace.join("\n");
        s.push('\n');
        s
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> Option<&mut Node> {
        self.nodes.get_mut(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn deployed(&self) -> BTreeSet<NodeId> {
        self.nodes.keys().copied().collect()
    }

    pub fn base_station(&self) -> &BaseStation {
        &self.bs
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    pub fn adversary(&self) -> &Adversary {
        &self.adversary
    }

    pub fn initial_key(&self) -> &KeyMaterial {
        &self.kin
    }

    pub fn violations(&self) -> &Violations {
        &self.violations
    }

    pub fn events_processed(&self) -> u64 {
        self.events_processed
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Sum of every node's `installs_without_verify` counter.
    pub fn installs_without_verify(&self) -> u64 {
        self.nodes
            .values()
            .map(|n| n.stats.installs_without_verify)
            .sum()
    }

    pub fn bad_mac_drops(&self) -> u64 {
        self.nodes.values().map(|n| n.stats.bad_mac).sum::<u64>() + self.bs.stats.bad_mac
    }

    /// Every node's key store, as text dumps concatenated in id order.
    pub fn keystore_dumps(&self) -> String {
        self.nodes
            .values()
            .map(|n| n.store().dump())
            .collect::<Vec<_>>()
            .join("\n")
    }
}
