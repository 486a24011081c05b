//! Per-node protocol state machine.
//!
//! A node boots, broadcasts HELLO, answers neighbors' HELLOs with an ACK
//! authenticated under its own master key, and derives a pairwise key for
//! every neighbor whose ACK verifies. When its discovery timer fires it erases
//! the initial key, hands a fresh cluster key to every neighbor and reports
//! its neighbor set to the base station. A periodic self-check emits HELP
//! after tampering; ALERTs from the base station revoke the named node.
//!
//! Handlers never touch the simulator directly. They append packets, timers
//! and trace records to an [`Effects`] buffer that the event loop applies.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::{self, Domain, KeyMaterial, KEY_SIZE};
use crate::keystore::{KeyStore, Provisioning};
use crate::netsim::trace::TraceRecord;
use crate::packet::{Packet, PacketType, Reader};
use crate::{NodeId, SimTime, TICKS_PER_SECOND};

/// ACK payload flag: an established node offering a key to a late joiner.
pub const ACK_LATE_OFFER: u8 = 0x01;
/// ACK payload flag: a late joiner confirming the offered key.
pub const ACK_LATE_CONFIRM: u8 = 0x02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodePhase {
    Preloaded,
    Discovering,
    Established,
    Revoked,
}

impl NodePhase {
    pub fn name(self) -> &'static str {
        match self {
            NodePhase::Preloaded => "PRELOADED",
            NodePhase::Discovering => "DISCOVERING",
            NodePhase::Established => "ESTABLISHED",
            NodePhase::Revoked => "REVOKED",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("t_min must be positive")]
    ZeroTmin,
    #[error("t_p must be positive")]
    ZeroTp,
    #[error("p_detect {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("chain length must be at least 1")]
    ZeroChain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    /// Erasure deadline measured from boot.
    pub t_min: SimTime,
    /// Self-check period.
    pub t_p: SimTime,
    /// Upper bound of the uniform HELLO delay.
    pub hello_jitter: SimTime,
    /// Probability that a check notices tampering.
    pub p_detect: f64,
    pub block_duration: SimTime,
    pub chain_len: usize,
    /// Let established nodes run the responder-keyed handshake with nodes
    /// deployed after they erased the initial key.
    pub accept_late_joiners: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig::with_timing(5 * TICKS_PER_SECOND, TICKS_PER_SECOND)
    }
}

impl ProtocolConfig {
    /// Defaults derived from the two main timers: jitter `t_min / 10`, block `10 * t_p`.
    pub fn with_timing(t_min: SimTime, t_p: SimTime) -> Self {
        ProtocolConfig {
            t_min,
            t_p,
            hello_jitter: t_min / 10,
            p_detect: 1.0,
            block_duration: 10 * t_p,
            chain_len: 20,
            accept_late_joiners: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.t_min == 0 {
            return Err(ConfigError::ZeroTmin);
        }
        if self.t_p == 0 {
            return Err(ConfigError::ZeroTp);
        }
        if !(0.0..=1.0).contains(&self.p_detect) {
            return Err(ConfigError::BadProbability(self.p_detect));
        }
        if self.chain_len == 0 {
            return Err(ConfigError::ZeroChain);
        }
        Ok(())
    }
}

/// Monotone key-establishment counter carried in REPORTs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SeqState(u32);

impl SeqState {
    pub fn value(self) -> u32 {
        self.0
    }

    fn bump(&mut self) -> u32 {
        self.0 = self.0.saturating_add(1);
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeTimer {
    SendHello,
    TminExpired,
    PeriodicCheck,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub prf: u64,
    pub mac: u64,
    pub enc: u64,
}

/// Output buffer filled by one handler invocation.
#[derive(Debug, Default)]
pub struct Effects {
    pub sends: Vec<Packet>,
    pub timers: Vec<(SimTime, NodeTimer)>,
    pub trace: Vec<TraceRecord>,
    pub ops: OpCounts,
}

impl Effects {
    pub fn new() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, Default)]
pub struct NodeStats {
    pub bad_mac: u64,
    pub dropped: u64,
    pub installs_without_verify: u64,
    pub acks_sent: u64,
    pub frames_received: u64,
    pub pairwise_installed_at: BTreeMap<NodeId, SimTime>,
    pub erased_at: Option<SimTime>,
    pub help_sent_at: Vec<SimTime>,
    pub revoked_peers_at: BTreeMap<NodeId, SimTime>,
    pub revoked_self_at: Option<SimTime>,
    pub report_sent_at: Option<SimTime>,
}

/// Pairwise key for a pair whose higher id has master `hi_master`.
pub fn canonical_pairwise(hi_master: &KeyMaterial, lo: NodeId) -> KeyMaterial {
    crypto::derive(hi_master, Domain::Pairwise, lo)
}

/// Key wrapping a cluster key sent by `sender` over a pairwise link.
pub fn cluster_wrap_key(pairwise: &KeyMaterial, sender: NodeId) -> KeyMaterial {
    crypto::derive(pairwise, Domain::ClusterWrap, sender)
}

/// 8-octet digest of a neighbor set (sorted big-endian ids under SHA-256).
pub fn neighbor_digest<I: IntoIterator<Item = NodeId>>(ids: I) -> [u8; 8] {
    let sorted: BTreeSet<NodeId> = ids.into_iter().collect();
    let mut h = Sha256::new();
    for id in sorted {
        h.update(id.0.to_be_bytes());
    }
    let out = h.finalize();
    let mut d = [0u8; 8];
    d.copy_from_slice(&out[..8]);
    d
}

/// Builds `nonce || encrypt(key, plaintext, nonce)`.
pub(crate) fn seal(key: &KeyMaterial, plaintext: &[u8], nonce: u64) -> Vec<u8> {
    let mut out = nonce.to_be_bytes().to_vec();
    out.extend(crypto::encrypt(key, plaintext, nonce));
    out
}

pub(crate) fn open(key: &KeyMaterial, sealed: &[u8]) -> Option<Vec<u8>> {
    let mut r = Reader::new(sealed);
    let nonce = r.u64()?;
    Some(crypto::decrypt(key, r.rest(), nonce))
}

#[derive(Debug, Clone)]
pub struct Node {
    id: NodeId,
    phase: NodePhase,
    store: KeyStore,
    seq: SeqState,
    cfg: ProtocolConfig,
    boot_time: Option<SimTime>,
    hello_seen: BTreeSet<NodeId>,
    hello_sent: bool,
    late_offers: BTreeSet<NodeId>,
    alerts_seen: BTreeSet<(NodeId, u32)>,
    /// Highest CLUSTER_KEY nonce accepted per sender.
    cluster_nonces: BTreeMap<NodeId, u64>,
    global_epoch: u32,
    tampered: bool,
    nonce: u64,
    rng: ChaCha8Rng,
    verified: Option<(PacketType, NodeId)>,
    pub stats: NodeStats,
}

impl Node {
    pub fn new(
        id: NodeId,
        kin: KeyMaterial,
        prov: Provisioning,
        cfg: ProtocolConfig,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(id.0));
        Node {
            id,
            phase: NodePhase::Preloaded,
            store: KeyStore::preload(kin, id, prov),
            seq: SeqState::default(),
            cfg,
            boot_time: None,
            hello_seen: BTreeSet::new(),
            hello_sent: false,
            late_offers: BTreeSet::new(),
            alerts_seen: BTreeSet::new(),
            cluster_nonces: BTreeMap::new(),
            global_epoch: 0,
            tampered: false,
            nonce: 0,
            rng,
            verified: None,
            stats: NodeStats::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn phase(&self) -> NodePhase {
        self.phase
    }

    pub fn store(&self) -> &KeyStore {
        &self.store
    }

    pub fn seq(&self) -> SeqState {
        self.seq
    }

    pub fn boot_time(&self) -> Option<SimTime> {
        self.boot_time
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.cfg
    }

    pub fn global_epoch(&self) -> u32 {
        self.global_epoch
    }

    pub fn is_tampered(&self) -> bool {
        self.tampered
    }

    /// Marks the node as physically compromised; the next checks may notice.
    pub fn tamper(&mut self) {
        self.tampered = true;
    }

    /// Verified one-hop neighbors (peers holding a pairwise key).
    pub fn neighbors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.store.pairwise_map().keys().copied()
    }

    fn next_nonce(&mut self) -> u64 {
        self.nonce += 1;
        self.nonce
    }

    fn trace(&self, fx: &mut Effects, ev: &'static str) -> usize {
        fx.trace.push(TraceRecord::new(self.id, ev));
        fx.trace.len() - 1
    }

    fn drop_packet(&mut self, fx: &mut Effects, pkt: &Packet, reason: &'static str) {
        self.stats.dropped += 1;
        fx.trace.push(
            TraceRecord::new(self.id, "drop")
                .with("type", pkt.ptype)
                .with("from", pkt.src)
                .with("reason", reason),
        );
    }

    fn bad_mac(&mut self, fx: &mut Effects, pkt: &Packet) {
        self.stats.bad_mac += 1;
        self.drop_packet(fx, pkt, "bad_mac");
    }

    fn set_phase(&mut self, fx: &mut Effects, to: NodePhase) {
        fx.trace.push(
            TraceRecord::new(self.id, "phase")
                .with("from", self.phase.name())
                .with("to", to.name()),
        );
        self.phase = to;
    }

    fn check_verified(&mut self, ptype: PacketType, peer: NodeId) {
        if self.verified != Some((ptype, peer)) {
            self.stats.installs_without_verify += 1;
        }
    }

    fn install_pairwise(
        &mut self,
        fx: &mut Effects,
        ptype: PacketType,
        peer: NodeId,
        key: KeyMaterial,
        now: SimTime,
    ) -> bool {
        self.check_verified(ptype, peer);
        let fresh = self.store.pairwise(peer) != Some(&key);
        if self.store.install_pairwise(peer, key, now).is_err() {
            fx.trace.push(
                TraceRecord::new(self.id, "drop")
                    .with("type", ptype)
                    .with("from", peer)
                    .with("reason", "blocked"),
            );
            self.stats.dropped += 1;
            return false;
        }
        if fresh {
            let seq = self.seq.bump();
            self.stats.pairwise_installed_at.insert(peer, now);
            fx.trace.push(
                TraceRecord::new(self.id, "pairwise_install")
                    .with("peer", peer)
                    .with("seq", seq),
            );
        }
        true
    }

    // ---- timers ---------------------------------------------------------

    pub fn on_boot(&mut self, now: SimTime, fx: &mut Effects) {
        if self.phase != NodePhase::Preloaded {
            let i = self.trace(fx, "boot_ignored");
            fx.trace[i] = fx.trace[i].clone().with("phase", self.phase.name());
            return;
        }
        self.boot_time = Some(now);
        self.trace(fx, "boot");
        self.set_phase(fx, NodePhase::Discovering);
        let jitter = if self.cfg.hello_jitter == 0 {
            0
        } else {
            self.rng.gen_range(0..=self.cfg.hello_jitter)
        };
        fx.timers.push((now + jitter, NodeTimer::SendHello));
        fx.timers
            .push((now + self.cfg.t_min, NodeTimer::TminExpired));
        fx.timers
            .push((now + self.cfg.t_p, NodeTimer::PeriodicCheck));
    }

    pub fn on_timer(&mut self, timer: NodeTimer, now: SimTime, fx: &mut Effects) {
        match timer {
            NodeTimer::SendHello => self.send_hello(fx),
            NodeTimer::TminExpired => self.on_tmin_expired(now, fx),
            NodeTimer::PeriodicCheck => self.periodic_check(now, fx),
        }
    }

    fn hello_to(&self, dst: NodeId) -> Packet {
        Packet::new(
            PacketType::Hello,
            self.id,
            dst,
            self.id.0.to_be_bytes().to_vec(),
        )
        .expect("hello payload fits")
    }

    fn send_hello(&mut self, fx: &mut Effects) {
        if self.phase != NodePhase::Discovering {
            return;
        }
        fx.sends.push(self.hello_to(NodeId::BROADCAST));
        self.hello_sent = true;
        self.trace(fx, "hello_sent");
    }

    pub fn on_tmin_expired(&mut self, now: SimTime, fx: &mut Effects) {
        if self.phase != NodePhase::Discovering {
            return;
        }
        self.store.erase_bootstrap();
        self.stats.erased_at = Some(now);
        self.trace(fx, "erase");
        self.rekey_cluster(fx);
        self.set_phase(fx, NodePhase::Established);
        self.send_report(now, fx);
    }

    /// Draws a fresh cluster key and unicasts it to every current neighbor.
    fn rekey_cluster(&mut self, fx: &mut Effects) {
        let cluster = KeyMaterial::random(&mut self.rng);
        self.store.set_cluster_sent(cluster);
        let peers: Vec<NodeId> = self.neighbors().collect();
        for peer in &peers {
            self.send_cluster_key(*peer, fx);
        }
        fx.trace
            .push(TraceRecord::new(self.id, "cluster_sent").with("count", peers.len()));
    }

    fn send_cluster_key(&mut self, peer: NodeId, fx: &mut Effects) {
        let (Some(pairwise), Some(cluster)) = (
            self.store.pairwise(peer).copied(),
            self.store.cluster_sent().copied(),
        ) else {
            return;
        };
        let nonce = self.next_nonce();
        let wrap = cluster_wrap_key(&pairwise, self.id);
        let payload = seal(&wrap, cluster.as_bytes(), nonce);
        fx.ops.prf += 1;
        fx.ops.enc += 1;
        fx.ops.mac += 1;
        let pkt = Packet::new(PacketType::ClusterKey, self.id, peer, payload)
            .expect("cluster payload fits")
            .signed(&pairwise);
        fx.sends.push(pkt);
    }

    fn send_report(&mut self, now: SimTime, fx: &mut Effects) {
        let mut plain = self.seq.value().to_be_bytes().to_vec();
        plain.extend_from_slice(&neighbor_digest(self.neighbors()));
        let nonce = self.next_nonce();
        let payload = seal(self.store.individual(), &plain, nonce);
        fx.ops.enc += 1;
        fx.ops.mac += 1;
        let pkt = Packet::new(PacketType::Report, self.id, NodeId::BASE_STATION, payload)
            .expect("report payload fits")
            .signed(self.store.individual());
        fx.sends.push(pkt);
        self.stats.report_sent_at = Some(now);
        fx.trace.push(
            TraceRecord::new(self.id, "report_sent")
                .with("counter", self.seq.value())
                .with("neighbors", self.store.pairwise_map().len()),
        );
    }

    pub fn periodic_check(&mut self, now: SimTime, fx: &mut Effects) {
        if self.phase == NodePhase::Revoked {
            return;
        }
        fx.timers
            .push((now + self.cfg.t_p, NodeTimer::PeriodicCheck));
        if !self.tampered {
            return;
        }
        if !self.rng.gen_bool(self.cfg.p_detect) {
            self.trace(fx, "check_missed");
            return;
        }
        self.tampered = false;
        let help = Packet::new(
            PacketType::Help,
            self.id,
            NodeId::BASE_STATION,
            self.id.0.to_be_bytes().to_vec(),
        )
        .expect("help payload fits")
        .signed(self.store.individual());
        fx.ops.mac += 1;
        fx.sends.push(help);
        self.stats.help_sent_at.push(now);
        self.trace(fx, "help_sent");
    }

    // ---- packets --------------------------------------------------------

    pub fn on_packet(&mut self, pkt: &Packet, now: SimTime, fx: &mut Effects) {
        self.verified = None;
        self.stats.frames_received += 1;
        if self.phase == NodePhase::Revoked {
            self.drop_packet(fx, pkt, "revoked");
            return;
        }
        if self.phase == NodePhase::Preloaded {
            self.drop_packet(fx, pkt, "not_booted");
            return;
        }
        if !pkt.is_broadcast() && pkt.dst != self.id {
            self.drop_packet(fx, pkt, "not_for_me");
            return;
        }
        match pkt.ptype {
            PacketType::Hello => self.on_hello(pkt, now, fx),
            PacketType::Ack => self.on_ack(pkt, now, fx),
            PacketType::ClusterKey => self.on_cluster_key(pkt, fx),
            PacketType::Alert => self.on_alert(pkt, now, fx),
            PacketType::GlobalRekey => self.on_global_rekey(pkt, fx),
            PacketType::Data | PacketType::Help | PacketType::Report => {
                self.drop_packet(fx, pkt, "unexpected_type")
            }
        }
    }

    pub fn on_hello(&mut self, pkt: &Packet, now: SimTime, fx: &mut Effects) {
        let mut r = Reader::new(pkt.payload());
        let Some(sender) = r.u16().map(NodeId) else {
            return self.drop_packet(fx, pkt, "malformed");
        };
        if sender != pkt.src || !r.rest().is_empty() || !sender.is_sensor() {
            return self.drop_packet(fx, pkt, "malformed");
        }
        if sender == self.id {
            return;
        }
        if self.store.is_blocked(sender, now) {
            return self.drop_packet(fx, pkt, "blocked");
        }
        if self.hello_seen.contains(&sender) {
            return self.drop_packet(fx, pkt, "duplicate");
        }
        let known = self.store.initial_key().is_some() || self.store.pairwise(sender).is_some();
        let late = !known && self.cfg.accept_late_joiners && self.phase == NodePhase::Established;
        if !known && !late {
            return self.drop_packet(fx, pkt, "stranger");
        }
        self.hello_seen.insert(sender);
        let mut payload = self.id.0.to_be_bytes().to_vec();
        if late {
            payload.push(ACK_LATE_OFFER);
            self.late_offers.insert(sender);
        }
        let ack = Packet::new(PacketType::Ack, self.id, sender, payload)
            .expect("ack payload fits")
            .signed(self.store.own_master());
        fx.ops.mac += 1;
        fx.sends.push(ack);
        self.stats.acks_sent += 1;
        fx.trace.push(
            TraceRecord::new(self.id, "ack_sent")
                .with("to", sender)
                .with("late", late),
        );
        // The sender booted after our broadcast HELLO went out, so it never
        // answered it. Ask again so that we get an ACK to verify as well.
        if self.hello_sent && !late && self.store.pairwise(sender).is_none() {
            fx.sends.push(self.hello_to(sender));
            fx.trace
                .push(TraceRecord::new(self.id, "hello_back").with("to", sender));
        }
    }

    pub fn on_ack(&mut self, pkt: &Packet, now: SimTime, fx: &mut Effects) {
        let mut r = Reader::new(pkt.payload());
        let Some(peer) = r.u16().map(NodeId) else {
            return self.drop_packet(fx, pkt, "malformed");
        };
        let flag = r.u8();
        if peer != pkt.src || !r.rest().is_empty() || !peer.is_sensor() || peer == self.id {
            return self.drop_packet(fx, pkt, "malformed");
        }
        if self.store.is_blocked(peer, now) {
            return self.drop_packet(fx, pkt, "blocked");
        }
        match flag {
            None | Some(ACK_LATE_OFFER) => {
                let Some(peer_master) = self.store.master_of(peer) else {
                    return self.drop_packet(fx, pkt, "no_initial_key");
                };
                fx.ops.prf += 1;
                fx.ops.mac += 1;
                if !pkt.verify(&peer_master) {
                    return self.bad_mac(fx, pkt);
                }
                self.verified = Some((PacketType::Ack, peer));
                let key = if flag.is_some() || peer > self.id {
                    canonical_pairwise(&peer_master, self.id)
                } else {
                    canonical_pairwise(self.store.own_master(), peer)
                };
                fx.ops.prf += 1;
                if !self.install_pairwise(fx, PacketType::Ack, peer, key, now) {
                    return;
                }
                if flag.is_some() {
                    let mut payload = self.id.0.to_be_bytes().to_vec();
                    payload.push(ACK_LATE_CONFIRM);
                    let confirm = Packet::new(PacketType::Ack, self.id, peer, payload)
                        .expect("ack payload fits")
                        .signed(&key);
                    fx.ops.mac += 1;
                    fx.sends.push(confirm);
                    fx.trace
                        .push(TraceRecord::new(self.id, "late_confirm_sent").with("to", peer));
                }
            }
            Some(ACK_LATE_CONFIRM) => {
                if !self.late_offers.contains(&peer) {
                    return self.drop_packet(fx, pkt, "no_offer");
                }
                let key = crypto::derive(self.store.own_master(), Domain::Pairwise, peer);
                fx.ops.prf += 1;
                fx.ops.mac += 1;
                if !pkt.verify(&key) {
                    return self.bad_mac(fx, pkt);
                }
                self.verified = Some((PacketType::Ack, peer));
                self.late_offers.remove(&peer);
                if self.install_pairwise(fx, PacketType::Ack, peer, key, now)
                    && self.phase == NodePhase::Established
                {
                    self.send_cluster_key(peer, fx);
                }
            }
            Some(_) => self.drop_packet(fx, pkt, "malformed"),
        }
    }

    pub fn on_cluster_key(&mut self, pkt: &Packet, fx: &mut Effects) {
        let sender = pkt.src;
        let Some(pairwise) = self.store.pairwise(sender).copied() else {
            return self.drop_packet(fx, pkt, "no_pairwise");
        };
        fx.ops.mac += 1;
        if !pkt.verify(&pairwise) {
            return self.bad_mac(fx, pkt);
        }
        self.verified = Some((PacketType::ClusterKey, sender));
        let nonce = Reader::new(pkt.payload()).u64();
        if nonce.is_some_and(|n| {
            self.cluster_nonces
                .get(&sender)
                .is_some_and(|&last| n <= last)
        }) {
            return self.drop_packet(fx, pkt, "replay");
        }
        let wrap = cluster_wrap_key(&pairwise, sender);
        fx.ops.prf += 1;
        fx.ops.enc += 1;
        let Some(key) =
            open(&wrap, pkt.payload()).and_then(|plain| KeyMaterial::from_slice(&plain).ok())
        else {
            return self.drop_packet(fx, pkt, "malformed");
        };
        self.check_verified(PacketType::ClusterKey, sender);
        if let Some(n) = nonce {
            self.cluster_nonces.insert(sender, n);
        }
        if self.store.cluster_received().get(&sender) != Some(&key) {
            self.store.install_cluster_received(sender, key);
            let seq = self.seq.bump();
            fx.trace.push(
                TraceRecord::new(self.id, "cluster_install")
                    .with("peer", sender)
                    .with("seq", seq),
            );
        }
    }

    pub fn on_alert(&mut self, pkt: &Packet, now: SimTime, fx: &mut Effects) {
        if pkt.src != NodeId::BASE_STATION {
            return self.drop_packet(fx, pkt, "malformed");
        }
        fx.ops.mac += 1;
        if !pkt.verify(self.store.global()) {
            return self.bad_mac(fx, pkt);
        }
        let mut r = Reader::new(pkt.payload());
        let (Some(victim), Some(alert_seq)) = (r.u16().map(NodeId), r.u32()) else {
            return self.drop_packet(fx, pkt, "malformed");
        };
        if !self.alerts_seen.insert((victim, alert_seq)) {
            return;
        }
        // flood onward: identical frame, base station stays the origin
        fx.sends.push(pkt.clone());
        fx.trace.push(
            TraceRecord::new(self.id, "alert_rx")
                .with("in_danger_id", victim)
                .with("alert", alert_seq),
        );
        if victim == self.id {
            self.stats.revoked_self_at = Some(now);
            self.set_phase(fx, NodePhase::Revoked);
            return;
        }
        let was_neighbor = self.store.pairwise(victim).is_some();
        self.store.revoke_peer(victim, now, self.cfg.block_duration);
        self.late_offers.remove(&victim);
        self.stats.revoked_peers_at.entry(victim).or_insert(now);
        fx.trace.push(
            TraceRecord::new(self.id, "revoke")
                .with("victim", victim)
                .with("neighbor", was_neighbor),
        );
        if was_neighbor && self.phase == NodePhase::Established {
            self.rekey_cluster(fx);
        }
    }

    pub fn on_global_rekey(&mut self, pkt: &Packet, fx: &mut Effects) {
        if pkt.src != NodeId::BASE_STATION {
            return self.drop_packet(fx, pkt, "malformed");
        }
        fx.ops.mac += 1;
        if !pkt.verify(self.store.individual()) {
            return self.bad_mac(fx, pkt);
        }
        let mut r = Reader::new(pkt.payload());
        let Some(epoch) = r.u32() else {
            return self.drop_packet(fx, pkt, "malformed");
        };
        if epoch <= self.global_epoch {
            return self.drop_packet(fx, pkt, "stale");
        }
        fx.ops.enc += 1;
        let Some(key) = open(self.store.individual(), r.rest())
            .filter(|p| p.len() == KEY_SIZE)
            .and_then(|p| KeyMaterial::from_slice(&p).ok())
        else {
            return self.drop_packet(fx, pkt, "malformed");
        };
        self.store.set_global(key);
        self.global_epoch = epoch;
        let seq = self.seq.bump();
        fx.trace.push(
            TraceRecord::new(self.id, "global_install")
                .with("epoch", epoch)
                .with("seq", seq),
        );
    }
}
