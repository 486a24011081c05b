//! Scripted attacks and the key-closure oracle.
//!
//! A compromise hands the attacker an exact copy of the victim's key store.
//! [`closure`] then computes every key the attacker can reach from such
//! copies by re-running the derivations (master keys from the initial key,
//! pairwise keys from master keys), which is what the localization and
//! revocation checks compare against the live network.

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crypto::{self, Domain, KeyMaterial, MacTag};
use crate::keystore::KeyStore;
use crate::netsim::topology::LinkGain;
use crate::netsim::TraceRecord;
use crate::node::{canonical_pairwise, NodePhase};
use crate::packet::{Packet, PacketType};
use crate::{NodeId, SimTime, Simulation};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdversaryAction {
    /// Physically capture a node and copy its key store.
    Compromise { node: NodeId },
    /// HELLOs (plus ACKs) under a made-up identity. With `boost` every node
    /// hears them; otherwise only the topology neighbors of `fake_id`.
    HelloFlood { fake_id: NodeId, boost: bool },
    /// Replay a captured node's identity next to `position`.
    Clone { node: NodeId, position: NodeId },
    /// XOR `mask` onto the payload and MAC of every frame sent over `src -> dst`.
    Alter {
        src: NodeId,
        dst: NodeId,
        mask: Vec<u8>,
    },
    /// Re-send the first overheard frame of `ptype` from `src` to `target`.
    Replay {
        ptype: PacketType,
        src: NodeId,
        target: NodeId,
    },
}

impl AdversaryAction {
    /// Deployed nodes this action depends on.
    pub fn referenced_nodes(&self) -> Vec<NodeId> {
        match self {
            AdversaryAction::Compromise { node } => vec![*node],
            AdversaryAction::HelloFlood { .. } => vec![],
            AdversaryAction::Clone { node, position } => vec![*node, *position],
            AdversaryAction::Alter { src, dst, .. } => vec![*src, *dst],
            AdversaryAction::Replay { src, target, .. } => vec![*src, *target],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            AdversaryAction::Compromise { .. } => "compromise",
            AdversaryAction::HelloFlood { .. } => "hello_flood",
            AdversaryAction::Clone { .. } => "clone",
            AdversaryAction::Alter { .. } => "alter",
            AdversaryAction::Replay { .. } => "replay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledAction {
    pub at: SimTime,
    pub kind: AdversaryAction,
}

#[derive(Debug, Clone)]
pub struct Capture {
    pub node: NodeId,
    pub at: SimTime,
    pub store: KeyStore,
}

#[derive(Debug, Clone)]
struct AlterRule {
    from: SimTime,
    src: NodeId,
    dst: NodeId,
    mask: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Overheard {
    pub at: SimTime,
    pub transmitter: NodeId,
    pub packet: Packet,
}

#[derive(Debug, Clone)]
pub struct Adversary {
    captures: Vec<Capture>,
    alters: Vec<AlterRule>,
    recording: bool,
    overheard: Vec<Overheard>,
    rng: ChaCha8Rng,
    pub frames_altered: u64,
}

impl Adversary {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(u16::MAX) + 2);
        Adversary {
            captures: Vec::new(),
            alters: Vec::new(),
            recording: false,
            overheard: Vec::new(),
            rng,
            frames_altered: 0,
        }
    }

    pub fn captures(&self) -> &[Capture] {
        &self.captures
    }

    pub fn overheard(&self) -> &[Overheard] {
        &self.overheard
    }

    pub(crate) fn enable_recording(&mut self) {
        self.recording = true;
    }

    pub(crate) fn overhear(&mut self, at: SimTime, transmitter: NodeId, pkt: &Packet) {
        if self.recording {
            self.overheard.push(Overheard {
                at,
                transmitter,
                packet: pkt.clone(),
            });
        }
    }

    pub(crate) fn alter(&mut self, now: SimTime, link: &LinkGain, frame: &mut [u8], skip: usize) {
        let mut touched = false;
        for rule in &self.alters {
            if rule.from <= now && rule.src == link.src && rule.dst == link.dst {
                for (b, m) in frame.iter_mut().skip(skip).zip(&rule.mask) {
                    *b ^= m;
                }
                touched = true;
            }
        }
        if touched {
            self.frames_altered += 1;
        }
    }

    /// Initial key from any capture taken before its victim erased it.
    pub fn stolen_initial_key(&self) -> Option<KeyMaterial> {
        self.captures
            .iter()
            .find_map(|c| c.store.initial_key().copied())
    }

    fn latest_capture(&self, node: NodeId) -> Option<&Capture> {
        self.captures.iter().rev().find(|c| c.node == node)
    }

    fn forged_tag(&mut self) -> MacTag {
        let mut b = [0u8; crypto::MAC_SIZE];
        self.rng.fill_bytes(&mut b);
        MacTag::from_bytes(b)
    }
}

fn hello_from(id: NodeId) -> Packet {
    Packet::new(
        PacketType::Hello,
        id,
        NodeId::BROADCAST,
        id.0.to_be_bytes().to_vec(),
    )
    .expect("hello payload fits")
}

fn ack_from(id: NodeId, to: NodeId) -> Packet {
    Packet::new(PacketType::Ack, id, to, id.0.to_be_bytes().to_vec()).expect("ack payload fits")
}

impl Simulation {
    /// Copies `node`'s key store and marks it tampered. No-op on revoked nodes.
    pub fn compromise(&mut self, node: NodeId) -> Option<Capture> {
        let now = self.now();
        let n = self.node_mut(node)?;
        if n.phase() == NodePhase::Revoked {
            self.push_trace(TraceRecord::new(node, "compromise_noop"));
            return None;
        }
        n.tamper();
        let cap = Capture {
            node,
            at: now,
            store: n.store().clone(),
        };
        let had_kin = cap.store.initial_key().is_some();
        self.adversary.captures.push(cap.clone());
        self.push_trace(TraceRecord::new(node, "compromised").with("initial_key", had_kin));
        Some(cap)
    }

    pub(crate) fn run_adversary(&mut self, action: AdversaryAction) {
        let now = self.now();
        self.push_trace(
            TraceRecord::new(NodeId::BASE_STATION, "adversary").with("kind", action.kind_name()),
        );
        match action {
            AdversaryAction::Compromise { node } => {
                self.compromise(node);
            }
            AdversaryAction::HelloFlood { fake_id, boost } => self.hello_flood(fake_id, boost, now),
            AdversaryAction::Clone { node, position } => {
                let store = match self.adversary.latest_capture(node) {
                    Some(c) => Some(c.store.clone()),
                    None => self.compromise(node).map(|c| c.store),
                };
                let Some(store) = store else {
                    return;
                };
                let ack = ack_from(node, position).signed(store.own_master());
                let _ = self.inject(&hello_from(node), position, now);
                let _ = self.inject(&ack, position, now);
            }
            AdversaryAction::Alter { src, dst, mask } => {
                self.adversary.alters.push(AlterRule {
                    from: now,
                    src,
                    dst,
                    mask,
                });
            }
            AdversaryAction::Replay { ptype, src, target } => {
                let found = self
                    .adversary
                    .overheard
                    .iter()
                    .find(|o| o.packet.ptype == ptype && o.packet.src == src)
                    .map(|o| o.packet.clone());
                match found {
                    Some(pkt) => {
                        let _ = self.inject(&pkt, target, now);
                    }
                    None => self.push_trace(
                        TraceRecord::new(target, "replay_miss")
                            .with("type", ptype)
                            .with("src", src),
                    ),
                }
            }
        }
    }

    /// Floods HELLOs from `fake_id`, each followed by an ACK. Without a
    /// stolen initial key the ACK carries a random tag.
    pub fn hello_flood(&mut self, fake_id: NodeId, boost: bool, at: SimTime) {
        let targets: Vec<NodeId> = if boost {
            self.deployed().into_iter().collect()
        } else {
            self.topology()
                .out_links(fake_id)
                .map(|l| l.dst)
                .filter(|d| self.node(*d).is_some())
                .collect()
        };
        let master = self
            .adversary
            .stolen_initial_key()
            .map(|kin| crypto::derive(&kin, Domain::Master, fake_id));
        for t in targets.into_iter().filter(|&t| t != fake_id) {
            let _ = self.inject(&hello_from(fake_id), t, at);
            let mut ack = ack_from(fake_id, t);
            ack = match &master {
                Some(k) => ack.signed(k),
                None => {
                    ack.mac = self.adversary.forged_tag();
                    ack
                }
            };
            let _ = self.inject(&ack, t, at);
        }
    }
}

/// Every key reachable from a set of captured key stores.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyClosure {
    pub initial_key: Option<KeyMaterial>,
    pub masters: BTreeMap<NodeId, KeyMaterial>,
    /// Candidate values per unordered pair `(lo, hi)`.
    pub pairwise: BTreeMap<(NodeId, NodeId), BTreeSet<KeyMaterial>>,
    /// Cluster keys by owner.
    pub cluster: BTreeMap<NodeId, BTreeSet<KeyMaterial>>,
    pub global: BTreeSet<KeyMaterial>,
    pub individual: BTreeMap<NodeId, KeyMaterial>,
}

fn ordered(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl KeyClosure {
    pub fn knows_pairwise(&self, a: NodeId, b: NodeId, key: &KeyMaterial) -> bool {
        self.pairwise
            .get(&ordered(a, b))
            .is_some_and(|s| s.contains(key))
    }

    pub fn pairs(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.pairwise.keys().copied().collect()
    }
}

/// Closes the captured keys under the master and pairwise derivations over
/// the id universe `ids`. With `late_join`, responder-keyed pairwise keys
/// (`prf(K_x, y)` for `y > x`) are included as well.
pub fn closure<'a, I>(captures: I, ids: &BTreeSet<NodeId>, late_join: bool) -> KeyClosure
where
    I: IntoIterator<Item = &'a KeyStore>,
{
    let mut c = KeyClosure::default();
    for store in captures {
        if let Some(kin) = store.initial_key() {
            c.initial_key = Some(*kin);
        }
        c.masters.insert(store.owner(), *store.own_master());
        if let Some(cache) = store.neighbor_masters() {
            c.masters.extend(cache.iter().map(|(k, v)| (*k, *v)));
        }
        for (peer, k) in store.pairwise_map() {
            c.pairwise
                .entry(ordered(store.owner(), *peer))
                .or_default()
                .insert(*k);
        }
        if let Some(k) = store.cluster_sent() {
            c.cluster.entry(store.owner()).or_default().insert(*k);
        }
        for (owner, k) in store.cluster_received() {
            c.cluster.entry(*owner).or_default().insert(*k);
        }
        c.global.insert(*store.global());
        c.individual.insert(store.owner(), *store.individual());
    }
    if let Some(kin) = c.initial_key {
        for &id in ids {
            c.masters
                .insert(id, crypto::derive(&kin, Domain::Master, id));
        }
    }
    let masters: Vec<(NodeId, KeyMaterial)> = c.masters.iter().map(|(k, v)| (*k, *v)).collect();
    for (x, kx) in masters {
        for &y in ids {
            if y < x {
                c.pairwise
                    .entry((y, x))
                    .or_default()
                    .insert(canonical_pairwise(&kx, y));
            } else if late_join && y > x {
                c.pairwise.entry((x, y)).or_default().insert(crypto::derive(
                    &kx,
                    Domain::Pairwise,
                    y,
                ));
            }
        }
    }
    c
}

/// Pairs `(lo, hi)` whose pairwise key the attacker can compute.
pub fn derivable_pairwise<'a, I>(captures: I, ids: &BTreeSet<NodeId>) -> BTreeSet<(NodeId, NodeId)>
where
    I: IntoIterator<Item = &'a KeyStore>,
{
    closure(captures, ids, false).pairs()
}

/// Keys still in use by honest nodes that a closure can reproduce.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Exposure {
    pub pairs: BTreeSet<(NodeId, NodeId)>,
    /// Owners whose current cluster key is known to the attacker.
    pub cluster_owners: BTreeSet<NodeId>,
    /// Honest nodes whose current global key is known to the attacker.
    pub global_holders: BTreeSet<NodeId>,
}

impl Exposure {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty() && self.cluster_owners.is_empty() && self.global_holders.is_empty()
    }
}

/// Compares `c` against the live keys of every node not in `excluded`.
pub fn exposure(sim: &Simulation, c: &KeyClosure, excluded: &BTreeSet<NodeId>) -> Exposure {
    let mut e = Exposure::default();
    for node in sim.nodes() {
        let u = node.id();
        if excluded.contains(&u) || node.phase() == NodePhase::Revoked {
            continue;
        }
        let store = node.store();
        for (peer, k) in store.pairwise_map() {
            if c.knows_pairwise(u, *peer, k) {
                e.pairs.insert(ordered(u, *peer));
            }
        }
        if let Some(k) = store.cluster_sent() {
            if c.cluster.get(&u).is_some_and(|s| s.contains(k)) {
                e.cluster_owners.insert(u);
            }
        }
        for (owner, k) in store.cluster_received() {
            if !excluded.contains(owner) && c.cluster.get(owner).is_some_and(|s| s.contains(k)) {
                e.cluster_owners.insert(*owner);
            }
        }
        if c.global.contains(store.global()) {
            e.global_holders.insert(u);
        }
    }
    e
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEntry {
    pub victim: NodeId,
    pub compromised_at: SimTime,
    pub help_at: Option<SimTime>,
    /// Neighbors holding a pairwise key with the victim at capture time.
    pub neighbors: BTreeSet<NodeId>,
    pub revoked_by: BTreeSet<NodeId>,
    pub full_revocation_at: Option<SimTime>,
    pub rekey_complete: bool,
    pub residual: Exposure,
}

impl DetectionEntry {
    pub fn help_latency(&self) -> Option<SimTime> {
        self.help_at.map(|h| h - self.compromised_at)
    }

    pub fn coverage(&self) -> f64 {
        if self.neighbors.is_empty() {
            1.0
        } else {
            self.revoked_by.len() as f64 / self.neighbors.len() as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionReport {
    pub entries: Vec<DetectionEntry>,
}

impl DetectionReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Detection latency, revocation coverage and residual exposure for each
/// compromised node (first capture per victim).
pub fn evaluate_detection(sim: &Simulation) -> DetectionReport {
    let ids = sim.deployed();
    let late = sim.config().protocol.accept_late_joiners;
    let bs = sim.base_station();
    let revoked = bs.revoked().clone();
    let mut seen = BTreeSet::new();
    let mut entries = Vec::new();
    for cap in sim.adversary().captures() {
        if !seen.insert(cap.node) {
            continue;
        }
        let victim_node = sim.node(cap.node);
        let help_at =
            victim_node.and_then(|n| n.stats.help_sent_at.iter().copied().find(|&t| t >= cap.at));
        let neighbors: BTreeSet<NodeId> = cap.store.pairwise_map().keys().copied().collect();
        let revoked_by: BTreeSet<NodeId> = neighbors
            .iter()
            .copied()
            .filter(|n| {
                sim.node(*n)
                    .is_some_and(|x| x.stats.revoked_peers_at.contains_key(&cap.node))
            })
            .collect();
        let full_revocation_at = if revoked_by.len() == neighbors.len() {
            revoked_by
                .iter()
                .filter_map(|n| sim.node(*n)?.stats.revoked_peers_at.get(&cap.node).copied())
                .max()
                .or(Some(cap.at))
        } else {
            None
        };
        let rekey_complete = revoked.contains(&cap.node)
            && bs.epoch() > 0
            && sim
                .nodes()
                .filter(|n| !revoked.contains(&n.id()))
                .all(|n| n.global_epoch() == bs.epoch());
        let own: Vec<&KeyStore> = sim
            .adversary()
            .captures()
            .iter()
            .filter(|c| c.node == cap.node)
            .map(|c| &c.store)
            .collect();
        let residual = exposure(sim, &closure(own, &ids, late), &revoked);
        entries.push(DetectionEntry {
            victim: cap.node,
            compromised_at: cap.at,
            help_at,
            neighbors,
            revoked_by,
            full_revocation_at,
            rekey_complete,
            residual,
        });
    }
    DetectionReport { entries }
}
