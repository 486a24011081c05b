//! The controller: derives individual keys on demand, turns HELP into ALERT
//! floods, rekeys the global key and checks sequence-number reports.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::crypto::{self, Domain, KeyMaterial};
use crate::keystore::Provisioning;
use crate::netsim::trace::{verdict_line, TraceRecord};
use crate::node::{neighbor_digest, open, seal, OpCounts};
use crate::packet::{Packet, PacketType, Reader};
use crate::{NodeId, SimTime};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BaseStationError {
    #[error("node id {0} is reserved")]
    ReservedId(NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Consistent,
    Suspicious(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportEntry {
    pub counter: u32,
    pub digest: [u8; 8],
    pub at: SimTime,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsTimer {
    GlobalRekey,
}

/// Where a base-station packet goes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BsSend {
    /// Point-to-point to `packet.dst`.
    Unicast(Packet),
    /// Network-wide, flooded by the nodes.
    Flood(Packet),
}

#[derive(Debug, Default)]
pub struct BsEffects {
    pub sends: Vec<BsSend>,
    pub timers: Vec<(SimTime, BsTimer)>,
    pub trace: Vec<TraceRecord>,
    pub verdicts: Vec<String>,
    pub ops: OpCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BsConfig {
    /// Delay between an ALERT and the following global rekey, leaving the
    /// flood time to complete under the old global key.
    pub rekey_delay: SimTime,
    /// Allowed counter excess over the expected neighbor count; `None` means
    /// one extra per expected neighbor.
    pub report_slack: Option<u32>,
    /// Revoke nodes whose REPORT is SUSPICIOUS. On lossy channels an honest
    /// node that missed a neighbor also reports a mismatching digest.
    pub revoke_on_suspicious: bool,
}

impl Default for BsConfig {
    fn default() -> Self {
        BsConfig {
            rekey_delay: 500_000,
            report_slack: None,
            revoke_on_suspicious: true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BsStats {
    pub bad_mac: u64,
    pub helps: u64,
    pub alerts: u64,
    pub rekeys: u32,
    /// First time each node's individual key authenticated a message here.
    pub first_individual_at: BTreeMap<NodeId, SimTime>,
}

#[derive(Debug, Clone)]
pub struct BaseStation {
    master_key: KeyMaterial,
    global_key: KeyMaterial,
    epoch: u32,
    deployed: BTreeSet<NodeId>,
    expected: BTreeMap<NodeId, BTreeSet<NodeId>>,
    revoked: BTreeSet<NodeId>,
    report_log: BTreeMap<NodeId, ReportEntry>,
    alert_seq: u32,
    rekey_pending: bool,
    nonce: u64,
    rng: ChaCha8Rng,
    cfg: BsConfig,
    pub stats: BsStats,
}

impl BaseStation {
    pub fn new(seed: u64, cfg: BsConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(u16::MAX) + 1);
        let master_key = KeyMaterial::random(&mut rng);
        let global_key = KeyMaterial::random(&mut rng);
        BaseStation {
            master_key,
            global_key,
            epoch: 0,
            deployed: BTreeSet::new(),
            expected: BTreeMap::new(),
            revoked: BTreeSet::new(),
            report_log: BTreeMap::new(),
            alert_seq: 0,
            rekey_pending: false,
            nonce: 0,
            rng,
            cfg,
            stats: BsStats::default(),
        }
    }

    /// Fresh initial key for a deployment.
    pub fn generate_initial_key(&mut self) -> KeyMaterial {
        KeyMaterial::random(&mut self.rng)
    }

    /// Registers the deployment and each node's expected neighbor set.
    pub fn register(&mut self, expected: BTreeMap<NodeId, BTreeSet<NodeId>>) {
        self.deployed = expected.keys().copied().collect();
        self.expected = expected;
    }

    pub fn individual_key(&self, u: NodeId) -> Result<KeyMaterial, BaseStationError> {
        if !u.is_sensor() {
            return Err(BaseStationError::ReservedId(u));
        }
        Ok(crypto::derive(&self.master_key, Domain::Individual, u))
    }

    pub fn provision(&self, u: NodeId, chain_len: usize) -> Result<Provisioning, BaseStationError> {
        Ok(Provisioning {
            individual: self.individual_key(u)?,
            global: self.global_key,
            chain_len,
        })
    }

    pub fn global_key(&self) -> &KeyMaterial {
        &self.global_key
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn revoked(&self) -> &BTreeSet<NodeId> {
        &self.revoked
    }

    pub fn report_log(&self) -> &BTreeMap<NodeId, ReportEntry> {
        &self.report_log
    }

    pub fn expected_neighbors(&self, u: NodeId) -> Option<&BTreeSet<NodeId>> {
        self.expected.get(&u)
    }

    fn next_nonce(&mut self) -> u64 {
        self.nonce += 1;
        self.nonce
    }

    /// Checks `pkt` under the sender's individual key, recording first use.
    fn authenticate(
        &mut self,
        pkt: &Packet,
        now: SimTime,
        fx: &mut BsEffects,
    ) -> Option<KeyMaterial> {
        let ik = self.individual_key(pkt.src).ok()?;
        fx.ops.prf += 1;
        fx.ops.mac += 1;
        if !self.deployed.contains(&pkt.src) || !pkt.verify(&ik) {
            self.stats.bad_mac += 1;
            fx.trace.push(
                TraceRecord::new(NodeId::BASE_STATION, "drop")
                    .with("type", pkt.ptype)
                    .with("from", pkt.src)
                    .with("reason", "bad_mac"),
            );
            return None;
        }
        self.stats.first_individual_at.entry(pkt.src).or_insert(now);
        Some(ik)
    }

    pub fn on_packet(&mut self, pkt: &Packet, now: SimTime, fx: &mut BsEffects) {
        match pkt.ptype {
            PacketType::Help => self.on_help(pkt, now, fx),
            PacketType::Report => {
                self.on_report(pkt, now, fx);
            }
            _ => fx.trace.push(
                TraceRecord::new(NodeId::BASE_STATION, "drop")
                    .with("type", pkt.ptype)
                    .with("from", pkt.src)
                    .with("reason", "unexpected_type"),
            ),
        }
    }

    pub fn on_help(&mut self, pkt: &Packet, now: SimTime, fx: &mut BsEffects) {
        if self.authenticate(pkt, now, fx).is_none() {
            return;
        }
        let mut r = Reader::new(pkt.payload());
        if r.u16().map(NodeId) != Some(pkt.src) {
            return;
        }
        self.stats.helps += 1;
        fx.trace
            .push(TraceRecord::new(NodeId::BASE_STATION, "help_rx").with("from", pkt.src));
        self.revoke(pkt.src, now, fx);
    }

    /// Revokes `victim`: ALERT flood now, global rekey after `rekey_delay`.
    pub fn revoke(&mut self, victim: NodeId, now: SimTime, fx: &mut BsEffects) {
        let fresh = self.revoked.insert(victim);
        self.alert_seq += 1;
        let mut payload = victim.0.to_be_bytes().to_vec();
        payload.extend_from_slice(&self.alert_seq.to_be_bytes());
        let alert = Packet::new(
            PacketType::Alert,
            NodeId::BASE_STATION,
            NodeId::BROADCAST,
            payload,
        )
        .expect("alert payload fits")
        .signed(&self.global_key);
        fx.ops.mac += 1;
        fx.sends.push(BsSend::Flood(alert));
        self.stats.alerts += 1;
        fx.trace.push(
            TraceRecord::new(NodeId::BASE_STATION, "alert_sent")
                .with("in_danger_id", victim)
                .with("alert", self.alert_seq)
                .with("fresh", fresh),
        );
        if fresh && !self.rekey_pending {
            self.rekey_pending = true;
            fx.timers
                .push((now + self.cfg.rekey_delay, BsTimer::GlobalRekey));
        }
    }

    pub fn on_timer(&mut self, timer: BsTimer, _now: SimTime, fx: &mut BsEffects) {
        match timer {
            BsTimer::GlobalRekey => {
                self.rekey_pending = false;
                for pkt in self.global_rekey(fx) {
                    fx.sends.push(BsSend::Unicast(pkt));
                }
            }
        }
    }

    /// Draws a new global key and seals it to every non-revoked node.
    pub fn global_rekey(&mut self, fx: &mut BsEffects) -> Vec<Packet> {
        self.global_key = KeyMaterial::random(&mut self.rng);
        self.epoch += 1;
        self.stats.rekeys += 1;
        let targets: Vec<NodeId> = self.deployed.difference(&self.revoked).copied().collect();
        let mut out = Vec::with_capacity(targets.len());
        for u in targets {
            let ik = self.individual_key(u).expect("deployed ids are sensors");
            let nonce = self.next_nonce();
            let mut payload = self.epoch.to_be_bytes().to_vec();
            payload.extend(seal(&ik, self.global_key.as_bytes(), nonce));
            fx.ops.prf += 1;
            fx.ops.enc += 1;
            fx.ops.mac += 1;
            out.push(
                Packet::new(PacketType::GlobalRekey, NodeId::BASE_STATION, u, payload)
                    .expect("rekey payload fits")
                    .signed(&ik),
            );
        }
        fx.trace.push(
            TraceRecord::new(NodeId::BASE_STATION, "global_rekey")
                .with("epoch", self.epoch)
                .with("targets", out.len()),
        );
        out
    }

    pub fn on_report(&mut self, pkt: &Packet, now: SimTime, fx: &mut BsEffects) -> Option<Verdict> {
        let ik = self.authenticate(pkt, now, fx)?;
        fx.ops.enc += 1;
        let plain = open(&ik, pkt.payload())?;
        let mut r = Reader::new(&plain);
        let counter = r.u32()?;
        let digest: [u8; 8] = r.bytes(8)?.try_into().ok()?;

        let expected = self.expected.get(&pkt.src).cloned().unwrap_or_default();
        let slack = self
            .cfg
            .report_slack
            .unwrap_or(expected.len() as u32)
            .saturating_add(self.stats.rekeys);
        let lo = expected.len() as u32;
        let verdict = if digest != neighbor_digest(expected.iter().copied()) {
            Verdict::Suspicious("digest")
        } else if counter < lo || counter > lo.saturating_add(slack) {
            Verdict::Suspicious("counter")
        } else {
            Verdict::Consistent
        };
        let (consistent, reason) = match verdict {
            Verdict::Consistent => (true, "ok"),
            Verdict::Suspicious(r) => (false, r),
        };
        fx.verdicts
            .push(verdict_line(now, pkt.src, consistent, reason));
        self.report_log.insert(
            pkt.src,
            ReportEntry {
                counter,
                digest,
                at: now,
                verdict: verdict.clone(),
            },
        );
        if !consistent && self.cfg.revoke_on_suspicious && !self.revoked.contains(&pkt.src) {
            self.revoke(pkt.src, now, fx);
        }
        Some(verdict)
    }
}
