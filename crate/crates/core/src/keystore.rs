//! Per-node key inventory and its lifecycle.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::crypto::{self, Domain, KeyChain, KeyMaterial};
use crate::{NodeId, SimTime};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyStoreError {
    #[error("peer {0} is blocklisted")]
    BlockedPeer(NodeId),
}

/// Material the base station hands a node before deployment.
#[derive(Debug, Clone)]
pub struct Provisioning {
    pub individual: KeyMaterial,
    pub global: KeyMaterial,
    pub chain_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyStore {
    owner: NodeId,
    initial_key: Option<KeyMaterial>,
    own_master: KeyMaterial,
    individual: KeyMaterial,
    pairwise: BTreeMap<NodeId, KeyMaterial>,
    cluster_sent: Option<KeyMaterial>,
    cluster_received: BTreeMap<NodeId, KeyMaterial>,
    global: KeyMaterial,
    chain: KeyChain,
    neighbor_masters: Option<BTreeMap<NodeId, KeyMaterial>>,
    blocklist: BTreeMap<NodeId, SimTime>,
}

/// Storage accounting: `L + D + 2D + 1 + 1` keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageReport {
    pub neighbors: usize,
    pub chain_len: usize,
    pub total_keys: usize,
    pub total_octets: usize,
}

impl StorageReport {
    pub fn new(neighbors: usize, chain_len: usize, accounting_key_size: usize) -> Self {
        // chain + received cluster keys + (pairwise + wrapped per-neighbor state)
        // + individual + global
        let total_keys = chain_len + neighbors + 2 * neighbors + 1 + 1;
        StorageReport {
            neighbors,
            chain_len,
            total_keys,
            total_octets: total_keys * accounting_key_size,
        }
    }
}

const CHAIN_SEED_INPUT: &[u8] = b"\x05chain-seed";

impl KeyStore {
    /// Loads the bootstrap key and derives this node's master key. The
    /// individual and global keys come from the base station.
    pub fn preload(kin: KeyMaterial, owner: NodeId, prov: Provisioning) -> Self {
        let own_master = crypto::derive(&kin, Domain::Master, owner);
        let chain_seed = crypto::prf(&prov.individual, CHAIN_SEED_INPUT);
        let chain = crypto::generate_key_chain(&chain_seed, prov.chain_len.max(1))
            .expect("chain length clamped to >= 1");
        KeyStore {
            owner,
            initial_key: Some(kin),
            own_master,
            individual: prov.individual,
            pairwise: BTreeMap::new(),
            cluster_sent: None,
            cluster_received: BTreeMap::new(),
            global: prov.global,
            chain,
            neighbor_masters: Some(BTreeMap::new()),
            blocklist: BTreeMap::new(),
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn initial_key(&self) -> Option<&KeyMaterial> {
        self.initial_key.as_ref()
    }

    pub fn own_master(&self) -> &KeyMaterial {
        &self.own_master
    }

    pub fn individual(&self) -> &KeyMaterial {
        &self.individual
    }

    pub fn global(&self) -> &KeyMaterial {
        &self.global
    }

    pub fn chain(&self) -> &KeyChain {
        &self.chain
    }

    pub fn pairwise(&self, peer: NodeId) -> Option<&KeyMaterial> {
        self.pairwise.get(&peer)
    }

    pub fn pairwise_map(&self) -> &BTreeMap<NodeId, KeyMaterial> {
        &self.pairwise
    }

    pub fn cluster_sent(&self) -> Option<&KeyMaterial> {
        self.cluster_sent.as_ref()
    }

    pub fn cluster_received(&self) -> &BTreeMap<NodeId, KeyMaterial> {
        &self.cluster_received
    }

    pub fn neighbor_masters(&self) -> Option<&BTreeMap<NodeId, KeyMaterial>> {
        self.neighbor_masters.as_ref()
    }

    pub fn blocklist(&self) -> &BTreeMap<NodeId, SimTime> {
        &self.blocklist
    }

    pub fn is_blocked(&self, peer: NodeId, now: SimTime) -> bool {
        self.blocklist.get(&peer).is_some_and(|&until| now < until)
    }

    /// Master key of `peer` computed from the initial key, cached for the
    /// discovery phase. `None` once the initial key is gone.
    pub fn master_of(&mut self, peer: NodeId) -> Option<KeyMaterial> {
        if peer == self.owner {
            return Some(self.own_master);
        }
        let kin = self.initial_key?;
        let k = crypto::derive(&kin, Domain::Master, peer);
        if let Some(cache) = self.neighbor_masters.as_mut() {
            cache.insert(peer, k);
        }
        Some(k)
    }

    pub fn install_pairwise(
        &mut self,
        peer: NodeId,
        key: KeyMaterial,
        now: SimTime,
    ) -> Result<(), KeyStoreError> {
        if self.is_blocked(peer, now) {
            return Err(KeyStoreError::BlockedPeer(peer));
        }
        self.pairwise.insert(peer, key);
        Ok(())
    }

    pub fn install_cluster_received(&mut self, peer: NodeId, key: KeyMaterial) {
        self.cluster_received.insert(peer, key);
    }

    pub fn set_cluster_sent(&mut self, key: KeyMaterial) {
        self.cluster_sent = Some(key);
    }

    pub fn set_global(&mut self, key: KeyMaterial) {
        self.global = key;
    }

    /// Drops the initial key and every cached neighbor master key. Idempotent.
    pub fn erase_bootstrap(&mut self) {
        self.initial_key = None;
        self.neighbor_masters = None;
    }

    /// Removes any keys shared with `victim` and blocks it until `now + block_duration`.
    pub fn revoke_peer(&mut self, victim: NodeId, now: SimTime, block_duration: SimTime) {
        self.pairwise.remove(&victim);
        self.cluster_received.remove(&victim);
        if let Some(cache) = self.neighbor_masters.as_mut() {
            cache.remove(&victim);
        }
        let until = now.saturating_add(block_duration);
        let entry = self.blocklist.entry(victim).or_insert(until);
        *entry = (*entry).max(until);
    }

    pub fn storage_report(&self, accounting_key_size: usize) -> StorageReport {
        StorageReport::new(self.pairwise.len(), self.chain.len(), accounting_key_size)
    }

    /// Key-value text dump with hex keys; absent keys print as the zero sentinel.
    pub fn dump(&self) -> String {
        let hex_or_zero = |k: Option<&KeyMaterial>| k.unwrap_or(&KeyMaterial::ABSENT).to_hex();
        let mut out = String::new();
        let _ = writeln!(out, "owner={}", self.owner);
        let _ = writeln!(
            out,
            "initial_key={}",
            hex_or_zero(self.initial_key.as_ref())
        );
        let _ = writeln!(out, "own_master={}", self.own_master.to_hex());
        let _ = writeln!(out, "individual={}", self.individual.to_hex());
        let _ = writeln!(
            out,
            "cluster_sent={}",
            hex_or_zero(self.cluster_sent.as_ref())
        );
        let _ = writeln!(out, "global={}", self.global.to_hex());
        let _ = writeln!(out, "chain_len={}", self.chain.len());
        let _ = writeln!(out, "chain_anchor={}", self.chain.anchor().to_hex());
        for (peer, k) in &self.pairwise {
            let _ = writeln!(out, "pairwise.{peer}={}", k.to_hex());
        }
        for (peer, k) in &self.cluster_received {
            let _ = writeln!(out, "cluster_received.{peer}={}", k.to_hex());
        }
        if let Some(cache) = &self.neighbor_masters {
            for (peer, k) in cache {
                let _ = writeln!(out, "neighbor_master.{peer}={}", k.to_hex());
            }
        }
        for (peer, until) in &self.blocklist {
            let _ = writeln!(out, "blocked.{peer}={until}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(id: u16, kin: KeyMaterial, rng: &mut ChaCha8Rng) -> KeyStore {
        let prov = Provisioning {
            individual: KeyMaterial::random(rng),
            global: KeyMaterial::random(rng),
            chain_len: 20,
        };
        KeyStore::preload(kin, NodeId(id), prov)
    }

    #[test]
    fn same_kin_distinct_masters() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let kin = KeyMaterial::random(&mut r);
        let a = store(1, kin, &mut r);
        let b = store(2, kin, &mut r);
        assert_ne!(a.own_master(), b.own_master());
        assert_eq!(
            *a.own_master(),
            crypto::derive(&kin, Domain::Master, NodeId(1))
        );
    }

    #[test]
    fn install_lookup_and_block() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let mut s = store(1, KeyMaterial::random(&mut r), &mut r);
        let k = KeyMaterial::random(&mut r);
        s.install_pairwise(NodeId(2), k, 0).unwrap();
        assert_eq!(s.pairwise(NodeId(2)), Some(&k));

        s.revoke_peer(NodeId(2), 100, 50);
        assert_eq!(s.pairwise(NodeId(2)), None);
        assert_eq!(
            s.install_pairwise(NodeId(2), k, 120),
            Err(KeyStoreError::BlockedPeer(NodeId(2)))
        );
        // block expires at 150
        assert_eq!(
            s.install_pairwise(NodeId(2), k, 149),
            Err(KeyStoreError::BlockedPeer(NodeId(2)))
        );
        s.install_pairwise(NodeId(2), k, 150).unwrap();
    }

    #[test]
    fn revoke_unknown_only_blocks() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let mut s = store(1, KeyMaterial::random(&mut r), &mut r);
        s.install_pairwise(NodeId(2), KeyMaterial::random(&mut r), 0)
            .unwrap();
        s.revoke_peer(NodeId(9), 0, 10);
        assert_eq!(s.pairwise_map().len(), 1);
        assert!(s.is_blocked(NodeId(9), 5));
    }

    #[test]
    fn erase_is_idempotent_and_retains_keys() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let kin = KeyMaterial::random(&mut r);
        let mut s = store(1, kin, &mut r);
        s.master_of(NodeId(2));
        s.install_pairwise(NodeId(2), KeyMaterial::random(&mut r), 0)
            .unwrap();
        s.erase_bootstrap();
        assert!(s.initial_key().is_none());
        assert!(s.neighbor_masters().is_none());
        assert!(s.pairwise(NodeId(2)).is_some());
        assert_eq!(s.master_of(NodeId(3)), None);
        let once = s.clone();
        s.erase_bootstrap();
        assert_eq!(s, once);
        assert!(!s.dump().contains(&kin.to_hex()));
    }

    #[test]
    fn storage_formula() {
        let r = StorageReport::new(20, 20, 8);
        assert_eq!(r.total_keys, 82);
        assert_eq!(r.total_octets, 656);
        assert_eq!(StorageReport::new(0, 1, 8).total_keys, 3);
    }

    #[test]
    fn dump_marks_absent_keys() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let mut s = store(4, KeyMaterial::random(&mut r), &mut r);
        s.erase_bootstrap();
        let d = s.dump();
        assert!(d.contains(&format!("initial_key={}", "0".repeat(32))));
        assert!(d.contains(&format!("cluster_sent={}", "0".repeat(32))));
        assert!(d.starts_with("owner=4\n"));
    }
}
