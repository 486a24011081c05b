#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsnkm::crypto::{derive, Domain};
use wsnkm::harness::sweep::quiet_noise;
use wsnkm::harness::topogen::random_connected;
use wsnkm::netsim::{ChannelConfig, RunLimit, SimConfig, Topology};
use wsnkm::node::ProtocolConfig;
use wsnkm::{KeyMaterial, KeyStore, NodeId, SimTime, Simulation, TICKS_PER_SECOND};

pub const T_MIN: SimTime = 5 * TICKS_PER_SECOND;

/// Lossless simulation of nodes `1..=n`, booting in `[0.1 s, 1.1 s)`.
pub fn lossless(n: usize, seed: u64, topology: Topology, protocol: ProtocolConfig) -> Simulation {
    let mut cfg = SimConfig::new(seed);
    cfg.protocol = protocol;
    cfg.channel = ChannelConfig::lossless();
    cfg.check_dumps = true;
    let mut sim = Simulation::new(cfg, topology, quiet_noise()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 1..=n {
        sim.add_node(NodeId(i as u16), rng.gen_range(100_000..1_100_000))
            .unwrap();
    }
    sim
}

pub fn random_lossless(n: usize, seed: u64) -> Simulation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(n as u64));
    let topo = random_connected(n, 4, &mut rng);
    lossless(n, seed, topo, ProtocolConfig::default())
}

/// Time by which every node of a `lossless` deployment has erased.
pub const SETTLED: SimTime = 1_100_000 + T_MIN + 1;

pub fn run_until(sim: &mut Simulation, t: SimTime) {
    sim.run(RunLimit::Until(t));
}

/// The pairwise key of `a` and `b` recomputed from the initial key.
pub fn true_pairwise(kin: &KeyMaterial, a: NodeId, b: NodeId) -> KeyMaterial {
    let (lo, hi) = (a.min(b), a.max(b));
    derive(&derive(kin, Domain::Master, hi), Domain::Pairwise, lo)
}

/// Every key material value held in `store`.
pub fn store_keys(store: &KeyStore) -> Vec<KeyMaterial> {
    let mut keys = vec![*store.own_master(), *store.individual(), *store.global()];
    keys.extend(store.initial_key().copied());
    keys.extend(store.pairwise_map().values().copied());
    keys.extend(store.cluster_sent().copied());
    keys.extend(store.cluster_received().values().copied());
    if let Some(m) = store.neighbor_masters() {
        keys.extend(m.values().copied());
    }
    keys.extend(store.chain().links().iter().copied());
    keys
}

/// Brute-force attacker knowledge: the captured keys, every master key
/// derivable from any of them, and every pairwise key derivable from those.
pub fn brute_force_knowledge(
    stores: &[&KeyStore],
    ids: &BTreeSet<NodeId>,
) -> BTreeSet<KeyMaterial> {
    let mut known: BTreeSet<KeyMaterial> = stores.iter().flat_map(|s| store_keys(s)).collect();
    let masters: Vec<KeyMaterial> = known
        .iter()
        .flat_map(|k| ids.iter().map(move |&id| derive(k, Domain::Master, id)))
        .collect();
    known.extend(masters);
    let pairwise: Vec<KeyMaterial> = known
        .iter()
        .flat_map(|k| ids.iter().map(move |&id| derive(k, Domain::Pairwise, id)))
        .collect();
    known.extend(pairwise);
    known
}

/// Pairs `(lo, hi)` over `ids` whose real pairwise key is in `known`.
pub fn brute_force_pairs(
    known: &BTreeSet<KeyMaterial>,
    kin: &KeyMaterial,
    ids: &BTreeSet<NodeId>,
) -> BTreeSet<(NodeId, NodeId)> {
    let mut out = BTreeSet::new();
    for &a in ids {
        for &b in ids.range(NodeId(a.0 + 1)..) {
            if known.contains(&true_pairwise(kin, a, b)) {
                out.insert((a, b));
            }
        }
    }
    out
}

/// Trace lines for node `id` with event `ev`.
pub fn events<'a>(
    sim: &'a Simulation,
    id: NodeId,
    ev: &'a str,
) -> impl Iterator<Item = &'a String> + 'a {
    let node = format!("node={id} ");
    let ev = format!("ev={ev} ");
    sim.trace()
        .iter()
        .filter(move |l| l.contains(&node) && l.contains(&ev))
}
