//! Symmetric key management for wireless sensor networks.
//!
//! Nodes carry four kinds of keys: an individual key shared with the base
//! station, pairwise keys with each one-hop neighbor, a cluster key for local
//! broadcast, and a network-wide global key. Pairwise keys are bootstrapped
//! from a pre-distributed initial key that every node erases once its
//! discovery window closes, so capturing a node later only exposes that
//! node's own links.
//!
//! On top of the key scheme sit two compromise-detection paths: a periodic
//! self-check that lets a tampered node call for help (the base station then
//! floods an ALERT and rekeys the global key), and sequence-number reports
//! the base station compares against the deployment topology.
//!
//! The [`netsim`] module runs all of this inside a deterministic
//! discrete-event radio simulator; [`adversary`] scripts attacks and provides
//! the key-closure oracle; [`harness`] drives scenarios and experiment sweeps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub mod adversary;
pub mod base_station;
pub mod crypto;
pub mod harness;
pub mod keystore;
pub mod metrics;
pub mod netsim;
pub mod node;
pub mod packet;

pub use crypto::{KeyChain, KeyMaterial, MacTag};
pub use keystore::{KeyStore, StorageReport};
pub use netsim::Simulation;
pub use packet::{Packet, PacketType};

/// Simulated time in ticks; one tick is one microsecond.
pub type SimTime = u64;

pub const TICKS_PER_SECOND: SimTime = 1_000_000;

/// Node identifier. `0` is the base station and `0xFFFF` the broadcast address.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct NodeId(pub u16);

impl NodeId {
    pub const BASE_STATION: NodeId = NodeId(0);
    pub const BROADCAST: NodeId = NodeId(0xFFFF);

    pub fn is_sensor(self) -> bool {
        self != Self::BASE_STATION && self != Self::BROADCAST
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for NodeId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(NodeId)
    }
}
