//! Energy ledger, run summaries and result export.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::OpCounts;
use crate::{NodeId, SimTime, Simulation};

/// Abstract energy units per radio octet and per crypto operation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyCosts {
    pub tx_per_octet: f64,
    pub rx_per_octet: f64,
    pub mac: f64,
    pub prf: f64,
    pub enc: f64,
}

impl Default for EnergyCosts {
    fn default() -> Self {
        EnergyCosts {
            tx_per_octet: 2.0,
            rx_per_octet: 1.0,
            mac: 5.0,
            prf: 5.0,
            enc: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeCounters {
    pub tx_octets: u64,
    pub rx_octets: u64,
    pub tx_frames: u64,
    pub rx_frames: u64,
    pub mac_ops: u64,
    pub prf_ops: u64,
    pub enc_ops: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LedgerEvent {
    Tx { node: NodeId, octets: u64 },
    Rx { node: NodeId, octets: u64 },
    Mac { node: NodeId },
    Prf { node: NodeId },
    Enc { node: NodeId },
    Other { name: String },
}

#[derive(Debug, Clone, Default)]
pub struct EnergyLedger {
    costs: EnergyCosts,
    nodes: BTreeMap<NodeId, NodeCounters>,
    ignored: u64,
}

impl EnergyLedger {
    pub fn new(costs: EnergyCosts) -> Self {
        EnergyLedger {
            costs,
            nodes: BTreeMap::new(),
            ignored: 0,
        }
    }

    pub fn record(&mut self, ev: &LedgerEvent) {
        let (node, apply): (NodeId, fn(&mut NodeCounters, u64)) = match ev {
            LedgerEvent::Tx { node, .. } => (*node, |c, n| {
                c.tx_octets += n;
                c.tx_frames += 1;
            }),
            LedgerEvent::Rx { node, .. } => (*node, |c, n| {
                c.rx_octets += n;
                c.rx_frames += 1;
            }),
            LedgerEvent::Mac { node } => (*node, |c, _| c.mac_ops += 1),
            LedgerEvent::Prf { node } => (*node, |c, _| c.prf_ops += 1),
            LedgerEvent::Enc { node } => (*node, |c, _| c.enc_ops += 1),
            LedgerEvent::Other { name } => {
                log::warn!("ledger ignoring event {name}");
                self.ignored += 1;
                return;
            }
        };
        let octets = match ev {
            LedgerEvent::Tx { octets, .. } | LedgerEvent::Rx { octets, .. } => *octets,
            _ => 0,
        };
        apply(self.nodes.entry(node).or_default(), octets);
    }

    /// Adds a handler's crypto operation counts in bulk.
    pub fn record_ops(&mut self, node: NodeId, ops: OpCounts) {
        let c = self.nodes.entry(node).or_default();
        c.mac_ops += ops.mac;
        c.prf_ops += ops.prf;
        c.enc_ops += ops.enc;
    }

    pub fn counters(&self, node: NodeId) -> NodeCounters {
        self.nodes.get(&node).copied().unwrap_or_default()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &NodeCounters)> {
        self.nodes.iter().map(|(k, v)| (*k, v))
    }

    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    pub fn energy(&self, node: NodeId) -> f64 {
        let c = self.counters(node);
        let k = &self.costs;
        c.tx_octets as f64 * k.tx_per_octet
            + c.rx_octets as f64 * k.rx_per_octet
            + c.mac_ops as f64 * k.mac
            + c.prf_ops as f64 * k.prf
            + c.enc_ops as f64 * k.enc
    }

    pub fn total_energy(&self) -> f64 {
        self.nodes.keys().map(|&n| self.energy(n)).sum()
    }
}

/// One exported result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub n: usize,
    pub seed: u64,
    pub success_rate: f64,
    pub mean_pairwise_us: f64,
    pub max_msgs: u64,
    pub energy_units: f64,
}

/// Everything computed from a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub result: ExperimentResult,
    /// Last pairwise install minus boot, per node with at least one install.
    pub pairwise_completion_us: BTreeMap<NodeId, SimTime>,
    /// Boot until the base station first authenticated the node's individual key.
    pub individual_us: BTreeMap<NodeId, SimTime>,
    pub expected_pairs: usize,
    pub established_pairs: usize,
}

impl RunSummary {
    pub fn mean_individual_us(&self) -> f64 {
        mean(self.individual_us.values().map(|&v| v as f64))
    }
}

fn mean<I: Iterator<Item = f64>>(it: I) -> f64 {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Computes the result row for a completed run.
pub fn summarize(sim: &Simulation) -> RunSummary {
    // revoked nodes are meant to lose their links
    let members: BTreeSet<NodeId> = sim
        .deployed()
        .difference(sim.base_station().revoked())
        .copied()
        .collect();
    let expected = sim.topology().mutual_pairs(&members);
    let established = expected
        .iter()
        .filter(|(a, b)| {
            let (Some(na), Some(nb)) = (sim.node(*a), sim.node(*b)) else {
                return false;
            };
            match (na.store().pairwise(*b), nb.store().pairwise(*a)) {
                (Some(x), Some(y)) => x == y,
                _ => false,
            }
        })
        .count();
    let success_rate = if expected.is_empty() {
        1.0
    } else {
        established as f64 / expected.len() as f64
    };

    let mut pairwise_completion_us = BTreeMap::new();
    let mut individual_us = BTreeMap::new();
    let mut max_msgs = 0;
    for node in sim.nodes() {
        max_msgs = max_msgs.max(node.stats.frames_received);
        let Some(boot) = node.boot_time() else {
            continue;
        };
        if let Some(last) = node.stats.pairwise_installed_at.values().max() {
            pairwise_completion_us.insert(node.id(), last - boot);
        }
        if let Some(&t) = sim.base_station().stats.first_individual_at.get(&node.id()) {
            individual_us.insert(node.id(), t.saturating_sub(boot));
        }
    }

    RunSummary {
        result: ExperimentResult {
            n: sim.deployed().len(),
            seed: sim.seed(),
            success_rate,
            mean_pairwise_us: mean(pairwise_completion_us.values().map(|&v| v as f64)),
            max_msgs,
            energy_units: sim.ledger().total_energy(),
        },
        pairwise_completion_us,
        individual_us,
        expected_pairs: expected.len(),
        established_pairs: established,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("no results to export")]
    Empty,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub const CSV_HEADER: &str = "n,seed,success_rate,mean_pairwise_us,max_msgs,energy_units";

pub fn to_csv(results: &[ExperimentResult]) -> Result<String, ExportError> {
    if results.is_empty() {
        return Err(ExportError::Empty);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn from_csv(text: &str) -> Result<Vec<ExperimentResult>, ExportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<Result<Vec<_>, _>>()?)
}

pub fn to_json(results: &[ExperimentResult]) -> Result<String, ExportError> {
    if results.is_empty() {
        return Err(ExportError::Empty);
    }
    Ok(serde_json::to_string_pretty(results)? + "\n")
}

pub fn from_json(text: &str) -> Result<Vec<ExperimentResult>, ExportError> {
    Ok(serde_json::from_str(text)?)
}

/// Writes `results` to `path`. Nothing is written when `results` is empty.
pub fn export(
    results: &[ExperimentResult],
    format: Format,
    path: &Path,
) -> Result<(), ExportError> {
    let text = match format {
        Format::Csv => to_csv(results)?,
        Format::Json => to_json(results)?,
    };
    fs::write(path, text)?;
    Ok(())
}
