//! Scenario runs, invariant checks, parameter sweeps and reports.
//!
//! The CLI is a thin wrapper around [`cmd_run`], [`cmd_sweep`] and
//! [`cmd_report`]; exit codes come from [`HarnessError::exit_code`] and
//! [`RunOutcome::exit_code`].

pub mod report;
pub mod scenario;
pub mod sweep;
pub mod topogen;

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::adversary::{derivable_pairwise, evaluate_detection, DetectionReport};
use crate::metrics::{self, ExportError, Format, RunSummary};
use crate::netsim::{
    load_noise, load_topology, ChannelConfig, InputError, NoiseTrace, RunLimit, SimConfig,
    SimError, Topology,
};
use crate::node::NodePhase;
use crate::{NodeId, Simulation};

pub use report::cmd_report;
pub use scenario::{load_scenario, parse_scenario, NodeSpec, Overrides, Scenario};
pub use sweep::{cmd_sweep, run_sweep, Experiment, SweepParams, SweepRow};

/// Key size used for storage accounting in checks.
pub const ACCOUNTING_KEY_SIZE: usize = 8;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}:{line}: {msg}", path.display())]
    Config {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{}: {source}", path.display())]
    Input { path: PathBuf, source: InputError },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("no results in {}", .0.display())]
    NoResults(PathBuf),
}

impl HarnessError {
    /// 1 for an empty results directory, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::NoResults(_) => 1,
            _ => 2,
        }
    }
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Everything a run needs, loaded before anything is simulated or written.
pub struct Prepared {
    pub scenario: Scenario,
    pub topology: Topology,
    pub noise: NoiseTrace,
}

pub fn prepare(scenario: Scenario) -> Result<Prepared, HarnessError> {
    let topology =
        load_topology(&read(&scenario.topology)?).map_err(|source| HarnessError::Input {
            path: scenario.topology.clone(),
            source,
        })?;
    let noise = match &scenario.noise {
        Some(p) => load_noise(&read(p)?).map_err(|source| HarnessError::Input {
            path: p.clone(),
            source,
        })?,
        None => NoiseTrace::meyer_excerpt(),
    };
    let known = topology.nodes();
    if let Some(n) = scenario
        .nodes
        .iter()
        .find(|n| !n.isolated && !known.contains(&n.id))
    {
        return Err(HarnessError::Usage(format!(
            "node {} is not in the topology and not marked isolated",
            n.id
        )));
    }
    Ok(Prepared {
        scenario,
        topology,
        noise,
    })
}

/// Builds a ready-to-run simulation. Isolated nodes lose all their links.
pub fn build(p: &Prepared, check_dumps: bool) -> Result<Simulation, HarnessError> {
    let s = &p.scenario;
    let mut cfg = SimConfig::new(s.seed);
    cfg.protocol = s.protocol.clone();
    cfg.channel = if s.lossless {
        ChannelConfig::lossless()
    } else {
        ChannelConfig {
            snr_threshold_db: s.snr_threshold.unwrap_or(cfg.channel.snr_threshold_db),
            ..cfg.channel
        }
    };
    cfg.bs.revoke_on_suspicious = s.revoke_suspicious;
    cfg.check_dumps = check_dumps;
    let isolated: BTreeSet<NodeId> = s
        .nodes
        .iter()
        .filter(|n| n.isolated)
        .map(|n| n.id)
        .collect();
    let topology = Topology::from_links(
        p.topology
            .links()
            .filter(|l| !isolated.contains(&l.src) && !isolated.contains(&l.dst)),
    );
    let mut sim = Simulation::new(cfg, topology, p.noise.clone())?;
    for n in &s.nodes {
        sim.add_node(n.id, n.boot_at)?;
    }
    for a in &s.actions {
        sim.schedule_action(a.clone())?;
    }
    Ok(sim)
}

/// Invariant failures found in a finished run, one message each.
pub fn check_invariants(sim: &Simulation, attack_free: bool) -> Vec<String> {
    let mut out = Vec::new();
    let v = sim.violations();
    if v.erasure > 0 {
        out.push(format!(
            "erasure: {} key-store states held the initial key past t_min",
            v.erasure
        ));
    }
    if v.causality > 0 {
        out.push(format!(
            "causality: {} events scheduled in the past",
            v.causality
        ));
    }
    let unverified = sim.installs_without_verify();
    if unverified > 0 {
        out.push(format!(
            "mac gate: {unverified} installs without a verified MAC"
        ));
    }
    let lossless = sim.config().channel.snr_threshold_db == f64::NEG_INFINITY;
    let quiet = attack_free && lossless && sim.base_station().revoked().is_empty();
    for node in sim.nodes() {
        let u = node.id();
        for (peer, k) in node.store().pairwise_map() {
            if let Some(other) = sim.node(*peer).and_then(|n| n.store().pairwise(u)) {
                if other != k && u < *peer {
                    out.push(format!(
                        "agreement: {u} and {peer} hold different pairwise keys"
                    ));
                }
            }
        }
        let store = node.store();
        let d = store.pairwise_map().len();
        let l = store.chain().len();
        if store.storage_report(ACCOUNTING_KEY_SIZE).total_keys != l + 3 * d + 2 {
            out.push(format!(
                "storage: node {u} report does not match L + 3D + 2"
            ));
        }
        if quiet && node.phase() == NodePhase::Established && store.cluster_received().len() != d {
            out.push(format!(
                "storage: node {u} holds {d} pairwise keys but {} cluster keys",
                store.cluster_received().len()
            ));
        }
    }
    out.extend(localization_failures(sim, lossless));
    if attack_free && lossless {
        let summary = metrics::summarize(sim);
        if summary.established_pairs != summary.expected_pairs {
            out.push(format!(
                "connectivity: {} of {} neighbor pairs established",
                summary.established_pairs, summary.expected_pairs
            ));
        }
    }
    out
}

/// Localization check for every capture taken after the victim erased its
/// initial key: the attacker never derives a pair the victim is not part of.
/// With `exact`, the derivable neighbor pairs must also equal the victim's
/// links; this needs a lossless run, where every neighbor pair is a link.
pub fn localization_failures(sim: &Simulation, exact: bool) -> Vec<String> {
    let ids = sim.deployed();
    let neighbor_pairs = sim.topology().mutual_pairs(&ids);
    let revoked = sim.base_station().revoked();
    let mut out = Vec::new();
    for cap in sim.adversary().captures() {
        if cap.store.initial_key().is_some() {
            continue;
        }
        let c = cap.node;
        let derivable = derivable_pairwise([&cap.store], &ids);
        if let Some((a, b)) = derivable.iter().find(|(a, b)| *a != c && *b != c) {
            out.push(format!(
                "localization: capture of {c} exposes pair ({a}, {b})"
            ));
        }
        // links to other revoked nodes were torn down on purpose
        let live = |&(a, b): &(NodeId, NodeId)| {
            let other = if a == c { b } else { a };
            !revoked.contains(&other)
        };
        let exposed: BTreeSet<(NodeId, NodeId)> = derivable
            .intersection(&neighbor_pairs)
            .copied()
            .filter(live)
            .collect();
        let own: BTreeSet<(NodeId, NodeId)> = cap
            .store
            .pairwise_map()
            .keys()
            .map(|&p| (c.min(p), c.max(p)))
            .filter(live)
            .collect();
        if exact && exposed != own {
            out.push(format!(
                "localization: capture of {c} exposes {} neighbor pairs, expected its {} links",
                exposed.len(),
                own.len()
            ));
        }
    }
    out
}

#[derive(Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub detection: DetectionReport,
    pub failures: Vec<String>,
    pub trace_path: PathBuf,
    pub results_path: PathBuf,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

/// Runs a scenario to `until` and returns the finished simulation.
pub fn simulate(p: &Prepared, check_dumps: bool) -> Result<Simulation, HarnessError> {
    let mut sim = build(p, check_dumps)?;
    sim.run(RunLimit::Until(p.scenario.until));
    Ok(sim)
}

/// Loads, runs and writes `trace.txt` plus `results.<csv|json>` into `out`.
/// Nothing is written unless every input loads.
pub fn cmd_run(
    scenario_path: &Path,
    overrides: &Overrides,
    out: &Path,
    format: Format,
    check: bool,
) -> Result<RunOutcome, HarnessError> {
    let mut scenario = load_scenario(scenario_path)?;
    scenario.apply(overrides);
    scenario
        .protocol
        .validate()
        .map_err(|e| HarnessError::Usage(e.to_string()))?;
    let attack_free = scenario.actions.is_empty();
    let prepared = prepare(scenario)?;
    let sim = simulate(&prepared, check)?;
    let summary = metrics::summarize(&sim);
    let failures = if check {
        check_invariants(&sim, attack_free)
    } else {
        Vec::new()
    };

    fs::create_dir_all(out).map_err(|source| HarnessError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let trace_path = out.join("trace.txt");
    fs::write(&trace_path, sim.trace_text()).map_err(|source| HarnessError::Io {
        path: trace_path.clone(),
        source,
    })?;
    let results_path = out.join(format!("results.{}", format.extension()));
    metrics::export(std::slice::from_ref(&summary.result), format, &results_path)?;
    Ok(RunOutcome {
        detection: evaluate_detection(&sim),
        summary,
        failures,
        trace_path,
        results_path,
    })
}
