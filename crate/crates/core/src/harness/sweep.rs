//! Parameter sweeps over generated topologies.
//!
//! Runs are independent and execute on the rayon pool; the collected rows are
//! sorted by `(step, n, seed, p_detect, t_p)` so the output never depends on
//! scheduling.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{evaluate_detection, AdversaryAction, ScheduledAction};
use crate::metrics::{self, ExportError, Format};
use crate::netsim::{NoiseTrace, RunLimit, SimConfig, Topology};
use crate::node::ProtocolConfig;
use crate::{NodeId, SimTime, Simulation, TICKS_PER_SECOND};

use super::topogen::{random_connected, random_regular};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Experiment {
    PairwiseTime,
    IndividualTime,
    Scalability,
    Energy,
    Detection,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::PairwiseTime,
        Experiment::IndividualTime,
        Experiment::Scalability,
        Experiment::Energy,
        Experiment::Detection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::PairwiseTime => "pairwise_time",
            Experiment::IndividualTime => "individual_time",
            Experiment::Scalability => "scalability",
            Experiment::Energy => "energy",
            Experiment::Detection => "detection",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|e| e.name()).collect();
                HarnessError::Usage(format!(
                    "unknown experiment {s:?}, expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepParams {
    pub reps: u64,
    pub base_seed: u64,
    /// Node-count steps for `pairwise_time`; each gets `points` values of N.
    pub steps: Vec<usize>,
    pub points: usize,
    /// Fixed degree for `scalability` and `energy`.
    pub degree: usize,
    /// Node counts for `scalability` and `energy`.
    pub sizes: Vec<usize>,
    pub p_detect: Vec<f64>,
    pub t_p: Vec<SimTime>,
    pub protocol: ProtocolConfig,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            reps: 10,
            base_seed: 1,
            steps: vec![2, 5, 10],
            points: 10,
            degree: 6,
            sizes: (1..=10).map(|k| 10 * k).collect(),
            p_detect: vec![0.25, 0.5, 0.75, 1.0],
            t_p: vec![TICKS_PER_SECOND / 2, TICKS_PER_SECOND, 2 * TICKS_PER_SECOND],
            protocol: ProtocolConfig::default(),
        }
    }
}

/// One run of a sweep. Detection columns are empty outside `detection`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub experiment: String,
    pub step: usize,
    pub n: usize,
    pub seed: u64,
    pub degree: usize,
    pub p_detect: f64,
    pub t_p_us: SimTime,
    pub success_rate: f64,
    pub mean_pairwise_us: f64,
    pub mean_individual_us: f64,
    pub max_msgs: u64,
    pub energy_units: f64,
    pub help_latency_us: Option<SimTime>,
    pub coverage: Option<f64>,
    pub rekey_complete: Option<bool>,
}

#[derive(Debug, Clone)]
struct Point {
    experiment: Experiment,
    step: usize,
    n: usize,
    seed: u64,
    degree: usize,
    protocol: ProtocolConfig,
}

fn points(exp: Experiment, p: &SweepParams) -> Vec<Point> {
    let seeds = p.base_seed..p.base_seed + p.reps;
    let mk = |step, n, seed, degree, protocol: &ProtocolConfig| Point {
        experiment: exp,
        step,
        n,
        seed,
        degree,
        protocol: protocol.clone(),
    };
    let mut out = Vec::new();
    match exp {
        Experiment::PairwiseTime => {
            for &step in &p.steps {
                for k in 1..=p.points {
                    for seed in seeds.clone() {
                        out.push(mk(step, step * k, seed, 0, &p.protocol));
                    }
                }
            }
        }
        Experiment::IndividualTime => {
            for n in [10, 20] {
                for seed in seeds.clone() {
                    out.push(mk(0, n, seed, 0, &p.protocol));
                }
            }
        }
        Experiment::Scalability | Experiment::Energy => {
            for &n in &p.sizes {
                for seed in seeds.clone() {
                    out.push(mk(0, n, seed, p.degree, &p.protocol));
                }
            }
        }
        Experiment::Detection => {
            for &pd in &p.p_detect {
                for &tp in &p.t_p {
                    let mut proto = p.protocol.clone();
                    proto.p_detect = pd;
                    proto.t_p = tp;
                    proto.block_duration = 10 * tp;
                    for seed in seeds.clone() {
                        out.push(mk(0, 20, seed, 0, &proto));
                    }
                }
            }
        }
    }
    out
}

/// Quiet noise floor: generated links at -60 dBm always clear the threshold.
pub fn quiet_noise() -> NoiseTrace {
    NoiseTrace::cycled(&[-98, -99, -98, -97, -98], 100).expect("100 samples")
}

/// Latest boot time used by generated deployments.
pub const BOOT_SPREAD: SimTime = 1_100_000;

/// Simulation with `topology`, nodes `1..=n` booting at random times in
/// `[0.1 s, 1.1 s)`.
pub fn deployment(
    n: usize,
    seed: u64,
    topology: Topology,
    protocol: ProtocolConfig,
) -> Result<Simulation, HarnessError> {
    let mut cfg = SimConfig::new(seed);
    cfg.protocol = protocol;
    let mut sim = Simulation::new(cfg, topology, quiet_noise())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    for i in 1..=n {
        let boot = rng.gen_range(100_000..BOOT_SPREAD);
        sim.add_node(NodeId(i as u16), boot)?;
    }
    Ok(sim)
}

fn run_point(pt: &Point) -> Result<SweepRow, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(pt.seed ^ ((pt.n as u64) << 32));
    let topology = if pt.degree > 0 {
        random_regular(pt.n, pt.degree, &mut rng)
    } else {
        random_connected(pt.n, 4, &mut rng)
    };
    let proto = pt.protocol.clone();
    let mut sim = deployment(pt.n, pt.seed, topology, proto.clone())?;
    let settle = BOOT_SPREAD + proto.t_min + 2 * TICKS_PER_SECOND;
    let until = if pt.experiment == Experiment::Detection {
        let at = settle;
        let victim = NodeId(rng.gen_range(1..=pt.n) as u16);
        sim.schedule_action(ScheduledAction {
            at,
            kind: AdversaryAction::Compromise { node: victim },
        })?;
        at + 30 * proto.t_p + sim.config().bs.rekey_delay + 2 * TICKS_PER_SECOND
    } else {
        settle
    };
    sim.run(RunLimit::Until(until));
    let summary = metrics::summarize(&sim);
    let det = evaluate_detection(&sim);
    let entry = det.entries.first();
    Ok(SweepRow {
        experiment: pt.experiment.name().to_string(),
        step: pt.step,
        n: pt.n,
        seed: pt.seed,
        degree: pt.degree,
        p_detect: proto.p_detect,
        t_p_us: proto.t_p,
        success_rate: summary.result.success_rate,
        mean_pairwise_us: summary.result.mean_pairwise_us,
        mean_individual_us: summary.mean_individual_us(),
        max_msgs: summary.result.max_msgs,
        energy_units: summary.result.energy_units,
        help_latency_us: entry.and_then(|e| e.help_latency()),
        coverage: entry.map(|e| e.coverage()),
        rekey_complete: entry.map(|e| e.rekey_complete),
    })
}

/// Runs every point of `exp` in parallel and returns rows in canonical order.
pub fn run_sweep(exp: Experiment, params: &SweepParams) -> Result<Vec<SweepRow>, HarnessError> {
    params
        .protocol
        .validate()
        .map_err(|e| HarnessError::Usage(e.to_string()))?;
    let mut rows = points(exp, params)
        .par_iter()
        .map(run_point)
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| {
        (a.step, a.n, a.seed, a.t_p_us)
            .cmp(&(b.step, b.n, b.seed, b.t_p_us))
            .then(a.p_detect.total_cmp(&b.p_detect))
    });
    Ok(rows)
}

pub fn rows_to_csv(rows: &[SweepRow]) -> Result<String, ExportError> {
    if rows.is_empty() {
        return Err(ExportError::Empty);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<SweepRow>, ExportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<Result<Vec<_>, _>>()?)
}

/// Runs a sweep and writes `<experiment>.<csv|json>` into `out`.
pub fn cmd_sweep(
    exp: Experiment,
    params: &SweepParams,
    out: &Path,
    format: Format,
) -> Result<(PathBuf, Vec<SweepRow>), HarnessError> {
    let rows = run_sweep(exp, params)?;
    let text = match format {
        Format::Csv => rows_to_csv(&rows)?,
        Format::Json => serde_json::to_string_pretty(&rows).map_err(ExportError::from)? + "\n",
    };
    fs::create_dir_all(out).map_err(|source| HarnessError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let path = out.join(format!("{}.{}", exp.name(), format.extension()));
    fs::write(&path, text).map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })?;
    Ok((path, rows))
}
