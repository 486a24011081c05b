//! Topology (`src dst gain` / `gain src dst g`) and noise trace files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::NodeId;

/// Minimum number of samples in a noise trace.
pub const MIN_NOISE_SAMPLES: usize = 100;

/// First ten readings of the meyer-heavy trace.
pub const MEYER_HEAVY_EXCERPT: [i32; 10] = [-39, -98, -98, -98, -99, -98, -94, -98, -98, -98];

#[derive(Debug, Error, PartialEq)]
pub enum InputError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("noise trace has {got} samples, at least {MIN_NOISE_SAMPLES} required")]
    TooShort { got: usize },
}

fn parse_err(line: usize, msg: impl Into<String>) -> InputError {
    InputError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Directed link with received signal strength in dBm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGain {
    pub src: NodeId,
    pub dst: NodeId,
    pub gain_dbm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Topology {
    links: BTreeMap<(NodeId, NodeId), f64>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_links<I: IntoIterator<Item = LinkGain>>(links: I) -> Self {
        let mut t = Topology::new();
        for l in links {
            t.add(l);
        }
        t
    }

    /// Later links for the same `(src, dst)` replace earlier ones.
    pub fn add(&mut self, link: LinkGain) {
        self.links.insert((link.src, link.dst), link.gain_dbm);
    }

    /// Adds both directions with the same gain.
    pub fn add_symmetric(&mut self, a: NodeId, b: NodeId, gain_dbm: f64) {
        self.links.insert((a, b), gain_dbm);
        self.links.insert((b, a), gain_dbm);
    }

    pub fn gain(&self, src: NodeId, dst: NodeId) -> Option<f64> {
        self.links.get(&(src, dst)).copied()
    }

    pub fn links(&self) -> impl Iterator<Item = LinkGain> + '_ {
        self.links
            .iter()
            .map(|(&(src, dst), &gain_dbm)| LinkGain { src, dst, gain_dbm })
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn out_links(&self, src: NodeId) -> impl Iterator<Item = LinkGain> + '_ {
        self.links
            .range((src, NodeId(0))..=(src, NodeId(u16::MAX)))
            .map(|(&(src, dst), &gain_dbm)| LinkGain { src, dst, gain_dbm })
    }

    pub fn nodes(&self) -> BTreeSet<NodeId> {
        self.links.keys().flat_map(|&(a, b)| [a, b]).collect()
    }

    /// Nodes with links in both directions to `u`.
    pub fn mutual_neighbors(&self, u: NodeId) -> BTreeSet<NodeId> {
        self.out_links(u)
            .filter(|l| l.dst != u && self.gain(l.dst, u).is_some())
            .map(|l| l.dst)
            .collect()
    }

    /// Unordered mutual pairs `(lo, hi)` restricted to `members`.
    pub fn mutual_pairs(&self, members: &BTreeSet<NodeId>) -> BTreeSet<(NodeId, NodeId)> {
        self.links
            .keys()
            .filter(|&&(a, b)| {
                a < b
                    && members.contains(&a)
                    && members.contains(&b)
                    && self.links.contains_key(&(b, a))
            })
            .copied()
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for l in self.links() {
            let _ = writeln!(out, "{} {} {:.1}", l.src, l.dst, l.gain_dbm);
        }
        out
    }
}

fn parse_gain(tok: &str, line: usize) -> Result<f64, InputError> {
    let normalized = tok.replace(',', ".");
    normalized
        .parse::<f64>()
        .ok()
        .filter(|g| g.is_finite())
        .ok_or_else(|| parse_err(line, format!("bad gain {tok:?}")))
}

fn parse_id(tok: &str, line: usize) -> Result<NodeId, InputError> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("bad node id {tok:?}")))
}

/// Parses a topology file. Each non-blank line is `src dst gain` or
/// `gain src dst gain`; a decimal comma is accepted.
pub fn load_topology(text: &str) -> Result<Topology, InputError> {
    let mut topo = Topology::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        let fields = match toks.as_slice() {
            [] => continue,
            ["gain", rest @ ..] => rest,
            all => all,
        };
        let [src, dst, gain] = fields else {
            return Err(parse_err(
                line,
                format!("expected `src dst gain`, got {} fields", fields.len()),
            ));
        };
        topo.add(LinkGain {
            src: parse_id(src, line)?,
            dst: parse_id(dst, line)?,
            gain_dbm: parse_gain(gain, line)?,
        });
    }
    Ok(topo)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseTrace {
    samples: Vec<i32>,
}

impl NoiseTrace {
    pub fn new(samples: Vec<i32>) -> Result<Self, InputError> {
        if samples.len() < MIN_NOISE_SAMPLES {
            return Err(InputError::TooShort { got: samples.len() });
        }
        Ok(NoiseTrace { samples })
    }

    /// Repeats `base` cyclically to `len` samples.
    pub fn cycled(base: &[i32], len: usize) -> Result<Self, InputError> {
        Self::new(base.iter().copied().cycle().take(len).collect())
    }

    /// The ten-sample meyer-heavy excerpt cycled to the minimum length.
    pub fn meyer_excerpt() -> Self {
        Self::cycled(&MEYER_HEAVY_EXCERPT, MIN_NOISE_SAMPLES).expect("100 samples")
    }

    pub fn samples(&self) -> &[i32] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.samples.iter().map(|s| format!("{s}\n")).collect()
    }
}

/// Parses one integer dBm reading per non-blank line.
pub fn load_noise(text: &str) -> Result<NoiseTrace, InputError> {
    let samples = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<i32>()
                .map_err(|_| parse_err(i + 1, format!("bad noise sample {:?}", l.trim())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    NoiseTrace::new(samples)
}
