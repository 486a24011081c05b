//! Line-oriented scenario files.
//!
//! ```text
//! # comment
//! seed = 42
//! topology = topo.txt
//! noise = meyer-heavy.txt
//! until = 8000000
//!
//! [nodes]
//! 1 boot=100001
//! 4 boot=0 isolated
//!
//! [protocol]
//! t_min = 5000000
//!
//! [adversary]
//! adversary: compromise node=2 at=6000000
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adversary::{AdversaryAction, ScheduledAction};
use crate::node::ProtocolConfig;
use crate::packet::PacketType;
use crate::{NodeId, SimTime};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub boot_at: SimTime,
    /// Deployed without any topology links.
    pub isolated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub topology: PathBuf,
    /// Missing means the built-in ten-sample excerpt cycled to 100 samples.
    pub noise: Option<PathBuf>,
    pub until: SimTime,
    pub snr_threshold: Option<f64>,
    pub lossless: bool,
    pub revoke_suspicious: bool,
    pub nodes: Vec<NodeSpec>,
    pub protocol: ProtocolConfig,
    pub actions: Vec<ScheduledAction>,
}

/// Command-line values that replace scenario values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub until: Option<SimTime>,
    pub snr_threshold: Option<f64>,
    pub t_min: Option<SimTime>,
    pub t_p: Option<SimTime>,
    pub p_detect: Option<f64>,
}

impl Scenario {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.until {
            self.until = v;
        }
        if let Some(v) = o.snr_threshold {
            self.snr_threshold = Some(v);
            self.lossless = false;
        }
        if let Some(v) = o.t_min {
            self.protocol.t_min = v;
            self.protocol.hello_jitter = v / 10;
        }
        if let Some(v) = o.t_p {
            self.protocol.t_p = v;
            self.protocol.block_duration = 10 * v;
        }
        if let Some(v) = o.p_detect {
            self.protocol.p_detect = v;
        }
    }

    pub fn node_ids(&self) -> BTreeSet<NodeId> {
        self.nodes.iter().map(|n| n.id).collect()
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Top,
    Nodes,
    Protocol,
    Adversary,
}

struct Ctx<'a> {
    path: &'a Path,
    line: usize,
}

impl Ctx<'_> {
    fn err(&self, msg: impl Into<String>) -> HarnessError {
        HarnessError::Config {
            path: self.path.to_path_buf(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn num<T: FromStr>(&self, key: &str, v: &str) -> Result<T, HarnessError> {
        v.parse()
            .map_err(|_| self.err(format!("bad value {v:?} for {key}")))
    }

    fn flag(&self, key: &str, v: &str) -> Result<bool, HarnessError> {
        match v {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            _ => Err(self.err(format!("bad boolean {v:?} for {key}"))),
        }
    }
}

fn key_value(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    Some((k.trim(), v.trim()))
}

/// Reads and parses a scenario; relative file paths resolve against its directory.
pub fn load_scenario(path: &Path) -> Result<Scenario, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text, path)
}

pub fn parse_scenario(text: &str, path: &Path) -> Result<Scenario, HarnessError> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut seed = None;
    let mut topology = None;
    let mut noise = None;
    let mut until = None;
    let mut snr_threshold = None;
    let mut lossless = false;
    let mut revoke_suspicious = true;
    let mut nodes: Vec<NodeSpec> = Vec::new();
    let mut protocol = ProtocolConfig::default();
    let mut jitter_set = false;
    let mut block_set = false;
    let mut actions = Vec::new();
    let mut action_lines = Vec::new();
    let mut section = Section::Top;
    let mut cx = Ctx { path, line: 0 };

    for (i, raw) in text.lines().enumerate() {
        cx.line = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = match name.trim() {
                "nodes" => Section::Nodes,
                "protocol" => Section::Protocol,
                "adversary" => Section::Adversary,
                other => return Err(cx.err(format!("unknown section [{other}]"))),
            };
            continue;
        }
        match section {
            Section::Top => {
                let (k, v) = key_value(line).ok_or_else(|| cx.err("expected `key = value`"))?;
                match k {
                    "seed" => seed = Some(cx.num(k, v)?),
                    "topology" => topology = Some(base.join(v)),
                    "noise" => noise = Some(base.join(v)),
                    "until" => until = Some(cx.num(k, v)?),
                    "snr_threshold" => snr_threshold = Some(cx.num(k, v)?),
                    "lossless" => lossless = cx.flag(k, v)?,
                    "revoke_suspicious" => revoke_suspicious = cx.flag(k, v)?,
                    _ => return Err(cx.err(format!("unknown key {k:?}"))),
                }
            }
            Section::Nodes => {
                let mut toks = line.split_whitespace();
                let id: NodeId = cx.num("node id", toks.next().unwrap_or(""))?;
                if !id.is_sensor() {
                    return Err(cx.err(format!("node id {id} is reserved")));
                }
                if nodes.iter().any(|n| n.id == id) {
                    return Err(cx.err(format!("node {id} listed twice")));
                }
                let mut spec = NodeSpec {
                    id,
                    boot_at: 0,
                    isolated: false,
                };
                let mut boot_seen = false;
                for tok in toks {
                    match key_value(tok) {
                        Some(("boot", v)) => {
                            spec.boot_at = cx.num("boot", v)?;
                            boot_seen = true;
                        }
                        None if tok == "isolated" => spec.isolated = true,
                        _ => return Err(cx.err(format!("unexpected {tok:?} in node line"))),
                    }
                }
                if !boot_seen {
                    return Err(cx.err(format!("node {id} has no boot time")));
                }
                nodes.push(spec);
            }
            Section::Protocol => {
                let (k, v) = key_value(line).ok_or_else(|| cx.err("expected `key = value`"))?;
                match k {
                    "t_min" => protocol.t_min = cx.num(k, v)?,
                    "t_p" => protocol.t_p = cx.num(k, v)?,
                    "hello_jitter" => {
                        protocol.hello_jitter = cx.num(k, v)?;
                        jitter_set = true;
                    }
                    "p_detect" => protocol.p_detect = cx.num(k, v)?,
                    "block_duration" => {
                        protocol.block_duration = cx.num(k, v)?;
                        block_set = true;
                    }
                    "chain_len" => protocol.chain_len = cx.num(k, v)?,
                    "late_joiners" => protocol.accept_late_joiners = cx.flag(k, v)?,
                    _ => return Err(cx.err(format!("unknown protocol key {k:?}"))),
                }
            }
            Section::Adversary => {
                actions.push(parse_action(line, &cx)?);
                action_lines.push(cx.line);
            }
        }
    }

    cx.line = 0;
    let seed = seed.ok_or_else(|| cx.err("missing mandatory `seed`"))?;
    let topology = topology.ok_or_else(|| cx.err("missing `topology`"))?;
    if !jitter_set {
        protocol.hello_jitter = protocol.t_min / 10;
    }
    if !block_set {
        protocol.block_duration = 10 * protocol.t_p;
    }
    protocol.validate().map_err(|e| cx.err(e.to_string()))?;
    let ids: BTreeSet<NodeId> = nodes.iter().map(|n| n.id).collect();
    for (a, &line) in actions.iter().zip(&action_lines) {
        if let Some(id) = a
            .kind
            .referenced_nodes()
            .into_iter()
            .find(|id| !ids.contains(id))
        {
            cx.line = line;
            return Err(cx.err(format!("adversary action references unknown node {id}")));
        }
    }
    let until = until.unwrap_or_else(|| {
        let last_boot = nodes.iter().map(|n| n.boot_at).max().unwrap_or(0);
        let last_action = actions.iter().map(|a| a.at).max().unwrap_or(0);
        last_boot.max(last_action) + protocol.t_min + 2 * protocol.block_duration
    });
    Ok(Scenario {
        seed,
        topology,
        noise,
        until,
        snr_threshold,
        lossless,
        revoke_suspicious,
        nodes,
        protocol,
        actions,
    })
}

fn parse_action(line: &str, cx: &Ctx<'_>) -> Result<ScheduledAction, HarnessError> {
    let rest = line
        .strip_prefix("adversary:")
        .ok_or_else(|| cx.err("expected `adversary: <kind> k=v ... at=<ticks>`"))?;
    let mut toks = rest.split_whitespace();
    let kind = toks
        .next()
        .ok_or_else(|| cx.err("missing adversary kind"))?;
    let allowed: &[&str] = match kind {
        "compromise" => &["node"],
        "hello_flood" => &["fake", "boost"],
        "clone" => &["node", "position"],
        "alter" => &["src", "dst", "mask"],
        "replay" => &["type", "src", "target"],
        other => return Err(cx.err(format!("unknown adversary kind {other:?}"))),
    };
    let mut args: Vec<(&str, &str)> = Vec::new();
    for tok in toks {
        let kv = key_value(tok).ok_or_else(|| cx.err(format!("expected k=v, got {tok:?}")))?;
        if kv.0 != "at" && !allowed.contains(&kv.0) {
            return Err(cx.err(format!("unknown parameter {} for {kind}", kv.0)));
        }
        if args.iter().any(|(k, _)| *k == kv.0) {
            return Err(cx.err(format!("duplicate parameter {}", kv.0)));
        }
        args.push(kv);
    }
    let get = |k: &str| {
        args.iter()
            .find(|(key, _)| *key == k)
            .map(|(_, v)| *v)
            .ok_or_else(|| cx.err(format!("{kind} needs {k}=")))
    };
    let node = |k: &str| get(k).and_then(|v| cx.num::<NodeId>(k, v));
    let at: SimTime = cx.num("at", get("at")?)?;
    let action = match kind {
        "compromise" => AdversaryAction::Compromise {
            node: node("node")?,
        },
        "hello_flood" => AdversaryAction::HelloFlood {
            fake_id: node("fake")?,
            boost: match get("boost") {
                Ok(v) => cx.flag("boost", v)?,
                Err(_) => true,
            },
        },
        "clone" => AdversaryAction::Clone {
            node: node("node")?,
            position: node("position")?,
        },
        "alter" => {
            let mask_hex = get("mask")?;
            let mask = hex::decode(mask_hex)
                .ok()
                .filter(|m| !m.is_empty())
                .ok_or_else(|| cx.err(format!("bad hex mask {mask_hex:?}")))?;
            AdversaryAction::Alter {
                src: node("src")?,
                dst: node("dst")?,
                mask,
            }
        }
        _ => {
            let t = get("type")?;
            AdversaryAction::Replay {
                ptype: PacketType::from_name(t)
                    .ok_or_else(|| cx.err(format!("unknown packet type {t:?}")))?,
                src: node("src")?,
                target: node("target")?,
            }
        }
    };
    Ok(ScheduledAction { at, kind: action })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Scenario, HarnessError> {
        parse_scenario(text, Path::new("/tmp/s/scenario.txt"))
    }

    fn line_of(e: HarnessError) -> usize {
        match e {
            HarnessError::Config { line, .. } => line,
            other => panic!("unexpected {other}"),
        }
    }

    const THREE_NODES: &str = "seed = 1\ntopology = topo.txt\nnoise = meyer.txt\n\n[nodes]\n1 boot=100001\n2 boot=800008\n3 boot=1800009\n";

    #[test]
    fn three_node_scenario() {
        let s = parse(THREE_NODES).unwrap();
        assert_eq!(s.topology, PathBuf::from("/tmp/s/topo.txt"));
        assert_eq!(s.noise, Some(PathBuf::from("/tmp/s/meyer.txt")));
        assert_eq!(s.nodes.len(), 3);
        assert_eq!(s.nodes[2].boot_at, 1_800_009);
        assert_eq!(s.protocol.hello_jitter, s.protocol.t_min / 10);
    }

    #[test]
    fn seed_is_mandatory() {
        assert!(parse("topology = t\n").is_err());
    }

    #[test]
    fn actions_parse() {
        let s = parse(&format!(
            "{THREE_NODES}[adversary]\nadversary: compromise node=2 at=6000000\nadversary: hello_flood fake=77 at=10\nadversary: alter src=1 dst=2 mask=ff00 at=5\nadversary: replay type=ACK src=2 target=3 at=9\n"
        ))
        .unwrap();
        assert_eq!(s.actions.len(), 4);
        assert_eq!(
            s.actions[1].kind,
            AdversaryAction::HelloFlood {
                fake_id: NodeId(77),
                boost: true
            }
        );
        assert_eq!(
            s.actions[2].kind,
            AdversaryAction::Alter {
                src: NodeId(1),
                dst: NodeId(2),
                mask: vec![0xff, 0]
            }
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad_node = format!("{THREE_NODES}[adversary]\nadversary: compromise node=9 at=1\n");
        assert_eq!(line_of(parse(&bad_node).unwrap_err()), 10);
        assert_eq!(line_of(parse("seed = x\n").unwrap_err()), 1);
        assert_eq!(line_of(parse("seed = 1\n[bogus]\n").unwrap_err()), 2);
        let missing_at = format!("{THREE_NODES}[adversary]\nadversary: compromise node=1\n");
        assert_eq!(line_of(parse(&missing_at).unwrap_err()), 10);
        let extra = format!("{THREE_NODES}[adversary]\nadversary: compromise node=1 at=3 x=1\n");
        assert_eq!(line_of(parse(&extra).unwrap_err()), 10);
    }

    #[test]
    fn overrides_replace_values() {
        let mut s = parse(THREE_NODES).unwrap();
        s.apply(&Overrides {
            seed: Some(9),
            t_min: Some(2_000_000),
            p_detect: Some(0.5),
            ..Overrides::default()
        });
        assert_eq!(s.seed, 9);
        assert_eq!(s.protocol.hello_jitter, 200_000);
        assert_eq!(s.protocol.p_detect, 0.5);
    }
}
