//! Structured trace lines:
//! `t=<ticks> node=<id> ev=<name> detail=<k=v,...>` and the base station's
//! `t=<ticks> bs verdict node=<id> <CONSISTENT|SUSPICIOUS> reason=<code>`.

use std::fmt::Write as _;

use crate::{NodeId, SimTime};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub node: NodeId,
    pub ev: &'static str,
    pub detail: Vec<(&'static str, String)>,
}

impl TraceRecord {
    pub fn new(node: NodeId, ev: &'static str) -> Self {
        TraceRecord {
            node,
            ev,
            detail: Vec::new(),
        }
    }

    pub fn with(mut self, key: &'static str, value: impl ToString) -> Self {
        self.detail.push((key, value.to_string()));
        self
    }

    pub fn format(&self, t: SimTime) -> String {
        let mut line = format!("t={t} node={} ev={} detail=", self.node, self.ev);
        for (i, (k, v)) in self.detail.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            let _ = write!(line, "{k}={v}");
        }
        line
    }
}

/// A parsed node trace line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceLine {
    pub t: SimTime,
    pub node: NodeId,
    pub ev: String,
    pub detail: Vec<(String, String)>,
}

impl TraceLine {
    /// Parses a node event line; returns `None` for verdict lines or malformed input.
    pub fn parse(line: &str) -> Option<TraceLine> {
        let mut parts = line.splitn(4, ' ');
        let t = parts.next()?.strip_prefix("t=")?.parse().ok()?;
        let node = parts.next()?.strip_prefix("node=")?.parse().ok()?;
        let ev = parts.next()?.strip_prefix("ev=")?.to_string();
        let detail_str = parts.next()?.strip_prefix("detail=")?;
        let detail = if detail_str.is_empty() {
            Vec::new()
        } else {
            detail_str
                .split(',')
                .map(|kv| {
                    let (k, v) = kv.split_once('=')?;
                    Some((k.to_string(), v.to_string()))
                })
                .collect::<Option<Vec<_>>>()?
        };
        Some(TraceLine {
            t,
            node,
            ev,
            detail,
        })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.detail
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn verdict_line(t: SimTime, node: NodeId, consistent: bool, reason: &str) -> String {
    format!(
        "t={t} bs verdict node={node} {} reason={reason}",
        if consistent {
            "CONSISTENT"
        } else {
            "SUSPICIOUS"
        }
    )
}
