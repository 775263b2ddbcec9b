//! State history tree: an attribute tree addressed by quarks, with
//! interval-indexed state storage.
//!
//! Intervals are half-open `[start, end)` except the terminal interval of
//! each quark, which is closed at the tree's end timestamp. Every quark's
//! intervals tile `[origin, end_ts]` exactly.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::trace::Ns;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Quark(pub u32);

impl Quark {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Quark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(untagged)]
pub enum StateValue {
    #[default]
    Null,
    Int(i64),
    Str(String),
}

impl StateValue {
    pub fn is_null(&self) -> bool {
        matches!(self, StateValue::Null)
    }
}

impl From<&str> for StateValue {
    fn from(s: &str) -> Self {
        StateValue::Str(s.to_string())
    }
}

impl From<String> for StateValue {
    fn from(s: String) -> Self {
        StateValue::Str(s)
    }
}

impl From<i64> for StateValue {
    fn from(v: i64) -> Self {
        StateValue::Int(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateInterval {
    pub quark: Quark,
    pub start: Ns,
    pub end: Ns,
    pub value: StateValue,
}

impl StateInterval {
    pub fn contains(&self, ts: Ns, terminal: bool) -> bool {
        self.start <= ts && (ts < self.end || (terminal && ts == self.end))
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ShtError {
    #[error("{quark}: modification at {ts} precedes previous one at {last}")]
    OutOfOrderModification { quark: Quark, ts: Ns, last: Ns },
    #[error("state history is closed")]
    TreeClosed,
    #[error("state history is still open")]
    TreeOpen,
    #[error("close at {end_ts} precedes last modification at {last}")]
    CloseBeforeLastModification { end_ts: Ns, last: Ns },
    #[error("timestamp {ts} outside [{origin}, {end}]")]
    OutOfRange { ts: Ns, origin: Ns, end: Ns },
    #[error("range start {t0} after end {t1}")]
    InvertedRange { t0: Ns, t1: Ns },
    #[error("unknown quark {0}")]
    UnknownQuark(Quark),
}

#[derive(Debug, Clone)]
struct Node {
    parent: Option<Quark>,
    name: String,
    children: BTreeMap<String, Quark>,
    current_start: Ns,
    current: StateValue,
    sealed: Vec<StateInterval>,
}

#[derive(Debug, Clone)]
pub struct StateHistoryTree {
    origin: Ns,
    nodes: Vec<Node>,
    roots: BTreeMap<String, Quark>,
    last_modification: Ns,
    end_ts: Option<Ns>,
}

impl StateHistoryTree {
    pub fn new(origin: Ns) -> Self {
        StateHistoryTree { origin, nodes: Vec::new(), roots: BTreeMap::new(), last_modification: origin, end_ts: None }
    }

    pub fn origin(&self) -> Ns {
        self.origin
    }

    pub fn end_ts(&self) -> Option<Ns> {
        self.end_ts
    }

    pub fn is_closed(&self) -> bool {
        self.end_ts.is_some()
    }

    pub fn quark_count(&self) -> usize {
        self.nodes.len()
    }

    /// Returns the child `name` of `parent` (`None` = the root), creating it if needed.
    pub fn get_or_create_quark(&mut self, parent: Option<Quark>, name: &str) -> Quark {
        if let Some(q) = self.child(parent, name) {
            return q;
        }
        let q = Quark(u32::try_from(self.nodes.len()).expect("quark space exhausted"));
        self.nodes.push(Node {
            parent,
            name: name.to_string(),
            children: BTreeMap::new(),
            current_start: self.origin,
            current: StateValue::Null,
            sealed: Vec::new(),
        });
        match parent {
            Some(p) => self.nodes[p.index()].children.insert(name.to_string(), q),
            None => self.roots.insert(name.to_string(), q),
        };
        q
    }

    /// Creates every component of a slash-separated path.
    pub fn get_or_create_path(&mut self, path: &str) -> Quark {
        let mut cur = None;
        for part in path.split('/').filter(|s| !s.is_empty()) {
            cur = Some(self.get_or_create_quark(cur, part));
        }
        cur.expect("path has at least one component")
    }

    pub fn child(&self, parent: Option<Quark>, name: &str) -> Option<Quark> {
        match parent {
            Some(p) => self.nodes.get(p.index())?.children.get(name).copied(),
            None => self.roots.get(name).copied(),
        }
    }

    pub fn lookup_path(&self, path: &str) -> Option<Quark> {
        let mut cur = None;
        for part in path.split('/').filter(|s| !s.is_empty()) {
            cur = Some(self.child(cur, part)?);
        }
        cur
    }

    pub fn parent(&self, q: Quark) -> Option<Quark> {
        self.nodes.get(q.index()).and_then(|n| n.parent)
    }

    pub fn children(&self, q: Quark) -> impl Iterator<Item = Quark> + '_ {
        self.nodes[q.index()].children.values().copied()
    }

    pub fn name(&self, q: Quark) -> &str {
        &self.nodes[q.index()].name
    }

    pub fn full_path(&self, q: Quark) -> String {
        let mut parts = vec![self.name(q)];
        let mut cur = self.parent(q);
        while let Some(p) = cur {
            parts.push(self.name(p));
            cur = self.parent(p);
        }
        parts.reverse();
        format!("/{}", parts.join("/"))
    }

    pub fn modify_attribute(&mut self, q: Quark, ts: Ns, value: StateValue) -> Result<(), ShtError> {
        if self.is_closed() {
            return Err(ShtError::TreeClosed);
        }
        let origin = self.origin;
        let node = self.nodes.get_mut(q.index()).ok_or(ShtError::UnknownQuark(q))?;
        if ts < node.current_start || ts < origin {
            return Err(ShtError::OutOfOrderModification { quark: q, ts, last: node.current_start.max(origin) });
        }
        if ts > node.current_start {
            let prev = std::mem::replace(&mut node.current, value);
            node.sealed.push(StateInterval { quark: q, start: node.current_start, end: ts, value: prev });
            node.current_start = ts;
        } else {
            // Zero-length state: the later value wins.
            node.current = value;
        }
        self.last_modification = self.last_modification.max(ts);
        Ok(())
    }

    pub fn close_history(&mut self, end_ts: Ns) -> Result<(), ShtError> {
        if self.is_closed() {
            return Err(ShtError::TreeClosed);
        }
        if end_ts < self.last_modification {
            return Err(ShtError::CloseBeforeLastModification { end_ts, last: self.last_modification });
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            let value = std::mem::take(&mut node.current);
            node.sealed.push(StateInterval { quark: Quark(i as u32), start: node.current_start, end: end_ts, value });
        }
        self.end_ts = Some(end_ts);
        Ok(())
    }

    fn closed_history(&self, q: Quark) -> Result<(&[StateInterval], Ns), ShtError> {
        let end = self.end_ts.ok_or(ShtError::TreeOpen)?;
        let node = self.nodes.get(q.index()).ok_or(ShtError::UnknownQuark(q))?;
        Ok((&node.sealed, end))
    }

    pub fn query_single(&self, q: Quark, ts: Ns) -> Result<&StateInterval, ShtError> {
        let (hist, end) = self.closed_history(q)?;
        if ts < self.origin || ts > end {
            return Err(ShtError::OutOfRange { ts, origin: self.origin, end });
        }
        // First interval whose end is beyond ts; the terminal one catches ts == end.
        let idx = hist.partition_point(|iv| iv.end <= ts).min(hist.len() - 1);
        Ok(&hist[idx])
    }

    pub fn query_range(&self, q: Quark, t0: Ns, t1: Ns) -> Result<&[StateInterval], ShtError> {
        let (hist, end) = self.closed_history(q)?;
        if t0 > t1 {
            return Err(ShtError::InvertedRange { t0, t1 });
        }
        for ts in [t0, t1] {
            if ts < self.origin || ts > end {
                return Err(ShtError::OutOfRange { ts, origin: self.origin, end });
            }
        }
        let first = hist.partition_point(|iv| iv.end <= t0).min(hist.len() - 1);
        let last = hist.partition_point(|iv| iv.start <= t1);
        Ok(&hist[first..last.max(first + 1)])
    }

    /// Full interval history of a closed quark.
    pub fn history(&self, q: Quark) -> Result<&[StateInterval], ShtError> {
        Ok(self.closed_history(q)?.0)
    }

    /// JSON snapshot: `[{quark, path, intervals:[{start,end,value}]}]`.
    pub fn snapshot(&self) -> Result<Vec<QuarkSnapshot>, ShtError> {
        (0..self.nodes.len())
            .map(|i| {
                let q = Quark(i as u32);
                Ok(QuarkSnapshot {
                    quark: q,
                    path: self.full_path(q),
                    intervals: self
                        .history(q)?
                        .iter()
                        .map(|iv| SnapshotInterval { start: iv.start, end: iv.end, value: iv.value.clone() })
                        .collect(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarkSnapshot {
    pub quark: Quark,
    pub path: String,
    pub intervals: Vec<SnapshotInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotInterval {
    pub start: Ns,
    pub end: Ns,
    pub value: StateValue,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn quark_creation_is_idempotent() {
        let mut t = StateHistoryTree::new(0);
        let a = t.get_or_create_quark(None, "ctx/324");
        assert_eq!(a, t.get_or_create_quark(None, "ctx/324"));
        let b = t.get_or_create_quark(Some(a), "ctx/17786");
        assert_ne!(a, b);
        assert_eq!(t.parent(b), Some(a));
    }

    #[test]
    fn thousand_children_are_dense() {
        let mut t = StateHistoryTree::new(0);
        let p = t.get_or_create_quark(None, "p");
        let kids: HashSet<_> = (0..1000).map(|i| t.get_or_create_quark(Some(p), &i.to_string())).collect();
        assert_eq!(kids.len(), 1000);
        assert!(kids.iter().all(|q| q.index() < 1001));
        assert_eq!(t.quark_count(), 1001);
    }

    #[test]
    fn sealing_and_boundaries() {
        let mut t = StateHistoryTree::new(0);
        let q = t.get_or_create_path("/op/1");
        t.modify_attribute(q, 10, "fs_open".into()).unwrap();
        t.modify_attribute(q, 60, StateValue::Null).unwrap();
        assert_eq!(
            t.modify_attribute(q, 5, StateValue::Null),
            Err(ShtError::OutOfOrderModification { quark: q, ts: 5, last: 60 })
        );
        t.close_history(100).unwrap();
        let iv = t.query_single(q, 10).unwrap();
        assert_eq!((iv.start, iv.end, &iv.value), (10, 60, &StateValue::from("fs_open")));
        assert_eq!(t.query_single(q, 59).unwrap().start, 10);
        assert_eq!(t.query_single(q, 60).unwrap().start, 60);
        assert_eq!(t.query_single(q, 0).unwrap().value, StateValue::Null);
        assert_eq!(t.query_single(q, 100).unwrap().end, 100);
        assert!(matches!(t.query_single(q, 101), Err(ShtError::OutOfRange { .. })));
        assert_eq!(t.query_range(q, 0, 100).unwrap().len(), 3);
        assert_eq!(t.query_range(q, 20, 30).unwrap().len(), 1);
        assert_eq!(t.query_range(q, 59, 60).unwrap().len(), 2);
    }

    #[test]
    fn close_rules() {
        let mut t = StateHistoryTree::new(0);
        let q = t.get_or_create_quark(None, "a");
        t.modify_attribute(q, 10, 1.into()).unwrap();
        assert!(matches!(t.close_history(5), Err(ShtError::CloseBeforeLastModification { .. })));
        t.close_history(100).unwrap();
        let iv = t.query_single(q, 50).unwrap();
        assert_eq!((iv.start, iv.end), (10, 100));
        assert_eq!(t.close_history(200), Err(ShtError::TreeClosed));
        assert_eq!(t.modify_attribute(q, 120, 2.into()), Err(ShtError::TreeClosed));

        let mut empty = StateHistoryTree::new(0);
        empty.close_history(0).unwrap();
        assert!(empty.snapshot().unwrap().is_empty());
    }

    #[test]
    fn empty_history_is_single_null_interval() {
        let mut t = StateHistoryTree::new(5);
        let q = t.get_or_create_quark(None, "x");
        t.close_history(50).unwrap();
        let r = t.query_range(q, 5, 50).unwrap();
        assert_eq!(r, &[StateInterval { quark: q, start: 5, end: 50, value: StateValue::Null }]);
    }

    #[test]
    fn full_path_round_trips() {
        let mut t = StateHistoryTree::new(0);
        let q = t.get_or_create_path("/ctx/324/17786");
        assert_eq!(t.full_path(q), "/ctx/324/17786");
        assert_eq!(t.lookup_path("ctx/324/17786"), Some(q));
        assert_eq!(t.lookup_path("ctx/999"), None);
    }
}
