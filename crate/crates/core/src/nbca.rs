//! Nested execution-context forest built from `uv_send`, `run` and `resolve`.
//!
//! Every context gets an SHT entry under its trigger's entry: `/ctx/<root>/<child>/...`.
//! The entry holds the context's method while it is open and null afterwards.
//! Contexts whose trigger was never seen hang under `/ctx/orphans`.

use std::collections::HashMap;

use serde::Serialize;

use crate::sht::{Quark, ShtError, StateHistoryTree, StateValue};
use crate::trace::{EventKind, Layer, Ns, TraceEvent};

/// Index of a context instance in the registry.
pub type CtxIdx = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecContext {
    pub pid: u32,
    pub id: i64,
    pub trigger_id: Option<i64>,
    pub method: String,
    pub layer: Layer,
    pub tid: u32,
    #[serde(skip)]
    pub quark: Quark,
    pub open_ts: Ns,
    pub close_ts: Option<Ns>,
    /// Registry index of the trigger instance.
    #[serde(skip)]
    pub parent: Option<CtxIdx>,
    #[serde(skip)]
    pub children: Vec<CtxIdx>,
    pub orphan: bool,
}

impl ExecContext {
    pub fn is_open_at(&self, ts: Ns) -> bool {
        self.open_ts <= ts && self.close_ts.is_none_or(|c| ts < c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NbcaError {
    #[error("pid {pid}: context {id} names unknown trigger {channel}; attached as orphan")]
    UnknownTrigger { pid: u32, id: i64, channel: i64 },
    #[error("pid {pid}: context {id} opened at {ts} after its trigger {channel} closed")]
    TriggerClosed { pid: u32, id: i64, channel: i64, ts: Ns },
    #[error("pid {pid}: context {id} closed twice (at {ts})")]
    DoubleClose { pid: u32, id: i64, ts: Ns },
    #[error("pid {pid}: close of unknown context {id} at {ts}")]
    UnknownClose { pid: u32, id: i64, ts: Ns },
    #[error("pid {pid}: unknown context {id}")]
    UnknownContext { pid: u32, id: i64 },
    #[error(transparent)]
    Sht(#[from] ShtError),
}

#[derive(Debug, Clone, Default)]
pub struct ContextRegistry {
    contexts: Vec<ExecContext>,
    /// Most recent instance per (pid, id); ids may be reused after closure.
    latest: HashMap<(u32, i64), CtxIdx>,
    roots: Vec<CtxIdx>,
    ctx_quark: Option<Quark>,
    orphan_quark: Option<Quark>,
}

fn is_close_method(method: &str) -> bool {
    method == "run" || method == "resolve"
}

impl ContextRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contexts(&self) -> &[ExecContext] {
        &self.contexts
    }

    pub fn get(&self, idx: CtxIdx) -> &ExecContext {
        &self.contexts[idx]
    }

    pub fn roots(&self) -> &[CtxIdx] {
        &self.roots
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn latest(&self, pid: u32, id: i64) -> Option<CtxIdx> {
        self.latest.get(&(pid, id)).copied()
    }

    fn is_open(&self, pid: u32, id: i64) -> bool {
        self.latest(pid, id).is_some_and(|i| self.contexts[i].close_ts.is_none())
    }

    /// Instance of `(pid, id)` open at `ts`, else the most recent one opened before `ts`.
    pub fn resolve_at(&self, pid: u32, id: i64, ts: Ns) -> Option<CtxIdx> {
        let mut idx = self.latest(pid, id)?;
        // Walk back through earlier instances when ids are reused.
        loop {
            let c = &self.contexts[idx];
            if c.open_ts <= ts {
                return Some(idx);
            }
            idx = self.contexts[..idx].iter().rposition(|c| c.pid == pid && c.id == id)?;
        }
    }

    /// Root ancestor (inclusive) of a context instance.
    pub fn root_of(&self, mut idx: CtxIdx) -> CtxIdx {
        while let Some(p) = self.contexts[idx].parent {
            idx = p;
        }
        idx
    }

    pub fn ancestry(&self, idx: CtxIdx) -> Vec<CtxIdx> {
        let mut out = vec![idx];
        let mut cur = idx;
        while let Some(p) = self.contexts[cur].parent {
            out.push(p);
            cur = p;
        }
        out
    }

    fn ctx_root(&mut self, sht: &mut StateHistoryTree) -> Quark {
        *self.ctx_quark.get_or_insert_with(|| sht.get_or_create_quark(None, "ctx"))
    }

    fn orphan_root(&mut self, sht: &mut StateHistoryTree) -> Quark {
        let ctx = self.ctx_root(sht);
        *self.orphan_quark.get_or_insert_with(|| sht.get_or_create_quark(Some(ctx), "orphans"))
    }

    /// Consumes one event of the ordered stream. Non-context events are ignored.
    ///
    /// Errors are diagnostics: the registry is updated as far as possible
    /// (orphans are attached, duplicate closes ignored) before they are returned.
    pub fn process_event(&mut self, event: &TraceEvent, sht: &mut StateHistoryTree) -> Result<(), NbcaError> {
        if !matches!(event.layer, Layer::Js | Layer::Vm) {
            return Ok(());
        }
        match &event.kind {
            EventKind::UvSend { id, .. } if event.kind.is_exit_send() => self.close(event.pid, *id, event.ts, sht),
            // A run/resolve-method send ends a live context; for an unknown or closed id it opens one.
            EventKind::UvSend { id, method, .. } if is_close_method(method) && self.is_open(event.pid, *id) => {
                self.close(event.pid, *id, event.ts, sht)
            }
            EventKind::UvSend { id, channel, method } => self.open(event, *id, *channel, method, sht),
            EventKind::Run { id } | EventKind::Resolve { id } => self.close(event.pid, *id, event.ts, sht),
            _ => Ok(()),
        }
    }

    fn open(
        &mut self,
        event: &TraceEvent,
        id: i64,
        channel: Option<i64>,
        method: &str,
        sht: &mut StateHistoryTree,
    ) -> Result<(), NbcaError> {
        let pid = event.pid;
        if let Some(idx) = self.latest(pid, id) {
            if self.contexts[idx].close_ts.is_none() {
                // Re-announcement of a live context: a status update only.
                let q = self.contexts[idx].quark;
                sht.modify_attribute(q, event.ts, StateValue::from(method))?;
                return Ok(());
            }
        }
        let mut diag = None;
        let (parent, parent_quark, orphan) = match channel {
            None => (None, self.ctx_root(sht), false),
            Some(ch) => match self.latest(pid, ch) {
                Some(p) => {
                    if self.contexts[p].close_ts.is_some() {
                        diag = Some(NbcaError::TriggerClosed { pid, id, channel: ch, ts: event.ts });
                    }
                    (Some(p), self.contexts[p].quark, false)
                }
                None => {
                    diag = Some(NbcaError::UnknownTrigger { pid, id, channel: ch });
                    (None, self.orphan_root(sht), true)
                }
            },
        };
        let quark = sht.get_or_create_quark(Some(parent_quark), &id.to_string());
        sht.modify_attribute(quark, event.ts, StateValue::from(method))?;
        let idx = self.contexts.len();
        self.contexts.push(ExecContext {
            pid,
            id,
            trigger_id: channel,
            method: method.to_string(),
            layer: event.layer,
            tid: event.tid,
            quark,
            open_ts: event.ts,
            close_ts: None,
            parent,
            children: Vec::new(),
            orphan,
        });
        match parent {
            Some(p) => self.contexts[p].children.push(idx),
            None => self.roots.push(idx),
        }
        self.latest.insert((pid, id), idx);
        diag.map_or(Ok(()), Err)
    }

    fn close(&mut self, pid: u32, id: i64, ts: Ns, sht: &mut StateHistoryTree) -> Result<(), NbcaError> {
        let Some(idx) = self.latest(pid, id) else {
            return Err(NbcaError::UnknownClose { pid, id, ts });
        };
        let ctx = &mut self.contexts[idx];
        if ctx.close_ts.is_some() {
            return Err(NbcaError::DoubleClose { pid, id, ts });
        }
        ctx.close_ts = Some(ts);
        sht.modify_attribute(ctx.quark, ts, StateValue::Null)?;
        Ok(())
    }

    /// Ancestor list from `id` up to its root, inclusive.
    pub fn context_chain(&self, pid: u32, id: i64) -> Result<Vec<&ExecContext>, NbcaError> {
        let idx = self.latest(pid, id).ok_or(NbcaError::UnknownContext { pid, id })?;
        Ok(self.ancestry(idx).into_iter().map(|i| &self.contexts[i]).collect())
    }
}

/// Runs the context pass over a whole ordered stream, collecting diagnostics.
pub fn build_forest<'a>(
    events: impl IntoIterator<Item = &'a TraceEvent>,
    sht: &mut StateHistoryTree,
) -> (ContextRegistry, Vec<NbcaError>) {
    let mut reg = ContextRegistry::new();
    let mut diags = Vec::new();
    for e in events {
        if let Err(d) = reg.process_event(e, sht) {
            diags.push(d);
        }
    }
    (reg, diags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::{json, Value};

    fn ev(ts: Ns, layer: Layer, name: &str, args: Value) -> TraceEvent {
        let Value::Object(m) = args else { panic!() };
        TraceEvent::new(ts, layer, name, 1, 7, m).unwrap()
    }

    fn send(ts: Ns, id: i64, channel: Option<i64>, method: &str) -> TraceEvent {
        let layer = if channel.is_none() { Layer::Js } else { Layer::Vm };
        ev(ts, layer, "uv_send", json!({"id": id, "channel": channel, "method": method}))
    }

    #[test]
    fn promise_chain() {
        let mut sht = StateHistoryTree::new(0);
        let events = [
            send(100, 324, None, "computePromise"),
            send(200, 17786, Some(324), "promise"),
            send(300, 17787, Some(17786), "promise"),
            ev(500, Layer::Vm, "resolve", json!({"id": 17786})),
        ];
        let (reg, diags) = build_forest(&events, &mut sht);
        assert!(diags.is_empty(), "{diags:?}");
        let chain: Vec<i64> = reg.context_chain(1, 17787).unwrap().iter().map(|c| c.id).collect();
        assert_eq!(chain, vec![17787, 17786, 324]);
        let c = &reg.contexts()[reg.latest(1, 17786).unwrap()];
        assert_eq!(c.close_ts, Some(500));
        sht.close_history(1000).unwrap();
        assert_eq!(sht.query_single(c.quark, 499).unwrap().value, StateValue::from("promise"));
        assert!(sht.query_single(c.quark, 500).unwrap().value.is_null());
        assert_eq!(sht.full_path(c.quark), "/ctx/324/17786");
    }

    #[test]
    fn read_file_context_chain() {
        let mut sht = StateHistoryTree::new(0);
        let events = [
            send(0, 18770, None, "readFile"),
            send(10, 18772, Some(18770), "FSReqCallback"),
            send(20, 18778, Some(18772), "FSReqCallback"),
            send(30, 18779, Some(18778), "FSReqCallback"),
            send(40, 18791, Some(18779), "FSReqCallback"),
        ];
        let (reg, _) = build_forest(&events, &mut sht);
        let chain: Vec<i64> = reg.context_chain(1, 18791).unwrap().iter().map(|c| c.id).collect();
        assert_eq!(chain, vec![18791, 18779, 18778, 18772, 18770]);
        let root: Vec<i64> = reg.context_chain(1, 18770).unwrap().iter().map(|c| c.id).collect();
        assert_eq!(root, vec![18770]);
        assert!(matches!(reg.context_chain(1, 5), Err(NbcaError::UnknownContext { .. })));
    }

    #[test]
    fn orphan_and_double_close() {
        let mut sht = StateHistoryTree::new(0);
        let events = [
            send(10, 5, Some(99), "promise"),
            ev(20, Layer::Vm, "run", json!({"id": 5})),
            ev(30, Layer::Vm, "resolve", json!({"id": 5})),
        ];
        let (reg, diags) = build_forest(&events, &mut sht);
        assert_eq!(
            diags,
            vec![
                NbcaError::UnknownTrigger { pid: 1, id: 5, channel: 99 },
                NbcaError::DoubleClose { pid: 1, id: 5, ts: 30 }
            ]
        );
        let c = &reg.contexts()[0];
        assert!(c.orphan);
        assert_eq!(sht.full_path(c.quark), "/ctx/orphans/5");
    }

    #[test]
    fn exit_send_closes_root_and_ids_can_be_reused() {
        let mut sht = StateHistoryTree::new(0);
        let events = [
            send(10, 1, None, "f"),
            send(20, 1, None, "js_exit_f"),
            send(30, 1, None, "f"),
        ];
        let (reg, diags) = build_forest(&events, &mut sht);
        assert!(diags.is_empty());
        assert_eq!(reg.len(), 2);
        assert_eq!(reg.contexts()[0].close_ts, Some(20));
        assert_eq!(reg.latest(1, 1), Some(1));
        assert_eq!(reg.resolve_at(1, 1, 15), Some(0));
        assert_eq!(reg.resolve_at(1, 1, 35), Some(1));
    }

    #[test]
    fn replay_is_deterministic() {
        let events = [
            send(1, 1, None, "f"),
            send(2, 2, Some(1), "promise"),
            send(3, 3, Some(2), "promise"),
            send(4, 4, Some(1), "promise"),
        ];
        let a = build_forest(&events, &mut StateHistoryTree::new(0)).0;
        let b = build_forest(&events, &mut StateHistoryTree::new(0)).0;
        assert_eq!(a.contexts(), b.contexts());
    }
}
