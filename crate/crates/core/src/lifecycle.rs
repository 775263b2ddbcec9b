//! Request-state automaton.
//!
//! ```text
//! S0 --uv_send--> S1 --uv_dequeue--> S2 --run--> S3 ----------------\
//!                                     |--uv_submit--> S4 --remove--> S5 --uv_done--> S7
//!                                     \--fs/socket begin--> S6 -----/
//! S7 --uv_send(js_exit_*)--> S0        S7 --uv_send(resource)--> S1
//! ```
//!
//! Chained atomic operations re-enter S1 from S7; each S1..S7 stretch is a hop
//! and is classified on its own.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::sht::{ShtError, StateHistoryTree, StateValue};
use crate::trace::{EventKind, Ns, Phase, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RequestState {
    /// In the interpreter.
    S0,
    /// Queued for the event loop.
    S1,
    /// Dequeued, handled by the event loop.
    S2,
    /// Executed directly by the runtime.
    S3,
    /// Waiting in the worker queue.
    S4,
    /// Executing on a pool thread.
    S5,
    /// Delegated to the operating system.
    S6,
    /// Completed.
    S7,
}

impl fmt::Display for RequestState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    RuntimeDirect,
    OsDelegated,
    ThreadPool,
}

impl PathKind {
    /// The single-hop state sequence that witnesses this path.
    pub fn witness(self) -> &'static [RequestState] {
        use RequestState::*;
        match self {
            PathKind::RuntimeDirect => &[S0, S1, S2, S3, S7, S0],
            PathKind::OsDelegated => &[S0, S1, S2, S6, S7, S0],
            PathKind::ThreadPool => &[S0, S1, S2, S4, S5, S7, S0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LifecycleError {
    #[error("illegal transition from {from} on {event}")]
    IllegalTransition { from: RequestState, event: String },
    #[error("no legal path matches {0:?}")]
    NoLegalPath(Vec<RequestState>),
    #[error("event {event} at {ts} precedes previous transition at {prev}")]
    TimeRegression { event: String, ts: Ns, prev: Ns },
}

/// One step of the automaton.
pub fn advance(current: RequestState, event: &TraceEvent) -> Result<RequestState, LifecycleError> {
    use RequestState::*;
    let next = match (current, &event.kind) {
        (S0, EventKind::UvSend { .. }) if !event.kind.is_exit_send() => Some(S1),
        (S1, EventKind::Dequeue { .. }) => Some(S2),
        (S2, EventKind::Run { .. }) => Some(S3),
        (S2, EventKind::Submit { .. }) => Some(S4),
        (S4, EventKind::WorkerqRemove { .. }) => Some(S5),
        (S2, EventKind::Fs { phase: Phase::Begin, .. })
        | (S2, EventKind::SocketRead { phase: Phase::Begin, .. })
        | (S2, EventKind::SyscallEntry { .. }) => Some(S6),
        (S3 | S5 | S6, EventKind::Done { .. }) => Some(S7),
        (S7, EventKind::UvSend { .. }) => Some(if event.kind.is_exit_send() { S0 } else { S1 }),
        _ => None,
    };
    next.ok_or_else(|| LifecycleError::IllegalTransition { from: current, event: event.name.clone() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateEntry {
    pub state: RequestState,
    pub ts: Ns,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTimeline {
    pub request_id: i64,
    pub pid: u32,
    pub entries: Vec<StateEntry>,
}

impl RequestTimeline {
    /// Replays the request's transition events, starting in S0 at `entry_ts`.
    pub fn replay<'a>(
        request_id: i64,
        pid: u32,
        entry_ts: Ns,
        events: impl IntoIterator<Item = &'a TraceEvent>,
    ) -> Result<RequestTimeline, LifecycleError> {
        let mut entries = vec![StateEntry { state: RequestState::S0, ts: entry_ts }];
        for e in events {
            let last = entries.last().expect("non-empty");
            let state = advance(last.state, e)?;
            if e.ts < last.ts {
                return Err(LifecycleError::TimeRegression { event: e.name.clone(), ts: e.ts, prev: last.ts });
            }
            entries.push(StateEntry { state, ts: e.ts });
        }
        Ok(RequestTimeline { request_id, pid, entries })
    }

    pub fn states(&self) -> Vec<RequestState> {
        self.entries.iter().map(|e| e.state).collect()
    }

    pub fn entry_ts(&self) -> Ns {
        self.entries[0].ts
    }

    pub fn exit_ts(&self) -> Ns {
        self.entries.last().expect("non-empty").ts
    }

    pub fn is_complete(&self) -> bool {
        self.entries.len() > 1 && self.entries.last().map(|e| e.state) == Some(RequestState::S0)
    }
}

/// Classifies a complete state sequence, one [`PathKind`] per hop.
pub fn classify_states(states: &[RequestState]) -> Result<Vec<PathKind>, LifecycleError> {
    use RequestState::*;
    let fail = || LifecycleError::NoLegalPath(states.to_vec());
    if states.len() < 2 || states[0] != S0 || states[states.len() - 1] != S0 {
        return Err(fail());
    }
    let body = &states[1..states.len() - 1];
    let mut hops = Vec::new();
    let mut rest = body;
    while !rest.is_empty() {
        let (kind, len) = match rest {
            [S1, S2, S3, S7, ..] => (PathKind::RuntimeDirect, 4),
            [S1, S2, S6, S7, ..] => (PathKind::OsDelegated, 4),
            [S1, S2, S4, S5, S7, ..] => (PathKind::ThreadPool, 5),
            _ => return Err(fail()),
        };
        hops.push(kind);
        rest = &rest[len..];
    }
    if hops.is_empty() {
        return Err(fail());
    }
    Ok(hops)
}

pub fn classify_path(timeline: &RequestTimeline) -> Result<Vec<PathKind>, LifecycleError> {
    classify_states(&timeline.states())
}

/// Time spent in each visited state. Sums to `exit_ts - entry_ts`.
pub fn dwell_times(timeline: &RequestTimeline) -> BTreeMap<RequestState, Ns> {
    let mut dwell = BTreeMap::new();
    for w in timeline.entries.windows(2) {
        *dwell.entry(w[0].state).or_insert(0) += w[1].ts - w[0].ts;
    }
    dwell
}

/// Writes the timeline under `/req/<id>/state`.
pub fn record_timeline(sht: &mut StateHistoryTree, timeline: &RequestTimeline) -> Result<(), ShtError> {
    let q = sht.get_or_create_path(&format!("/req/{}/state", timeline.request_id));
    for e in &timeline.entries {
        sht.modify_attribute(q, e.ts, StateValue::from(e.state.to_string()))?;
    }
    if let Some(last) = timeline.entries.last() {
        sht.modify_attribute(q, last.ts, StateValue::Null)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::Layer;
    use serde_json::{json, Value};
    use RequestState::*;

    fn ev(ts: Ns, layer: Layer, name: &str, args: Value) -> TraceEvent {
        let Value::Object(m) = args else { panic!() };
        TraceEvent::new(ts, layer, name, 1, 7, m).unwrap()
    }

    fn send(ts: Ns, method: &str) -> TraceEvent {
        ev(ts, Layer::Vm, "uv_send", json!({"id": 1, "channel": 0, "method": method}))
    }

    #[test]
    fn documented_edges() {
        let dq = ev(0, Layer::Libuv, "uv_dequeue", json!({"req_id": 1}));
        assert_eq!(advance(S1, &dq), Ok(S2));
        assert_eq!(advance(S7, &send(0, "js_exit_f")), Ok(S0));
        assert_eq!(advance(S7, &send(0, "FSReqCallback")), Ok(S1));
        let submit = ev(0, Layer::Libuv, "uv_submit", json!({"op_id": 1}));
        assert_eq!(
            advance(S3, &submit),
            Err(LifecycleError::IllegalTransition { from: S3, event: "uv_submit".into() })
        );
        let sock = ev(0, Layer::Libuv, "uv_socketRead", json!({"op_id": 1, "phase": "begin"}));
        assert_eq!(advance(S2, &sock), Ok(S6));
    }

    #[test]
    fn classification() {
        assert_eq!(classify_states(&[S0, S1, S2, S4, S5, S7, S0]), Ok(vec![PathKind::ThreadPool]));
        assert_eq!(classify_states(&[S0, S1, S2, S3, S7, S0]), Ok(vec![PathKind::RuntimeDirect]));
        assert_eq!(classify_states(&[S0, S1, S2, S6, S7, S0]), Ok(vec![PathKind::OsDelegated]));
        assert!(matches!(classify_states(&[S0, S1, S2, S7, S0]), Err(LifecycleError::NoLegalPath(_))));
        assert_eq!(
            classify_states(&[S0, S1, S2, S4, S5, S7, S1, S2, S3, S7, S0]),
            Ok(vec![PathKind::ThreadPool, PathKind::RuntimeDirect])
        );
        for k in [PathKind::RuntimeDirect, PathKind::OsDelegated, PathKind::ThreadPool] {
            assert_eq!(classify_states(k.witness()), Ok(vec![k]));
        }
    }

    #[test]
    fn dwell_accounting() {
        let events = [
            send(100, "FSReqCallback"),
            ev(160, Layer::Libuv, "uv_dequeue", json!({"req_id": 1})),
            ev(170, Layer::Vm, "run", json!({"id": 1})),
            ev(200, Layer::Libuv, "uv_done", json!({"op_id": 1})),
            send(200, "js_exit_f"),
        ];
        let t = RequestTimeline::replay(1, 1, 90, &events).unwrap();
        assert!(t.is_complete());
        let d = dwell_times(&t);
        assert_eq!(d[&S1], 60);
        assert_eq!(d[&S7], 0);
        assert_eq!(d.values().sum::<Ns>(), t.exit_ts() - t.entry_ts());
        assert_eq!(classify_path(&t), Ok(vec![PathKind::RuntimeDirect]));
    }

    #[test]
    fn truncated_timeline_has_no_path() {
        let t = RequestTimeline::replay(1, 1, 0, &[send(1, "promise")]).unwrap();
        assert!(!t.is_complete());
        assert!(classify_path(&t).is_err());
    }
}
