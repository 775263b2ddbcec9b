//! Ground-truth sidecar written next to every simulated trace pair.

use serde::{Deserialize, Serialize};

use crate::lifecycle::{PathKind, RequestState};
use crate::trace::Ns;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: String,
    pub seed: u64,
    pub contexts: Vec<TrueContext>,
    pub requests: Vec<TrueRequest>,
    pub ops: Vec<TrueOp>,
    pub gc: Vec<TrueGc>,
    pub faults: Vec<TrueFault>,
    pub ipc_edges: Vec<TrueIpcEdge>,
    pub offsets: Vec<TrueOffset>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueContext {
    pub pid: u32,
    pub id: i64,
    pub parent: Option<i64>,
    pub method: String,
    pub open_ts: Ns,
    pub close_ts: Option<Ns>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueHop {
    pub op_id: i64,
    pub ctx: i64,
    pub path: PathKind,
    pub states: Vec<RequestState>,
    /// Time spent queued: event-loop queue plus worker queue.
    pub queue_ns: Ns,
    /// Time between the fd reference resolving and this hop reading it.
    pub ref_since_resolve_ns: Option<Ns>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueRequest {
    pub pid: u32,
    pub tid: u32,
    pub root_ctx: i64,
    pub root_fn: String,
    pub entry_ts: Ns,
    pub exit_ts: Ns,
    pub wall_ns: Ns,
    /// Time inside the root but outside the op chain (before the first op, after the last).
    pub unmodeled_ns: Ns,
    pub queue_ns: Ns,
    pub hops: Vec<TrueHop>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueSyscall {
    pub name: String,
    pub entry_ts: Ns,
    pub exit_ts: Ns,
    pub ret: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueOp {
    pub pid: u32,
    pub op_id: i64,
    pub name: String,
    pub path: PathKind,
    pub begin_ts: Ns,
    pub end_ts: Ns,
    pub tid: u32,
    pub el_tid: u32,
    pub exec_ctx: i64,
    pub root_ctx: i64,
    pub queue_wait: Ns,
    pub syscalls: Vec<TrueSyscall>,
    /// Inflated by an overlapping GC pass.
    pub disrupted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueGc {
    pub pid: u32,
    pub tid: u32,
    pub kind: String,
    pub begin_ts: Ns,
    pub end_ts: Ns,
    pub leak: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueFault {
    pub kind: String,
    pub pid: u32,
    pub begin_ts: Ns,
    pub end_ts: Ns,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueIpcEdge {
    pub from: u32,
    pub to: u32,
    pub pipe: String,
    pub messages: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueOffset {
    pub source: String,
    pub offset: i64,
}
