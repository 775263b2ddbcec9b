//! Vertical span reconstruction.
//!
//! A bounded execution context (BEC) opens on a js-layer `uv_send` without a
//! trigger and closes on the matching `js_exit_<fn>` send. Atomic operations
//! are assembled from libuv events keyed by `(pid, op_id)`, bound to the
//! execution context of the nearest preceding vm `uv_send` on the same thread,
//! and given the kernel syscalls their executing thread issued inside the
//! operation window.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::lifecycle::PathKind;
use crate::metrics::{span_totals, SpanTotals};
use crate::nbca::{ContextRegistry, CtxIdx};
use crate::sht::{ShtError, StateHistoryTree, StateValue};
use crate::trace::{EventKind, Layer, Ns, Phase, TraceEvent};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SyscallRecord {
    pub name: String,
    pub entry_ts: Ns,
    pub exit_ts: Ns,
    pub ret: Option<i64>,
    /// Entry had no exit; closed at the op's end.
    pub dangling: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AtomicOp {
    pub pid: u32,
    pub op_id: i64,
    pub name: String,
    pub layer: Layer,
    pub path: PathKind,
    pub begin_ts: Ns,
    pub end_ts: Ns,
    /// Executing thread.
    pub tid: u32,
    /// Event-loop thread that dispatched the op.
    pub el_tid: u32,
    pub exec_ctx: i64,
    pub syscalls: Vec<SyscallRecord>,
    pub queue_wait: Ns,
    /// `uv_done` was seen.
    pub completed: bool,
    #[serde(skip)]
    pub ctx_idx: CtxIdx,
    /// Stream indices of the lifecycle edge events, in order.
    #[serde(skip)]
    pub transitions: Vec<usize>,
    #[serde(skip)]
    pub first_event: usize,
}

impl AtomicOp {
    pub fn attl(&self) -> Ns {
        self.end_ts - self.begin_ts
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BoundedExecutionContext {
    pub root_fn: String,
    pub pid: u32,
    pub tid: u32,
    pub root_ctx: i64,
    pub entry_ts: Ns,
    /// Exit send timestamp, or the trace end when the exit was never seen.
    pub exit_ts: Ns,
    pub open_ended: bool,
    #[serde(skip)]
    pub root_idx: Option<CtxIdx>,
    #[serde(skip)]
    pub entry_event: usize,
    #[serde(skip)]
    pub exit_event: Option<usize>,
}

impl BoundedExecutionContext {
    pub fn wall(&self) -> Ns {
        self.exit_ts - self.entry_ts
    }

    fn contains(&self, ts: Ns) -> bool {
        self.entry_ts <= ts && ts <= self.exit_ts
    }
}

/// One execution context with the ops it issued.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpanNode {
    pub ctx: i64,
    pub method: String,
    pub open_ts: Ns,
    pub close_ts: Option<Ns>,
    /// Indices into [`VerticalSpan::ops`].
    pub ops: Vec<usize>,
    pub children: Vec<SpanNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerticalSpan {
    pub bec: BoundedExecutionContext,
    /// Chain order: by begin time, then stream position.
    pub ops: Vec<AtomicOp>,
    pub tree: Option<SpanNode>,
    pub t: Ns,
    pub l: Ns,
    pub gaps: Vec<Ns>,
    pub clamped_gaps: usize,
    pub path_kinds: Vec<PathKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[serde(tag = "kind")]
pub enum BctaDiagnostic {
    #[error("pid {pid}: op {op_id} at {ts} has no preceding vm uv_send on tid {tid}")]
    NoPrecedingSend { pid: u32, tid: u32, op_id: i64, ts: Ns },
    #[error("pid {pid}: op {op_id} handoff is missing {missing}")]
    IncompleteHandoff { pid: u32, op_id: i64, missing: &'static str },
    #[error("pid {pid} tid {tid}: {name} entered at {entry_ts} has no exit; closed at {closed_at}")]
    DanglingSyscallEntry { pid: u32, tid: u32, name: String, entry_ts: Ns, closed_at: Ns },
    #[error("pid {pid} tid {tid}: {name} [{entry_ts}, {exit_ts}] straddles the end of op {op_id}")]
    SyscallResidue { pid: u32, tid: u32, op_id: i64, name: String, entry_ts: Ns, exit_ts: Ns },
    #[error("event #{index} {name} at {ts}: {reason}")]
    UnmatchedEvent { index: usize, name: String, ts: Ns, reason: &'static str },
    #[error("pid {pid}: op {op_id} at {ts} lies in no bounded execution context")]
    OpOutsideBec { pid: u32, op_id: i64, ts: Ns },
    #[error("pid {pid}: {root_fn} (ctx {root_ctx}) has no exit event")]
    OpenEndedBec { pid: u32, root_ctx: i64, root_fn: String },
    #[error("sht: {0}")]
    Sht(String),
}

impl BctaDiagnostic {
    /// Events that could not be placed, as opposed to truncation notices.
    pub fn is_unmatched(&self) -> bool {
        !matches!(self, BctaDiagnostic::OpenEndedBec { .. } | BctaDiagnostic::Sht(_))
    }
}

impl From<ShtError> for BctaDiagnostic {
    fn from(e: ShtError) -> Self {
        BctaDiagnostic::Sht(e.to_string())
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Reconstruction {
    pub spans: Vec<VerticalSpan>,
    /// Ops that belong to no BEC.
    pub stray_ops: Vec<AtomicOp>,
    pub diagnostics: Vec<BctaDiagnostic>,
}

impl Reconstruction {
    pub fn unmatched_count(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.is_unmatched()).count()
    }

    pub fn ops(&self) -> impl Iterator<Item = &AtomicOp> {
        self.spans.iter().flat_map(|s| s.ops.iter())
    }
}

fn is_op_send(e: &TraceEvent) -> bool {
    match &e.kind {
        EventKind::UvSend { method, .. } => {
            e.layer == Layer::Vm && !e.kind.is_exit_send() && method != "run" && method != "resolve"
        }
        _ => false,
    }
}

/// Latest vm-layer `uv_send` on the same `(pid, tid)` that precedes `anchor` in
/// stream order. Equal timestamps are allowed: the stream order is authoritative.
pub fn match_preceding_vm_send(events: &[TraceEvent], anchor: usize) -> Option<usize> {
    let a = &events[anchor];
    events[..anchor].iter().rposition(|e| e.pid == a.pid && e.tid == a.tid && is_op_send(e))
}

#[derive(Debug, Default)]
struct OpBuilder {
    pid: u32,
    op_id: i64,
    el_tid: u32,
    dequeue: Option<usize>,
    async_file: Option<usize>,
    submit: Option<usize>,
    remove: Option<usize>,
    begin: Option<usize>,
    end: Option<usize>,
    run: Option<usize>,
    done: Option<usize>,
    name: Option<String>,
    first: usize,
}

#[derive(Debug, Clone)]
struct Syscall {
    pid: u32,
    tid: u32,
    name: String,
    entry_ts: Ns,
    exit_ts: Option<Ns>,
    ret: Option<i64>,
}

fn pair_syscalls(events: &[TraceEvent], diags: &mut Vec<BctaDiagnostic>) -> HashMap<(u32, u32), Vec<Syscall>> {
    let mut open: HashMap<(u32, u32), Vec<Syscall>> = HashMap::new();
    let mut done: HashMap<(u32, u32), Vec<Syscall>> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        match &e.kind {
            EventKind::SyscallEntry { name } => open.entry((e.pid, e.tid)).or_default().push(Syscall {
                pid: e.pid,
                tid: e.tid,
                name: name.clone(),
                entry_ts: e.ts,
                exit_ts: None,
                ret: None,
            }),
            EventKind::SyscallExit { name, ret } => {
                let stack = open.entry((e.pid, e.tid)).or_default();
                match stack.iter().rposition(|s| &s.name == name) {
                    Some(pos) => {
                        let mut s = stack.remove(pos);
                        s.exit_ts = Some(e.ts);
                        s.ret = Some(*ret);
                        done.entry((e.pid, e.tid)).or_default().push(s);
                    }
                    None => diags.push(BctaDiagnostic::UnmatchedEvent {
                        index: i,
                        name: e.name.clone(),
                        ts: e.ts,
                        reason: "syscall exit without entry",
                    }),
                }
            }
            _ => {}
        }
    }
    for (k, rest) in open {
        done.entry(k).or_default().extend(rest);
    }
    for list in done.values_mut() {
        list.sort_by_key(|s| (s.entry_ts, s.exit_ts.unwrap_or(Ns::MAX)));
    }
    done
}

fn find_becs(events: &[TraceEvent], registry: &ContextRegistry, end_ts: Ns) -> Vec<BoundedExecutionContext> {
    let mut becs: Vec<BoundedExecutionContext> = Vec::new();
    let mut open: HashMap<(u32, i64), usize> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        if e.layer != Layer::Js {
            continue;
        }
        let EventKind::UvSend { id, channel, method } = &e.kind else { continue };
        if e.kind.is_exit_send() {
            if let Some(b) = open.remove(&(e.pid, *id)) {
                becs[b].exit_ts = e.ts;
                becs[b].exit_event = Some(i);
                becs[b].open_ended = false;
            }
        } else if channel.is_none() && !open.contains_key(&(e.pid, *id)) {
            open.insert((e.pid, *id), becs.len());
            becs.push(BoundedExecutionContext {
                root_fn: method.clone(),
                pid: e.pid,
                tid: e.tid,
                root_ctx: *id,
                entry_ts: e.ts,
                exit_ts: end_ts,
                open_ended: true,
                root_idx: registry.resolve_at(e.pid, *id, e.ts),
                entry_event: i,
                exit_event: None,
            });
        }
    }
    becs
}

fn collect_builders(
    events: &[TraceEvent],
    diags: &mut Vec<BctaDiagnostic>,
) -> Vec<OpBuilder> {
    let mut builders: Vec<OpBuilder> = Vec::new();
    let mut by_id: HashMap<(u32, i64), usize> = HashMap::new();
    let mut pending_dequeue: HashMap<(u32, u32), usize> = HashMap::new();
    let mut pending_run: HashMap<(u32, u32), usize> = HashMap::new();

    fn builder_for(
        builders: &mut Vec<OpBuilder>,
        by_id: &mut HashMap<(u32, i64), usize>,
        pending_dequeue: &mut HashMap<(u32, u32), usize>,
        e: &TraceEvent,
        op_id: i64,
        i: usize,
    ) -> usize {
        if let Some(&b) = by_id.get(&(e.pid, op_id)) {
            if builders[b].done.is_none() {
                return b;
            }
        }
        let b = builders.len();
        builders.push(OpBuilder {
            pid: e.pid,
            op_id,
            el_tid: e.tid,
            dequeue: pending_dequeue.remove(&(e.pid, e.tid)),
            first: i,
            ..OpBuilder::default()
        });
        by_id.insert((e.pid, op_id), b);
        b
    }

    let unmatched = |i: usize, e: &TraceEvent, reason| BctaDiagnostic::UnmatchedEvent {
        index: i,
        name: e.name.clone(),
        ts: e.ts,
        reason,
    };

    for (i, e) in events.iter().enumerate() {
        let key = (e.pid, e.tid);
        match &e.kind {
            EventKind::Dequeue { .. } => {
                if let Some(prev) = pending_dequeue.insert(key, i) {
                    diags.push(unmatched(prev, &events[prev], "dequeue not followed by an atomic task"));
                }
            }
            EventKind::Run { .. } if e.layer == Layer::Vm => {
                if let Some(dq) = pending_dequeue.remove(&key) {
                    let b = builders.len();
                    builders.push(OpBuilder {
                        pid: e.pid,
                        op_id: -1,
                        el_tid: e.tid,
                        dequeue: Some(dq),
                        run: Some(i),
                        first: i,
                        name: Some("run".into()),
                        ..OpBuilder::default()
                    });
                    pending_run.insert(key, b);
                }
            }
            EventKind::AsyncFile { op_id } => {
                let b = builder_for(&mut builders, &mut by_id, &mut pending_dequeue, e, *op_id, i);
                builders[b].async_file = Some(i);
            }
            EventKind::Submit { op_id } => {
                let b = builder_for(&mut builders, &mut by_id, &mut pending_dequeue, e, *op_id, i);
                builders[b].submit = Some(i);
            }
            EventKind::WorkerqRemove { op_id } => match by_id.get(&(e.pid, *op_id)) {
                Some(&b) if builders[b].done.is_none() => builders[b].remove = Some(i),
                _ => diags.push(unmatched(i, e, "worker-queue removal of an unknown op")),
            },
            EventKind::Fs { kind, op_id, phase } => {
                let known = by_id.get(&(e.pid, *op_id)).copied().filter(|&b| builders[b].done.is_none());
                let b = match (known, phase) {
                    (Some(b), _) => b,
                    (None, Phase::Begin) => builder_for(&mut builders, &mut by_id, &mut pending_dequeue, e, *op_id, i),
                    (None, Phase::End) => {
                        diags.push(unmatched(i, e, "end of an op that never began"));
                        continue;
                    }
                };
                builders[b].name.get_or_insert_with(|| kind.op_name().to_string());
                match phase {
                    Phase::Begin => builders[b].begin = builders[b].begin.or(Some(i)),
                    Phase::End => builders[b].end = Some(i),
                }
            }
            EventKind::SocketRead { op_id, phase } => {
                let known = by_id.get(&(e.pid, *op_id)).copied().filter(|&b| builders[b].done.is_none());
                let b = match (known, phase) {
                    (Some(b), _) => b,
                    (None, Phase::Begin) => builder_for(&mut builders, &mut by_id, &mut pending_dequeue, e, *op_id, i),
                    (None, Phase::End) => {
                        diags.push(unmatched(i, e, "end of an op that never began"));
                        continue;
                    }
                };
                builders[b].name.get_or_insert_with(|| "socketRead".to_string());
                match phase {
                    Phase::Begin => builders[b].begin = builders[b].begin.or(Some(i)),
                    Phase::End => builders[b].end = Some(i),
                }
            }
            EventKind::Done { op_id } => {
                if let Some(&b) = by_id.get(&(e.pid, *op_id)).filter(|&&b| builders[b].done.is_none()) {
                    builders[b].done = Some(i);
                } else if let Some(b) = pending_run.remove(&key) {
                    builders[b].op_id = *op_id;
                    builders[b].done = Some(i);
                    by_id.insert((e.pid, *op_id), b);
                } else {
                    diags.push(unmatched(i, e, "completion of an unknown op"));
                }
            }
            _ => {}
        }
    }
    for (_, dq) in pending_dequeue {
        diags.push(unmatched(dq, &events[dq], "dequeue not followed by an atomic task"));
    }
    builders.sort_by_key(|b| b.first);
    builders
}

fn finish_op(
    b: &OpBuilder,
    events: &[TraceEvent],
    registry: &ContextRegistry,
) -> Result<AtomicOp, BctaDiagnostic> {
    let ts = |i: usize| events[i].ts;
    let anchor = b.dequeue.or(b.async_file).or(b.run).or(b.submit).or(b.begin).unwrap_or(b.first);
    let send = match_preceding_vm_send(events, anchor);
    let mut transitions: Vec<usize> = send.into_iter().chain(b.dequeue).collect();

    let (path, begin, end, tid, queue_wait, ctx_id) = if let Some(run) = b.run {
        let EventKind::Run { id } = events[run].kind else { unreachable!() };
        transitions.push(run);
        let end = b.done.map_or(ts(run), ts);
        (PathKind::RuntimeDirect, ts(run), end, events[run].tid, 0, id)
    } else {
        let send = send.ok_or(BctaDiagnostic::NoPrecedingSend {
            pid: b.pid,
            tid: events[anchor].tid,
            op_id: b.op_id,
            ts: ts(anchor),
        })?;
        let EventKind::UvSend { id: ctx_id, .. } = events[send].kind else { unreachable!() };
        match (b.submit, b.remove) {
            (Some(submit), Some(remove)) => {
                transitions.extend([submit, remove]);
                let begin = b.begin.map_or(ts(remove), ts);
                let end = b.end.or(b.done).map_or(begin, ts).max(begin);
                let qw = ts(remove).saturating_sub(ts(submit));
                (PathKind::ThreadPool, begin, end, events[remove].tid, qw, ctx_id)
            }
            (Some(_), None) => {
                return Err(BctaDiagnostic::IncompleteHandoff { pid: b.pid, op_id: b.op_id, missing: "uv_workerq_remove" })
            }
            (None, Some(_)) => {
                return Err(BctaDiagnostic::IncompleteHandoff { pid: b.pid, op_id: b.op_id, missing: "uv_submit" })
            }
            (None, None) => {
                let Some(begin) = b.begin else {
                    return Err(BctaDiagnostic::IncompleteHandoff { pid: b.pid, op_id: b.op_id, missing: "uv_submit" });
                };
                transitions.push(begin);
                let end = b.end.or(b.done).map_or(ts(begin), ts).max(ts(begin));
                (PathKind::OsDelegated, ts(begin), end, events[begin].tid, 0, ctx_id)
            }
        }
    };
    transitions.extend(b.done);
    let ctx_idx = registry
        .resolve_at(b.pid, ctx_id, events[anchor].ts)
        .ok_or(BctaDiagnostic::NoPrecedingSend { pid: b.pid, tid: b.el_tid, op_id: b.op_id, ts: ts(anchor) })?;
    Ok(AtomicOp {
        pid: b.pid,
        op_id: b.op_id,
        name: b.name.clone().unwrap_or_else(|| "unknown".into()),
        layer: Layer::Libuv,
        path,
        begin_ts: begin,
        end_ts: end,
        tid,
        el_tid: b.el_tid,
        exec_ctx: ctx_id,
        syscalls: Vec::new(),
        queue_wait,
        completed: b.done.is_some(),
        ctx_idx,
        transitions,
        first_event: b.first,
    })
}

fn assign_bec(op: &AtomicOp, becs: &[BoundedExecutionContext], registry: &ContextRegistry) -> Option<usize> {
    let root = registry.root_of(op.ctx_idx);
    if let Some(b) = becs.iter().position(|b| b.root_idx == Some(root)) {
        return Some(b);
    }
    // Fallback: the latest BEC on the dispatching thread whose window holds the op.
    becs.iter()
        .enumerate()
        .filter(|(_, b)| b.pid == op.pid && b.tid == op.el_tid && b.contains(op.begin_ts))
        .max_by_key(|(_, b)| b.entry_ts)
        .map(|(i, _)| i)
}

fn attach_syscalls(
    op: &mut AtomicOp,
    bec: Option<&BoundedExecutionContext>,
    syscalls: &mut HashMap<(u32, u32), Vec<(Syscall, bool)>>,
    diags: &mut Vec<BctaDiagnostic>,
) {
    let Some(list) = syscalls.get_mut(&(op.pid, op.tid)) else { return };
    let (lo, hi) = match bec {
        Some(b) => (op.begin_ts.max(b.entry_ts), op.end_ts.min(b.exit_ts)),
        None => (op.begin_ts, op.end_ts),
    };
    if lo > hi {
        return;
    }
    let start = list.partition_point(|(s, _)| s.entry_ts < lo);
    for (s, used) in list[start..].iter_mut() {
        if s.entry_ts > hi {
            break;
        }
        // Entering at the op's last instant and running past it: the next activity's, not a residue.
        if *used || (s.entry_ts == hi && s.exit_ts.is_none_or(|x| x > hi)) {
            continue;
        }
        match s.exit_ts {
            Some(exit) if exit <= hi => {
                *used = true;
                op.syscalls.push(SyscallRecord {
                    name: s.name.clone(),
                    entry_ts: s.entry_ts,
                    exit_ts: exit,
                    ret: s.ret,
                    dangling: false,
                });
            }
            Some(exit) => {
                *used = true;
                diags.push(BctaDiagnostic::SyscallResidue {
                    pid: s.pid,
                    tid: s.tid,
                    op_id: op.op_id,
                    name: s.name.clone(),
                    entry_ts: s.entry_ts,
                    exit_ts: exit,
                });
            }
            None => {
                *used = true;
                diags.push(BctaDiagnostic::DanglingSyscallEntry {
                    pid: s.pid,
                    tid: s.tid,
                    name: s.name.clone(),
                    entry_ts: s.entry_ts,
                    closed_at: hi,
                });
                op.syscalls.push(SyscallRecord {
                    name: s.name.clone(),
                    entry_ts: s.entry_ts,
                    exit_ts: hi,
                    ret: None,
                    dangling: true,
                });
            }
        }
    }
}

fn build_tree(idx: CtxIdx, registry: &ContextRegistry, ops: &[AtomicOp]) -> SpanNode {
    let c = registry.get(idx);
    SpanNode {
        ctx: c.id,
        method: c.method.clone(),
        open_ts: c.open_ts,
        close_ts: c.close_ts,
        ops: ops.iter().enumerate().filter(|(_, o)| o.ctx_idx == idx).map(|(i, _)| i).collect(),
        children: c.children.iter().map(|&ch| build_tree(ch, registry, ops)).collect(),
    }
}

fn record_op(sht: &mut StateHistoryTree, op: &AtomicOp) -> Result<(), ShtError> {
    let q = sht.get_or_create_path(&format!("/op/{}", op.op_id));
    sht.modify_attribute(q, op.begin_ts, StateValue::from(op.name.as_str()))?;
    for (k, s) in op.syscalls.iter().enumerate() {
        let sq = sht.get_or_create_quark(Some(q), &k.to_string());
        sht.modify_attribute(sq, s.entry_ts, StateValue::from(s.name.as_str()))?;
        sht.modify_attribute(sq, s.exit_ts, StateValue::Null)?;
    }
    sht.modify_attribute(q, op.end_ts, StateValue::Null)
}

/// Rebuilds one vertical span per top-level function invocation.
pub fn reconstruct(
    events: &[TraceEvent],
    registry: &ContextRegistry,
    sht: &mut StateHistoryTree,
) -> Reconstruction {
    let end_ts = events.last().map_or(0, |e| e.ts);
    let mut diags = Vec::new();
    let becs = find_becs(events, registry, end_ts);
    for b in becs.iter().filter(|b| b.open_ended) {
        diags.push(BctaDiagnostic::OpenEndedBec { pid: b.pid, root_ctx: b.root_ctx, root_fn: b.root_fn.clone() });
    }
    let mut syscalls: HashMap<(u32, u32), Vec<(Syscall, bool)>> = pair_syscalls(events, &mut diags)
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().map(|s| (s, false)).collect()))
        .collect();

    let mut per_bec: BTreeMap<usize, Vec<AtomicOp>> = BTreeMap::new();
    let mut stray_ops = Vec::new();
    for b in collect_builders(events, &mut diags) {
        let mut op = match finish_op(&b, events, registry) {
            Ok(op) => op,
            Err(d) => {
                diags.push(d);
                continue;
            }
        };
        let bec = assign_bec(&op, &becs, registry);
        attach_syscalls(&mut op, bec.map(|i| &becs[i]), &mut syscalls, &mut diags);
        match bec {
            Some(i) => per_bec.entry(i).or_default().push(op),
            None => {
                diags.push(BctaDiagnostic::OpOutsideBec { pid: op.pid, op_id: op.op_id, ts: op.begin_ts });
                stray_ops.push(op);
            }
        }
    }

    let mut all_ops: Vec<&AtomicOp> = per_bec.values().flatten().chain(&stray_ops).collect();
    all_ops.sort_by_key(|o| (o.begin_ts, o.first_event));
    for op in all_ops {
        if let Err(e) = record_op(sht, op) {
            diags.push(e.into());
        }
    }

    let spans = becs
        .into_iter()
        .enumerate()
        .map(|(i, bec)| {
            let mut ops = per_bec.remove(&i).unwrap_or_default();
            ops.sort_by_key(|o| (o.begin_ts, o.first_event));
            let SpanTotals { t, l, gaps, clamped } = span_totals(&ops);
            let tree = bec.root_idx.map(|r| build_tree(r, registry, &ops));
            let path_kinds = ops.iter().map(|o| o.path).collect();
            VerticalSpan { bec, ops, tree, t, l, gaps, clamped_gaps: clamped, path_kinds }
        })
        .collect();
    Reconstruction { spans, stray_ops, diagnostics: diags }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nbca::build_forest;
    use serde_json::{json, Value};

    fn ev(ts: Ns, layer: Layer, name: &str, tid: u32, args: Value) -> TraceEvent {
        let Value::Object(m) = args else { panic!() };
        TraceEvent::new(ts, layer, name, 1, tid, m).unwrap()
    }

    fn vm_send(ts: Ns, tid: u32, id: i64) -> TraceEvent {
        ev(ts, Layer::Vm, "uv_send", tid, json!({"id": id, "channel": 1, "method": "FSReqCallback"}))
    }

    fn run(events: &[TraceEvent]) -> Reconstruction {
        let mut sht = StateHistoryTree::new(0);
        let (reg, _) = build_forest(events, &mut sht);
        reconstruct(events, &reg, &mut sht)
    }

    #[test]
    fn nearest_preceding_send() {
        let events = vec![
            vm_send(900, 7, 10),
            vm_send(940, 7, 11),
            vm_send(945, 9, 12),
            ev(950, Layer::Libuv, "uv_async_file", 7, json!({"op_id": 1})),
            ev(950, Layer::Libuv, "uv_async_file", 8, json!({"op_id": 2})),
        ];
        let m = match_preceding_vm_send(&events, 3).unwrap();
        assert_eq!(events[m].kind.op_id(), None);
        assert_eq!(m, 1);
        assert_eq!(match_preceding_vm_send(&events, 4), None);
    }

    #[test]
    fn incomplete_handoff_and_no_send() {
        let events = vec![
            ev(0, Layer::Js, "uv_send", 7, json!({"id": 1, "channel": null, "method": "f"})),
            vm_send(10, 7, 2),
            ev(11, Layer::Libuv, "uv_async_file", 7, json!({"op_id": 5})),
            ev(12, Layer::Libuv, "uv_submit", 7, json!({"op_id": 5})),
            ev(13, Layer::Libuv, "uv_fs_open", 9, json!({"op_id": 6, "phase": "begin"})),
            ev(14, Layer::Libuv, "uv_fs_open", 9, json!({"op_id": 6, "phase": "end"})),
        ];
        let r = run(&events);
        assert!(r.diagnostics.contains(&BctaDiagnostic::IncompleteHandoff {
            pid: 1,
            op_id: 5,
            missing: "uv_workerq_remove"
        }));
        assert!(r.diagnostics.iter().any(|d| matches!(d, BctaDiagnostic::NoPrecedingSend { op_id: 6, .. })));
        assert_eq!(r.spans.len(), 1);
        assert!(r.spans[0].bec.open_ended);
        assert!(r.spans[0].ops.is_empty());
        assert_eq!(r.spans[0].t, 0);
    }

    #[test]
    fn syscalls_bounded_by_op_window() {
        let events = vec![
            ev(0, Layer::Js, "uv_send", 7, json!({"id": 1, "channel": null, "method": "f"})),
            vm_send(10, 7, 2),
            ev(11, Layer::Libuv, "uv_dequeue", 7, json!({"req_id": 2})),
            ev(12, Layer::Libuv, "uv_socketRead", 7, json!({"op_id": 3, "phase": "begin"})),
            ev(13, Layer::Kernel, "syscall_entry_read", 7, json!({})),
            ev(15, Layer::Kernel, "syscall_exit_read", 7, json!({"ret": 4})),
            ev(16, Layer::Kernel, "syscall_entry_futex", 7, json!({})),
            ev(20, Layer::Libuv, "uv_socketRead", 7, json!({"op_id": 3, "phase": "end"})),
            ev(21, Layer::Libuv, "uv_done", 7, json!({"op_id": 3})),
            ev(22, Layer::Vm, "resolve", 7, json!({"id": 2})),
            ev(23, Layer::Js, "uv_send", 7, json!({"id": 1, "channel": null, "method": "js_exit_f"})),
            ev(30, Layer::Kernel, "syscall_entry_write", 7, json!({})),
            ev(31, Layer::Kernel, "syscall_exit_write", 7, json!({"ret": 1})),
        ];
        let r = run(&events);
        let span = &r.spans[0];
        assert!(!span.bec.open_ended);
        let op = &span.ops[0];
        assert_eq!((op.name.as_str(), op.path, op.begin_ts, op.end_ts), ("socketRead", PathKind::OsDelegated, 12, 20));
        assert_eq!(op.syscalls.len(), 2);
        assert!(op.syscalls[1].dangling);
        assert_eq!(op.syscalls[1].exit_ts, 20);
        assert_eq!(r.unmatched_count(), 1);
        assert_eq!(span.tree.as_ref().unwrap().children[0].ops, vec![0]);
    }
}
