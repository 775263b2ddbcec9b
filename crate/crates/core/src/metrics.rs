//! Latency metrics and the root-cause detectors built on them.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use serde_json::{json, Value};

use crate::bcta::{AtomicOp, Reconstruction, VerticalSpan};
use crate::nbca::ContextRegistry;
use crate::trace::{EventKind, Layer, Ns, TraceEvent};

/// Atomic task time to live.
pub fn attl(op: &AtomicOp) -> Ns {
    op.end_ts - op.begin_ts
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct SpanTotals {
    pub t: Ns,
    pub l: Ns,
    pub gaps: Vec<Ns>,
    /// Gaps that were negative before clamping.
    pub clamped: usize,
}

/// `T = Σ attl`, `L = T + Σ gaps`, with each gap clamped at zero. `ops` must be in chain order.
pub fn span_totals(ops: &[AtomicOp]) -> SpanTotals {
    let t = ops.iter().map(attl).sum();
    let mut clamped = 0;
    let gaps: Vec<Ns> = ops
        .windows(2)
        .map(|w| {
            if w[1].begin_ts < w[0].end_ts {
                clamped += 1;
            }
            w[1].begin_ts.saturating_sub(w[0].end_ts)
        })
        .collect();
    let l = t + gaps.iter().sum::<Ns>();
    SpanTotals { t, l, gaps, clamped }
}

pub fn gap_sum(span: &VerticalSpan) -> Ns {
    span.gaps.iter().sum()
}

/// True when waiting time outweighs working time by more than `threshold`.
pub fn overhead_flag(span: &VerticalSpan, threshold: f64) -> bool {
    gap_sum(span) as f64 / span.t.max(1) as f64 > threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AttlBreakdown {
    pub syscall_ns: Ns,
    pub residue_ns: Ns,
}

/// Splits an op's ATTL into time covered by its syscalls and the rest.
pub fn attl_breakdown(op: &AtomicOp) -> AttlBreakdown {
    let mut spans: Vec<(Ns, Ns)> = op.syscalls.iter().map(|s| (s.entry_ts, s.exit_ts)).collect();
    spans.sort_unstable();
    let mut covered = 0;
    let mut cur: Option<(Ns, Ns)> = None;
    for (a, b) in spans {
        match cur {
            Some((ca, cb)) if a <= cb => cur = Some((ca, cb.max(b))),
            _ => {
                if let Some((ca, cb)) = cur {
                    covered += cb - ca;
                }
                cur = Some((a, b));
            }
        }
    }
    if let Some((ca, cb)) = cur {
        covered += cb - ca;
    }
    AttlBreakdown { syscall_ns: covered, residue_ns: attl(op) - covered }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GcSample {
    pub pid: u32,
    pub kind: String,
    pub begin_ts: Ns,
    pub end_ts: Ns,
    pub tigc: Ns,
    pub tbgc: Option<Ns>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("pid {pid}: unpaired {name} at {ts}")]
    UnpairedGcEvent { pid: u32, name: String, ts: Ns },
}

/// Pairs `gc_begin`/`gc_end` per process.
pub fn gc_metrics(events: &[TraceEvent]) -> Result<Vec<GcSample>, MetricsError> {
    let mut open: HashMap<u32, (Ns, String)> = HashMap::new();
    let mut last_end: HashMap<u32, Ns> = HashMap::new();
    let mut out = Vec::new();
    for e in events {
        match &e.kind {
            EventKind::GcBegin { kind } => {
                if open.insert(e.pid, (e.ts, kind.clone())).is_some() {
                    return Err(MetricsError::UnpairedGcEvent { pid: e.pid, name: e.name.clone(), ts: e.ts });
                }
            }
            EventKind::GcEnd { .. } => {
                let Some((begin, kind)) = open.remove(&e.pid) else {
                    return Err(MetricsError::UnpairedGcEvent { pid: e.pid, name: e.name.clone(), ts: e.ts });
                };
                let tbgc = last_end.insert(e.pid, e.ts).map(|prev| begin.saturating_sub(prev));
                out.push(GcSample { pid: e.pid, kind, begin_ts: begin, end_ts: e.ts, tigc: e.ts - begin, tbgc });
            }
            _ => {}
        }
    }
    if let Some((&pid, (ts, _))) = open.iter().min_by_key(|(p, (ts, _))| (*ts, **p)) {
        return Err(MetricsError::UnpairedGcEvent { pid, name: "gc_begin".into(), ts: *ts });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum DetectorKind {
    ElStall,
    GcInterference,
    LeakSuspicion,
    OverheadExceeded,
    IpcBlockage,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Subject {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pid: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tid: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root_ctx: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub op_id: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub kind: DetectorKind,
    pub interval: [Ns; 2],
    pub subject: Subject,
    pub evidence: BTreeMap<String, Value>,
    pub severity: String,
}

fn evidence(v: Value) -> BTreeMap<String, Value> {
    match v {
        Value::Object(m) => m.into_iter().collect(),
        _ => BTreeMap::new(),
    }
}

/// Every run of `window` consecutive samples (per process) whose mean TIGC
/// reaches `alpha` times the mean TBGC.
pub fn leak_suspicion(samples: &[GcSample], alpha: f64, window: usize) -> Vec<DetectionReport> {
    let window = window.max(1);
    let mut by_pid: BTreeMap<u32, Vec<&GcSample>> = BTreeMap::new();
    for s in samples {
        by_pid.entry(s.pid).or_default().push(s);
    }
    let mut out = Vec::new();
    for (pid, list) in by_pid {
        for w in list.windows(window) {
            let tigc: Ns = w.iter().map(|s| s.tigc).sum();
            let tbgcs: Vec<Ns> = w.iter().filter_map(|s| s.tbgc).collect();
            if tbgcs.is_empty() {
                continue;
            }
            let mean_tigc = tigc as f64 / w.len() as f64;
            let mean_tbgc = tbgcs.iter().sum::<Ns>() as f64 / tbgcs.len() as f64;
            if mean_tigc >= alpha * mean_tbgc {
                out.push(DetectionReport {
                    kind: DetectorKind::LeakSuspicion,
                    interval: [w[0].begin_ts, w[w.len() - 1].end_ts],
                    subject: Subject { pid: Some(pid), ..Subject::default() },
                    evidence: evidence(json!({
                        "samples": w.len(),
                        "mean_tigc_ns": mean_tigc,
                        "mean_tbgc_ns": mean_tbgc,
                        "ratio": mean_tigc / mean_tbgc.max(1.0),
                    })),
                    severity: "gc time balances mutator time".into(),
                });
            }
        }
    }
    out
}

fn overlap(a0: Ns, a1: Ns, b0: Ns, b1: Ns) -> Ns {
    a1.min(b1).saturating_sub(a0.max(b0))
}

/// Event-loop phases held for at least `min_stall`, with the spans and
/// contexts that were running across them.
pub fn el_stall(
    events: &[TraceEvent],
    spans: &[VerticalSpan],
    registry: &ContextRegistry,
    min_stall: Ns,
) -> Vec<DetectionReport> {
    let mut last: HashMap<(u32, u32), (Ns, &str)> = HashMap::new();
    let mut out = Vec::new();
    for e in events {
        let EventKind::ElPhase { phase } = &e.kind else { continue };
        // The last phase on each thread has no successor and is not measured.
        if let Some((start, prev)) = last.insert((e.pid, e.tid), (e.ts, phase.as_str())) {
            let dwell = e.ts - start;
            if dwell < min_stall {
                continue;
            }
            let (a, b) = (start, e.ts);
            let span_list: Vec<Value> = spans
                .iter()
                .filter(|s| s.bec.pid == e.pid && overlap(s.bec.entry_ts, s.bec.exit_ts, a, b) > 0)
                .map(|s| {
                    json!({
                        "root_fn": s.bec.root_fn,
                        "root_ctx": s.bec.root_ctx,
                        "entry_ts": s.bec.entry_ts,
                        "exit_ts": s.bec.exit_ts,
                        "wall_ns": s.bec.wall(),
                    })
                })
                .collect();
            let ctx_list: Vec<Value> = registry
                .contexts()
                .iter()
                .filter(|c| {
                    c.pid == e.pid && 2 * overlap(c.open_ts, c.close_ts.unwrap_or(Ns::MAX), a, b) >= dwell
                })
                .map(|c| json!({"id": c.id, "method": c.method, "open_ts": c.open_ts, "close_ts": c.close_ts}))
                .collect();
            out.push(DetectionReport {
                kind: DetectorKind::ElStall,
                interval: [a, b],
                subject: Subject { pid: Some(e.pid), tid: Some(e.tid), name: Some(prev.to_string()), ..Subject::default() },
                evidence: evidence(json!({
                    "phase": prev,
                    "dwell_ns": dwell,
                    "overlapping_spans": span_list,
                    "contexts": ctx_list,
                })),
                severity: format!("{prev} phase held for {} ms", dwell / 1_000_000),
            });
        }
    }
    out
}

pub fn median(values: &mut [Ns]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] as f64 + values[n / 2] as f64) / 2.0
    }
}

/// Ops overlapping a GC pass whose ATTL is at least `factor` times the median
/// ATTL of same-named ops.
pub fn gc_interference(spans: &[VerticalSpan], samples: &[GcSample], factor: f64) -> Vec<DetectionReport> {
    let mut by_name: HashMap<&str, Vec<Ns>> = HashMap::new();
    for op in spans.iter().flat_map(|s| &s.ops) {
        by_name.entry(op.name.as_str()).or_default().push(attl(op));
    }
    let medians: HashMap<&str, f64> = by_name.into_iter().map(|(k, mut v)| (k, median(&mut v))).collect();
    let mut out = Vec::new();
    for span in spans {
        for op in &span.ops {
            let Some(gc) = samples
                .iter()
                .find(|g| g.pid == op.pid && op.begin_ts <= g.end_ts && g.begin_ts <= op.end_ts)
            else {
                continue;
            };
            let med = medians[op.name.as_str()];
            let a = attl(op) as f64;
            if a >= factor * med {
                out.push(DetectionReport {
                    kind: DetectorKind::GcInterference,
                    interval: [op.begin_ts, op.end_ts],
                    subject: Subject {
                        pid: Some(op.pid),
                        tid: Some(op.tid),
                        root_ctx: Some(span.bec.root_ctx),
                        op_id: Some(op.op_id),
                        name: Some(op.name.clone()),
                    },
                    evidence: evidence(json!({
                        "attl_ns": attl(op),
                        "median_ns": med,
                        "ratio": a / med.max(1.0),
                        "gc_begin": gc.begin_ts,
                        "gc_end": gc.end_ts,
                    })),
                    severity: format!("{:.0}x the median {}", a / med.max(1.0), op.name),
                });
            }
        }
    }
    out
}

pub fn overhead_reports(spans: &[VerticalSpan], threshold: f64) -> Vec<DetectionReport> {
    spans
        .iter()
        .filter(|s| overhead_flag(s, threshold))
        .map(|s| {
            let gaps = gap_sum(s);
            DetectionReport {
                kind: DetectorKind::OverheadExceeded,
                interval: [s.bec.entry_ts, s.bec.exit_ts],
                subject: Subject {
                    pid: Some(s.bec.pid),
                    tid: Some(s.bec.tid),
                    root_ctx: Some(s.bec.root_ctx),
                    name: Some(s.bec.root_fn.clone()),
                    ..Subject::default()
                },
                evidence: evidence(json!({
                    "t_ns": s.t,
                    "l_ns": s.l,
                    "gap_sum_ns": gaps,
                    "ratio": gaps as f64 / s.t.max(1) as f64,
                })),
                severity: "waiting dominates execution".into(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IpcEdge {
    pub from: u32,
    pub to: u32,
    pub pipe: String,
    pub messages: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IpcGraph {
    pub edges: Vec<IpcEdge>,
}

fn pipe_arg(e: &TraceEvent) -> Option<String> {
    match e.args.get("pipe")? {
        Value::String(s) => Some(s.clone()),
        v @ Value::Number(_) => Some(v.to_string()),
        _ => None,
    }
}

/// Process interaction graph from pipe reads and writes, plus blocked readers.
pub fn ipc_flow(events: &[TraceEvent], timeout: Ns) -> (IpcGraph, Vec<DetectionReport>) {
    let trace_end = events.last().map_or(0, |e| e.ts);
    // (pid, tid) -> open syscall entries as (name, pipe, ts)
    let mut open: HashMap<(u32, u32), Vec<(String, Option<String>, Ns)>> = HashMap::new();
    let mut writes: BTreeMap<String, Vec<(u32, Ns)>> = BTreeMap::new();
    let mut reads: BTreeMap<String, Vec<(u32, u32, Ns, Option<Ns>)>> = BTreeMap::new();
    for e in events.iter().filter(|e| e.layer == Layer::Kernel) {
        match &e.kind {
            EventKind::SyscallEntry { name } => {
                let pipe = pipe_arg(e);
                if let (Some(p), "write") = (&pipe, name.as_str()) {
                    writes.entry(p.clone()).or_default().push((e.pid, e.ts));
                }
                open.entry((e.pid, e.tid)).or_default().push((name.clone(), pipe, e.ts));
            }
            EventKind::SyscallExit { name, .. } => {
                let stack = open.entry((e.pid, e.tid)).or_default();
                if let Some(pos) = stack.iter().rposition(|(n, _, _)| n == name) {
                    let (n, pipe, ts) = stack.remove(pos);
                    if let (Some(p), "read") = (pipe, n.as_str()) {
                        reads.entry(p).or_default().push((e.pid, e.tid, ts, Some(e.ts)));
                    }
                }
            }
            _ => {}
        }
    }
    for ((pid, tid), rest) in open {
        for (n, pipe, ts) in rest {
            if let (Some(p), "read") = (pipe, n.as_str()) {
                reads.entry(p).or_default().push((pid, tid, ts, None));
            }
        }
    }

    let mut edges = Vec::new();
    for (pipe, ws) in &writes {
        let readers: BTreeSet<u32> = reads.get(pipe).into_iter().flatten().map(|r| r.0).collect();
        let mut per_writer: BTreeMap<u32, usize> = BTreeMap::new();
        for (pid, _) in ws {
            *per_writer.entry(*pid).or_default() += 1;
        }
        for (&from, &messages) in &per_writer {
            for &to in readers.iter().filter(|&&r| r != from) {
                edges.push(IpcEdge { from, to, pipe: pipe.clone(), messages });
            }
        }
    }

    let mut reports = Vec::new();
    for (pipe, rs) in &reads {
        let mut rs = rs.clone();
        rs.sort_by_key(|r| (r.2, r.0, r.1));
        for (pid, tid, entry, exit) in rs {
            let until = exit.unwrap_or(trace_end);
            let wait = until.saturating_sub(entry);
            if wait < timeout {
                continue;
            }
            let answered = writes
                .get(pipe)
                .is_some_and(|ws| ws.iter().any(|&(w, ts)| w != pid && entry <= ts && ts <= until));
            if answered {
                continue;
            }
            let peers: Vec<u32> = writes
                .get(pipe)
                .into_iter()
                .flatten()
                .map(|w| w.0)
                .filter(|&w| w != pid)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            reports.push(DetectionReport {
                kind: DetectorKind::IpcBlockage,
                interval: [entry, until],
                subject: Subject { pid: Some(pid), tid: Some(tid), name: Some(pipe.clone()), ..Subject::default() },
                evidence: evidence(json!({
                    "pipe": pipe,
                    "wait_ns": wait,
                    "completed": exit.is_some(),
                    "writers": peers,
                })),
                severity: format!("pid {pid} blocked reading {pipe}"),
            });
        }
    }
    (IpcGraph { edges }, reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectorConfig {
    pub overhead_threshold: f64,
    pub leak_alpha: f64,
    pub leak_window: usize,
    pub min_stall: Ns,
    pub interference_factor: f64,
    pub ipc_timeout: Ns,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            overhead_threshold: 0.5,
            leak_alpha: 1.0,
            leak_window: 5,
            min_stall: 100_000_000,
            interference_factor: 10.0,
            ipc_timeout: 1_000_000_000,
        }
    }
}

/// Runs every detector. Reports are ordered by kind, then interval.
pub fn detect(
    events: &[TraceEvent],
    recon: &Reconstruction,
    registry: &ContextRegistry,
    samples: &[GcSample],
    cfg: &DetectorConfig,
) -> Vec<DetectionReport> {
    let mut out = el_stall(events, &recon.spans, registry, cfg.min_stall);
    out.extend(gc_interference(&recon.spans, samples, cfg.interference_factor));
    out.extend(leak_suspicion(samples, cfg.leak_alpha, cfg.leak_window));
    out.extend(overhead_reports(&recon.spans, cfg.overhead_threshold));
    out.extend(ipc_flow(events, cfg.ipc_timeout).1);
    out.sort_by_key(|a| (a.kind, a.interval));
    out
}
