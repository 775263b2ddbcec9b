//! Span exporters: Chrome trace-event JSON and folded stacks.

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use serde_json::{json, Value};

use crate::bcta::{SpanNode, VerticalSpan};
use crate::lifecycle::PathKind;
use crate::trace::Ns;

/// Synthetic thread ids for overlapping root spans sit this far apart.
pub const LANE_STRIDE: u32 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Chrome,
    Folded,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExportError {
    #[error("unknown export format {0:?} (expected chrome or folded)")]
    UnknownFormat(String),
}

impl FromStr for ExportFormat {
    type Err = ExportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chrome" => Ok(ExportFormat::Chrome),
            "folded" => Ok(ExportFormat::Folded),
            other => Err(ExportError::UnknownFormat(other.to_string())),
        }
    }
}

pub fn export(spans: &[VerticalSpan], format: ExportFormat) -> String {
    match format {
        ExportFormat::Chrome => {
            let mut s = serde_json::to_string_pretty(&chrome_trace(spans)).expect("json");
            s.push('\n');
            s
        }
        ExportFormat::Folded => folded_stacks(spans),
    }
}

fn us(ns: Ns) -> f64 {
    ns as f64 / 1000.0
}

struct Slice {
    name: String,
    cat: &'static str,
    pid: u32,
    tid: u32,
    ts: Ns,
    dur: Ns,
    args: Value,
}

/// Greedy lane per root span: lane 0 keeps the real thread id.
fn assign_lanes(spans: &[VerticalSpan]) -> Vec<u32> {
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by_key(|&i| (spans[i].bec.pid, spans[i].bec.tid, spans[i].bec.entry_ts, i));
    let mut lane_ends: HashMap<(u32, u32), Vec<Ns>> = HashMap::new();
    let mut lanes = vec![0; spans.len()];
    for i in order {
        let b = &spans[i].bec;
        let ends = lane_ends.entry((b.pid, b.tid)).or_default();
        let k = match ends.iter().position(|&end| end <= b.entry_ts) {
            Some(k) => k,
            None => {
                ends.push(0);
                ends.len() - 1
            }
        };
        ends[k] = b.exit_ts;
        lanes[i] = k as u32;
    }
    lanes
}

pub fn chrome_trace(spans: &[VerticalSpan]) -> Value {
    let lanes = assign_lanes(spans);
    let mut slices = Vec::new();
    let mut lane_names: BTreeMap<(u32, u32), String> = BTreeMap::new();
    for (span, &lane) in spans.iter().zip(&lanes) {
        let b = &span.bec;
        let el_tid = b.tid + lane * LANE_STRIDE;
        if lane > 0 {
            lane_names.insert((b.pid, el_tid), format!("event loop {} (lane {lane})", b.tid));
        }
        slices.push(Slice {
            name: b.root_fn.clone(),
            cat: "js",
            pid: b.pid,
            tid: el_tid,
            ts: b.entry_ts,
            dur: b.wall(),
            args: json!({"exec_ctx": b.root_ctx, "t_ns": span.t, "l_ns": span.l, "open_ended": b.open_ended}),
        });
        for op in &span.ops {
            let tid = if op.path == PathKind::ThreadPool { op.tid } else { el_tid };
            slices.push(Slice {
                name: op.name.clone(),
                cat: "libuv",
                pid: op.pid,
                tid,
                ts: op.begin_ts,
                dur: op.attl(),
                args: json!({"exec_ctx": op.exec_ctx, "op_id": op.op_id, "attl_ns": op.attl(), "queue_wait_ns": op.queue_wait}),
            });
            for s in &op.syscalls {
                slices.push(Slice {
                    name: s.name.clone(),
                    cat: "kernel",
                    pid: op.pid,
                    tid,
                    ts: s.entry_ts,
                    dur: s.exit_ts - s.entry_ts,
                    args: json!({"exec_ctx": op.exec_ctx, "ret": s.ret, "dangling": s.dangling}),
                });
            }
        }
    }
    slices.sort_by_key(|a| (a.pid, a.tid, a.ts, std::cmp::Reverse(a.dur)));
    let mut out: Vec<Value> = lane_names
        .into_iter()
        .map(|((pid, tid), name)| json!({"name": "thread_name", "ph": "M", "pid": pid, "tid": tid, "args": {"name": name}}))
        .collect();
    out.extend(slices.into_iter().map(|s| {
        json!({
            "name": s.name,
            "cat": s.cat,
            "ph": "X",
            "ts": us(s.ts),
            "dur": us(s.dur),
            "pid": s.pid,
            "tid": s.tid,
            "args": s.args,
        })
    }));
    json!({ "traceEvents": out })
}

/// Checks that complete events on each thread are properly nested or disjoint.
pub fn check_nesting(trace: &Value) -> Result<(), String> {
    let events = trace["traceEvents"].as_array().ok_or("missing traceEvents")?;
    let mut per_thread: BTreeMap<(u64, u64), Vec<(i64, i64, String)>> = BTreeMap::new();
    for e in events.iter().filter(|e| e["ph"] == "X") {
        let ns = |k: &str| e[k].as_f64().map(|v| (v * 1000.0).round() as i64).ok_or(format!("bad {k}"));
        let (ts, dur) = (ns("ts")?, ns("dur")?);
        if dur < 0 {
            return Err(format!("negative duration on {}", e["name"]));
        }
        let key = (e["pid"].as_u64().unwrap_or(0), e["tid"].as_u64().unwrap_or(0));
        per_thread.entry(key).or_default().push((ts, ts + dur, e["name"].to_string()));
    }
    for ((pid, tid), mut list) in per_thread {
        list.sort_by_key(|&(a, b, _)| (a, std::cmp::Reverse(b)));
        let mut stack: Vec<(i64, i64, String)> = Vec::new();
        for (a, b, name) in list {
            while stack.last().is_some_and(|top| top.1 <= a) {
                stack.pop();
            }
            if let Some(top) = stack.last() {
                if b > top.1 {
                    return Err(format!("pid {pid} tid {tid}: {name} [{a}, {b}] crosses {} [{}, {}]", top.2, top.0, top.1));
                }
            }
            stack.push((a, b, name));
        }
    }
    Ok(())
}

fn stack_path<'a>(node: &'a SpanNode, op: usize, path: &mut Vec<&'a SpanNode>) -> bool {
    path.push(node);
    if node.ops.contains(&op) || node.children.iter().any(|c| stack_path(c, op, path)) {
        return true;
    }
    path.pop();
    false
}

/// One `frame;frame;... value` line per leaf op, weighted by ATTL in ns.
/// Lines are not merged, so flamegraph tools sum repeated stacks themselves.
pub fn folded_stacks(spans: &[VerticalSpan]) -> String {
    let mut out = String::new();
    for span in spans {
        for (i, op) in span.ops.iter().enumerate() {
            let mut frames = vec![span.bec.root_fn.clone()];
            let mut path = Vec::new();
            if let Some(tree) = &span.tree {
                if stack_path(tree, i, &mut path) {
                    frames.extend(path.iter().map(|n| format!("ctx_{}", n.ctx)));
                }
            }
            if path.is_empty() {
                frames.push(format!("ctx_{}", op.exec_ctx));
            }
            frames.push(op.name.clone());
            out.push_str(&format!("{} {}\n", frames.join(";"), op.attl()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_names() {
        assert_eq!("chrome".parse::<ExportFormat>(), Ok(ExportFormat::Chrome));
        assert_eq!(
            "svg".parse::<ExportFormat>(),
            Err(ExportError::UnknownFormat("svg".into()))
        );
    }

    #[test]
    fn nesting_checker() {
        let x = |ts: f64, dur: f64| json!({"ph": "X", "name": "n", "pid": 1, "tid": 1, "ts": ts, "dur": dur});
        assert!(check_nesting(&json!({"traceEvents": [x(0.0, 10.0), x(1.0, 2.0), x(3.0, 7.0), x(10.0, 1.0)]})).is_ok());
        assert!(check_nesting(&json!({"traceEvents": [x(0.0, 10.0), x(5.0, 10.0)]})).is_err());
        assert!(check_nesting(&json!({"traceEvents": [x(0.0, 1.0), x(1.0, 0.0), x(1.0, 0.0)]})).is_ok());
    }
}
