//! Sidecar oracle shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeSet;

use vspan_core::pipeline::{analyze, Analysis};
use vspan_core::simgen::{simulate, GroundTruth, Scenario, ScenarioKind, SimOutput};
use vspan_core::trace::Ns;

pub fn run(kind: ScenarioKind, seed: u64) -> (SimOutput, Analysis) {
    run_scenario(Scenario::new(kind, seed))
}

pub fn run_scenario(s: Scenario) -> (SimOutput, Analysis) {
    let out = simulate(&s).unwrap_or_else(|e| panic!("{} seed {}: {e}", s.kind, s.seed));
    let an = analyze(out.experiment().expect("non-empty trace"));
    (out, an)
}

type CtxRow = (u32, i64, Option<i64>, String, Ns, Option<Ns>);

fn truth_contexts(t: &GroundTruth) -> BTreeSet<CtxRow> {
    t.contexts.iter().map(|c| (c.pid, c.id, c.parent, c.method.clone(), c.open_ts, c.close_ts)).collect()
}

fn analyzed_contexts(a: &Analysis) -> BTreeSet<CtxRow> {
    a.registry
        .contexts()
        .iter()
        .map(|c| {
            let parent = c.parent.map(|p| a.registry.get(p).id);
            (c.pid, c.id, parent, c.method.clone(), c.open_ts, c.close_ts)
        })
        .collect()
}

type SysRow = (String, Ns, Ns, i64);
type OpRow = (i64, String, Ns, Ns, u32, u32, i64, Ns, Vec<SysRow>);
type SpanRow = (i64, u32, u32, String, Ns, Ns, Vec<OpRow>);

fn truth_spans(t: &GroundTruth) -> Vec<SpanRow> {
    let mut rows: Vec<SpanRow> = t
        .requests
        .iter()
        .map(|r| {
            let mut ops: Vec<OpRow> = t
                .ops
                .iter()
                .filter(|o| o.root_ctx == r.root_ctx && o.pid == r.pid)
                .map(|o| {
                    let sys = o.syscalls.iter().map(|s| (s.name.clone(), s.entry_ts, s.exit_ts, s.ret)).collect();
                    (o.op_id, o.name.clone(), o.begin_ts, o.end_ts, o.tid, o.el_tid, o.exec_ctx, o.queue_wait, sys)
                })
                .collect();
            ops.sort_by_key(|o| (o.2, o.0));
            (r.root_ctx, r.pid, r.tid, r.root_fn.clone(), r.entry_ts, r.exit_ts, ops)
        })
        .collect();
    rows.sort_by_key(|r| (r.4, r.0));
    rows
}

fn analyzed_spans(a: &Analysis) -> Vec<SpanRow> {
    let mut rows: Vec<SpanRow> = a
        .spans()
        .iter()
        .map(|s| {
            let b = &s.bec;
            let mut ops: Vec<OpRow> = s
                .ops
                .iter()
                .map(|o| {
                    let sys = o
                        .syscalls
                        .iter()
                        .map(|s| (s.name.clone(), s.entry_ts, s.exit_ts, s.ret.unwrap_or(i64::MIN)))
                        .collect();
                    (o.op_id, o.name.clone(), o.begin_ts, o.end_ts, o.tid, o.el_tid, o.exec_ctx, o.queue_wait, sys)
                })
                .collect();
            ops.sort_by_key(|o| (o.2, o.0));
            (b.root_ctx, b.pid, b.tid, b.root_fn.clone(), b.entry_ts, b.exit_ts, ops)
        })
        .collect();
    rows.sort_by_key(|r| (r.4, r.0));
    rows
}

/// Empty when the analysis reproduces the sidecar exactly; otherwise a description of the first difference.
pub fn oracle_mismatch(out: &SimOutput, an: &Analysis) -> Option<String> {
    let (tc, ac) = (truth_contexts(&out.truth), analyzed_contexts(an));
    if tc != ac {
        let missing: Vec<_> = tc.difference(&ac).take(3).collect();
        let extra: Vec<_> = ac.difference(&tc).take(3).collect();
        return Some(format!("context forest differs: missing {missing:?}, extra {extra:?}"));
    }
    let (ts, as_) = (truth_spans(&out.truth), analyzed_spans(an));
    if ts.len() != as_.len() {
        return Some(format!("{} true requests, {} spans", ts.len(), as_.len()));
    }
    for (t, a) in ts.iter().zip(&as_) {
        if t != a {
            return Some(format!("span differs:\n  truth    {t:?}\n  analyzed {a:?}"));
        }
    }
    if !an.recon.stray_ops.is_empty() {
        return Some(format!("{} stray ops", an.recon.stray_ops.len()));
    }
    if an.unmatched_count() > 0 {
        let d: Vec<String> = an.recon.diagnostics.iter().take(3).map(ToString::to_string).collect();
        return Some(format!("{} unmatched: {d:?}", an.unmatched_count()));
    }
    None
}
