//! A hand-written file-open trace: ComputePromise (324) -> promise (17786)
//! -> FSReqCallback (17787) -> fs_open (op 51) on pool thread 12.

use std::path::PathBuf;

use vspan_core::export::{check_nesting, chrome_trace, folded_stacks};
use vspan_core::lifecycle::{PathKind, RequestState::*};
use vspan_core::pipeline::{analyze, Analysis};
use vspan_core::sht::StateValue;
use vspan_core::trace::{open_experiment, ParseMode};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn load() -> Analysis {
    let paths = [fixture("compute_promise.userspace.jsonl"), fixture("compute_promise.kernel.jsonl")];
    analyze(open_experiment(&paths, &[], ParseMode::Strict).unwrap())
}

#[test]
fn span_tree_follows_the_promise_chain() {
    let an = load();
    assert_eq!(an.unmatched_count(), 0, "{:?}", an.recon.diagnostics);
    assert_eq!(an.spans().len(), 1);
    let span = &an.spans()[0];
    assert_eq!((span.bec.root_fn.as_str(), span.bec.root_ctx), ("ComputePromise", 324));
    assert_eq!((span.bec.entry_ts, span.bec.exit_ts), (100, 1100));

    let tree = span.tree.as_ref().unwrap();
    assert_eq!(tree.ctx, 324);
    let p = &tree.children[0];
    assert_eq!((p.ctx, p.method.as_str()), (17786, "promise"));
    let fs = &p.children[0];
    assert_eq!(fs.ctx, 17787);
    assert_eq!(fs.ops, vec![0]);

    let op = &span.ops[0];
    assert_eq!((op.op_id, op.name.as_str(), op.path), (51, "fs_open", PathKind::ThreadPool));
    assert_eq!((op.tid, op.el_tid, op.exec_ctx), (12, 7, 17787));
    assert_eq!(op.queue_wait, 24);
    assert_eq!((op.begin_ts, op.end_ts), (940, 990));
    assert_eq!(op.syscalls.len(), 1);
    assert_eq!((op.syscalls[0].name.as_str(), op.syscalls[0].ret), ("openat", Some(21)));
    // The event-loop epoll_wait belongs to no op.
    assert!(span.ops.iter().all(|o| o.syscalls.iter().all(|s| s.name != "epoll_wait")));
}

#[test]
fn lifecycle_is_a_thread_pool_hop() {
    let an = load();
    let r = &an.requests[0];
    assert_eq!(r.states(), vec![S0, S1, S2, S4, S5, S7, S0]);
    assert_eq!(r.paths, vec![PathKind::ThreadPool]);
    assert!(r.error.is_none());
}

#[test]
fn state_history_records_contexts_and_ops() {
    let an = load();
    let q = an.sht.lookup_path("/ctx/324/17786").unwrap();
    assert_eq!(an.sht.query_single(q, 500).unwrap().value, StateValue::from("promise"));
    assert!(an.sht.query_single(q, 1030).unwrap().value.is_null());
    let op = an.sht.lookup_path("/op/51").unwrap();
    assert_eq!(an.sht.query_single(op, 950).unwrap().value, StateValue::from("fs_open"));
    let req = an.sht.lookup_path("/req/324/state").unwrap();
    assert_eq!(an.sht.query_single(req, 935).unwrap().value, StateValue::from("S5"));
}

#[test]
fn exports_are_well_formed() {
    let an = load();
    let chrome = chrome_trace(an.spans());
    check_nesting(&chrome).unwrap();
    let events = chrome["traceEvents"].as_array().unwrap();
    let root = events.iter().find(|e| e["name"] == "ComputePromise").unwrap();
    assert_eq!(root["dur"], 1.0);
    let op = events.iter().find(|e| e["name"] == "fs_open").unwrap();
    assert_eq!((op["tid"].as_u64(), op["args"]["queue_wait_ns"].as_u64()), (Some(12), Some(24)));
    assert_eq!(folded_stacks(an.spans()), "ComputePromise;ctx_324;ctx_17786;ctx_17787;fs_open 50\n");
}
