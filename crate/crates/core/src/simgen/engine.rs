//! Virtual-time engine: one event-loop thread, a FIFO worker pool, a GC
//! thread, and (for the pipe scenario) two kernel-only processes.
//!
//! Event-loop tasks run atomically inside the poll phase. Worker timelines are
//! fixed when a job is submitted, which keeps the pool FIFO: jobs are handed to
//! the earliest-free worker in submission order.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::pending::{PendingRef, PendingStore, ReadOutcome};
use super::scenario::{HopKind, RequestPlan, Scenario, ScenarioKind, MS, US};
use super::truth::*;
use super::{SimError, APP_PID, EL_TID, GC_TID, IPC_CHILD, IPC_PARENT, T0, WORKER_TID0};
use crate::lifecycle::{PathKind, RequestState};
use crate::trace::{FsKind, Layer, Ns, TraceEvent, EXIT_PREFIX};

/// Longest a poll phase blocks when nothing is due.
const POLL_CAP: Ns = 50 * MS;

#[derive(Default)]
pub(crate) struct Out {
    events: Vec<(Ns, u64, TraceEvent)>,
    seq: u64,
}

impl Out {
    pub(crate) fn emit(&mut self, ts: Ns, layer: Layer, name: &str, pid: u32, tid: u32, args: Value) {
        let Value::Object(args) = args else { unreachable!("args are objects") };
        let e = TraceEvent::new(ts, layer, name, pid, tid, args).expect("simulator emits schema-valid events");
        self.events.push((ts, self.seq, e));
        self.seq += 1;
    }

    fn syscall(&mut self, pid: u32, tid: u32, name: &str, entry: Ns, exit: Ns, args: Value, ret: i64) {
        self.emit(entry, Layer::Kernel, &format!("syscall_entry_{name}"), pid, tid, args);
        self.emit(exit, Layer::Kernel, &format!("syscall_exit_{name}"), pid, tid, json!({ "ret": ret }));
    }

    /// Events in timestamp order; ties keep emission order.
    pub(crate) fn into_sorted(mut self) -> Vec<TraceEvent> {
        self.events.sort_by_key(|&(ts, seq, _)| (ts, seq));
        self.events.into_iter().map(|(_, _, e)| e).collect()
    }
}

enum Task {
    Root(usize),
    Done(usize, usize),
}

struct ReqRun {
    plan: RequestPlan,
    root: i64,
    /// Open contexts from the root down; closed ones are removed.
    chain: Vec<i64>,
    promises: Vec<i64>,
    hop_ctx: Vec<i64>,
    hop_op: Vec<i64>,
    hops: Vec<TrueHop>,
    fd: Option<PendingRef>,
    entry_ts: Ns,
    first_begin: Option<Ns>,
    last_end: Ns,
}

pub(crate) struct Engine<'a> {
    s: &'a Scenario,
    pub(crate) out: Out,
    now: Ns,
    heap: BinaryHeap<Reverse<(Ns, u64, usize)>>,
    tasks: Vec<Task>,
    workers: Vec<Ns>,
    next_ctx: i64,
    next_op: i64,
    reqs: Vec<ReqRun>,
    contexts: Vec<TrueContext>,
    ctx_pos: HashMap<i64, usize>,
    ops: Vec<TrueOp>,
    requests: Vec<TrueRequest>,
    gc: Vec<(Ns, Ns)>,
    rng: ChaCha8Rng,
    refs: PendingStore,
    poll_start: Ns,
    deadline: Option<Ns>,
    faults: Vec<TrueFault>,
}

fn fs_syscall(kind: FsKind) -> &'static str {
    match kind {
        FsKind::Open => "openat",
        FsKind::Stat => "fstat",
        FsKind::Read => "read",
        FsKind::Close => "close",
    }
}

impl<'a> Engine<'a> {
    pub(crate) fn new(s: &'a Scenario, plans: Vec<RequestPlan>, gc: Vec<(Ns, Ns)>, rng: ChaCha8Rng) -> Self {
        let mut e = Engine {
            s,
            out: Out::default(),
            now: T0,
            heap: BinaryHeap::new(),
            tasks: Vec::new(),
            workers: vec![0; s.params.pool_size],
            next_ctx: 300,
            next_op: 1,
            reqs: Vec::new(),
            contexts: Vec::new(),
            ctx_pos: HashMap::new(),
            ops: Vec::new(),
            requests: Vec::new(),
            gc,
            rng,
            refs: PendingStore::new(),
            poll_start: T0,
            deadline: None,
            faults: Vec::new(),
        };
        for plan in plans {
            let idx = e.reqs.len();
            let arrival = plan.arrival;
            e.reqs.push(ReqRun {
                plan,
                root: 0,
                chain: Vec::new(),
                promises: Vec::new(),
                hop_ctx: Vec::new(),
                hop_op: Vec::new(),
                hops: Vec::new(),
                fd: None,
                entry_ts: 0,
                first_begin: None,
                last_end: 0,
            });
            e.schedule(arrival, Task::Root(idx));
        }
        e
    }

    fn schedule(&mut self, at: Ns, task: Task) {
        let seq = self.tasks.len() as u64;
        self.tasks.push(task);
        self.heap.push(Reverse((at, seq, seq as usize)));
    }

    fn new_ctx(&mut self) -> i64 {
        let id = self.next_ctx;
        self.next_ctx += 1 + self.rng.gen_range(0..3);
        id
    }

    fn open_ctx(&mut self, layer: Layer, id: i64, channel: Option<i64>, method: &str) {
        self.out.emit(self.now, layer, "uv_send", APP_PID, EL_TID, json!({"id": id, "channel": channel, "method": method}));
        self.ctx_pos.insert(id, self.contexts.len());
        self.contexts.push(TrueContext {
            pid: APP_PID,
            id,
            parent: channel,
            method: method.to_string(),
            open_ts: self.now,
            close_ts: None,
        });
    }

    fn mark_closed(&mut self, r: usize, id: i64) {
        let pos = self.ctx_pos[&id];
        self.contexts[pos].close_ts = Some(self.now);
        self.reqs[r].chain.retain(|&c| c != id);
    }

    fn close_ctx(&mut self, r: usize, id: i64, how: &str) {
        self.out.emit(self.now, Layer::Vm, how, APP_PID, EL_TID, json!({ "id": id }));
        self.mark_closed(r, id);
    }

    /// Runs the event loop until no work is left.
    pub(crate) fn run(&mut self) -> Result<(), SimError> {
        while !self.heap.is_empty() || self.deadline.is_some() {
            for ph in ["timers", "pending", "idle", "prepare"] {
                self.phase(ph);
            }
            self.phase("poll");
            self.poll_start = self.now;
            self.poll()?;
            self.phase("check");
            self.phase("close");
        }
        self.refs.shutdown()?;
        Ok(())
    }

    fn phase(&mut self, name: &str) {
        self.out.emit(self.now, Layer::Libuv, "el_phase", APP_PID, EL_TID, json!({ "phase": name }));
    }

    fn epoll(&mut self, until: Ns, woke: bool) {
        let timeout_ms = (until - self.now) / MS;
        self.out.syscall(APP_PID, EL_TID, "epoll_wait", self.now, until, json!({"fd": 3, "timeout_ms": timeout_ms}), woke as i64);
        self.now = until;
    }

    fn run_ready(&mut self) -> Result<bool, SimError> {
        let mut ran = false;
        while let Some(&Reverse((at, _, idx))) = self.heap.peek() {
            if at > self.now {
                break;
            }
            self.heap.pop();
            ran = true;
            match self.tasks[idx] {
                Task::Root(r) => self.start_request(r)?,
                Task::Done(r, i) => {
                    let op = self.reqs[r].hop_op[i];
                    self.out.emit(self.now, Layer::Libuv, "uv_done", APP_PID, EL_TID, json!({ "op_id": op }));
                    self.hop_complete(r, i)?;
                }
            }
        }
        Ok(ran)
    }

    fn poll(&mut self) -> Result<(), SimError> {
        let mut ran = false;
        loop {
            ran |= self.run_ready()?;
            let next = self.heap.peek().map(|Reverse((at, _, _))| *at);
            match self.deadline {
                Some(d) if self.now < d => {
                    let wake = next.map_or(d, |n| n.min(d));
                    if wake > self.now {
                        self.epoll(wake, wake < d);
                    }
                    if self.now >= d {
                        self.deadline = None;
                        return Ok(());
                    }
                }
                Some(_) => {
                    self.deadline = None;
                    return Ok(());
                }
                None => {
                    let Some(next) = next else { return Ok(()) };
                    if ran {
                        return Ok(());
                    }
                    let wake = next.min(self.now + POLL_CAP);
                    self.epoll(wake, wake == next);
                    if wake < next {
                        return Ok(());
                    }
                }
            }
        }
    }

    fn start_request(&mut self, r: usize) -> Result<(), SimError> {
        let root = self.new_ctx();
        let root_fn = self.reqs[r].plan.root_fn;
        self.open_ctx(Layer::Js, root, None, root_fn);
        {
            let req = &mut self.reqs[r];
            req.root = root;
            req.entry_ts = self.now;
            req.chain.push(root);
        }
        self.now += self.reqs[r].plan.lead_in;
        for _ in 0..self.reqs[r].plan.promises {
            let p = self.new_ctx();
            let parent = *self.reqs[r].chain.last().expect("root open");
            self.open_ctx(Layer::Vm, p, Some(parent), "promise");
            self.reqs[r].chain.push(p);
            self.reqs[r].promises.push(p);
        }
        if self.reqs[r].plan.stall {
            let d = self.poll_start + self.s.params.stall_ms * MS;
            self.deadline = Some(d);
            self.faults.push(TrueFault {
                kind: "poll_stall".into(),
                pid: APP_PID,
                begin_ts: self.poll_start,
                end_ts: d,
                detail: "poll".into(),
            });
        }
        if self.dispatch(r, 0)? {
            self.hop_complete(r, 0)?;
        }
        Ok(())
    }

    /// Emits the synchronous part of hop `i`. Returns true when the hop
    /// completed inline (runtime-direct ops).
    fn dispatch(&mut self, r: usize, i: usize) -> Result<bool, SimError> {
        let h = self.reqs[r].plan.hops[i].clone();
        let ctx = self.new_ctx();
        let channel = *self.reqs[r].chain.last().expect("root open while hops run");
        self.open_ctx(Layer::Vm, ctx, Some(channel), h.method);
        self.reqs[r].chain.push(ctx);
        self.now += h.q;
        self.out.emit(self.now, Layer::Libuv, "uv_dequeue", APP_PID, EL_TID, json!({ "req_id": ctx }));
        let op_id = self.next_op;
        self.next_op += 1;
        self.reqs[r].hop_ctx.push(ctx);
        self.reqs[r].hop_op.push(op_id);
        self.now += h.pre;

        let root = self.reqs[r].root;
        let mut since_resolve = None;
        let mut fd = 0;
        if let Some(fref) = self.reqs[r].fd {
            if let ReadOutcome::Ready { value, since_resolve: d } = self.refs.read(fref, r as u64, self.now)? {
                since_resolve = Some(d);
                fd = value;
            }
        }
        let (path, states, queue_ns, inline) = match h.kind {
            HopKind::Run => {
                self.close_ctx(r, ctx, "run");
                let begin = self.now;
                self.now += h.dur;
                self.out.emit(self.now, Layer::Libuv, "uv_done", APP_PID, EL_TID, json!({ "op_id": op_id }));
                self.push_op(r, TrueOp {
                    pid: APP_PID,
                    op_id,
                    name: "run".into(),
                    path: PathKind::RuntimeDirect,
                    begin_ts: begin,
                    end_ts: self.now,
                    tid: EL_TID,
                    el_tid: EL_TID,
                    exec_ctx: ctx,
                    root_ctx: root,
                    queue_wait: 0,
                    syscalls: Vec::new(),
                    disrupted: false,
                });
                use RequestState::*;
                (PathKind::RuntimeDirect, vec![S1, S2, S3, S7], h.q, true)
            }
            HopKind::Pool(kind) => {
                self.out.emit(self.now, Layer::Libuv, "uv_async_file", APP_PID, EL_TID, json!({ "op_id": op_id }));
                self.now += h.submit_delay;
                let submit = self.now;
                self.out.emit(submit, Layer::Libuv, "uv_submit", APP_PID, EL_TID, json!({ "op_id": op_id }));
                let (w, free) = self
                    .workers
                    .iter()
                    .copied()
                    .enumerate()
                    .min_by_key(|&(w, f)| (f, w))
                    .expect("pool is non-empty");
                let tid = WORKER_TID0 + w as u32;
                let start = submit.max(free);
                self.out.emit(start, Layer::Libuv, "uv_workerq_remove", APP_PID, tid, json!({ "op_id": op_id }));
                let begin = start + h.start_delay;
                let mut dur = h.dur;
                let mut disrupted = false;
                if self.s.kind == ScenarioKind::GcPressure
                    && kind == FsKind::Read
                    && self.gc.iter().any(|&(g0, g1)| begin <= g1 && g0 <= begin + dur)
                {
                    dur = self.rng.gen_range(3 * MS..=11 * MS);
                    disrupted = true;
                }
                let end = begin + dur;
                let ev = kind.event_name();
                self.out.emit(begin, Layer::Libuv, ev, APP_PID, tid, json!({"op_id": op_id, "phase": "begin"}));
                let (entry, exit) = (begin + h.sys_lead, end - h.sys_tail);
                let sys = fs_syscall(kind);
                let (args, ret) = match kind {
                    FsKind::Open => (json!({"path": format!("/srv/data/{r}.bin")}), self.rng.gen_range(20..=60)),
                    FsKind::Read => (json!({"fd": fd, "count": self.s.params.chunk_size}), self.s.params.chunk_size as i64),
                    _ => (json!({ "fd": fd }), 0),
                };
                self.out.syscall(APP_PID, tid, sys, entry, exit, args, ret);
                self.out.emit(end, Layer::Libuv, ev, APP_PID, tid, json!({"op_id": op_id, "phase": "end"}));
                self.workers[w] = end;
                if kind == FsKind::Open {
                    let fref = self.refs.fork(op_id, submit);
                    self.refs.resolve(fref, ret, end)?;
                    self.reqs[r].fd = Some(fref);
                }
                self.push_op(r, TrueOp {
                    pid: APP_PID,
                    op_id,
                    name: kind.op_name().into(),
                    path: PathKind::ThreadPool,
                    begin_ts: begin,
                    end_ts: end,
                    tid,
                    el_tid: EL_TID,
                    exec_ctx: ctx,
                    root_ctx: root,
                    queue_wait: start - submit,
                    syscalls: vec![TrueSyscall { name: sys.into(), entry_ts: entry, exit_ts: exit, ret }],
                    disrupted,
                });
                self.schedule(end + h.notify, Task::Done(r, i));
                use RequestState::*;
                (PathKind::ThreadPool, vec![S1, S2, S4, S5, S7], h.q + (start - submit), false)
            }
            HopKind::Socket => {
                let begin = self.now;
                let end = begin + h.dur;
                self.out.emit(begin, Layer::Libuv, "uv_socketRead", APP_PID, EL_TID, json!({"op_id": op_id, "phase": "begin"}));
                let (entry, exit) = (begin + h.sys_lead, end - h.sys_tail);
                let ret = self.rng.gen_range(64..=4096);
                self.out.syscall(APP_PID, EL_TID, "read", entry, exit, json!({"fd": 40 + r as i64, "count": 4096}), ret);
                self.now = end;
                self.out.emit(end, Layer::Libuv, "uv_socketRead", APP_PID, EL_TID, json!({"op_id": op_id, "phase": "end"}));
                self.push_op(r, TrueOp {
                    pid: APP_PID,
                    op_id,
                    name: "socketRead".into(),
                    path: PathKind::OsDelegated,
                    begin_ts: begin,
                    end_ts: end,
                    tid: EL_TID,
                    el_tid: EL_TID,
                    exec_ctx: ctx,
                    root_ctx: root,
                    queue_wait: 0,
                    syscalls: vec![TrueSyscall { name: "read".into(), entry_ts: entry, exit_ts: exit, ret }],
                    disrupted: false,
                });
                self.schedule(end + h.notify, Task::Done(r, i));
                use RequestState::*;
                (PathKind::OsDelegated, vec![S1, S2, S6, S7], h.q, false)
            }
        };
        self.reqs[r].hops.push(TrueHop { op_id, ctx, path, states, queue_ns, ref_since_resolve_ns: since_resolve });
        Ok(inline)
    }

    fn push_op(&mut self, r: usize, op: TrueOp) {
        let req = &mut self.reqs[r];
        req.first_begin.get_or_insert(op.begin_ts);
        req.last_end = op.end_ts;
        self.ops.push(op);
    }

    /// Continues the chain after hop `i`'s completion has been emitted.
    fn hop_complete(&mut self, r: usize, i: usize) -> Result<(), SimError> {
        let mut i = i;
        loop {
            let h = self.reqs[r].plan.hops[i].clone();
            if let Some(exec) = h.exec_after {
                let e = self.new_ctx();
                let parent = *self.reqs[r].chain.last().expect("root open");
                self.open_ctx(Layer::Vm, e, Some(parent), "exec");
                self.reqs[r].chain.push(e);
                self.now += exec;
                self.close_ctx(r, e, "resolve");
            }
            let ctx = self.reqs[r].hop_ctx[i];
            if i + 1 == self.reqs[r].plan.hops.len() {
                if h.kind != HopKind::Run {
                    self.close_ctx(r, ctx, "resolve");
                }
                self.finish(r);
                return Ok(());
            }
            let inline = self.dispatch(r, i + 1)?;
            if h.kind != HopKind::Run {
                self.close_ctx(r, ctx, "resolve");
            }
            if !inline {
                return Ok(());
            }
            i += 1;
        }
    }

    fn finish(&mut self, r: usize) {
        for p in self.reqs[r].promises.clone().into_iter().rev() {
            self.close_ctx(r, p, "resolve");
        }
        self.now += self.reqs[r].plan.lead_out;
        let (root, root_fn) = (self.reqs[r].root, self.reqs[r].plan.root_fn);
        self.out.emit(
            self.now,
            Layer::Js,
            "uv_send",
            APP_PID,
            EL_TID,
            json!({"id": root, "channel": null, "method": format!("{EXIT_PREFIX}{root_fn}")}),
        );
        self.mark_closed(r, root);
        let req = &self.reqs[r];
        let first = req.first_begin.unwrap_or(req.entry_ts);
        self.requests.push(TrueRequest {
            pid: APP_PID,
            tid: EL_TID,
            root_ctx: root,
            root_fn: root_fn.to_string(),
            entry_ts: req.entry_ts,
            exit_ts: self.now,
            wall_ns: self.now - req.entry_ts,
            unmodeled_ns: (first - req.entry_ts) + (self.now - req.last_end),
            queue_ns: req.hops.iter().map(|h| h.queue_ns).sum(),
            hops: req.hops.clone(),
        });
    }

    pub(crate) fn now(&self) -> Ns {
        self.now
    }

    pub(crate) fn into_truth(self) -> (Out, GroundTruth) {
        let mut requests = self.requests;
        requests.sort_by_key(|r| (r.entry_ts, r.root_ctx));
        let truth = GroundTruth {
            contexts: self.contexts,
            requests,
            ops: self.ops,
            faults: self.faults,
            ..GroundTruth::default()
        };
        (self.out, truth)
    }
}

/// Emits GC passes as `gc_begin`/`gc_end` pairs on the GC thread.
pub(crate) fn emit_gc(out: &mut Out, passes: &[TrueGc]) {
    for g in passes {
        out.emit(g.begin_ts, Layer::Vm, "gc_begin", g.pid, g.tid, json!({ "kind": g.kind }));
        out.emit(g.end_ts, Layer::Vm, "gc_end", g.pid, g.tid, json!({ "kind": g.kind }));
    }
}

fn gc_pass(begin: Ns, tigc: Ns, leak: bool) -> TrueGc {
    TrueGc {
        pid: APP_PID,
        tid: GC_TID,
        kind: if leak { "mark_sweep" } else { "scavenge" }.into(),
        begin_ts: begin,
        end_ts: begin + tigc,
        leak,
    }
}

/// Periodic passes up to `horizon` for the read-disruption scenario.
pub(crate) fn periodic_gc(rng: &mut ChaCha8Rng, period: Ns, duration: Ns, horizon: Ns) -> Vec<TrueGc> {
    let mut out = Vec::new();
    let mut t = T0 + rng.gen_range(0..=period);
    while t <= horizon {
        let d = rng.gen_range(duration * 8 / 10..=duration * 12 / 10).max(1);
        out.push(gc_pass(t, d, false));
        t += d + rng.gen_range(period * 8 / 10..=period * 12 / 10);
    }
    out
}

/// Passes spaced 8-12x their own length until `horizon` (at least `min` of them).
pub(crate) fn healthy_gc(rng: &mut ChaCha8Rng, start: Ns, horizon: Ns, min: usize) -> Vec<TrueGc> {
    let mut out = Vec::new();
    let mut t = start;
    let mut tigc = rng.gen_range(500 * US..=1500 * US);
    while t <= horizon || out.len() < min {
        out.push(gc_pass(t, tigc, false));
        let next = rng.gen_range(500 * US..=1500 * US);
        // Spaced against the longer neighbour so both see TBGC >= 8 TIGC.
        t += tigc + tigc.max(next) * rng.gen_range(80..=120) / 10;
        tigc = next;
    }
    out
}

/// Healthy passes followed by passes whose spacing collapses to about their own length.
pub(crate) fn leaking_gc(rng: &mut ChaCha8Rng, healthy: usize, leak: usize, growth: f64) -> Vec<TrueGc> {
    let start = T0 + rng.gen_range(MS..=3 * MS);
    let mut out = healthy_gc(rng, start, 0, healthy);
    out.truncate(healthy);
    let mut t = out.last().map_or(T0 + MS, |g| g.end_ts);
    for k in 0..leak {
        let base = rng.gen_range(800 * US..=1200 * US) as f64;
        let tigc = (base * (1.0 + growth * k as f64 / leak as f64)) as Ns;
        t += tigc * rng.gen_range(60..=100) / 100;
        out.push(gc_pass(t, tigc, true));
        t += tigc;
    }
    out
}

/// Ping/pong over two pipes between a parent and a child process.
pub(crate) fn ipc_pingpong(
    rng: &mut ChaCha8Rng,
    rounds: usize,
    blocked: bool,
    out: &mut Out,
) -> (Vec<TrueIpcEdge>, Vec<TrueFault>) {
    let (p, c) = (IPC_PARENT, IPC_CHILD);
    let cutoff = if blocked { (rounds / 2).max(1).min(rounds.saturating_sub(1)) } else { usize::MAX };
    let mut faults = Vec::new();
    let mut pings = 0;
    let mut pongs = 0;
    let mut t = T0 + MS;
    let mut child_read_at = T0 + MS / 2;
    for round in 0..rounds {
        let w = rng.gen_range(2 * US..=8 * US);
        out.syscall(p, p, "write", t, t + w, json!({"fd": 5, "pipe": "p2c", "count": 64}), 64);
        pings += 1;
        let child_wake = t + w + rng.gen_range(US..=5 * US);
        out.syscall(c, c, "read", child_read_at, child_wake, json!({"fd": 3, "pipe": "p2c", "count": 64}), 64);
        let parent_read = t + w + US;
        if round == cutoff {
            out.emit(parent_read, Layer::Kernel, "syscall_entry_read", p, p, json!({"fd": 4, "pipe": "c2p", "count": 64}));
            let mut tc = child_wake + rng.gen_range(50 * US..=200 * US);
            for _ in 0..4 {
                out.syscall(c, c, "epoll_wait", tc, tc + 500 * MS, json!({"fd": 7, "timeout_ms": 500}), 0);
                tc += 500 * MS;
            }
            faults.push(TrueFault {
                kind: "blocked_pipe".into(),
                pid: p,
                begin_ts: parent_read,
                end_ts: tc,
                detail: "c2p".into(),
            });
            break;
        }
        let tc = child_wake + rng.gen_range(50 * US..=200 * US);
        let w2 = rng.gen_range(2 * US..=8 * US);
        out.syscall(c, c, "write", tc, tc + w2, json!({"fd": 6, "pipe": "c2p", "count": 64}), 64);
        pongs += 1;
        child_read_at = tc + w2 + US;
        let parent_wake = tc + w2 + rng.gen_range(US..=5 * US);
        out.syscall(p, p, "read", parent_read, parent_wake, json!({"fd": 4, "pipe": "c2p", "count": 64}), 64);
        let sleep = rng.gen_range(5 * MS..=15 * MS);
        out.syscall(p, p, "epoll_wait", parent_wake + US, parent_wake + US + sleep, json!({"fd": 8, "timeout_ms": sleep / MS}), 0);
        t = parent_wake + 2 * US + sleep;
    }
    let mut edges = Vec::new();
    if pings > 0 {
        edges.push(TrueIpcEdge { from: p, to: c, pipe: "p2c".into(), messages: pings });
    }
    if pongs > 0 {
        edges.push(TrueIpcEdge { from: c, to: p, pipe: "c2p".into(), messages: pongs });
    }
    (edges, faults)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn healthy_gc_spacing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gc = healthy_gc(&mut rng, T0, 100 * MS, 6);
        assert!(gc.len() >= 6);
        for w in gc.windows(2) {
            let tbgc = w[1].begin_ts - w[0].end_ts;
            assert!(tbgc >= 8 * (w[0].end_ts - w[0].begin_ts));
            assert!(tbgc >= 8 * (w[1].end_ts - w[1].begin_ts));
        }
    }

    #[test]
    fn leak_gaps_shrink() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gc = leaking_gc(&mut rng, 4, 6, 0.5);
        assert_eq!(gc.len(), 10);
        for w in gc[4..].windows(2) {
            let tbgc = w[1].begin_ts - w[0].end_ts;
            assert!(tbgc <= w[1].end_ts - w[1].begin_ts);
        }
    }
}
