//! Scenario kinds, their parameters, and the per-request plans drawn from them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::SimError;
use crate::trace::{FsKind, Ns};

pub const MS: Ns = 1_000_000;
pub const US: Ns = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    ReadfileChain,
    PromiseLoop,
    RedosStall,
    GcPressure,
    CacheLeak,
    Healthy,
    ThreadpoolExhaustion,
    IpcPingpong,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 8] = [
        ScenarioKind::ReadfileChain,
        ScenarioKind::PromiseLoop,
        ScenarioKind::RedosStall,
        ScenarioKind::GcPressure,
        ScenarioKind::CacheLeak,
        ScenarioKind::Healthy,
        ScenarioKind::ThreadpoolExhaustion,
        ScenarioKind::IpcPingpong,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::ReadfileChain => "readfile_chain",
            ScenarioKind::PromiseLoop => "promise_loop",
            ScenarioKind::RedosStall => "redos_stall",
            ScenarioKind::GcPressure => "gc_pressure",
            ScenarioKind::CacheLeak => "cache_leak",
            ScenarioKind::Healthy => "healthy",
            ScenarioKind::ThreadpoolExhaustion => "threadpool_exhaustion",
            ScenarioKind::IpcPingpong => "ipc_pingpong",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SimError::InvalidParams(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Params {
    pub request_count: usize,
    pub pool_size: usize,
    pub file_size: u64,
    pub chunk_size: u64,
    /// Root wall time for readfile_chain and for the stalled root of redos_stall.
    pub root_wall_ms: u64,
    pub stall_ms: u64,
    pub gc_period_us: u64,
    pub gc_duration_us: u64,
    pub healthy_samples: usize,
    pub leak_samples: usize,
    pub leak_growth: f64,
    pub blocked: bool,
    /// Kernel clock minus userspace clock; kernel timestamps are written shifted back by this.
    pub kernel_offset: i64,
}

impl Params {
    pub fn defaults(kind: ScenarioKind) -> Params {
        let mut p = Params {
            request_count: 10,
            pool_size: 4,
            file_size: 256 * 1024,
            chunk_size: 64 * 1024,
            root_wall_ms: 300,
            stall_ms: 4000,
            gc_period_us: 10_000,
            gc_duration_us: 1_000,
            healthy_samples: 8,
            leak_samples: 12,
            leak_growth: 0.5,
            blocked: false,
            kernel_offset: 0,
        };
        match kind {
            ScenarioKind::ReadfileChain => p.request_count = 1,
            ScenarioKind::PromiseLoop => p.request_count = 2,
            ScenarioKind::RedosStall => {
                p.request_count = 4;
                p.root_wall_ms = 3920;
            }
            ScenarioKind::GcPressure => {
                p.request_count = 20;
                p.gc_period_us = 25_000;
            }
            ScenarioKind::ThreadpoolExhaustion => p.request_count = 12,
            ScenarioKind::IpcPingpong => p.request_count = 20,
            ScenarioKind::CacheLeak | ScenarioKind::Healthy => {}
        }
        p
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SimError> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, SimError> {
            v.parse().map_err(|_| SimError::InvalidParams(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "request_count" => self.request_count = num(key, value)?,
            "pool_size" => self.pool_size = num(key, value)?,
            "file_size" => self.file_size = num(key, value)?,
            "chunk_size" => self.chunk_size = num(key, value)?,
            "root_wall_ms" => self.root_wall_ms = num(key, value)?,
            "stall_ms" => self.stall_ms = num(key, value)?,
            "gc_period_us" => self.gc_period_us = num(key, value)?,
            "gc_duration_us" => self.gc_duration_us = num(key, value)?,
            "healthy_samples" => self.healthy_samples = num(key, value)?,
            "leak_samples" => self.leak_samples = num(key, value)?,
            "leak_growth" => self.leak_growth = num(key, value)?,
            "blocked" => self.blocked = num(key, value)?,
            "kernel_offset" => self.kernel_offset = num(key, value)?,
            _ => return Err(SimError::InvalidParams(format!("unknown parameter {key:?}"))),
        }
        Ok(())
    }

    pub fn chunks(&self) -> usize {
        self.file_size.div_ceil(self.chunk_size).max(1) as usize
    }

    pub fn validate(&self, kind: ScenarioKind) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidParams(m.to_string()));
        if !(1..=64).contains(&self.pool_size) {
            return bad("pool_size must be in 1..=64");
        }
        if self.chunk_size == 0 {
            return bad("chunk_size must be positive");
        }
        if self.chunks() > 4096 {
            return bad("file_size / chunk_size must not exceed 4096 chunks");
        }
        if self.request_count > 100_000 {
            return bad("request_count must not exceed 100000");
        }
        if self.gc_period_us == 0 || self.gc_duration_us == 0 || self.gc_duration_us >= self.gc_period_us {
            return bad("gc_duration_us must be positive and below gc_period_us");
        }
        if !(0.0..=10.0).contains(&self.leak_growth) {
            return bad("leak_growth must be in [0, 10]");
        }
        if self.kernel_offset > super::T0 as i64 || self.kernel_offset < -(1 << 40) {
            return bad("kernel_offset out of range");
        }
        match kind {
            ScenarioKind::ReadfileChain if self.root_wall_ms == 0 => bad("root_wall_ms must be positive"),
            ScenarioKind::RedosStall if self.root_wall_ms == 0 || self.stall_ms < self.root_wall_ms + 50 => {
                bad("stall_ms must exceed root_wall_ms by at least 50")
            }
            ScenarioKind::CacheLeak if self.healthy_samples < 1 || self.leak_samples < 1 => {
                bad("cache_leak needs at least one healthy and one leak sample")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub params: Params,
    pub seed: u64,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, seed: u64) -> Scenario {
        Scenario { kind, params: Params::defaults(kind), seed }
    }

    pub fn with_param(mut self, key: &str, value: &str) -> Result<Scenario, SimError> {
        self.params.set(key, value)?;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum FaultSpec {
    /// Hold the poll phase for this long.
    PollStall { stall_ms: u64 },
    /// GC passes that inflate the reads they overlap.
    GcDisruption { period_us: u64, duration_us: u64 },
    /// GC passes whose spacing shrinks to their own length.
    HeapLeak { samples: usize, growth: f64 },
    /// The child stops answering pings.
    BlockedPipe,
}

impl FaultSpec {
    fn name(&self) -> &'static str {
        match self {
            FaultSpec::PollStall { .. } => "poll_stall",
            FaultSpec::GcDisruption { .. } => "gc_disruption",
            FaultSpec::HeapLeak { .. } => "heap_leak",
            FaultSpec::BlockedPipe => "blocked_pipe",
        }
    }
}

pub fn inject_fault(mut scenario: Scenario, fault: FaultSpec) -> Result<Scenario, SimError> {
    let p = &mut scenario.params;
    match (&fault, scenario.kind) {
        (FaultSpec::PollStall { stall_ms }, ScenarioKind::RedosStall) => p.stall_ms = *stall_ms,
        (FaultSpec::GcDisruption { period_us, duration_us }, ScenarioKind::GcPressure) => {
            p.gc_period_us = *period_us;
            p.gc_duration_us = *duration_us;
        }
        (FaultSpec::HeapLeak { samples, growth }, ScenarioKind::CacheLeak) => {
            p.leak_samples = *samples;
            p.leak_growth = *growth;
        }
        (FaultSpec::BlockedPipe, ScenarioKind::IpcPingpong) => p.blocked = true,
        (f, kind) => return Err(SimError::IncompatibleFault { fault: f.name().into(), scenario: kind.name().into() }),
    }
    Ok(scenario)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HopKind {
    Pool(FsKind),
    Socket,
    Run,
}

/// Pre-drawn timings of one chained atomic operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopPlan {
    pub kind: HopKind,
    pub method: &'static str,
    /// Send to dequeue.
    pub q: Ns,
    /// Dequeue to the first op event (async_file, run or socketRead begin).
    pub pre: Ns,
    /// async_file to submit.
    pub submit_delay: Ns,
    /// Worker-queue removal to fs begin.
    pub start_delay: Ns,
    pub dur: Ns,
    /// Syscall entry after op begin, and exit before op end.
    pub sys_lead: Ns,
    pub sys_tail: Ns,
    /// Op end to the completion callback becoming ready.
    pub notify: Ns,
    /// A vm context that runs inline for this long once the hop completes.
    pub exec_after: Option<Ns>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestPlan {
    pub root_fn: &'static str,
    pub arrival: Ns,
    pub lead_in: Ns,
    pub lead_out: Ns,
    /// Nested promise contexts opened before the first hop.
    pub promises: usize,
    pub hops: Vec<HopPlan>,
    /// Running this root holds the poll phase open for the stall duration.
    pub stall: bool,
}

fn uni(rng: &mut ChaCha8Rng, lo: Ns, hi: Ns) -> Ns {
    rng.gen_range(lo..=hi)
}

struct Durations {
    open: (Ns, Ns),
    stat: (Ns, Ns),
    read: (Ns, Ns),
    close: (Ns, Ns),
    socket: (Ns, Ns),
    run: (Ns, Ns),
}

const MS_RANGE: Durations = Durations {
    open: (MS, 3 * MS),
    stat: (MS, 3 * MS),
    read: (MS, 3 * MS),
    close: (MS, 3 * MS),
    socket: (20 * US, 60 * US),
    run: (20 * US, 80 * US),
};

const FAST_IO: Durations = Durations {
    open: (20 * US, 40 * US),
    stat: (20 * US, 40 * US),
    read: (40 * US, 60 * US),
    close: (10 * US, 20 * US),
    socket: (20 * US, 60 * US),
    run: (20 * US, 80 * US),
};

fn hop(rng: &mut ChaCha8Rng, kind: HopKind, d: &Durations) -> HopPlan {
    let (method, range) = match kind {
        HopKind::Pool(FsKind::Open) => ("FSReqCallback", d.open),
        HopKind::Pool(FsKind::Stat) => ("FSReqCallback", d.stat),
        HopKind::Pool(FsKind::Read) => ("FSReqCallback", d.read),
        HopKind::Pool(FsKind::Close) => ("FSReqCallback", d.close),
        HopKind::Socket => ("TCPWRAP", d.socket),
        HopKind::Run => ("Immediate", d.run),
    };
    let dur = uni(rng, range.0, range.1);
    HopPlan {
        kind,
        method,
        q: uni(rng, 2 * US, 20 * US),
        pre: uni(rng, US, 3 * US),
        submit_delay: uni(rng, US, 2 * US),
        start_delay: uni(rng, US, 5 * US),
        dur,
        sys_lead: uni(rng, 1, (dur / 10).max(1)),
        sys_tail: uni(rng, 1, (dur / 10).max(1)),
        notify: uni(rng, 5 * US, 30 * US),
        exec_after: None,
    }
}

fn file_chain(rng: &mut ChaCha8Rng, chunks: usize, stat: bool, d: &Durations) -> Vec<HopPlan> {
    let mut hops = vec![hop(rng, HopKind::Pool(FsKind::Open), d)];
    if stat {
        hops.push(hop(rng, HopKind::Pool(FsKind::Stat), d));
    }
    for _ in 0..chunks {
        hops.push(hop(rng, HopKind::Pool(FsKind::Read), d));
    }
    hops.push(hop(rng, HopKind::Pool(FsKind::Close), d));
    hops
}

fn plain(root_fn: &'static str, arrival: Ns, rng: &mut ChaCha8Rng, hops: Vec<HopPlan>) -> RequestPlan {
    RequestPlan {
        root_fn,
        arrival,
        lead_in: uni(rng, 5 * US, 30 * US),
        lead_out: uni(rng, 5 * US, 30 * US),
        promises: 0,
        hops,
        stall: false,
    }
}

fn mixed_request(rng: &mut ChaCha8Rng, arrival: Ns) -> RequestPlan {
    let mut hops = vec![hop(rng, HopKind::Socket, &MS_RANGE)];
    if rng.gen_bool(0.5) {
        hops.push(hop(rng, HopKind::Run, &MS_RANGE));
    }
    let (reads, stat) = (rng.gen_range(1..=2), rng.gen_bool(0.5));
    hops.extend(file_chain(rng, reads, stat, &MS_RANGE));
    if rng.gen_bool(0.5) {
        hops.push(hop(rng, HopKind::Run, &MS_RANGE));
    }
    plain("handleRequest", arrival, rng, hops)
}

/// Zero lead-in/lead-out and a first op that starts the instant the root does.
fn make_tight(plan: &mut RequestPlan) {
    plan.lead_in = 0;
    plan.lead_out = 0;
    let first = &mut plan.hops[0];
    first.q = 0;
    first.pre = 0;
    first.submit_delay = 0;
    first.start_delay = 0;
    plan.hops.last_mut().expect("hops").notify = 0;
}

/// Sum of the pool chain's timings when nothing contends.
fn chain_wall(plan: &RequestPlan) -> Ns {
    let mut total = plan.lead_in + plan.lead_out;
    for h in &plan.hops {
        total += h.q + h.pre + h.submit_delay + h.start_delay + h.dur + h.notify;
    }
    total
}

fn readfile_request(rng: &mut ChaCha8Rng, p: &Params, arrival: Ns) -> Result<RequestPlan, SimError> {
    let d = Durations {
        open: (MS, 3 * MS),
        stat: (500 * US, 1500 * US),
        read: (50 * MS, 80 * MS),
        close: (200 * US, MS),
        ..MS_RANGE
    };
    let hops = file_chain(rng, p.chunks(), true, &d);
    let mut plan = plain("readFile", arrival, rng, hops);
    make_tight(&mut plan);
    // Stretch or shrink the reads so the root lasts exactly root_wall_ms.
    let target = p.root_wall_ms * MS;
    let reads: Vec<usize> =
        (0..plan.hops.len()).filter(|&i| plan.hops[i].kind == HopKind::Pool(FsKind::Read)).collect();
    let read_total: Ns = reads.iter().map(|&i| plan.hops[i].dur).sum();
    let fixed = chain_wall(&plan) - read_total;
    let budget = target
        .checked_sub(fixed)
        .filter(|b| *b >= 3 * reads.len() as Ns)
        .ok_or_else(|| SimError::InvalidParams("root_wall_ms too small for the chain".into()))?;
    let each = budget / reads.len() as Ns;
    for (n, &i) in reads.iter().enumerate() {
        let h = &mut plan.hops[i];
        h.dur = if n + 1 == reads.len() { budget - each * (reads.len() as Ns - 1) } else { each };
        h.sys_lead = h.sys_lead.min(h.dur / 3).max(1);
        h.sys_tail = h.sys_tail.min(h.dur / 3).max(1);
    }
    debug_assert_eq!(chain_wall(&plan), target);
    Ok(plan)
}

fn stall_request(rng: &mut ChaCha8Rng, p: &Params, arrival: Ns) -> Result<RequestPlan, SimError> {
    let hops = vec![hop(rng, HopKind::Run, &MS_RANGE), hop(rng, HopKind::Run, &MS_RANGE)];
    let mut plan = plain("resolve", arrival, rng, hops);
    plan.stall = true;
    let fixed: Ns = plan.lead_in + plan.lead_out + plan.hops.iter().map(|h| h.q + h.pre + h.dur).sum::<Ns>();
    let exec = (p.root_wall_ms * MS)
        .checked_sub(fixed)
        .filter(|e| *e > 0)
        .ok_or_else(|| SimError::InvalidParams("root_wall_ms too small".into()))?;
    plan.hops[0].exec_after = Some(exec);
    Ok(plan)
}

/// Requests for the event-loop scenarios; empty for ipc_pingpong.
pub fn plan_requests(s: &Scenario, rng: &mut ChaCha8Rng) -> Result<Vec<RequestPlan>, SimError> {
    let p = &s.params;
    let t0 = super::T0;
    let n = p.request_count;
    let mut out = Vec::with_capacity(n);
    match s.kind {
        ScenarioKind::ReadfileChain => {
            let spacing = (p.root_wall_ms + 100) * MS;
            for i in 0..n {
                out.push(readfile_request(rng, p, t0 + MS + i as Ns * spacing)?);
            }
        }
        ScenarioKind::PromiseLoop => {
            let mut t = t0 + MS;
            for _ in 0..n {
                let mut hops = file_chain(rng, 1, false, &MS_RANGE);
                for _ in 0..3 {
                    let mut h = hop(rng, HopKind::Run, &MS_RANGE);
                    h.method = "promise";
                    hops.push(h);
                }
                let mut plan = plain("computePromise", t, rng, hops);
                plan.promises = 2;
                out.push(plan);
                t += uni(rng, 2 * MS, 20 * MS);
            }
        }
        ScenarioKind::RedosStall => {
            let mut t = t0 + MS;
            let before = n / 2;
            for _ in 0..before {
                out.push(mixed_request(rng, t));
                t += uni(rng, 2 * MS, 6 * MS);
            }
            let stall_at = t + 30 * MS;
            out.push(stall_request(rng, p, stall_at)?);
            t = stall_at + (p.stall_ms + 100) * MS;
            for _ in before..n {
                out.push(mixed_request(rng, t));
                t += uni(rng, 2 * MS, 6 * MS);
            }
        }
        ScenarioKind::GcPressure => {
            let mut t = t0 + MS;
            for _ in 0..n {
                let hops = file_chain(rng, p.chunks(), false, &FAST_IO);
                out.push(plain("readChunks", t, rng, hops));
                t += uni(rng, 2 * MS, 5 * MS);
            }
        }
        ScenarioKind::Healthy | ScenarioKind::CacheLeak => {
            let mut t = t0 + MS;
            for _ in 0..n {
                out.push(mixed_request(rng, t));
                t += uni(rng, MS, 6 * MS);
            }
        }
        ScenarioKind::ThreadpoolExhaustion => {
            let burst = t0 + MS;
            for _ in 0..n {
                let hops = file_chain(rng, 2, false, &MS_RANGE);
                out.push(plain("readFile", burst, rng, hops));
            }
        }
        ScenarioKind::IpcPingpong => {}
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn names_round_trip() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.name().parse::<ScenarioKind>().unwrap(), k);
        }
        assert!("nope".parse::<ScenarioKind>().is_err());
    }

    #[test]
    fn param_overrides() {
        let s = Scenario::new(ScenarioKind::Healthy, 1).with_param("request_count", "3").unwrap();
        assert_eq!(s.params.request_count, 3);
        assert!(Scenario::new(ScenarioKind::Healthy, 1).with_param("bogus", "1").is_err());
        assert!(Scenario::new(ScenarioKind::Healthy, 1).with_param("pool_size", "x").is_err());
    }

    #[test]
    fn faults_need_matching_scenarios() {
        let s = Scenario::new(ScenarioKind::Healthy, 1);
        assert!(matches!(inject_fault(s, FaultSpec::BlockedPipe), Err(SimError::IncompatibleFault { .. })));
        let s = inject_fault(Scenario::new(ScenarioKind::IpcPingpong, 1), FaultSpec::BlockedPipe).unwrap();
        assert!(s.params.blocked);
    }

    #[test]
    fn readfile_plan_hits_target_wall() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = Params::defaults(ScenarioKind::ReadfileChain);
        let plan = readfile_request(&mut rng, &p, 0).unwrap();
        assert_eq!(chain_wall(&plan), 300 * MS);
        assert_eq!(plan.hops.len(), 2 + p.chunks() + 1);
    }
}
