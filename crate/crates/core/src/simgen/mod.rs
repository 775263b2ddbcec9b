//! Deterministic discrete-event simulator emitting a userspace/kernel trace
//! pair and a ground-truth sidecar.

mod engine;
pub mod pending;
pub mod scenario;
pub mod truth;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::trace::{write_trace, Experiment, ExperimentError, Layer, Ns, TraceEvent};
use engine::{emit_gc, healthy_gc, ipc_pingpong, leaking_gc, periodic_gc, Engine, Out};
pub use pending::{PendingError, PendingRef, PendingStore, ReadOutcome, Wakeup};
pub use scenario::{inject_fault, FaultSpec, Params, Scenario, ScenarioKind, MS, US};
pub use truth::*;

/// Virtual time starts here so that moderate negative kernel offsets stay valid.
pub(crate) const T0: Ns = 1_000_000;

pub const APP_PID: u32 = 4242;
pub const EL_TID: u32 = 4242;
pub const WORKER_TID0: u32 = 4243;
pub const GC_TID: u32 = APP_PID + 100;
pub const IPC_PARENT: u32 = 4100;
pub const IPC_CHILD: u32 = 4200;

pub const USERSPACE_FILE: &str = "userspace.jsonl";
pub const KERNEL_FILE: &str = "kernel.jsonl";
pub const SIDECAR_FILE: &str = "sidecar.json";

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("fault {fault} does not apply to scenario {scenario}")]
    IncompatibleFault { fault: String, scenario: String },
    #[error(transparent)]
    Pending(#[from] PendingError),
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub userspace: Vec<TraceEvent>,
    /// Kernel events with timestamps already shifted by `-kernel_offset`.
    pub kernel: Vec<TraceEvent>,
    pub kernel_offset: i64,
    pub truth: GroundTruth,
}

impl SimOutput {
    /// File name and contents for each output file.
    pub fn files(&self) -> [(&'static str, String); 3] {
        let mut sidecar = serde_json::to_string_pretty(&self.truth).expect("sidecar serializes");
        sidecar.push('\n');
        [
            (USERSPACE_FILE, write_trace(&self.userspace)),
            (KERNEL_FILE, write_trace(&self.kernel)),
            (SIDECAR_FILE, sidecar),
        ]
    }

    /// Both traces merged with the recorded offsets applied.
    pub fn experiment(&self) -> Result<Experiment, ExperimentError> {
        Experiment::from_sources(vec![
            (USERSPACE_FILE.into(), self.userspace.clone(), 0),
            (KERNEL_FILE.into(), self.kernel.clone(), self.kernel_offset),
        ])
    }

    pub fn event_count(&self) -> usize {
        self.userspace.len() + self.kernel.len()
    }
}

pub fn simulate(s: &Scenario) -> Result<SimOutput, SimError> {
    let p = &s.params;
    p.validate(s.kind)?;
    let mut truth = GroundTruth { scenario: s.kind.name().into(), seed: s.seed, ..GroundTruth::default() };
    if p.request_count == 0 {
        return Ok(SimOutput { userspace: Vec::new(), kernel: Vec::new(), kernel_offset: p.kernel_offset, truth });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let plans = scenario::plan_requests(s, &mut rng)?;

    let mut gc = Vec::new();
    if s.kind == ScenarioKind::GcPressure {
        let horizon = plans.last().map_or(T0, |r| r.arrival) + 500 * MS;
        gc = periodic_gc(&mut rng, p.gc_period_us * US, p.gc_duration_us * US, horizon);
    }
    let windows: Vec<(Ns, Ns)> = gc.iter().map(|g| (g.begin_ts, g.end_ts)).collect();
    let mut engine = Engine::new(s, plans, windows, ChaCha8Rng::seed_from_u64(rng.gen()));
    engine.run()?;
    let end = engine.now();
    let (mut out, sim) = engine.into_truth();
    truth.contexts = sim.contexts;
    truth.requests = sim.requests;
    truth.ops = sim.ops;
    truth.faults = sim.faults;

    match s.kind {
        ScenarioKind::GcPressure => gc.retain(|g| g.begin_ts <= end),
        ScenarioKind::Healthy => {
            let start = T0 + rng.gen_range(MS..=3 * MS);
            gc = healthy_gc(&mut rng, start, end, 6);
        }
        ScenarioKind::CacheLeak => {
            gc = leaking_gc(&mut rng, p.healthy_samples, p.leak_samples, p.leak_growth);
            if let (Some(first), Some(last)) = (gc.iter().find(|g| g.leak), gc.iter().rev().find(|g| g.leak)) {
                truth.faults.push(TrueFault {
                    kind: "heap_leak".into(),
                    pid: APP_PID,
                    begin_ts: first.begin_ts,
                    end_ts: last.end_ts,
                    detail: "gc".into(),
                });
            }
        }
        ScenarioKind::IpcPingpong => {
            let (edges, faults) = ipc_pingpong(&mut rng, p.request_count, p.blocked, &mut out);
            truth.ipc_edges = edges;
            truth.faults.extend(faults);
        }
        _ => {}
    }
    emit_gc(&mut out, &gc);
    truth.gc = gc;
    truth.faults.sort_by_key(|f| (f.begin_ts, f.pid));
    truth.offsets = vec![
        TrueOffset { source: USERSPACE_FILE.into(), offset: 0 },
        TrueOffset { source: KERNEL_FILE.into(), offset: p.kernel_offset },
    ];

    let (mut kernel, userspace): (Vec<_>, Vec<_>) = split(out);
    for e in &mut kernel {
        e.ts = (e.ts as i64 - p.kernel_offset) as Ns;
    }
    Ok(SimOutput { userspace, kernel, kernel_offset: p.kernel_offset, truth })
}

fn split(out: Out) -> (Vec<TraceEvent>, Vec<TraceEvent>) {
    out.into_sorted().into_iter().partition(|e| e.layer == Layer::Kernel)
}
