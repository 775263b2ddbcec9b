//! Canonical multi-layer event schema and experiment loading.
//!
//! A trace file is UTF-8 text with one JSON object per line:
//!
//! ```text
//! {"ts":905,"layer":"libuv","name":"uv_async_file","pid":1,"tid":7,"args":{"op_id":51}}
//! ```
//!
//! Userspace and kernel traces are merged into an [`Experiment`], a single
//! timestamp-ordered stream. Each source may carry a constant clock offset.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Nanoseconds since trace origin.
pub type Ns = u64;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("unknown event {layer}/{name}")]
    UnknownEvent { layer: Layer, name: String },
    #[error("missing field {0:?}")]
    MissingField(String),
    #[error("field {field:?} must be {expected}")]
    InvalidField { field: String, expected: &'static str },
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: ParseError,
    },
    #[error("experiment has no events")]
    EmptyTrace,
    #[error("expected {expected} offsets, got {got}")]
    OffsetCount { expected: usize, got: usize },
    #[error("offset {offset} moves event at ts {ts} before the trace origin")]
    NegativeTimestamp { offset: i64, ts: Ns },
    #[error("experiment needs at least one source")]
    NoSources,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Js,
    Vm,
    Libuv,
    Kernel,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Js => "js",
            Layer::Vm => "vm",
            Layer::Libuv => "libuv",
            Layer::Kernel => "kernel",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How to treat layer/name pairs outside the closed vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Begin,
    End,
}

/// The libuv file-system operations that carry begin/end markers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsKind {
    Open,
    Stat,
    Read,
    Close,
}

impl FsKind {
    pub const ALL: [FsKind; 4] = [FsKind::Open, FsKind::Stat, FsKind::Read, FsKind::Close];

    /// Atomic operation name, e.g. `fs_read`.
    pub fn op_name(self) -> &'static str {
        match self {
            FsKind::Open => "fs_open",
            FsKind::Stat => "fs_stat",
            FsKind::Read => "fs_read",
            FsKind::Close => "fs_close",
        }
    }

    /// Trace event name, e.g. `uv_fs_read`.
    pub fn event_name(self) -> &'static str {
        match self {
            FsKind::Open => "uv_fs_open",
            FsKind::Stat => "uv_fs_stat",
            FsKind::Read => "uv_fs_read",
            FsKind::Close => "uv_fs_close",
        }
    }

    fn from_event_name(name: &str) -> Option<FsKind> {
        FsKind::ALL.into_iter().find(|k| k.event_name() == name)
    }
}

pub const EL_PHASES: [&str; 7] = ["timers", "pending", "idle", "prepare", "poll", "check", "close"];

/// Typed view of an event's payload, derived from `name` and `args`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    /// Function entry/exit marker or async resource initialisation.
    UvSend { id: i64, channel: Option<i64>, method: String },
    Run { id: i64 },
    Resolve { id: i64 },
    Dequeue { req_id: i64 },
    AsyncFile { op_id: i64 },
    Submit { op_id: i64 },
    WorkerqRemove { op_id: i64 },
    Done { op_id: i64 },
    Fs { kind: FsKind, op_id: i64, phase: Phase },
    SocketRead { op_id: i64, phase: Phase },
    SyscallEntry { name: String },
    SyscallExit { name: String, ret: i64 },
    ElPhase { phase: String },
    GcBegin { kind: String },
    GcEnd { kind: String },
    /// Preserved in lenient mode; ignored by every analysis.
    Unknown,
}

pub const EXIT_PREFIX: &str = "js_exit_";

impl EventKind {
    /// A `uv_send` whose method marks a function exit.
    pub fn is_exit_send(&self) -> bool {
        matches!(self, EventKind::UvSend { method, .. } if method.starts_with(EXIT_PREFIX))
    }

    pub fn op_id(&self) -> Option<i64> {
        match *self {
            EventKind::Dequeue { req_id } => Some(req_id),
            EventKind::AsyncFile { op_id }
            | EventKind::Submit { op_id }
            | EventKind::WorkerqRemove { op_id }
            | EventKind::Done { op_id }
            | EventKind::Fs { op_id, .. }
            | EventKind::SocketRead { op_id, .. } => Some(op_id),
            _ => None,
        }
    }
}

/// One timestamped record from one of the four layers.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub ts: Ns,
    pub layer: Layer,
    pub name: String,
    pub pid: u32,
    pub tid: u32,
    pub args: Map<String, Value>,
    pub kind: EventKind,
}

#[derive(Serialize, Deserialize)]
struct RawEvent {
    ts: Value,
    layer: Value,
    name: Value,
    #[serde(default)]
    pid: Option<Value>,
    #[serde(default)]
    tid: Option<Value>,
    #[serde(default)]
    args: Option<Value>,
}

#[derive(Serialize)]
struct WireEvent<'a> {
    ts: Ns,
    layer: Layer,
    name: &'a str,
    pid: u32,
    tid: u32,
    args: &'a Map<String, Value>,
}

impl TraceEvent {
    /// Builds and validates an event in strict mode.
    pub fn new(
        ts: Ns,
        layer: Layer,
        name: impl Into<String>,
        pid: u32,
        tid: u32,
        args: Map<String, Value>,
    ) -> Result<TraceEvent, ParseError> {
        let name = name.into();
        let mut args = args;
        let kind = classify(layer, &name, &mut args, ParseMode::Strict)?;
        Ok(TraceEvent { ts, layer, name, pid, tid, args, kind })
    }

    /// Serializes to one line of the canonical format (no trailing newline).
    pub fn to_line(&self) -> String {
        serde_json::to_string(&WireEvent {
            ts: self.ts,
            layer: self.layer,
            name: &self.name,
            pid: self.pid,
            tid: self.tid,
            args: &self.args,
        })
        .expect("event serialization is infallible")
    }

    pub fn is_syscall(&self) -> bool {
        matches!(self.kind, EventKind::SyscallEntry { .. } | EventKind::SyscallExit { .. })
    }
}

pub fn parse_event_line(line: &str, mode: ParseMode) -> Result<TraceEvent, ParseError> {
    let raw: RawEvent =
        serde_json::from_str(line).map_err(|e| ParseError::MalformedRecord(e.to_string()))?;
    let ts = coerce_int(&raw.ts)
        .filter(|v| *v >= 0)
        .ok_or(ParseError::InvalidField { field: "ts".into(), expected: "a non-negative integer" })?
        as Ns;
    let layer: Layer = serde_json::from_value(raw.layer)
        .map_err(|_| ParseError::InvalidField { field: "layer".into(), expected: "one of js, vm, libuv, kernel" })?;
    let name = match raw.name {
        Value::String(s) if !s.is_empty() => s,
        _ => return Err(ParseError::InvalidField { field: "name".into(), expected: "a non-empty string" }),
    };
    let pid = id_field("pid", raw.pid.as_ref())?;
    let tid = id_field("tid", raw.tid.as_ref())?;
    let mut args = match raw.args {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(m)) => m,
        Some(_) => return Err(ParseError::InvalidField { field: "args".into(), expected: "an object" }),
    };
    let kind = classify(layer, &name, &mut args, mode)?;
    Ok(TraceEvent { ts, layer, name, pid, tid, args, kind })
}

fn id_field(field: &str, v: Option<&Value>) -> Result<u32, ParseError> {
    match v {
        None | Some(Value::Null) => Ok(0),
        Some(v) => coerce_int(v)
            .and_then(|i| u32::try_from(i).ok())
            .ok_or(ParseError::InvalidField { field: field.into(), expected: "a non-negative integer" }),
    }
}

/// Accepts JSON integers, integral floats and decimal strings.
fn coerce_int(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64().or_else(|| {
            n.as_f64().filter(|f| f.fract() == 0.0 && f.abs() < 9.0e15).map(|f| f as i64)
        }),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn req_int(args: &mut Map<String, Value>, field: &str) -> Result<i64, ParseError> {
    let v = args.get(field).ok_or_else(|| ParseError::MissingField(field.into()))?;
    let i = coerce_int(v).ok_or(ParseError::InvalidField { field: field.into(), expected: "an integer" })?;
    args.insert(field.into(), Value::from(i));
    Ok(i)
}

fn req_str(args: &Map<String, Value>, field: &str) -> Result<String, ParseError> {
    match args.get(field) {
        None => Err(ParseError::MissingField(field.into())),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(ParseError::InvalidField { field: field.into(), expected: "a string" }),
    }
}

fn req_phase(args: &Map<String, Value>) -> Result<Phase, ParseError> {
    match req_str(args, "phase")?.as_str() {
        "begin" => Ok(Phase::Begin),
        "end" => Ok(Phase::End),
        _ => Err(ParseError::InvalidField { field: "phase".into(), expected: "\"begin\" or \"end\"" }),
    }
}

fn classify(
    layer: Layer,
    name: &str,
    args: &mut Map<String, Value>,
    mode: ParseMode,
) -> Result<EventKind, ParseError> {
    use Layer::*;
    let kind = match (layer, name) {
        (Js | Vm, "uv_send") => {
            let id = req_int(args, "id")?;
            let channel = match args.get("channel") {
                None => return Err(ParseError::MissingField("channel".into())),
                Some(Value::Null) => None,
                Some(v) => {
                    let c = coerce_int(v)
                        .ok_or(ParseError::InvalidField { field: "channel".into(), expected: "an integer or null" })?;
                    args.insert("channel".into(), Value::from(c));
                    Some(c)
                }
            };
            EventKind::UvSend { id, channel, method: req_str(args, "method")? }
        }
        (Vm, "run") => EventKind::Run { id: req_int(args, "id")? },
        (Vm, "resolve") => EventKind::Resolve { id: req_int(args, "id")? },
        (Vm, "gc_begin") => EventKind::GcBegin { kind: req_str(args, "kind")? },
        (Vm, "gc_end") => EventKind::GcEnd { kind: req_str(args, "kind")? },
        (Libuv, "uv_dequeue") => EventKind::Dequeue { req_id: req_int(args, "req_id")? },
        (Libuv, "uv_async_file") => EventKind::AsyncFile { op_id: req_int(args, "op_id")? },
        (Libuv, "uv_submit") => EventKind::Submit { op_id: req_int(args, "op_id")? },
        (Libuv, "uv_workerq_remove") => EventKind::WorkerqRemove { op_id: req_int(args, "op_id")? },
        (Libuv, "uv_done") => EventKind::Done { op_id: req_int(args, "op_id")? },
        (Libuv, "uv_socketRead") => {
            let op_id = req_int(args, "op_id")?;
            EventKind::SocketRead { op_id, phase: req_phase(args)? }
        }
        (Libuv, "el_phase") => {
            let phase = req_str(args, "phase")?;
            if !EL_PHASES.contains(&phase.as_str()) {
                return Err(ParseError::InvalidField { field: "phase".into(), expected: "an event-loop phase name" });
            }
            EventKind::ElPhase { phase }
        }
        (Libuv, n) if FsKind::from_event_name(n).is_some() => {
            let kind = FsKind::from_event_name(n).unwrap();
            let op_id = req_int(args, "op_id")?;
            EventKind::Fs { kind, op_id, phase: req_phase(args)? }
        }
        (Kernel, n) if n.strip_prefix("syscall_entry_").is_some_and(|s| !s.is_empty()) => {
            EventKind::SyscallEntry { name: n["syscall_entry_".len()..].to_string() }
        }
        (Kernel, n) if n.strip_prefix("syscall_exit_").is_some_and(|s| !s.is_empty()) => EventKind::SyscallExit {
            name: n["syscall_exit_".len()..].to_string(),
            ret: req_int(args, "ret")?,
        },
        _ => match mode {
            ParseMode::Strict => return Err(ParseError::UnknownEvent { layer, name: name.to_string() }),
            ParseMode::Lenient => EventKind::Unknown,
        },
    };
    Ok(kind)
}

/// Parses a whole trace body. Blank lines are skipped; errors carry 1-based line numbers.
pub fn parse_trace(text: &str, mode: ParseMode) -> Result<Vec<TraceEvent>, (usize, ParseError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_event_line(l, mode).map_err(|e| (i + 1, e)))
        .collect()
}

pub fn write_trace(events: &[TraceEvent]) -> String {
    let mut out = String::with_capacity(events.len() * 96);
    for e in events {
        out.push_str(&e.to_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SourceInfo {
    pub name: String,
    pub offset: i64,
    pub event_count: usize,
}

/// A set of trace sources merged into one ordered stream.
///
/// Events are ordered by timestamp (after offsets); ties are broken by
/// source index, then by position in the source file.
#[derive(Debug, Clone)]
pub struct Experiment {
    sources: Vec<SourceInfo>,
    events: Vec<TraceEvent>,
    origin_ts: Ns,
}

impl Experiment {
    /// Merges in-memory sources given as `(name, events, offset_ns)`.
    pub fn from_sources(sources: Vec<(String, Vec<TraceEvent>, i64)>) -> Result<Experiment, ExperimentError> {
        if sources.is_empty() {
            return Err(ExperimentError::NoSources);
        }
        let mut infos = Vec::with_capacity(sources.len());
        let mut streams = Vec::with_capacity(sources.len());
        for (name, mut events, offset) in sources {
            for e in &mut events {
                let shifted = e.ts as i128 + offset as i128;
                if shifted < 0 || shifted > Ns::MAX as i128 {
                    return Err(ExperimentError::NegativeTimestamp { offset, ts: e.ts });
                }
                e.ts = shifted as Ns;
            }
            // Stable: unsorted sources keep file order among equal timestamps.
            events.sort_by_key(|e| e.ts);
            infos.push(SourceInfo { name, offset, event_count: events.len() });
            streams.push(events);
        }
        let total: usize = streams.iter().map(Vec::len).sum();
        if total == 0 {
            return Err(ExperimentError::EmptyTrace);
        }

        let mut iters: Vec<_> = streams.into_iter().map(|s| s.into_iter().peekable()).collect();
        let mut heap = BinaryHeap::new();
        for (idx, it) in iters.iter_mut().enumerate() {
            if let Some(e) = it.peek() {
                heap.push(Reverse((e.ts, idx)));
            }
        }
        let mut events = Vec::with_capacity(total);
        while let Some(Reverse((_, idx))) = heap.pop() {
            let e = iters[idx].next().expect("peeked");
            events.push(e);
            if let Some(next) = iters[idx].peek() {
                heap.push(Reverse((next.ts, idx)));
            }
        }
        let origin_ts = events.first().map_or(0, |e| e.ts);
        Ok(Experiment { sources: infos, events, origin_ts })
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn sources(&self) -> &[SourceInfo] {
        &self.sources
    }

    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    pub fn origin_ts(&self) -> Ns {
        self.origin_ts
    }

    pub fn end_ts(&self) -> Ns {
        self.events.last().map_or(0, |e| e.ts)
    }
}

/// Loads and merges trace files. `offsets` may be empty (all zero).
pub fn open_experiment<P: AsRef<Path>>(
    paths: &[P],
    offsets: &[i64],
    mode: ParseMode,
) -> Result<Experiment, ExperimentError> {
    if paths.is_empty() {
        return Err(ExperimentError::NoSources);
    }
    if !offsets.is_empty() && offsets.len() != paths.len() {
        return Err(ExperimentError::OffsetCount { expected: paths.len(), got: offsets.len() });
    }
    let mut sources = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        let path = p.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|source| ExperimentError::FileUnreadable { path: path.to_path_buf(), source })?;
        let events = parse_trace(&text, mode)
            .map_err(|(line, source)| ExperimentError::Parse { path: path.to_path_buf(), line, source })?;
        sources.push((path.display().to_string(), events, offsets.get(i).copied().unwrap_or(0)));
    }
    Experiment::from_sources(sources)
}
