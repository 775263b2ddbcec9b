//! Command-line frontend. Exit codes: 0 clean, 1 unmatched events,
//! 2 usage or input error, 3 detector findings.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::export::{export, ExportFormat};
use crate::metrics::{attl_breakdown, gap_sum, ipc_flow, DetectorConfig};
use crate::pipeline::{analyze, Analysis};
use crate::simgen::{simulate, Scenario, ScenarioKind};
use crate::trace::{open_experiment, Ns, ParseMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FINDINGS: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "vspan", version, about = "Vertical span analysis for event-loop runtime traces")]
pub struct Cli {
    /// Print machine-readable JSON summaries only.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a trace pair and ground-truth sidecar.
    Simulate(SimulateArgs),
    /// Rebuild contexts and vertical spans; writes the span forest as JSON.
    Analyze(InputArgs),
    /// Per-span T/L/gaps, per-op ATTL, GC samples and the IPC graph.
    Metrics(InputArgs),
    /// Run all detectors; exits 3 when anything is reported.
    Detect(DetectArgs),
    /// Export spans as Chrome trace-event JSON or folded stacks.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scenario parameter override, `key=value` (repeatable).
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// Output directory.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InputArgs {
    /// Trace file (repeatable).
    #[arg(short, long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Clock offset in ns for the input at the same position (repeatable).
    #[arg(long = "offset", allow_negative_numbers = true)]
    pub offsets: Vec<i64>,
    /// Reject events outside the known vocabulary.
    #[arg(long)]
    pub strict: bool,
    /// Output file; stdout when absent.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = 0.5)]
    pub overhead: f64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    /// Minimum phase dwell in ms.
    #[arg(long, default_value_t = 100.0)]
    pub min_stall_ms: f64,
    #[arg(long, default_value_t = 10.0)]
    pub factor: f64,
    /// Pipe read timeout in ms.
    #[arg(long, default_value_t = 1000.0)]
    pub ipc_timeout_ms: f64,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value = "chrome")]
    pub format: String,
}

impl DetectArgs {
    pub fn config(&self) -> anyhow::Result<DetectorConfig> {
        let positive = [
            ("overhead", self.overhead),
            ("alpha", self.alpha),
            ("window", self.window as f64),
            ("min-stall-ms", self.min_stall_ms),
            ("factor", self.factor),
            ("ipc-timeout-ms", self.ipc_timeout_ms),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                bail!("--{name} must be positive, got {v}");
            }
        }
        let ms = |v: f64| (v * 1e6).round() as Ns;
        Ok(DetectorConfig {
            overhead_threshold: self.overhead,
            leak_alpha: self.alpha,
            leak_window: self.window,
            min_stall: ms(self.min_stall_ms),
            interference_factor: self.factor,
            ipc_timeout: ms(self.ipc_timeout_ms),
        })
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

struct Ctx {
    quiet: bool,
}

impl Ctx {
    /// Document to `out` (or stdout), then a summary line.
    fn emit(&self, out: Option<&Path>, doc: &str, summary: Value, human: String) -> anyhow::Result<()> {
        match out {
            Some(p) => {
                write_atomic(p, doc)?;
                if self.quiet {
                    println!("{summary}");
                } else {
                    println!("{human}");
                }
            }
            None => {
                print!("{doc}");
                if !self.quiet {
                    eprintln!("{human}");
                }
            }
        }
        Ok(())
    }
}

fn load(args: &InputArgs) -> anyhow::Result<Analysis> {
    let mode = if args.strict { ParseMode::Strict } else { ParseMode::Lenient };
    let x = open_experiment(&args.inputs, &args.offsets, mode)?;
    Ok(analyze(x))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    s
}

fn cmd_simulate(ctx: &Ctx, a: &SimulateArgs) -> anyhow::Result<i32> {
    let kind: ScenarioKind = a.scenario.parse()?;
    let mut s = Scenario::new(kind, a.seed);
    for kv in &a.params {
        let Some((k, v)) = kv.split_once('=') else { bail!("--param expects key=value, got {kv:?}") };
        s = s.with_param(k, v)?;
    }
    let out = simulate(&s)?;
    for (name, text) in out.files() {
        write_atomic(&a.out.join(name), &text)?;
    }
    let summary = json!({
        "scenario": kind.name(),
        "seed": a.seed,
        "userspace_events": out.userspace.len(),
        "kernel_events": out.kernel.len(),
        "requests": out.truth.requests.len(),
        "ops": out.truth.ops.len(),
        "faults": out.truth.faults.len(),
    });
    if ctx.quiet {
        println!("{summary}");
    } else {
        println!(
            "{}: {} userspace + {} kernel events, {} requests, {} ops -> {}",
            kind,
            out.userspace.len(),
            out.kernel.len(),
            out.truth.requests.len(),
            out.truth.ops.len(),
            a.out.display()
        );
    }
    Ok(EXIT_OK)
}

fn cmd_analyze(ctx: &Ctx, a: &InputArgs) -> anyhow::Result<i32> {
    let an = load(a)?;
    let unmatched = an.unmatched_count();
    let summary = json!({
        "events": an.events.len(),
        "contexts": an.registry.len(),
        "spans": an.spans().len(),
        "ops": an.recon.ops().count(),
        "unmatched": unmatched,
    });
    let mut human = format!(
        "{} events, {} contexts, {} spans, {} ops",
        an.events.len(),
        an.registry.len(),
        an.spans().len(),
        an.recon.ops().count()
    );
    if unmatched > 0 {
        human.push_str(&format!(", {unmatched} unmatched"));
        for d in an.context_diagnostics.iter().map(ToString::to_string).chain(
            an.recon.diagnostics.iter().filter(|d| d.is_unmatched()).map(ToString::to_string),
        ) {
            eprintln!("warning: {d}");
        }
    }
    ctx.emit(a.out.as_deref(), &pretty(&an.to_json()), summary, human)?;
    Ok(if unmatched > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn cmd_metrics(ctx: &Ctx, a: &InputArgs) -> anyhow::Result<i32> {
    let an = load(a)?;
    let gc = an.gc_samples()?;
    let spans: Vec<Value> = an
        .spans()
        .iter()
        .map(|s| {
            let ops: Vec<Value> = s
                .ops
                .iter()
                .map(|o| {
                    let b = attl_breakdown(o);
                    json!({
                        "op_id": o.op_id,
                        "name": o.name,
                        "path": o.path,
                        "attl_ns": o.attl(),
                        "syscall_ns": b.syscall_ns,
                        "residue_ns": b.residue_ns,
                        "queue_wait_ns": o.queue_wait,
                    })
                })
                .collect();
            json!({
                "root_fn": s.bec.root_fn,
                "root_ctx": s.bec.root_ctx,
                "pid": s.bec.pid,
                "wall_ns": s.bec.wall(),
                "t_ns": s.t,
                "l_ns": s.l,
                "gaps_ns": s.gaps,
                "gap_sum_ns": gap_sum(s),
                "clamped_gaps": s.clamped_gaps,
                "ops": ops,
            })
        })
        .collect();
    let (ipc, _) = ipc_flow(&an.events, DetectorConfig::default().ipc_timeout);
    let doc = json!({ "spans": spans, "gc": gc, "ipc": ipc });
    let summary = json!({ "spans": spans.len(), "gc_passes": gc.len(), "ipc_edges": ipc.edges.len() });
    let human = format!("{} spans, {} GC passes, {} IPC edges", spans.len(), gc.len(), ipc.edges.len());
    ctx.emit(a.out.as_deref(), &pretty(&doc), summary, human)?;
    Ok(EXIT_OK)
}

fn cmd_detect(ctx: &Ctx, a: &DetectArgs) -> anyhow::Result<i32> {
    let cfg = a.config()?;
    let an = load(&a.input)?;
    let reports = an.detect(&cfg)?;
    let doc = serde_json::to_value(&reports)?;
    let summary = json!({ "reports": reports.len() });
    let human = match reports.len() {
        0 => "no findings".to_string(),
        n => {
            let kinds: Vec<String> = reports.iter().map(|r| format!("{:?}", r.kind)).collect();
            format!("{n} finding(s): {}", kinds.join(", "))
        }
    };
    ctx.emit(a.input.out.as_deref(), &pretty(&doc), summary, human)?;
    Ok(if reports.is_empty() { EXIT_OK } else { EXIT_FINDINGS })
}

fn cmd_export(ctx: &Ctx, a: &ExportArgs) -> anyhow::Result<i32> {
    let fmt: ExportFormat = a.format.parse()?;
    let an = load(&a.input)?;
    let text = export(an.spans(), fmt);
    let summary = json!({ "format": a.format, "spans": an.spans().len(), "bytes": text.len() });
    let human = format!("exported {} spans as {}", an.spans().len(), a.format);
    ctx.emit(a.input.out.as_deref(), &text, summary, human)?;
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let ctx = Ctx { quiet: cli.quiet };
    let res = match &cli.command {
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Analyze(a) => cmd_analyze(&ctx, a),
        Command::Metrics(a) => cmd_metrics(&ctx, a),
        Command::Detect(a) => cmd_detect(&ctx, a),
        Command::Export(a) => cmd_export(&ctx, a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    }
}
