//! End-to-end analysis of a merged experiment.

use serde::Serialize;

use crate::bcta::{reconstruct, Reconstruction, VerticalSpan};
use crate::lifecycle::{classify_path, record_timeline, LifecycleError, PathKind, RequestState, RequestTimeline};
use crate::metrics::{detect, gc_metrics, DetectionReport, DetectorConfig, GcSample, MetricsError};
use crate::nbca::{build_forest, ContextRegistry, NbcaError};
use crate::sht::StateHistoryTree;
use crate::trace::{Experiment, SourceInfo, TraceEvent};

/// Lifecycle replay of one top-level request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RequestReport {
    pub pid: u32,
    pub root_ctx: i64,
    pub root_fn: String,
    pub timeline: Option<RequestTimeline>,
    pub paths: Vec<PathKind>,
    pub error: Option<String>,
}

impl RequestReport {
    pub fn states(&self) -> Vec<RequestState> {
        self.timeline.as_ref().map(RequestTimeline::states).unwrap_or_default()
    }
}

pub struct Analysis {
    pub events: Vec<TraceEvent>,
    pub sources: Vec<SourceInfo>,
    pub sht: StateHistoryTree,
    pub registry: ContextRegistry,
    pub context_diagnostics: Vec<NbcaError>,
    pub recon: Reconstruction,
    pub requests: Vec<RequestReport>,
}

#[derive(Serialize)]
struct AnalysisDoc<'a> {
    sources: &'a [SourceInfo],
    event_count: usize,
    context_count: usize,
    spans: &'a [VerticalSpan],
    stray_ops: &'a [crate::bcta::AtomicOp],
    requests: &'a [RequestReport],
    diagnostics: Vec<String>,
}

impl Analysis {
    pub fn spans(&self) -> &[VerticalSpan] {
        &self.recon.spans
    }

    /// Unmatched BCTA events plus context diagnostics.
    pub fn unmatched_count(&self) -> usize {
        self.recon.unmatched_count() + self.context_diagnostics.len()
    }

    pub fn gc_samples(&self) -> Result<Vec<GcSample>, MetricsError> {
        gc_metrics(&self.events)
    }

    pub fn detect(&self, cfg: &DetectorConfig) -> Result<Vec<DetectionReport>, MetricsError> {
        let samples = self.gc_samples()?;
        Ok(detect(&self.events, &self.recon, &self.registry, &samples, cfg))
    }

    /// The span forest as a JSON document.
    pub fn to_json(&self) -> serde_json::Value {
        let diagnostics = self
            .context_diagnostics
            .iter()
            .map(ToString::to_string)
            .chain(self.recon.diagnostics.iter().map(ToString::to_string))
            .collect();
        serde_json::to_value(AnalysisDoc {
            sources: &self.sources,
            event_count: self.events.len(),
            context_count: self.registry.len(),
            spans: &self.recon.spans,
            stray_ops: &self.recon.stray_ops,
            requests: &self.requests,
            diagnostics,
        })
        .expect("analysis serializes")
    }
}

fn replay_span(span: &VerticalSpan, events: &[TraceEvent]) -> Result<RequestTimeline, LifecycleError> {
    let b = &span.bec;
    let idx = span.ops.iter().flat_map(|o| o.transitions.iter().copied()).chain(b.exit_event);
    RequestTimeline::replay(b.root_ctx, b.pid, b.entry_ts, idx.map(|i| &events[i]))
}

/// Runs the context pass, span reconstruction and lifecycle replay.
pub fn analyze(experiment: Experiment) -> Analysis {
    let sources = experiment.sources().to_vec();
    let origin = experiment.origin_ts();
    let end = experiment.end_ts();
    let events = experiment.events().to_vec();
    let mut sht = StateHistoryTree::new(origin);
    let (registry, context_diagnostics) = build_forest(&events, &mut sht);
    let mut recon = reconstruct(&events, &registry, &mut sht);

    let mut requests = Vec::with_capacity(recon.spans.len());
    for span in &recon.spans {
        let b = &span.bec;
        let mut report = RequestReport {
            pid: b.pid,
            root_ctx: b.root_ctx,
            root_fn: b.root_fn.clone(),
            timeline: None,
            paths: Vec::new(),
            error: None,
        };
        match replay_span(span, &events) {
            Ok(tl) => {
                if tl.is_complete() {
                    match classify_path(&tl) {
                        Ok(p) => report.paths = p,
                        Err(e) => report.error = Some(e.to_string()),
                    }
                }
                if let Err(e) = record_timeline(&mut sht, &tl) {
                    recon.diagnostics.push(e.into());
                }
                report.timeline = Some(tl);
            }
            Err(e) => report.error = Some(e.to_string()),
        }
        requests.push(report);
    }
    if let Err(e) = sht.close_history(end) {
        recon.diagnostics.push(e.into());
    }
    Analysis { events, sources, sht, registry, context_diagnostics, recon, requests }
}
