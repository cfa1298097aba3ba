//! Append-only run event log.
//!
//! Each event is one JSON object per line: `{"seq":N,"at_ms":T,"kind":...}`
//! followed by the kind's payload fields. The persisted file and the API
//! stream carry the same bytes because both come from [`Event::to_line`].

use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::gateway::{CallOutcome, RoleModel, TemplateId};
use crate::global::{Critique, DraftAnalysis, FinalReport, GapQuery};
use crate::index::ConsensusResult;
use crate::memory::{AuditFinding, FilterResult, MemoryState};
use crate::pipeline::{PipelineConfig, RunStatus};
use crate::planner::{ExecutionPlan, ReasoningTree};
use crate::solver::{LocalResult, Route, StepOrigin, Termination, ToolStep};

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Always reports the same instant, so scripted runs log identical bytes.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_ms(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub at_ms: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Event {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("events serialize");
        s.push('\n');
        s
    }

    pub fn parse_line(line: &str) -> Result<Event, serde_json::Error> {
        serde_json::from_str(line)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    RunStarted {
        run_id: String,
        case_id: String,
        config: PipelineConfig,
    },
    StatusChanged {
        status: RunStatus,
    },
    PlanPhaseStarted {
        round: u32,
        findings: Vec<AuditFinding>,
    },
    PlanRepair {
        errors: Vec<String>,
    },
    TreeBuilt {
        tree: ReasoningTree,
    },
    DepthTruncated {
        max_depth: u32,
        dropped: Vec<String>,
    },
    NodesSelected {
        selected: Vec<String>,
        unknown: Vec<String>,
        fallback: bool,
    },
    NodeAdapted {
        node_id: String,
        instruction: String,
        fallback: bool,
    },
    PlanLinearized {
        plan: ExecutionPlan,
    },
    StepStarted {
        origin: StepOrigin,
        step_index: usize,
        instruction: String,
    },
    RouteDecided {
        step_index: usize,
        route: Route,
        raw: String,
        defaulted: bool,
    },
    ToolStep {
        step_index: usize,
        step: ToolStep,
    },
    ReactFinished {
        step_index: usize,
        terminated_by: Termination,
        steps: usize,
        history: String,
    },
    ContextCompressed {
        source: String,
        words_before: usize,
        words_after: usize,
        truncated: bool,
    },
    LocalResult {
        result: LocalResult,
    },
    ExecutorFailed {
        step_index: usize,
        message: String,
    },
    FilterApplied {
        step_index: usize,
        result: FilterResult,
    },
    SummaryBounded {
        step_index: usize,
        attempts: u32,
        truncated: bool,
    },
    MemoryUpdated {
        memory: MemoryState,
    },
    MemorySkipped {
        step_index: usize,
        reason: String,
    },
    AuditCompleted {
        round: u32,
        findings: Vec<AuditFinding>,
    },
    ReplanRequested {
        round: u32,
        findings: Vec<AuditFinding>,
    },
    ReplanCapReached {
        unresolved: Vec<AuditFinding>,
    },
    ExemplarsRetrieved {
        queries: usize,
        consensus: Option<ConsensusResult>,
        selected: Vec<String>,
    },
    GapQueries {
        round: u32,
        queries: Vec<GapQuery>,
    },
    GapUnresolved {
        q_id: String,
        message: String,
    },
    DraftComposed {
        draft: DraftAnalysis,
    },
    CritiquesApplied {
        critiques: Vec<Critique>,
        draft: DraftAnalysis,
    },
    Approved {
        version: u32,
        reviewer: Option<String>,
        auto: bool,
    },
    Concluded {
        report: FinalReport,
    },
    ModelCall {
        role: RoleModel,
        template_id: TemplateId,
        request_hash: String,
        latency_ms: u64,
        attempts: u32,
        outcome: CallOutcome,
    },
    EmbedCall {
        texts: usize,
        latency_ms: u64,
        attempts: u32,
        outcome: CallOutcome,
    },
    Warning {
        message: String,
    },
    RunFailed {
        error: String,
    },
}

struct Inner {
    next_seq: u64,
    events: Vec<Event>,
    sink: Option<Box<dyn Write + Send>>,
    sink_error: Option<String>,
}

/// Shared per-run event recorder. Cloning yields a handle to the same log.
#[derive(Clone)]
pub struct Tracer {
    clock: Arc<dyn Clock>,
    inner: Arc<Mutex<Inner>>,
}

impl std::fmt::Debug for Tracer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.lock().unwrap();
        f.debug_struct("Tracer").field("events", &inner.events.len()).finish()
    }
}

impl Tracer {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Tracer::resume(clock, 0, None)
    }

    /// Continues an existing log: sequence numbers start at `next_seq` and
    /// every event is written to `sink` (one line, flushed) as it is emitted.
    pub fn resume(clock: Arc<dyn Clock>, next_seq: u64, sink: Option<Box<dyn Write + Send>>) -> Self {
        Tracer {
            clock,
            inner: Arc::new(Mutex::new(Inner {
                next_seq,
                events: Vec::new(),
                sink,
                sink_error: None,
            })),
        }
    }

    pub fn with_sink(clock: Arc<dyn Clock>, sink: Box<dyn Write + Send>) -> Self {
        Tracer::resume(clock, 0, Some(sink))
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn emit(&self, kind: EventKind) {
        let at_ms = self.clock.now_ms();
        let mut inner = self.inner.lock().unwrap();
        let event = Event {
            seq: inner.next_seq,
            at_ms,
            kind,
        };
        inner.next_seq += 1;
        if inner.sink_error.is_none() {
            let line = event.to_line();
            if let Some(sink) = inner.sink.as_mut() {
                if let Err(e) = sink.write_all(line.as_bytes()).and_then(|_| sink.flush()) {
                    inner.sink_error = Some(e.to_string());
                }
            }
        }
        inner.events.push(event);
    }

    pub fn warn(&self, message: impl Into<String>) {
        let message = message.into();
        tracing::warn!("{message}");
        self.emit(EventKind::Warning { message });
    }

    /// Events emitted through this handle (not those before `resume`).
    pub fn events(&self) -> Vec<Event> {
        self.inner.lock().unwrap().events.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn next_seq(&self) -> u64 {
        self.inner.lock().unwrap().next_seq
    }

    pub fn lines(&self) -> String {
        self.inner
            .lock()
            .unwrap()
            .events
            .iter()
            .map(Event::to_line)
            .collect()
    }

    /// First write failure on the sink, if any. Later events are kept in
    /// memory only.
    pub fn sink_error(&self) -> Option<String> {
        self.inner.lock().unwrap().sink_error.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Default)]
    struct Buf(Arc<Mutex<Vec<u8>>>);

    impl Write for Buf {
        fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(b);
            Ok(b.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn sink_receives_same_bytes_as_memory() {
        let buf = Buf::default();
        let t = Tracer::with_sink(Arc::new(FixedClock(7)), Box::new(buf.clone()));
        t.warn("a");
        t.emit(EventKind::StatusChanged { status: RunStatus::Completed });
        assert_eq!(String::from_utf8(buf.0.lock().unwrap().clone()).unwrap(), t.lines());
        assert_eq!(
            t.lines().lines().next().unwrap(),
            r#"{"seq":0,"at_ms":7,"kind":"warning","message":"a"}"#
        );
    }

    #[test]
    fn lines_parse_back() {
        let t = Tracer::new(Arc::new(FixedClock(0)));
        t.emit(EventKind::ReplanCapReached { unresolved: vec![] });
        t.emit(EventKind::Approved { version: 2, reviewer: Some("r1".into()), auto: false });
        for (line, ev) in t.lines().lines().zip(t.events()) {
            assert_eq!(Event::parse_line(line).unwrap(), ev);
        }
    }

    #[test]
    fn resume_continues_sequence() {
        let t = Tracer::resume(Arc::new(FixedClock(0)), 41, None);
        t.warn("x");
        assert_eq!(t.events()[0].seq, 41);
        assert_eq!(t.next_seq(), 42);
    }
}
