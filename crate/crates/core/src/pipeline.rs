//! End-to-end run: plan, solve each step with reflection, audit and replan,
//! then retrieve exemplars, close gaps, compose, and (headless) conclude.
//!
//! Every decision is recorded on the run's [`Tracer`]; [`RunState::replay`]
//! rebuilds the run from its event log alone.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::case::{CaseDossier, ExemplarDocument};
use crate::gateway::{Gateway, GatewayError};
use crate::global::{self, Critique, DraftAnalysis, DraftChain, FinalReport, GapQuery, GlobalError};
use crate::index::VectorIndex;
use crate::memory::{self, AuditFinding, MemoryState};
use crate::planner::{self, PlanError, PlannerLimits, TaskSpec};
use crate::solver::{self, LocalResult, SolverLimits, StepOrigin, ToolRegistry};
use crate::trace::{Event, EventKind, Tracer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// ReAct step cap K.
    pub react_max_steps: usize,
    /// Memory summary word bound k.
    pub word_bound: usize,
    pub max_depth: u32,
    pub replan_cap: u32,
    pub gap_round_cap: u32,
    pub context_budget_words: usize,
    pub headless: bool,
    pub max_tree_nodes: usize,
    pub max_gap_queries: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            react_max_steps: 4,
            word_bound: memory::DEFAULT_WORD_BOUND,
            max_depth: 4,
            replan_cap: 2,
            gap_round_cap: 1,
            context_budget_words: 800,
            headless: false,
            max_tree_nodes: 40,
            max_gap_queries: 5,
        }
    }
}

impl PipelineConfig {
    /// Upper bound on chat calls before human review:
    ///
    /// `(1 + R)(4 + N(9 + 2K)) + C(1 + G(8 + 2K)) + 3`
    ///
    /// with R = replan_cap, N = max_tree_nodes, K = react_max_steps,
    /// C = gap_round_cap, G = max_gap_queries. Per solved task: route 1,
    /// ReAct K, medical-model tool K, two context compressions, executor 2,
    /// filter 1, tidy 2. Per plan phase: tree 2, select 1, adapt N, audit 1.
    /// Gap round: analysis 1 + its tasks. Compose 2, conclude 1.
    pub fn model_call_bound(&self) -> u64 {
        let r = self.replan_cap as u64;
        let n = self.max_tree_nodes.max(1) as u64;
        let k = self.react_max_steps.max(1) as u64;
        let c = self.gap_round_cap as u64;
        let g = self.max_gap_queries as u64;
        let task = 8 + 2 * k;
        (1 + r) * (4 + n * (1 + task)) + c * (1 + g * task) + 3
    }

    pub fn planner_limits(&self) -> PlannerLimits {
        PlannerLimits {
            max_depth: self.max_depth,
            max_tree_nodes: self.max_tree_nodes.max(1),
        }
    }

    pub fn solver_limits(&self) -> SolverLimits {
        SolverLimits {
            react_max_steps: self.react_max_steps.max(1),
            context_budget_words: self.context_budget_words,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    AwaitingReview,
    Completed,
    Failed,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Completed | RunStatus::Failed)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Global(#[from] GlobalError),
    #[error("no local results were produced")]
    NoResults,
    #[error("run is {0:?}, not awaiting review")]
    NotAwaitingReview(RunStatus),
    #[error("run has failed")]
    RunFailed,
    #[error("event log: {0}")]
    Replay(String),
}

/// Content-addressed run id: the first 16 hex digits of
/// SHA-256(case_id 0x1F config-json 0x1F nonce).
pub fn run_id(case_id: &str, config: &PipelineConfig, nonce: &str) -> String {
    let mut h = Sha256::new();
    h.update(case_id.as_bytes());
    h.update([0x1f]);
    h.update(serde_json::to_string(config).unwrap().as_bytes());
    h.update([0x1f]);
    h.update(nonce.as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}

/// Shared, read-only resources for runs.
#[derive(Clone)]
pub struct Engine {
    pub gateway: Arc<Gateway>,
    pub tools: Arc<ToolRegistry>,
    pub corpus_index: Arc<VectorIndex>,
    pub corpus: Arc<Vec<ExemplarDocument>>,
}

/// Everything an event log says about a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub run_id: String,
    pub case_id: String,
    pub config: PipelineConfig,
    pub status: RunStatus,
    pub plan_phases: u32,
    pub results: Vec<LocalResult>,
    pub memory: MemoryState,
    pub chain: Option<DraftChain>,
    pub report: Option<FinalReport>,
    pub unresolved: Vec<AuditFinding>,
    pub error: Option<String>,
}

impl RunState {
    fn new(run_id: &str, case_id: &str, config: &PipelineConfig) -> Self {
        RunState {
            run_id: run_id.to_string(),
            case_id: case_id.to_string(),
            config: config.clone(),
            status: RunStatus::Running,
            plan_phases: 0,
            results: Vec::new(),
            memory: MemoryState::new(config.word_bound),
            chain: None,
            report: None,
            unresolved: Vec::new(),
            error: None,
        }
    }

    /// Rebuilds the state from an event log; the first event must be
    /// `run_started`.
    pub fn replay(events: &[Event]) -> Result<RunState, RunError> {
        let mut it = events.iter();
        let mut state = match it.next().map(|e| &e.kind) {
            Some(EventKind::RunStarted { run_id, case_id, config }) => RunState::new(run_id, case_id, config),
            _ => return Err(RunError::Replay("log does not start with run_started".into())),
        };
        for e in it {
            state.apply(&e.kind)?;
        }
        Ok(state)
    }

    fn apply(&mut self, kind: &EventKind) -> Result<(), RunError> {
        match kind {
            EventKind::StatusChanged { status } => self.status = *status,
            EventKind::PlanPhaseStarted { .. } => self.plan_phases += 1,
            EventKind::LocalResult { result } => self.results.push(result.clone()),
            EventKind::MemoryUpdated { memory } => self.memory = memory.clone(),
            EventKind::ReplanCapReached { unresolved } => self.unresolved = unresolved.clone(),
            EventKind::DraftComposed { draft } => self.chain = Some(DraftChain::new(draft.clone())),
            EventKind::CritiquesApplied { critiques, draft } => {
                let chain = self.chain.as_mut().ok_or_else(|| RunError::Replay("revision before draft".into()))?;
                chain.push_revision(draft.text.clone(), draft.inputs_digest.clone(), critiques.clone())?;
            }
            EventKind::Approved { reviewer, auto, .. } => {
                let chain = self.chain.as_mut().ok_or_else(|| RunError::Replay("approval before draft".into()))?;
                chain.approve(reviewer.clone(), *auto)?;
            }
            EventKind::Concluded { report } => self.report = Some(report.clone()),
            EventKind::RunFailed { error } => {
                self.status = RunStatus::Failed;
                self.error = Some(error.clone());
            }
            _ => {}
        }
        Ok(())
    }
}

struct Run<'a> {
    engine: &'a Engine,
    tracer: &'a Tracer,
    dossier: &'a CaseDossier,
    background: String,
    state: RunState,
    next_step: usize,
}

impl Run<'_> {
    fn set_status(&mut self, status: RunStatus) {
        self.state.status = status;
        self.tracer.emit(EventKind::StatusChanged { status });
    }

    /// Solves one task and reflects its result into memory. Executor
    /// failures return `Ok(None)`.
    fn solve(&mut self, task: &TaskSpec, origin: StepOrigin) -> Result<Option<LocalResult>, RunError> {
        let step_index = self.next_step;
        self.next_step += 1;
        let gw = &self.engine.gateway;
        let outcome = solver::solve_task(
            gw,
            self.tracer,
            &self.engine.tools,
            task,
            &self.state.memory,
            step_index,
            origin,
            self.state.config.solver_limits(),
        )?;
        let Ok(result) = outcome else { return Ok(None) };
        self.state.memory = memory::reflect(gw, self.tracer, &self.state.memory, &result.text, &self.background, step_index)?;
        self.state.results.push(result.clone());
        Ok(Some(result))
    }

    fn plan_and_solve(&mut self) -> Result<(), RunError> {
        let mut round = 0;
        let mut findings: Vec<AuditFinding> = Vec::new();
        loop {
            self.state.plan_phases += 1;
            self.tracer.emit(EventKind::PlanPhaseStarted {
                round,
                findings: findings.clone(),
            });
            let (tree, plan) = planner::plan(
                &self.engine.gateway,
                self.tracer,
                &self.background,
                &findings,
                self.state.config.planner_limits(),
            )?;
            for (task, node_id) in plan.steps.iter().zip(&plan.origin) {
                let origin = StepOrigin::Plan {
                    round,
                    node_id: node_id.clone(),
                };
                self.solve(task, origin)?;
            }
            tracing::debug!(round, nodes = tree.len(), steps = plan.steps.len(), "plan executed");
            findings = memory::audit(&self.engine.gateway, self.tracer, &self.state.memory, &plan, &self.background, round)?;
            if findings.is_empty() {
                return Ok(());
            }
            if round >= self.state.config.replan_cap {
                self.state.unresolved = findings.clone();
                self.tracer.emit(EventKind::ReplanCapReached { unresolved: findings });
                return Ok(());
            }
            round += 1;
            self.tracer.emit(EventKind::ReplanRequested {
                round,
                findings: findings.clone(),
            });
        }
    }

    /// Each query runs through the full local path; failures are recorded
    /// and skipped.
    fn resolve_gaps(&mut self, queries: &[GapQuery], round: u32) -> Result<Vec<LocalResult>, RunError> {
        let mut out = Vec::new();
        for q in queries {
            let task = TaskSpec {
                task_instruction: q.text.clone(),
                forensic_background: self.background.clone(),
            };
            let origin = StepOrigin::Gap {
                round,
                q_id: q.q_id.clone(),
            };
            match self.solve(&task, origin)? {
                Some(r) => out.push(r),
                None => self.tracer.emit(EventKind::GapUnresolved {
                    q_id: q.q_id.clone(),
                    message: "executor produced no result".into(),
                }),
            }
        }
        Ok(out)
    }

    fn compose(&mut self) -> Result<(), RunError> {
        if self.state.results.is_empty() {
            return Err(RunError::NoResults);
        }
        let gw = self.engine.gateway.clone();
        let exemplars = global::retrieve_exemplars(
            &gw,
            self.tracer,
            &self.state.results,
            &self.state.memory,
            &self.engine.corpus_index,
            &self.engine.corpus,
        );
        for round in 1..=self.state.config.gap_round_cap {
            let queries = global::gap_queries(
                &gw,
                self.tracer,
                &self.state.results,
                &self.background,
                round,
                self.state.config.max_gap_queries,
            )?;
            if queries.is_empty() {
                break;
            }
            self.resolve_gaps(&queries, round)?;
        }
        let draft = global::compose_analysis(&gw, self.tracer, &self.state.results, &exemplars, &self.background)?;
        self.state.chain = Some(DraftChain::new(draft));
        Ok(())
    }

    fn execute(&mut self) -> Result<(), RunError> {
        self.plan_and_solve()?;
        self.compose()?;
        if self.state.config.headless {
            approve_and_conclude(self.engine, self.tracer, &mut self.state, None, true)?;
        } else {
            self.set_status(RunStatus::AwaitingReview);
        }
        Ok(())
    }
}

fn fail(tracer: &Tracer, state: &mut RunState, e: &RunError) {
    state.status = RunStatus::Failed;
    state.error = Some(e.to_string());
    tracer.emit(EventKind::RunFailed { error: e.to_string() });
}

/// Runs a case from planning to either awaiting review or (headless)
/// completion. Hard failures end the log with `run_failed`; the returned
/// state always reflects the log.
pub fn run_case(engine: &Engine, tracer: &Tracer, dossier: &CaseDossier, config: &PipelineConfig, run_id: &str) -> RunState {
    tracer.emit(EventKind::RunStarted {
        run_id: run_id.to_string(),
        case_id: dossier.case_id.clone(),
        config: config.clone(),
    });
    tracer.emit(EventKind::StatusChanged { status: RunStatus::Running });
    let mut run = Run {
        engine,
        tracer,
        dossier,
        background: dossier.background_block(),
        state: RunState::new(run_id, &dossier.case_id, config),
        next_step: 0,
    };
    tracing::info!(run_id, case_id = %run.dossier.case_id, "run started");
    if let Err(e) = run.execute() {
        fail(tracer, &mut run.state, &e);
    }
    run.state
}

fn approve_and_conclude(engine: &Engine, tracer: &Tracer, state: &mut RunState, reviewer: Option<String>, auto: bool) -> Result<(), RunError> {
    let chain = state.chain.as_mut().ok_or(RunError::NoResults)?;
    let approval = chain.approve(reviewer.clone(), auto)?.clone();
    tracer.emit(EventKind::Approved {
        version: approval.version,
        reviewer,
        auto,
    });
    let report = global::conclude(&engine.gateway, tracer, chain)?;
    state.report = Some(report);
    state.status = RunStatus::Completed;
    tracer.emit(EventKind::StatusChanged { status: RunStatus::Completed });
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueInput {
    pub author: String,
    pub target_version: u32,
    pub text: String,
}

/// Applies a batch of critiques to a run awaiting review. Rejected
/// critiques leave the log untouched.
pub fn submit_critiques(
    engine: &Engine,
    tracer: &Tracer,
    state: &mut RunState,
    dossier: &CaseDossier,
    inputs: Vec<CritiqueInput>,
) -> Result<DraftAnalysis, RunError> {
    if state.status != RunStatus::AwaitingReview {
        return Err(RunError::NotAwaitingReview(state.status));
    }
    let chain = state.chain.as_mut().ok_or(RunError::NoResults)?;
    let now = tracer.now_ms();
    let first = chain.critiques.len();
    let critiques: Vec<Critique> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, c)| Critique {
            critique_id: format!("c{}", first + i + 1),
            author: c.author,
            target_version: c.target_version,
            text: c.text,
            created_at: now,
        })
        .collect();
    Ok(global::apply_critiques(
        &engine.gateway,
        tracer,
        chain,
        critiques,
        &state.results,
        &dossier.background_block(),
    )?)
}

/// Approves the current draft and concludes. Approving a completed run is a
/// no-op returning its report.
pub fn approve(engine: &Engine, tracer: &Tracer, state: &mut RunState, reviewer: Option<String>) -> Result<FinalReport, RunError> {
    match state.status {
        RunStatus::Completed => return state.report.clone().ok_or(RunError::NoResults),
        RunStatus::AwaitingReview => {}
        RunStatus::Failed => return Err(RunError::RunFailed),
        s => return Err(RunError::NotAwaitingReview(s)),
    }
    if let Err(e) = approve_and_conclude(engine, tracer, state, reviewer, false) {
        fail(tracer, state, &e);
        return Err(e);
    }
    Ok(state.report.clone().expect("concluded run has a report"))
}
