//! Run lifecycle shared by the HTTP API and the CLI. The core pipeline is
//! synchronous; callers decide which thread executes a run.
//!
//! Readers always go through the persisted log, so they see a consistent
//! prefix while a worker appends. Writers (the worker, then critique and
//! approve) hold the run's lock; a second writer is turned away as busy.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, TryLockError};

use feat_core::case::{parse_dossier, CaseDossier};
use feat_core::global::{Approval, Critique, DraftAnalysis, FinalReport, GlobalError, RevisionRecord};
use feat_core::pipeline::{self, CritiqueInput, Engine, PipelineConfig, RunError, RunState, RunStatus};
use feat_core::trace::{Clock, FixedClock, SystemClock, Tracer};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::store::{Recovery, RunEntry, Store};
use crate::{ServiceConfig, ServiceError};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRequest {
    pub case_id: String,
    /// Pipeline settings overriding the service defaults, key by key.
    #[serde(default)]
    pub config: Option<Value>,
    /// Distinguishes otherwise identical runs. Generated when absent.
    #[serde(default)]
    pub nonce: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunView {
    pub run_id: String,
    pub case_id: String,
    /// `queued` until the first event, then the logged status.
    pub status: String,
    pub config: PipelineConfig,
    pub events: usize,
    pub plan_phases: u32,
    pub local_results: usize,
    pub draft_version: Option<u32>,
    pub error: Option<String>,
    pub executing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportView {
    pub run_id: String,
    pub status: RunStatus,
    pub current: DraftAnalysis,
    pub versions: Vec<DraftAnalysis>,
    pub critiques: Vec<Critique>,
    pub revision_trail: Vec<RevisionRecord>,
    pub approval: Option<Approval>,
    pub final_report: Option<FinalReport>,
}

struct LiveRun {
    state: RunState,
    tracer: Tracer,
    dossier: CaseDossier,
}

pub struct Service {
    config: ServiceConfig,
    store: Store,
    engine: Engine,
    clock: Arc<dyn Clock>,
    live: Mutex<HashMap<String, Arc<Mutex<Option<LiveRun>>>>>,
    executing: Mutex<HashSet<String>>,
    nonces: AtomicU64,
}

fn run_error(e: RunError) -> ServiceError {
    match e {
        RunError::Global(GlobalError::StaleVersion { target, current }) => ServiceError::Stale { target, current },
        RunError::Global(
            e @ (GlobalError::EmptyCritique | GlobalError::NoCritiques),
        ) => ServiceError::Invalid(e.to_string()),
        e @ (RunError::NotAwaitingReview(_) | RunError::Global(GlobalError::AlreadyApproved)) => {
            ServiceError::Conflict(e.to_string())
        }
        RunError::RunFailed => ServiceError::Conflict("run has failed".into()),
        e => ServiceError::Failed(e.to_string()),
    }
}

impl Service {
    pub fn new(config: ServiceConfig) -> Result<Self, ServiceError> {
        let engine = crate::engine::build(&config)?;
        Service::with_engine(config, engine)
    }

    pub fn with_engine(config: ServiceConfig, engine: Engine) -> Result<Self, ServiceError> {
        let store = Store::open(&config.data_dir)?;
        let clock: Arc<dyn Clock> = match config.fixed_clock_ms {
            Some(ms) => Arc::new(FixedClock(ms)),
            None => Arc::new(SystemClock),
        };
        Ok(Service {
            config,
            store,
            engine,
            clock,
            live: Mutex::new(HashMap::new()),
            executing: Mutex::new(HashSet::new()),
            nonces: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn put_case(&self, bytes: &[u8]) -> Result<(CaseDossier, bool), ServiceError> {
        let dossier = parse_dossier(bytes).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let created = self.store.put_case(&dossier)?;
        Ok((dossier, created))
    }

    pub fn get_case(&self, case_id: &str) -> Result<CaseDossier, ServiceError> {
        self.store
            .get_case(case_id)?
            .ok_or_else(|| crate::StoreError::NotFound(format!("case {case_id}")).into())
    }

    /// The service defaults with the request's keys laid over them.
    pub fn effective_config(&self, overrides: Option<&Value>) -> Result<PipelineConfig, ServiceError> {
        let mut base = serde_json::to_value(&self.config.pipeline).expect("config serializes");
        match overrides {
            None | Some(Value::Null) => {}
            Some(Value::Object(o)) => {
                let b = base.as_object_mut().unwrap();
                for (k, v) in o {
                    b.insert(k.clone(), v.clone());
                }
            }
            Some(_) => return Err(ServiceError::Invalid("config must be an object".into())),
        }
        serde_json::from_value(base).map_err(|e| ServiceError::Invalid(format!("config: {e}")))
    }

    /// Registers a run and marks it executing; the caller must then
    /// [`execute`](Service::execute) it.
    pub fn create_run(&self, req: &RunRequest) -> Result<RunEntry, ServiceError> {
        self.get_case(&req.case_id)?;
        let config = self.effective_config(req.config.as_ref())?;
        let created_at_ms = self.clock.now_ms();
        let nonce = req.nonce.clone().unwrap_or_else(|| {
            format!("{}-{}-{}", std::process::id(), SystemClock.now_ms(), self.nonces.fetch_add(1, Ordering::Relaxed))
        });
        let entry = RunEntry {
            run_id: pipeline::run_id(&req.case_id, &config, &nonce),
            case_id: req.case_id.clone(),
            nonce,
            created_at_ms,
            config,
        };
        let mut executing = self.executing.lock().unwrap();
        self.store.create_run(&entry)?;
        executing.insert(entry.run_id.clone());
        Ok(entry)
    }

    /// Marks a queued run (found by recovery) as executing again.
    pub fn requeue(&self, run_id: &str) -> Result<RunEntry, ServiceError> {
        let entry = self.store.run(run_id)?;
        if !self.store.read_log(run_id)?.events.is_empty() {
            return Err(ServiceError::Conflict(format!("run {run_id} has already started")));
        }
        self.executing.lock().unwrap().insert(run_id.to_string());
        Ok(entry)
    }

    /// Runs the pipeline to awaiting review or completion, appending to the
    /// run's log as it goes. Blocks.
    pub fn execute(&self, run_id: &str) -> Result<RunState, ServiceError> {
        let result = self.execute_inner(run_id);
        self.executing.lock().unwrap().remove(run_id);
        result
    }

    fn execute_inner(&self, run_id: &str) -> Result<RunState, ServiceError> {
        let entry = self.store.run(run_id)?;
        let dossier = self.get_case(&entry.case_id)?;
        let tracer = Tracer::resume(self.clock.clone(), 0, Some(Box::new(self.store.log_writer(run_id)?)));
        let slot = Arc::new(Mutex::new(None));
        let mut guard = slot.lock().unwrap();
        self.live.lock().unwrap().insert(run_id.to_string(), slot.clone());
        let state = pipeline::run_case(&self.engine, &tracer, &dossier, &entry.config, run_id);
        if let Some(e) = tracer.sink_error() {
            self.live.lock().unwrap().remove(run_id);
            tracing::error!(run_id, error = %e, "event log write failed; run left for recovery");
            return Err(ServiceError::Persist(e));
        }
        tracing::info!(run_id, status = ?state.status, events = tracer.len(), "run finished");
        *guard = Some(LiveRun {
            state: state.clone(),
            tracer,
            dossier,
        });
        Ok(state)
    }

    /// Creates and executes in one call.
    pub fn run(&self, req: &RunRequest) -> Result<RunState, ServiceError> {
        let entry = self.create_run(req)?;
        self.execute(&entry.run_id)
    }

    pub fn is_executing(&self, run_id: &str) -> bool {
        self.executing.lock().unwrap().contains(run_id)
    }

    pub fn view(&self, run_id: &str) -> Result<RunView, ServiceError> {
        let entry = self.store.run(run_id)?;
        let log = self.store.read_log(run_id)?;
        let executing = self.is_executing(run_id);
        let mut view = RunView {
            run_id: entry.run_id,
            case_id: entry.case_id,
            status: "queued".into(),
            config: entry.config,
            events: log.events.len(),
            plan_phases: 0,
            local_results: 0,
            draft_version: None,
            error: None,
            executing,
        };
        if log.events.is_empty() {
            return Ok(view);
        }
        let state = RunState::replay(&log.events).map_err(|e| ServiceError::Failed(e.to_string()))?;
        view.status = serde_json::to_value(state.status).unwrap().as_str().unwrap().to_string();
        view.plan_phases = state.plan_phases;
        view.local_results = state.results.len();
        view.draft_version = state.chain.as_ref().map(|c| c.current().version);
        view.error = state.error;
        Ok(view)
    }

    /// Persisted log lines from event `offset` on, byte for byte.
    pub fn trace(&self, run_id: &str, offset: usize) -> Result<(Vec<u8>, usize), ServiceError> {
        self.store.run(run_id)?;
        let log = self.store.read_log(run_id)?;
        let start = if offset == 0 {
            0
        } else {
            log.raw
                .iter()
                .enumerate()
                .filter(|(_, b)| **b == b'\n')
                .nth(offset - 1)
                .map_or(log.raw.len(), |(i, _)| i + 1)
        };
        Ok((log.raw[start..].to_vec(), log.events.len()))
    }

    pub fn report(&self, run_id: &str) -> Result<ReportView, ServiceError> {
        self.store.run(run_id)?;
        let state = self
            .store
            .replay(run_id)?
            .ok_or_else(|| ServiceError::Conflict(format!("run {run_id} has not started")))?;
        let chain = state
            .chain
            .ok_or_else(|| ServiceError::Conflict(format!("run {run_id} has no draft yet (status {:?})", state.status)))?;
        Ok(ReportView {
            run_id: state.run_id,
            status: state.status,
            current: chain.current().clone(),
            versions: chain.versions,
            critiques: chain.critiques,
            revision_trail: chain.trail,
            approval: chain.approval,
            final_report: state.report,
        })
    }

    fn live_run(&self, run_id: &str) -> Result<Arc<Mutex<Option<LiveRun>>>, ServiceError> {
        let mut live = self.live.lock().unwrap();
        if let Some(slot) = live.get(run_id) {
            return Ok(slot.clone());
        }
        self.store.run(run_id)?;
        let log = self.store.read_log(run_id)?;
        if log.torn_bytes > 0 {
            return Err(ServiceError::Conflict(format!("run {run_id} needs recovery")));
        }
        if log.events.is_empty() {
            return Err(ServiceError::Conflict(format!("run {run_id} has not started")));
        }
        let state = RunState::replay(&log.events).map_err(|e| ServiceError::Failed(e.to_string()))?;
        let dossier = self.get_case(&state.case_id)?;
        let tracer = Tracer::resume(
            self.clock.clone(),
            log.events.len() as u64,
            Some(Box::new(self.store.log_writer(run_id)?)),
        );
        let slot = Arc::new(Mutex::new(Some(LiveRun { state, tracer, dossier })));
        live.insert(run_id.to_string(), slot.clone());
        Ok(slot)
    }

    fn with_live<T>(&self, run_id: &str, f: impl FnOnce(&Engine, &mut LiveRun) -> Result<T, RunError>) -> Result<T, ServiceError> {
        let slot = self.live_run(run_id)?;
        let mut guard = match slot.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => return Err(ServiceError::Busy(run_id.to_string())),
            Err(TryLockError::Poisoned(_)) => return Err(ServiceError::Failed(format!("run {run_id} worker panicked"))),
        };
        let run = guard.as_mut().ok_or_else(|| ServiceError::Busy(run_id.to_string()))?;
        let out = f(&self.engine, run);
        if let Some(e) = run.tracer.sink_error() {
            drop(guard);
            self.live.lock().unwrap().remove(run_id);
            return Err(ServiceError::Persist(e));
        }
        out.map_err(run_error)
    }

    pub fn critique(&self, run_id: &str, inputs: Vec<CritiqueInput>) -> Result<DraftAnalysis, ServiceError> {
        self.with_live(run_id, |engine, run| {
            pipeline::submit_critiques(engine, &run.tracer, &mut run.state, &run.dossier, inputs)
        })
    }

    pub fn approve(&self, run_id: &str, reviewer: Option<String>) -> Result<FinalReport, ServiceError> {
        self.with_live(run_id, |engine, run| pipeline::approve(engine, &run.tracer, &mut run.state, reviewer))
    }

    /// Closes runs interrupted by a stop. Runs executing in this process
    /// are skipped.
    pub fn recover(&self) -> Result<Vec<Recovery>, ServiceError> {
        let executing = self.executing.lock().unwrap().clone();
        Ok(self.store.recover(self.clock.clone(), &executing)?)
    }
}
