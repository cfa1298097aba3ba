//! Local solver: route each task, optionally gather tool evidence through the
//! ReAct loop, then synthesize the local result.

mod react;
mod tools;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError, RoleModel, TemplateId};
use crate::memory::MemoryState;
use crate::planner::TaskSpec;
use crate::text::{truncate_words, word_count};
use crate::trace::{EventKind, Tracer};

pub use react::{initial_history, parse_reply, run_react, ReactEnv, ReactReply, Termination, ToolStep, ToolTrace, FAILURE_BUDGET};
pub use tools::{
    LiveToolConfig, ParamSpec, ToolContext, ToolError, ToolFixtures, ToolHandler, ToolOutput, ToolRegistry, ToolSource, ToolSpec,
    KB_TOP_K, PUBMED_NUM,
};

pub const MIN_CONTEXT_BUDGET: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecutorError {
    #[error("executor returned empty output twice for step {0}")]
    Empty(usize),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Direct,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub route: Route,
    pub raw: String,
    /// The reply matched neither class and the tool route was assumed.
    pub defaulted: bool,
}

/// Where a solved task came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum StepOrigin {
    Plan { round: u32, node_id: String },
    Gap { round: u32, q_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalResult {
    pub step_index: usize,
    pub origin: StepOrigin,
    pub text: String,
    pub used_tools: Vec<String>,
    pub citations: Vec<String>,
}

/// Leading-token rule: `0`/`direct` is direct inference, `1`/`tool` is tool
/// augmentation; anything else defaults to tool augmentation.
pub fn parse_route(raw: &str) -> RouteDecision {
    let token: String = raw
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase();
    let route = match token.as_str() {
        "0" | "direct" => Some(Route::Direct),
        "1" | "tool" => Some(Route::Tool),
        _ => None,
    };
    RouteDecision {
        route: route.unwrap_or(Route::Tool),
        raw: raw.to_string(),
        defaulted: route.is_none(),
    }
}

pub fn route(gateway: &Gateway, tracer: &Tracer, task: &TaskSpec, step_index: usize) -> Result<RouteDecision, GatewayError> {
    let req = ChatRequest::new(RoleModel::SolverModel, TemplateId::Router)
        .var("task_instruction", &task.task_instruction)
        .var("forensic_background", &task.forensic_background);
    let decision = parse_route(&gateway.complete(&req, tracer)?.text);
    if decision.defaulted {
        tracer.warn(format!("route reply {:?} unparseable; using tool route", decision.raw));
    }
    tracer.emit(EventKind::RouteDecided {
        step_index,
        route: decision.route,
        raw: decision.raw.clone(),
        defaulted: decision.defaulted,
    });
    Ok(decision)
}

/// Identity within budget; otherwise one compression call, hard-truncated
/// with the marker if the model still overshoots.
pub fn summarize_for_context(gateway: &Gateway, tracer: &Tracer, source: &str, text: &str, budget_words: usize) -> Result<String, GatewayError> {
    let budget = budget_words.max(MIN_CONTEXT_BUDGET);
    let before = word_count(text);
    if before <= budget {
        return Ok(text.to_string());
    }
    let req = ChatRequest::new(RoleModel::MemoryModel, TemplateId::Compress)
        .var("budget_words", budget.to_string())
        .var("text", text);
    let compressed = gateway.complete(&req, tracer)?.text.trim().to_string();
    let truncated = word_count(&compressed) > budget;
    let out = if truncated {
        truncate_words(&compressed, budget)
    } else {
        compressed
    };
    tracer.emit(EventKind::ContextCompressed {
        source: source.to_string(),
        words_before: before,
        words_after: word_count(&out),
        truncated,
    });
    Ok(out)
}

pub struct ExecuteInput<'a> {
    pub task: &'a TaskSpec,
    pub tool_trace: Option<&'a ToolTrace>,
    pub memory: &'a MemoryState,
    pub step_index: usize,
    pub origin: StepOrigin,
    pub context_budget_words: usize,
}

pub fn execute(gateway: &Gateway, tracer: &Tracer, input: ExecuteInput<'_>) -> Result<LocalResult, ExecutorError> {
    let evidence = match input.tool_trace.map(ToolTrace::evidence) {
        Some(e) if !e.is_empty() => e,
        _ => "none (direct inference)".to_string(),
    };
    let evidence = summarize_for_context(gateway, tracer, "tool_evidence", &evidence, input.context_budget_words)?;
    let memory = summarize_for_context(gateway, tracer, "memory", &input.memory.digest(), input.context_budget_words)?;
    let request = |feedback: &str| {
        ChatRequest::new(RoleModel::SolverModel, TemplateId::Executor)
            .var("task_instruction", &input.task.task_instruction)
            .var("forensic_background", &input.task.forensic_background)
            .var("tool_evidence", &evidence)
            .var("memory", &memory)
            .var("feedback", feedback)
    };
    let mut text = gateway.complete(&request(""), tracer)?.text.trim().to_string();
    if text.is_empty() {
        tracer.warn(format!("executor output empty for step {}; re-prompting", input.step_index));
        text = gateway
            .complete(&request("\nYour previous reply was empty. Answer the subtask.\n"), tracer)?
            .text
            .trim()
            .to_string();
    }
    if text.is_empty() {
        return Err(ExecutorError::Empty(input.step_index));
    }
    let result = LocalResult {
        step_index: input.step_index,
        origin: input.origin,
        text,
        used_tools: input.tool_trace.map(ToolTrace::used_tools).unwrap_or_default(),
        citations: input.tool_trace.map(ToolTrace::citations).unwrap_or_default(),
    };
    tracer.emit(EventKind::LocalResult { result: result.clone() });
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolverLimits {
    pub react_max_steps: usize,
    pub context_budget_words: usize,
}

/// Route, optional ReAct, execute. Executor failures are returned as
/// `Ok(Err(..))` so callers can flag the step incomplete and continue;
/// gateway failures outside the executor abort.
#[allow(clippy::too_many_arguments)]
pub fn solve_task(
    gateway: &Gateway,
    tracer: &Tracer,
    tools: &ToolRegistry,
    task: &TaskSpec,
    memory: &MemoryState,
    step_index: usize,
    origin: StepOrigin,
    limits: SolverLimits,
) -> Result<Result<LocalResult, ExecutorError>, GatewayError> {
    tracer.emit(EventKind::StepStarted {
        origin: origin.clone(),
        step_index,
        instruction: task.task_instruction.clone(),
    });
    let decision = route(gateway, tracer, task, step_index)?;
    let trace = match decision.route {
        Route::Direct => None,
        Route::Tool if tools.is_empty() => {
            tracer.warn("tool route chosen but no tools are registered");
            None
        }
        Route::Tool => {
            let env = ReactEnv { gateway, tracer, tools, step_index };
            Some(run_react(&env, task, &memory.digest(), limits.react_max_steps)?)
        }
    };
    let result = execute(
        gateway,
        tracer,
        ExecuteInput {
            task,
            tool_trace: trace.as_ref(),
            memory,
            step_index,
            origin,
            context_budget_words: limits.context_budget_words,
        },
    );
    match result {
        Err(ExecutorError::Gateway(e)) => Err(e),
        Err(e) => {
            tracer.emit(EventKind::ExecutorFailed {
                step_index,
                message: e.to_string(),
            });
            Ok(Err(e))
        }
        Ok(r) => Ok(Ok(r)),
    }
}
