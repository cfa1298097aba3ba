//! Bounded ReAct loop.
//!
//! Model replies use tagged lines, tags case-insensitive:
//!
//! ```text
//! THOUGHT: <reasoning>
//! TOOL: <tool name>
//! ARGS: <JSON object>
//! ```
//!
//! or `THOUGHT:` followed by `FINAL: <answer>`. `FINAL` wins if both a tool
//! call and a final answer appear. Untagged lines continue the previous tag.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::tools::{ToolContext, ToolRegistry};
use crate::gateway::{ChatRequest, Gateway, GatewayError, RoleModel, TemplateId};
use crate::planner::TaskSpec;
use crate::trace::{EventKind, Tracer};

pub const FAILURE_BUDGET: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    FinalMarker,
    StepCap,
    ToolFailureBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolStep {
    pub k: usize,
    pub thought: String,
    pub tool_name: String,
    pub tool_args: Value,
    pub raw_result: String,
    /// Exactly the text appended to the history for this step.
    pub observation: String,
    pub citations: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolTrace {
    pub initial_history: String,
    pub steps: Vec<ToolStep>,
    pub history: String,
    pub terminated_by: Termination,
    pub final_text: Option<String>,
}

impl ToolTrace {
    /// `h_k`: the initial history followed by the first `k` observations.
    pub fn history_at(&self, k: usize) -> String {
        let mut h = self.initial_history.clone();
        for s in self.steps.iter().take(k) {
            h.push_str(&s.observation);
        }
        h
    }

    pub fn used_tools(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in self.steps.iter().filter(|s| s.error.is_none()) {
            if !out.contains(&s.tool_name) {
                out.push(s.tool_name.clone());
            }
        }
        out
    }

    pub fn citations(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in self.steps.iter().flat_map(|s| &s.citations) {
            if !out.contains(c) {
                out.push(c.clone());
            }
        }
        out
    }

    /// Observation texts plus the final answer, as handed to the executor.
    pub fn evidence(&self) -> String {
        let mut e: String = self.steps.iter().map(|s| s.observation.as_str()).collect();
        if let Some(f) = &self.final_text {
            e.push_str(&format!("Final: {f}\n"));
        }
        e.trim_end().to_string()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReactReply {
    pub thought: String,
    pub tool: Option<String>,
    pub args: Option<String>,
    pub final_text: Option<String>,
}

pub fn parse_reply(text: &str) -> ReactReply {
    let mut r = ReactReply::default();
    let mut current: Option<&str> = None;
    for line in text.lines() {
        let trimmed = line.trim();
        let tag = trimmed.split_once(':').and_then(|(t, rest)| {
            let t = t.trim().trim_matches('*').to_ascii_uppercase();
            ["THOUGHT", "TOOL", "ARGS", "FINAL"]
                .into_iter()
                .find(|k| *k == t)
                .map(|k| (k, rest.trim()))
        });
        let (key, value) = match tag {
            Some((k, v)) => {
                current = Some(k);
                (k, v)
            }
            None => match current {
                Some(k) if !trimmed.is_empty() => (k, trimmed),
                _ => continue,
            },
        };
        let slot = match key {
            "THOUGHT" => Some(&mut r.thought),
            "TOOL" => Some(r.tool.get_or_insert_with(String::new)),
            "ARGS" => Some(r.args.get_or_insert_with(String::new)),
            _ => Some(r.final_text.get_or_insert_with(String::new)),
        };
        if let Some(slot) = slot {
            if !slot.is_empty() && !value.is_empty() {
                slot.push('\n');
            }
            slot.push_str(value);
        }
    }
    r
}

pub fn initial_history(task: &TaskSpec, memory_digest: &str) -> String {
    format!("Task: {}\nMemory:\n{}\n", task.task_instruction, memory_digest)
}

fn observation(k: usize, tool: &str, args: &Value, body: &str) -> String {
    format!("\n[Step {k}] {tool} {args}\n{body}\n")
}

/// Shared helpers the loop needs from its caller.
pub struct ReactEnv<'a> {
    pub gateway: &'a Gateway,
    pub tracer: &'a Tracer,
    pub tools: &'a ToolRegistry,
    pub step_index: usize,
}

/// Runs at most `max_steps` model turns. Halts on a final answer, on the
/// step cap, or after [`FAILURE_BUDGET`] consecutive failed steps (unknown
/// tool, bad arguments, tool error or a reply with neither tool nor final
/// answer).
pub fn run_react(env: &ReactEnv<'_>, task: &TaskSpec, memory_digest: &str, max_steps: usize) -> Result<ToolTrace, GatewayError> {
    let max_steps = max_steps.max(1);
    let initial = initial_history(task, memory_digest);
    let mut history = initial.clone();
    let mut steps = Vec::new();
    let mut consecutive_failures = 0;
    let mut final_text = None;
    let mut terminated_by = Termination::StepCap;
    for k in 1..=max_steps {
        let req = ChatRequest::new(RoleModel::SolverModel, TemplateId::React)
            .var("task_instruction", &task.task_instruction)
            .var("tools", env.tools.describe())
            .var("step", k.to_string())
            .var("max_steps", max_steps.to_string())
            .var("history", &history);
        let reply = parse_reply(&env.gateway.complete(&req, env.tracer)?.text);
        if let Some(f) = reply.final_text.filter(|f| !f.is_empty()) {
            final_text = Some(f);
            terminated_by = Termination::FinalMarker;
            break;
        }
        let tool_name = reply.tool.clone().unwrap_or_default();
        let args_text = reply.args.clone().unwrap_or_else(|| "{}".into());
        let (tool_args, outcome) = match serde_json::from_str::<Value>(&args_text) {
            _ if tool_name.is_empty() => (Value::Null, Err("reply contained neither a tool call nor a final answer".to_string())),
            Err(e) => (Value::String(args_text.clone()), Err(format!("ARGS is not valid JSON: {e}"))),
            Ok(args) => {
                let ctx = ToolContext {
                    gateway: env.gateway,
                    tracer: env.tracer,
                    task_instruction: &task.task_instruction,
                    thought: &reply.thought,
                };
                let r = env.tools.call(&ctx, &tool_name, &args).map_err(|e| e.to_string());
                (args, r)
            }
        };
        let step = match outcome {
            Ok(out) => {
                consecutive_failures = 0;
                ToolStep {
                    k,
                    thought: reply.thought,
                    observation: observation(k, &tool_name, &tool_args, &out.text),
                    tool_name,
                    tool_args,
                    raw_result: out.text,
                    citations: out.citations,
                    error: None,
                }
            }
            Err(message) => {
                consecutive_failures += 1;
                tracing::debug!(k, %message, "tool step failed");
                ToolStep {
                    k,
                    thought: reply.thought,
                    observation: observation(k, &tool_name, &tool_args, &format!("ERROR: {message}")),
                    tool_name,
                    tool_args,
                    raw_result: String::new(),
                    citations: vec![],
                    error: Some(message),
                }
            }
        };
        history.push_str(&step.observation);
        env.tracer.emit(EventKind::ToolStep {
            step_index: env.step_index,
            step: step.clone(),
        });
        steps.push(step);
        if consecutive_failures >= FAILURE_BUDGET {
            terminated_by = Termination::ToolFailureBudget;
            break;
        }
    }
    env.tracer.emit(EventKind::ReactFinished {
        step_index: env.step_index,
        terminated_by,
        steps: steps.len(),
        history: history.clone(),
    });
    Ok(ToolTrace {
        initial_history: initial,
        steps,
        history,
        terminated_by,
        final_text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tool_call() {
        let r = parse_reply("THOUGHT: check textbook\nTOOL: kb_lookup\nARGS: {\"query\": \"aorta\"}");
        assert_eq!(r.thought, "check textbook");
        assert_eq!(r.tool.as_deref(), Some("kb_lookup"));
        assert_eq!(r.args.as_deref(), Some("{\"query\": \"aorta\"}"));
        assert_eq!(r.final_text, None);
    }

    #[test]
    fn final_and_continuation_lines() {
        let r = parse_reply("thought: a\nb\n**FINAL**: done\nmore");
        assert_eq!(r.thought, "a\nb");
        assert_eq!(r.final_text.as_deref(), Some("done\nmore"));
    }

    #[test]
    fn untagged_reply_is_empty() {
        assert_eq!(parse_reply("hello"), ReactReply::default());
    }
}
