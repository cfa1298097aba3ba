//! Reflection memory: filter each local result, condense it under a word
//! bound, append it, and audit the accumulated findings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError, RoleModel, TemplateId};
use crate::planner::ExecutionPlan;
use crate::text::{segment, truncate_words, word_count, SegmentPolicy};
use crate::trace::{EventKind, Tracer};

pub const DEFAULT_WORD_BOUND: usize = 120;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemoryError {
    #[error("summary has {words} words; bound is {bound}")]
    OverBound { words: usize, bound: usize },
    #[error("empty summary")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub summary_id: String,
    pub text: String,
    pub source_step: usize,
    pub word_count: usize,
}

/// Append-only; [`MemoryState::update`] returns a new value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryState {
    pub entries: Vec<MemoryEntry>,
    pub word_bound: usize,
}

impl MemoryState {
    pub fn new(word_bound: usize) -> Self {
        MemoryState {
            entries: Vec::new(),
            word_bound: word_bound.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn update(&self, summary: &str, source_step: usize) -> Result<MemoryState, MemoryError> {
        let text = summary.trim();
        if text.is_empty() {
            return Err(MemoryError::Empty);
        }
        let words = word_count(text);
        if words > self.word_bound {
            return Err(MemoryError::OverBound {
                words,
                bound: self.word_bound,
            });
        }
        let mut next = self.clone();
        next.entries.push(MemoryEntry {
            summary_id: format!("m{}", self.entries.len() + 1),
            text: text.to_string(),
            source_step,
            word_count: words,
        });
        Ok(next)
    }

    /// `[m1] text` per line, or `(empty)`.
    pub fn digest(&self) -> String {
        if self.entries.is_empty() {
            return "(empty)".to_string();
        }
        self.entries
            .iter()
            .map(|e| format!("[{}] {}", e.summary_id, e.text))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Redundant,
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedSentence {
    pub sentence: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterResult {
    pub retained: Vec<String>,
    pub dropped: Vec<DroppedSentence>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Keep,
    Redundant,
    Inconsistent,
}

/// Parses `<n>: KEEP | REDUNDANT | INCONSISTENT` lines. `None` when no line
/// matches.
fn parse_verdicts(text: &str) -> Option<Vec<(usize, Verdict)>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let l = line.trim().trim_start_matches(['-', '*', ' ']);
        let digits: String = l.chars().take_while(char::is_ascii_digit).collect();
        let Ok(n) = digits.parse::<usize>() else { continue };
        let rest = l[digits.len()..].trim_start_matches([':', '.', ')', '-', ' ', '\t']);
        let word: String = rest.chars().take_while(|c| c.is_ascii_alphabetic()).collect::<String>().to_ascii_uppercase();
        let v = match word.as_str() {
            "KEEP" => Verdict::Keep,
            "REDUNDANT" => Verdict::Redundant,
            "INCONSISTENT" => Verdict::Inconsistent,
            _ => continue,
        };
        out.push((n, v));
    }
    (!out.is_empty()).then_some(out)
}

/// Sentences already verbatim in memory are dropped without a model call;
/// the rest are judged by the memory model. Unjudged sentences are kept, and
/// an unparseable verdict keeps everything.
pub fn filter(gateway: &Gateway, tracer: &Tracer, memory: &MemoryState, output: &str, background: &str) -> Result<FilterResult, GatewayError> {
    let sentences = segment(output, SegmentPolicy::Sentence);
    let mut verdicts: Vec<Option<Verdict>> = sentences
        .iter()
        .map(|s| memory.entries.iter().any(|e| e.text.contains(s.as_str())).then_some(Verdict::Redundant))
        .collect();
    let candidates: Vec<usize> = (0..sentences.len()).filter(|i| verdicts[*i].is_none()).collect();
    if !candidates.is_empty() {
        let numbered = candidates
            .iter()
            .enumerate()
            .map(|(n, i)| format!("{}. {}", n + 1, sentences[*i]))
            .collect::<Vec<_>>()
            .join("\n");
        let req = ChatRequest::new(RoleModel::MemoryModel, TemplateId::Filter)
            .var("memory", memory.digest())
            .var("output", numbered)
            .var("background", background);
        let reply = gateway.complete(&req, tracer)?;
        match parse_verdicts(&reply.text) {
            Some(list) => {
                for (n, v) in list {
                    if let Some(&i) = n.checked_sub(1).and_then(|n| candidates.get(n)) {
                        verdicts[i] = Some(v);
                    }
                }
            }
            None => tracer.warn("filter output unparseable; retaining all sentences"),
        }
    }
    let mut result = FilterResult {
        retained: Vec::new(),
        dropped: Vec::new(),
    };
    for (s, v) in sentences.into_iter().zip(verdicts) {
        match v {
            Some(Verdict::Redundant) => result.dropped.push(DroppedSentence {
                sentence: s,
                reason: DropReason::Redundant,
            }),
            Some(Verdict::Inconsistent) => result.dropped.push(DroppedSentence {
                sentence: s,
                reason: DropReason::Inconsistent,
            }),
            _ => result.retained.push(s),
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TidyOutcome {
    pub summary: String,
    pub attempts: u32,
    pub truncated: bool,
}

/// One call; one re-prompt restating the bound if it overshoots; then hard
/// truncation at `word_bound` words.
pub fn tidy(gateway: &Gateway, tracer: &Tracer, retained: &[String], background: &str, word_bound: usize) -> Result<TidyOutcome, GatewayError> {
    let findings = retained.join("\n");
    let request = |feedback: String| {
        ChatRequest::new(RoleModel::MemoryModel, TemplateId::Tidy)
            .var("findings", &findings)
            .var("background", background)
            .var("word_bound", word_bound.to_string())
            .var("feedback", feedback)
    };
    let mut summary = gateway.complete(&request(String::new()), tracer)?.text.trim().to_string();
    let mut attempts = 1;
    let words = word_count(&summary);
    if words > word_bound {
        attempts = 2;
        let feedback = format!("\nYour previous summary had {words} words. The limit is {word_bound} words; rewrite it within the limit.\n");
        summary = gateway.complete(&request(feedback), tracer)?.text.trim().to_string();
    }
    if word_count(&summary) == 0 {
        tracer.warn("tidy output empty; summarizing retained sentences directly");
        summary = findings.clone();
    }
    let truncated = word_count(&summary) > word_bound;
    if truncated {
        summary = truncate_words(&summary, word_bound);
    }
    Ok(TidyOutcome {
        summary,
        attempts,
        truncated,
    })
}

/// Filter, tidy and append one local result. An empty retained set leaves
/// memory unchanged.
pub fn reflect(
    gateway: &Gateway,
    tracer: &Tracer,
    memory: &MemoryState,
    output: &str,
    background: &str,
    step_index: usize,
) -> Result<MemoryState, GatewayError> {
    let filtered = filter(gateway, tracer, memory, output, background)?;
    tracer.emit(EventKind::FilterApplied {
        step_index,
        result: filtered.clone(),
    });
    if filtered.retained.is_empty() {
        tracer.emit(EventKind::MemorySkipped {
            step_index,
            reason: "no sentences retained".into(),
        });
        return Ok(memory.clone());
    }
    let t = tidy(gateway, tracer, &filtered.retained, background, memory.word_bound)?;
    tracer.emit(EventKind::SummaryBounded {
        step_index,
        attempts: t.attempts,
        truncated: t.truncated,
    });
    let next = match memory.update(&t.summary, step_index) {
        Ok(m) => m,
        Err(e) => {
            tracer.emit(EventKind::MemorySkipped {
                step_index,
                reason: e.to_string(),
            });
            return Ok(memory.clone());
        }
    };
    tracer.emit(EventKind::MemoryUpdated { memory: next.clone() });
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    Gap,
    Contradiction,
}

impl FindingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingKind::Gap => "gap",
            FindingKind::Contradiction => "contradiction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFinding {
    pub kind: FindingKind,
    pub description: String,
    pub related_steps: Vec<usize>,
}

/// Step numbers mentioned as `step N` / `steps N, M` in a description.
fn related_steps(description: &str) -> Vec<usize> {
    let lower = description.to_lowercase();
    let mut out = Vec::new();
    for (i, _) in lower.match_indices("step") {
        let mut rest = lower[i + 4..].trim_start_matches('s');
        loop {
            rest = rest.trim_start_matches([' ', ',', '#']);
            if let Some(r) = rest.strip_prefix("and ") {
                rest = r;
                continue;
            }
            let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
            let Ok(n) = digits.parse::<usize>() else { break };
            if !out.contains(&n) {
                out.push(n);
            }
            rest = &rest[digits.len()..];
        }
    }
    out
}

pub fn parse_audit(text: &str) -> Option<Vec<AuditFinding>> {
    let mut findings = Vec::new();
    let mut no_issues = false;
    for line in text.lines() {
        let l = line.trim().trim_start_matches(['-', '*', ' ']);
        if l.to_ascii_uppercase().starts_with("NO_ISSUES") {
            no_issues = true;
            continue;
        }
        let Some((tag, desc)) = l.split_once(':') else { continue };
        let kind = match tag.trim().to_ascii_uppercase().as_str() {
            "GAP" => FindingKind::Gap,
            "CONTRADICTION" => FindingKind::Contradiction,
            _ => continue,
        };
        let description = desc.trim().to_string();
        if description.is_empty() {
            continue;
        }
        findings.push(AuditFinding {
            kind,
            related_steps: related_steps(&description),
            description,
        });
    }
    (no_issues || !findings.is_empty()).then_some(findings)
}

pub fn audit(
    gateway: &Gateway,
    tracer: &Tracer,
    memory: &MemoryState,
    plan: &ExecutionPlan,
    background: &str,
    round: u32,
) -> Result<Vec<AuditFinding>, GatewayError> {
    let plan_text = plan
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s.task_instruction))
        .collect::<Vec<_>>()
        .join("\n");
    let req = ChatRequest::new(RoleModel::MemoryModel, TemplateId::Audit)
        .var("memory", memory.digest())
        .var("plan", plan_text)
        .var("background", background);
    let reply = gateway.complete(&req, tracer)?;
    let findings = parse_audit(&reply.text).unwrap_or_else(|| {
        tracer.warn("audit output unparseable; treating as no findings");
        Vec::new()
    });
    tracer.emit(EventKind::AuditCompleted {
        round,
        findings: findings.clone(),
    });
    Ok(findings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn update_is_append_only_and_bounded() {
        let m0 = MemoryState::new(3);
        let m1 = m0.update("one two three", 0).unwrap();
        assert!(m0.is_empty());
        assert_eq!(m1.entries[0].summary_id, "m1");
        assert_eq!(m1.entries[0].word_count, 3);
        let m2 = m1.update("four", 1).unwrap();
        assert_eq!(m2.entries[0], m1.entries[0]);
        assert_eq!(m1.update("a b c d", 2), Err(MemoryError::OverBound { words: 4, bound: 3 }));
    }

    #[test]
    fn verdict_parsing() {
        let v = parse_verdicts("1: KEEP\n2. redundant\n - 3: Inconsistent because ...\nnoise").unwrap();
        assert_eq!(v, vec![(1, Verdict::Keep), (2, Verdict::Redundant), (3, Verdict::Inconsistent)]);
        assert_eq!(parse_verdicts("all good"), None);
    }

    #[test]
    fn audit_parsing() {
        assert_eq!(parse_audit("NO_ISSUES"), Some(vec![]));
        let f = parse_audit("GAP: toxicology unexamined (steps 2, 3)\nCONTRADICTION: time of death conflicts with step 1").unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].kind, FindingKind::Gap);
        assert_eq!(f[0].related_steps, vec![2, 3]);
        assert_eq!(f[1].related_steps, vec![1]);
        assert_eq!(parse_audit("looks fine"), None);
    }
}
