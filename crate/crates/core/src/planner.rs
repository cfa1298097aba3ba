//! Hierarchical task decomposition: build a reasoning tree, select the
//! critical nodes, adapt them and emit an ordered execution plan.
//!
//! Outline grammar (model output of the tree prompt):
//!
//! ```text
//! [root] Determine the cause of death
//!   [n1] Evaluate autopsy findings
//!     [n2] Assess cardiac pathology
//!   [n3] Review toxicology
//! ```
//!
//! One node per line; each level is indented two spaces deeper than its
//! parent; an optional `- ` or `* ` bullet may precede the id. Blank lines and
//! code-fence lines are ignored. The first node is the only depth-0 node.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError, RoleModel, TemplateId};
use crate::memory::AuditFinding;
use crate::trace::{EventKind, Tracer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("plan output unparseable after repair: {}", errors.join("; "))]
    Parse { errors: Vec<String> },
    #[error("empty case background")]
    EmptyBackground,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanNode {
    pub node_id: String,
    pub instruction: String,
    pub depth: u32,
    pub children: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningTree {
    pub root: String,
    pub nodes: BTreeMap<String, PlanNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_instruction: String,
    pub forensic_background: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub steps: Vec<TaskSpec>,
    /// `origin[i]` is the adapted node behind `steps[i]`.
    pub origin: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerLimits {
    pub max_depth: u32,
    pub max_tree_nodes: usize,
}

impl Default for PlannerLimits {
    fn default() -> Self {
        PlannerLimits {
            max_depth: 4,
            max_tree_nodes: 40,
        }
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-')
}

/// Parses the outline grammar into a tree; every violation is reported.
pub fn parse_outline(text: &str) -> Result<ReasoningTree, Vec<String>> {
    let mut errors = Vec::new();
    let mut order: Vec<PlanNode> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    let mut ids = BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with("```") {
            continue;
        }
        let body = raw.trim_start_matches(' ');
        let indent = raw.len() - body.len();
        if body.starts_with('\t') {
            errors.push(format!("line {lineno}: tab indentation"));
            continue;
        }
        if indent % 2 != 0 {
            errors.push(format!("line {lineno}: indentation of {indent} spaces is not a multiple of 2"));
            continue;
        }
        let body = body
            .strip_prefix("- ")
            .or_else(|| body.strip_prefix("* "))
            .unwrap_or(body)
            .trim_end();
        let Some(rest) = body.strip_prefix('[') else {
            errors.push(format!("line {lineno}: expected \"[<node_id>] <instruction>\""));
            continue;
        };
        let Some((id, instruction)) = rest.split_once(']') else {
            errors.push(format!("line {lineno}: unterminated node id"));
            continue;
        };
        let (id, instruction) = (id.trim(), instruction.trim());
        if !valid_id(id) {
            errors.push(format!("line {lineno}: invalid node id {id:?}"));
            continue;
        }
        if instruction.is_empty() {
            errors.push(format!("line {lineno}: node {id} has no instruction"));
            continue;
        }
        let depth = (indent / 2) as u32;
        if order.is_empty() && depth != 0 {
            errors.push(format!("line {lineno}: first node must not be indented"));
            continue;
        }
        if !order.is_empty() && depth == 0 {
            errors.push(format!("line {lineno}: second root node {id}"));
            continue;
        }
        if depth as usize > stack.len() {
            errors.push(format!("line {lineno}: node {id} skips a level"));
            continue;
        }
        if !ids.insert(id.to_string()) {
            errors.push(format!("line {lineno}: duplicate node id {id}"));
            continue;
        }
        stack.truncate(depth as usize);
        if let Some(&parent) = stack.last() {
            order[parent].children.push(id.to_string());
        }
        stack.push(order.len());
        order.push(PlanNode {
            node_id: id.to_string(),
            instruction: instruction.to_string(),
            depth,
            children: Vec::new(),
        });
    }
    if order.is_empty() && errors.is_empty() {
        errors.push("no nodes found".to_string());
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    let root = order[0].node_id.clone();
    Ok(ReasoningTree {
        root,
        nodes: order.into_iter().map(|n| (n.node_id.clone(), n)).collect(),
    })
}

impl ReasoningTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_depth(&self) -> u32 {
        self.nodes.values().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    /// Node ids of the subtree at `id` in depth-first pre-order.
    pub fn preorder_from(&self, id: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack = vec![id.to_string()];
        while let Some(cur) = stack.pop() {
            if let Some(n) = self.nodes.get(&cur) {
                stack.extend(n.children.iter().rev().cloned());
                out.push(cur);
            }
        }
        out
    }

    pub fn preorder(&self) -> Vec<String> {
        self.preorder_from(&self.root)
    }

    /// Renders the subtree at `id` in the outline grammar, rebased to
    /// depth 0.
    pub fn outline_from(&self, id: &str) -> String {
        let base = self.nodes.get(id).map(|n| n.depth).unwrap_or(0);
        self.preorder_from(id)
            .iter()
            .map(|n| {
                let node = &self.nodes[n];
                format!(
                    "{}[{}] {}\n",
                    "  ".repeat((node.depth - base) as usize),
                    node.node_id,
                    node.instruction
                )
            })
            .collect()
    }

    pub fn outline(&self) -> String {
        self.outline_from(&self.root)
    }

    /// Removes nodes deeper than `max_depth`; returns their ids in pre-order.
    pub fn truncate_depth(&mut self, max_depth: u32) -> Vec<String> {
        let dropped: Vec<String> = self
            .preorder()
            .into_iter()
            .filter(|id| self.nodes[id].depth > max_depth)
            .collect();
        self.remove(&dropped);
        dropped
    }

    /// Keeps the first `max_nodes` nodes in pre-order; a pre-order prefix is
    /// always a connected subtree.
    pub fn truncate_nodes(&mut self, max_nodes: usize) -> Vec<String> {
        let dropped: Vec<String> = self.preorder().into_iter().skip(max_nodes.max(1)).collect();
        self.remove(&dropped);
        dropped
    }

    fn remove(&mut self, ids: &[String]) {
        let gone: BTreeSet<&String> = ids.iter().collect();
        for id in ids {
            self.nodes.remove(id);
        }
        for n in self.nodes.values_mut() {
            n.children.retain(|c| !gone.contains(c));
        }
    }

    /// Unique ids, single root at depth 0, children one level deeper than
    /// their parent, every node reachable exactly once.
    pub fn validate(&self, max_depth: u32) -> Result<(), String> {
        let root = self.nodes.get(&self.root).ok_or("root missing")?;
        if root.depth != 0 {
            return Err("root depth is not 0".into());
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.root.clone()];
        while let Some(cur) = stack.pop() {
            if !seen.insert(cur.clone()) {
                return Err(format!("node {cur} reached twice"));
            }
            let n = self.nodes.get(&cur).ok_or_else(|| format!("dangling child {cur}"))?;
            if n.depth > max_depth {
                return Err(format!("node {cur} deeper than {max_depth}"));
            }
            for c in &n.children {
                let child = self.nodes.get(c).ok_or_else(|| format!("dangling child {c}"))?;
                if child.depth != n.depth + 1 {
                    return Err(format!("node {c} depth inconsistent with parent {cur}"));
                }
                stack.push(c.clone());
            }
        }
        if seen.len() != self.nodes.len() {
            return Err("unreachable nodes present".into());
        }
        Ok(())
    }
}

fn findings_block(findings: &[AuditFinding]) -> String {
    if findings.is_empty() {
        return "none".to_string();
    }
    findings
        .iter()
        .map(|f| format!("- [{}] {}", f.kind.as_str(), f.description))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One model call, plus at most one repair re-prompt when the outline does
/// not parse. Over-deep or oversized trees are truncated with a warning.
pub fn build_tree(
    gateway: &Gateway,
    tracer: &Tracer,
    background: &str,
    findings: &[AuditFinding],
    limits: PlannerLimits,
) -> Result<ReasoningTree, PlanError> {
    if background.trim().is_empty() {
        return Err(PlanError::EmptyBackground);
    }
    let request = |feedback: String| {
        ChatRequest::new(RoleModel::PlannerModel, TemplateId::Tree)
            .var("background", background)
            .var("findings", findings_block(findings))
            .var("max_depth", limits.max_depth.to_string())
            .var("feedback", feedback)
    };
    let first = gateway.complete(&request(String::new()), tracer)?;
    let mut tree = match parse_outline(&first.text) {
        Ok(t) => t,
        Err(errors) => {
            tracer.emit(EventKind::PlanRepair { errors: errors.clone() });
            let feedback = format!(
                "\nYour previous reply could not be parsed.\n\nPrevious reply:\n{}\n\nErrors:\n{}\n\nReply again with only the outline.\n",
                first.text,
                errors.iter().map(|e| format!("- {e}")).collect::<Vec<_>>().join("\n")
            );
            let second = gateway.complete(&request(feedback), tracer)?;
            parse_outline(&second.text).map_err(|errors| PlanError::Parse { errors })?
        }
    };
    let dropped = tree.truncate_depth(limits.max_depth);
    if !dropped.is_empty() {
        tracer.warn(format!(
            "reasoning tree deeper than {} levels; dropped {} nodes",
            limits.max_depth,
            dropped.len()
        ));
        tracer.emit(EventKind::DepthTruncated {
            max_depth: limits.max_depth,
            dropped,
        });
    }
    let dropped = tree.truncate_nodes(limits.max_tree_nodes);
    if !dropped.is_empty() {
        tracer.warn(format!(
            "reasoning tree has more than {} nodes; dropped {}",
            limits.max_tree_nodes,
            dropped.join(", ")
        ));
    }
    tracer.emit(EventKind::TreeBuilt { tree: tree.clone() });
    Ok(tree)
}

fn subtree_listing(tree: &ReasoningTree) -> String {
    tree.preorder()
        .iter()
        .map(|id| {
            let n = &tree.nodes[id];
            format!("Node [{}] {}\nSubtree:\n{}", n.node_id, n.instruction, tree.outline_from(id))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses a `SELECTED:` line into ids; `None` if there is no such line.
pub fn parse_selection(text: &str) -> Option<Vec<String>> {
    let line = text.lines().find_map(|l| {
        let l = l.trim().trim_start_matches(['*', '-', ' ']);
        let upper = l.get(..9)?.to_ascii_uppercase();
        (upper == "SELECTED:").then(|| &l[9..])
    })?;
    Some(
        line.split([',', ' ', ';'])
            .map(|s| s.trim().trim_matches(['[', ']', '.', '"', '`']))
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect(),
    )
}

/// Selected ids in tree pre-order. Unknown ids are dropped; an empty or
/// unusable selection falls back to every depth-1 node (or the root of a
/// childless tree).
pub fn select_nodes(gateway: &Gateway, tracer: &Tracer, tree: &ReasoningTree, background: &str) -> Result<Vec<String>, PlanError> {
    let req = ChatRequest::new(RoleModel::PlannerModel, TemplateId::Select)
        .var("background", background)
        .var("tree", subtree_listing(tree));
    let reply = gateway.complete(&req, tracer)?;
    let parsed = parse_selection(&reply.text);
    let mut unknown = Vec::new();
    let mut chosen = BTreeSet::new();
    match &parsed {
        Some(ids) => {
            for id in ids {
                if tree.contains(id) {
                    chosen.insert(id.clone());
                } else if !unknown.contains(id) {
                    unknown.push(id.clone());
                }
            }
            if !unknown.is_empty() {
                tracer.warn(format!("selection referenced unknown nodes: {}", unknown.join(", ")));
            }
        }
        None => tracer.warn("selection output unparseable"),
    }
    let fallback = chosen.is_empty();
    if fallback {
        chosen = tree
            .nodes
            .values()
            .filter(|n| n.depth == 1)
            .map(|n| n.node_id.clone())
            .collect();
        if chosen.is_empty() {
            chosen.insert(tree.root.clone());
        }
        tracer.warn("empty node selection; falling back to all depth-1 nodes");
    }
    let selected: Vec<String> = tree.preorder().into_iter().filter(|id| chosen.contains(id)).collect();
    tracer.emit(EventKind::NodesSelected {
        selected: selected.clone(),
        unknown,
        fallback,
    });
    Ok(selected)
}

/// One adaptation call per selected node, in pre-order.
pub fn adapt_nodes(
    gateway: &Gateway,
    tracer: &Tracer,
    tree: &ReasoningTree,
    selected: &[String],
    background: &str,
) -> Result<BTreeMap<String, String>, PlanError> {
    let mut adapted = BTreeMap::new();
    for id in selected {
        let Some(node) = tree.nodes.get(id) else { continue };
        let req = ChatRequest::new(RoleModel::PlannerModel, TemplateId::Adapt)
            .var("background", background)
            .var("node", format!("[{}] {}", node.node_id, node.instruction))
            .var("subtree", tree.outline_from(id));
        let reply = gateway.complete(&req, tracer)?;
        let text = reply.text.trim();
        let fallback = text.is_empty();
        let instruction = if fallback {
            tracer.warn(format!("empty adaptation for node {id}; keeping original instruction"));
            node.instruction.clone()
        } else {
            text.to_string()
        };
        tracer.emit(EventKind::NodeAdapted {
            node_id: id.clone(),
            instruction: instruction.clone(),
            fallback,
        });
        adapted.insert(id.clone(), instruction);
    }
    Ok(adapted)
}

/// Adapted nodes in depth-first pre-order of the tree.
pub fn linearize(tree: &ReasoningTree, adapted: &BTreeMap<String, String>, forensic_background: &str) -> ExecutionPlan {
    let origin: Vec<String> = tree.preorder().into_iter().filter(|id| adapted.contains_key(id)).collect();
    let steps = origin
        .iter()
        .map(|id| TaskSpec {
            task_instruction: adapted[id].clone(),
            forensic_background: forensic_background.to_string(),
        })
        .collect();
    ExecutionPlan { steps, origin }
}

/// Full planning phase: tree, selection, adaptation, linearization.
pub fn plan(
    gateway: &Gateway,
    tracer: &Tracer,
    background: &str,
    findings: &[AuditFinding],
    limits: PlannerLimits,
) -> Result<(ReasoningTree, ExecutionPlan), PlanError> {
    let tree = build_tree(gateway, tracer, background, findings, limits)?;
    let selected = select_nodes(gateway, tracer, &tree, background)?;
    let adapted = adapt_nodes(gateway, tracer, &tree, &selected, background)?;
    let plan = linearize(&tree, &adapted, background);
    tracer.emit(EventKind::PlanLinearized { plan: plan.clone() });
    Ok((tree, plan))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEVEN: &str = "[root] Determine cause\n  [n1] Autopsy\n    [n2] Heart\n    [n3] Lungs\n  [n4] Toxicology\n    [n5] Blood\n  [n6] Scene\n";

    #[test]
    fn parses_seven_node_outline() {
        let t = parse_outline(SEVEN).unwrap();
        assert_eq!(t.len(), 7);
        assert_eq!(t.max_depth(), 2);
        assert_eq!(t.nodes["n1"].children, vec!["n2", "n3"]);
        assert_eq!(t.preorder(), vec!["root", "n1", "n2", "n3", "n4", "n5", "n6"]);
        assert_eq!(parse_outline(&t.outline()).unwrap(), t);
        t.validate(4).unwrap();
    }

    #[test]
    fn tolerates_fences_and_bullets() {
        let t = parse_outline("```\n- [r] Root\n  - [a] A\n```\n").unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn rejects_malformed_outlines() {
        for bad in [
            "no brackets",
            "  [a] indented root",
            "[r] R\n    [a] skips",
            "[r] R\n [a] odd",
            "[r] R\n  [a] A\n  [a] dup",
            "[r] R\n[s] second root",
            "[r] R\n  [a]",
            "[bad id] x",
            "",
        ] {
            assert!(parse_outline(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn truncation_keeps_a_valid_tree() {
        let deep = "[r] R\n  [a] A\n    [b] B\n      [c] C\n        [d] D\n          [e] E\n            [f] F\n";
        let mut t = parse_outline(deep).unwrap();
        assert_eq!(t.truncate_depth(4), vec!["e", "f"]);
        assert_eq!(t.max_depth(), 4);
        t.validate(4).unwrap();
        let mut t = parse_outline(SEVEN).unwrap();
        assert_eq!(t.truncate_nodes(3), vec!["n3", "n4", "n5", "n6"]);
        t.validate(4).unwrap();
    }

    #[test]
    fn selection_line_parsing() {
        assert_eq!(parse_selection("SELECTED: n2, n5"), Some(vec!["n2".into(), "n5".into()]));
        assert_eq!(parse_selection("Reasoning...\nselected: [n2] [n5]."), Some(vec!["n2".into(), "n5".into()]));
        assert_eq!(parse_selection("SELECTED:"), Some(vec![]));
        assert_eq!(parse_selection("n2"), None);
    }

    #[test]
    fn linearize_is_preorder() {
        let t = parse_outline(SEVEN).unwrap();
        let mut adapted = BTreeMap::new();
        adapted.insert("n5".to_string(), "five".to_string());
        adapted.insert("n1".to_string(), "one".to_string());
        adapted.insert("n2".to_string(), "two".to_string());
        let plan = linearize(&t, &adapted, "bg");
        assert_eq!(plan.origin, vec!["n1", "n2", "n5"]);
        assert_eq!(plan.steps[0].task_instruction, "one");
        assert_eq!(plan.steps[0].forensic_background, "bg");
    }
}
