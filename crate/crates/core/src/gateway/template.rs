//! Prompt templates with `{{name}}` placeholders.
//!
//! Template bodies are plain-text assets under `templates/`. A file may open
//! with a `---` delimited header block holding notes for editors; the header
//! is not part of the rendered prompt.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateId {
    #[serde(rename = "p_tree")]
    Tree,
    #[serde(rename = "p_select")]
    Select,
    #[serde(rename = "p_adapt")]
    Adapt,
    #[serde(rename = "p_router")]
    Router,
    #[serde(rename = "p_react")]
    React,
    #[serde(rename = "p_executor")]
    Executor,
    #[serde(rename = "p_compress")]
    Compress,
    #[serde(rename = "p_medical")]
    Medical,
    #[serde(rename = "p_filter")]
    Filter,
    #[serde(rename = "p_tidy")]
    Tidy,
    #[serde(rename = "p_audit")]
    Audit,
    #[serde(rename = "p_gap")]
    Gap,
    #[serde(rename = "p_summary")]
    Summary,
    #[serde(rename = "p_revise")]
    Revise,
    #[serde(rename = "p_conclude")]
    Conclude,
}

impl TemplateId {
    pub const ALL: [TemplateId; 15] = [
        TemplateId::Tree,
        TemplateId::Select,
        TemplateId::Adapt,
        TemplateId::Router,
        TemplateId::React,
        TemplateId::Executor,
        TemplateId::Compress,
        TemplateId::Medical,
        TemplateId::Filter,
        TemplateId::Tidy,
        TemplateId::Audit,
        TemplateId::Gap,
        TemplateId::Summary,
        TemplateId::Revise,
        TemplateId::Conclude,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Tree => "p_tree",
            TemplateId::Select => "p_select",
            TemplateId::Adapt => "p_adapt",
            TemplateId::Router => "p_router",
            TemplateId::React => "p_react",
            TemplateId::Executor => "p_executor",
            TemplateId::Compress => "p_compress",
            TemplateId::Medical => "p_medical",
            TemplateId::Filter => "p_filter",
            TemplateId::Tidy => "p_tidy",
            TemplateId::Audit => "p_audit",
            TemplateId::Gap => "p_gap",
            TemplateId::Summary => "p_summary",
            TemplateId::Revise => "p_revise",
            TemplateId::Conclude => "p_conclude",
        }
    }

    fn default_body(self) -> &'static str {
        match self {
            TemplateId::Tree => include_str!("../../templates/p_tree.txt"),
            TemplateId::Select => include_str!("../../templates/p_select.txt"),
            TemplateId::Adapt => include_str!("../../templates/p_adapt.txt"),
            TemplateId::Router => include_str!("../../templates/p_router.txt"),
            TemplateId::React => include_str!("../../templates/p_react.txt"),
            TemplateId::Executor => include_str!("../../templates/p_executor.txt"),
            TemplateId::Compress => include_str!("../../templates/p_compress.txt"),
            TemplateId::Medical => include_str!("../../templates/p_medical.txt"),
            TemplateId::Filter => include_str!("../../templates/p_filter.txt"),
            TemplateId::Tidy => include_str!("../../templates/p_tidy.txt"),
            TemplateId::Audit => include_str!("../../templates/p_audit.txt"),
            TemplateId::Gap => include_str!("../../templates/p_gap.txt"),
            TemplateId::Summary => include_str!("../../templates/p_summary.txt"),
            TemplateId::Revise => include_str!("../../templates/p_revise.txt"),
            TemplateId::Conclude => include_str!("../../templates/p_conclude.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| GatewayError::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Var(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub template_id: TemplateId,
    pub body: String,
    pub required_vars: BTreeSet<String>,
    pieces: Vec<Piece>,
}

fn strip_header(text: &str) -> &str {
    let Some(rest) = text.strip_prefix("---\n") else {
        return text;
    };
    match rest.find("\n---\n") {
        Some(end) => &rest[end + 5..],
        None => text,
    }
}

impl PromptTemplate {
    pub fn parse(template_id: TemplateId, source: &str) -> Result<Self, GatewayError> {
        let body = strip_header(source).to_string();
        let mut pieces = Vec::new();
        let mut required = BTreeSet::new();
        let mut rest = body.as_str();
        while let Some(open) = rest.find("{{") {
            let Some(close) = rest[open + 2..].find("}}") else {
                return Err(GatewayError::Template(format!(
                    "{template_id}: unterminated placeholder"
                )));
            };
            if open > 0 {
                pieces.push(Piece::Text(rest[..open].to_string()));
            }
            let name = rest[open + 2..open + 2 + close].trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(GatewayError::Template(format!(
                    "{template_id}: bad placeholder name {name:?}"
                )));
            }
            required.insert(name.to_string());
            pieces.push(Piece::Var(name.to_string()));
            rest = &rest[open + 2 + close + 2..];
        }
        if !rest.is_empty() {
            pieces.push(Piece::Text(rest.to_string()));
        }
        Ok(PromptTemplate {
            template_id,
            body,
            required_vars: required,
            pieces,
        })
    }

    /// Substitutes every placeholder verbatim; the variable set must equal
    /// `required_vars` exactly.
    pub fn render(&self, vars: &BTreeMap<String, String>) -> Result<String, GatewayError> {
        let missing: Vec<String> = self
            .required_vars
            .iter()
            .filter(|v| !vars.contains_key(*v))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(GatewayError::MissingVars {
                template_id: self.template_id,
                names: missing,
            });
        }
        let extra: Vec<String> = vars
            .keys()
            .filter(|k| !self.required_vars.contains(*k))
            .cloned()
            .collect();
        if !extra.is_empty() {
            return Err(GatewayError::ExtraVars {
                template_id: self.template_id,
                names: extra,
            });
        }
        let mut out = String::with_capacity(self.body.len());
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Var(v) => out.push_str(&vars[v]),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        let templates = TemplateId::ALL
            .into_iter()
            .map(|id| {
                let t = PromptTemplate::parse(id, id.default_body()).expect("bundled template parses");
                (id, t)
            })
            .collect();
        TemplateRegistry { templates }
    }
}

impl TemplateRegistry {
    /// Bundled templates, with any `<template_id>.txt` found in `dir`
    /// replacing the bundled body. Overrides must keep the bundled variable
    /// set, since callers supply exactly those variables.
    pub fn with_overrides(dir: &Path) -> Result<Self, GatewayError> {
        let mut reg = TemplateRegistry::default();
        for id in TemplateId::ALL {
            let path = dir.join(format!("{}.txt", id.as_str()));
            if !path.exists() {
                continue;
            }
            let source = std::fs::read_to_string(&path)
                .map_err(|e| GatewayError::Template(format!("{}: {e}", path.display())))?;
            let t = PromptTemplate::parse(id, &source)?;
            if t.required_vars != reg.templates[&id].required_vars {
                return Err(GatewayError::Template(format!(
                    "{id}: override variables {:?} differ from {:?}",
                    t.required_vars, reg.templates[&id].required_vars
                )));
            }
            reg.templates.insert(id, t);
        }
        Ok(reg)
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.template_id, template);
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn render(
        &self,
        id: TemplateId,
        vars: &BTreeMap<String, String>,
    ) -> Result<String, GatewayError> {
        self.get(id).render(vars)
    }
}
