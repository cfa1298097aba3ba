//! Case dossiers, the cause-of-death taxonomy, and exemplar-corpus ingestion.
//!
//! Case files are single JSON objects. Corpus files are newline-delimited
//! JSON, one `{doc_id, analysis_text, conclusion_text}` record per line.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CaseError {
    #[error("parse error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unknown cause category {0:?}")]
    UnknownCategory(String),
    #[error("duplicate case_id {0:?}")]
    DuplicateCase(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("corpus record {record}: parse error: {message}")]
    Syntax { record: usize, message: String },
    #[error("duplicate doc_id {doc_id:?} at records {first} and {second}")]
    DuplicateDocId {
        doc_id: String,
        first: usize,
        second: usize,
    },
    #[error("corpus record {record}: empty analysis_text")]
    EmptyAnalysis { record: usize },
}

/// The fifteen annotated aetiologies plus the consolidated `Other` class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CauseCategory {
    Burning,
    CoronaryArteryAtherosclerosis,
    CerebralHemorrhage,
    Drowning,
    ElectricalInjury,
    HighFallTrauma,
    MechanicalAsphyxia,
    Myocarditis,
    Peritonitis,
    Pneumonia,
    Poisoning,
    TraumaticAbdominalInjury,
    TraumaticBrainInjury,
    TraumaticLungInjury,
    WithInducingCause,
    Other,
}

impl CauseCategory {
    pub const ALL: [CauseCategory; 16] = [
        CauseCategory::Burning,
        CauseCategory::CoronaryArteryAtherosclerosis,
        CauseCategory::CerebralHemorrhage,
        CauseCategory::Drowning,
        CauseCategory::ElectricalInjury,
        CauseCategory::HighFallTrauma,
        CauseCategory::MechanicalAsphyxia,
        CauseCategory::Myocarditis,
        CauseCategory::Peritonitis,
        CauseCategory::Pneumonia,
        CauseCategory::Poisoning,
        CauseCategory::TraumaticAbdominalInjury,
        CauseCategory::TraumaticBrainInjury,
        CauseCategory::TraumaticLungInjury,
        CauseCategory::WithInducingCause,
        CauseCategory::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CauseCategory::Burning => "Burning",
            CauseCategory::CoronaryArteryAtherosclerosis => "Coronary Artery Atherosclerosis",
            CauseCategory::CerebralHemorrhage => "Cerebral Hemorrhage",
            CauseCategory::Drowning => "Drowning",
            CauseCategory::ElectricalInjury => "Electrical Injury",
            CauseCategory::HighFallTrauma => "High-Fall Trauma",
            CauseCategory::MechanicalAsphyxia => "Mechanical Asphyxia",
            CauseCategory::Myocarditis => "Myocarditis",
            CauseCategory::Peritonitis => "Peritonitis",
            CauseCategory::Pneumonia => "Pneumonia",
            CauseCategory::Poisoning => "Poisoning",
            CauseCategory::TraumaticAbdominalInjury => "Traumatic Abdominal Injury",
            CauseCategory::TraumaticBrainInjury => "Traumatic Brain Injury",
            CauseCategory::TraumaticLungInjury => "Traumatic Lung Injury",
            CauseCategory::WithInducingCause => "With Inducing Cause",
            CauseCategory::Other => "Other",
        }
    }
}

impl fmt::Display for CauseCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CauseCategory {
    type Err = CaseError;

    /// Exact label match only; labels are never coerced.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CauseCategory::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| CaseError::UnknownCategory(s.to_string()))
    }
}

impl Serialize for CauseCategory {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for CauseCategory {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One death investigation's evidence streams and optional expert references.
///
/// `reference_*` distinguish a missing reference (`None`) from an empty one
/// (`Some("")`) so evaluation can skip rather than zero-score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDossier")]
pub struct CaseDossier {
    pub case_id: String,
    pub demographics: String,
    pub background: String,
    pub clinical_findings: String,
    pub autopsy_findings: String,
    pub toxicology: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_long_form: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_short_form: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<CauseCategory>,
    /// Fields not part of the schema, kept verbatim.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Wire shape of a case file before category and invariant checks.
#[derive(Deserialize)]
struct RawDossier {
    #[serde(default)]
    case_id: String,
    #[serde(default)]
    demographics: String,
    #[serde(default)]
    background: String,
    #[serde(default)]
    clinical_findings: String,
    #[serde(default)]
    autopsy_findings: String,
    #[serde(default)]
    toxicology: String,
    #[serde(default)]
    reference_long_form: Option<String>,
    #[serde(default)]
    reference_short_form: Option<String>,
    #[serde(default)]
    category: Option<String>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

impl TryFrom<RawDossier> for CaseDossier {
    type Error = CaseError;

    fn try_from(raw: RawDossier) -> Result<Self, CaseError> {
        let category = raw.category.as_deref().map(str::parse).transpose()?;
        let dossier = CaseDossier {
            case_id: raw.case_id,
            demographics: raw.demographics,
            background: raw.background,
            clinical_findings: raw.clinical_findings,
            autopsy_findings: raw.autopsy_findings,
            toxicology: raw.toxicology,
            reference_long_form: raw.reference_long_form,
            reference_short_form: raw.reference_short_form,
            category,
            extra: raw.extra,
        };
        dossier.validate()?;
        Ok(dossier)
    }
}

impl CaseDossier {
    pub fn validate(&self) -> Result<(), CaseError> {
        if self.case_id.trim().is_empty() {
            return Err(CaseError::Validation("case_id required".into()));
        }
        let evidence = [
            &self.background,
            &self.clinical_findings,
            &self.autopsy_findings,
            &self.toxicology,
        ];
        if evidence.iter().all(|f| f.trim().is_empty()) {
            return Err(CaseError::Validation(
                "at least one of background, clinical_findings, autopsy_findings, toxicology must be non-empty"
                    .into(),
            ));
        }
        Ok(())
    }

    /// The fixed forensic background block shared by every agent in a run.
    /// Empty sections are omitted.
    pub fn background_block(&self) -> String {
        let sections = [
            ("Demographics", &self.demographics),
            ("Case background", &self.background),
            ("Clinical findings", &self.clinical_findings),
            ("Autopsy findings", &self.autopsy_findings),
            ("Toxicology", &self.toxicology),
        ];
        sections
            .iter()
            .filter(|(_, body)| !body.trim().is_empty())
            .map(|(title, body)| format!("## {title}\n{}", body.trim()))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dossier serializes")
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

pub fn parse_dossier(bytes: &[u8]) -> Result<CaseDossier, CaseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CaseError::Syntax {
        offset: e.valid_up_to(),
        message: "invalid UTF-8".into(),
    })?;
    let raw: RawDossier = serde_json::from_str(text).map_err(|e| CaseError::Syntax {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let dossier = CaseDossier::try_from(raw)?;
    for key in dossier.extra.keys() {
        tracing::warn!(case_id = %dossier.case_id, field = %key, "unknown case field retained");
    }
    Ok(dossier)
}

/// Case store keyed by `case_id`; rejects duplicates.
#[derive(Debug, Default, Clone)]
pub struct CaseStore {
    cases: BTreeMap<String, CaseDossier>,
}

impl CaseStore {
    pub fn insert(&mut self, dossier: CaseDossier) -> Result<(), CaseError> {
        dossier.validate()?;
        if self.cases.contains_key(&dossier.case_id) {
            return Err(CaseError::DuplicateCase(dossier.case_id));
        }
        self.cases.insert(dossier.case_id.clone(), dossier);
        Ok(())
    }

    pub fn get(&self, case_id: &str) -> Option<&CaseDossier> {
        self.cases.get(case_id)
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CaseDossier> {
        self.cases.values()
    }
}

/// An expert-written analysis used purely as a stylistic reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExemplarDocument {
    pub doc_id: String,
    pub analysis_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conclusion_text: Option<String>,
}

/// Parses a newline-delimited corpus. Record numbers in errors are 1-based
/// and count non-blank lines.
pub fn parse_exemplar_corpus(bytes: &[u8]) -> Result<Vec<ExemplarDocument>, CorpusError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CorpusError::Syntax {
        record: 0,
        message: format!("invalid UTF-8 at byte {}", e.valid_up_to()),
    })?;
    let mut docs = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let record = i + 1;
        let doc: ExemplarDocument = serde_json::from_str(line).map_err(|e| CorpusError::Syntax {
            record,
            message: e.to_string(),
        })?;
        if doc.analysis_text.trim().is_empty() {
            return Err(CorpusError::EmptyAnalysis { record });
        }
        if let Some(&first) = seen.get(&doc.doc_id) {
            return Err(CorpusError::DuplicateDocId {
                doc_id: doc.doc_id,
                first,
                second: record,
            });
        }
        seen.insert(doc.doc_id.clone(), record);
        docs.push(doc);
    }
    Ok(docs)
}
