//! Qualifier taxonomy and prompt corpora.
//!
//! A [`CorpusSpec`] lists attribute axes (shot type, age, ethnicity, gender,
//! profession, ...) and a template order. Prompts are produced either from
//! the full cross product of axis values ([`expand_template`]) or from a
//! seeded sample that keeps every protected axis balanced
//! ([`sample_corpus`]). Template prompts can then be rewritten into richer
//! descriptions by an external LLM ([`paraphrase_corpus`]).

mod expand;
mod paraphrase;
mod sample;
mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use expand::{expand_template, CrossProduct};
pub use paraphrase::{
    paraphrase_corpus, ParaphraseFailure, ParaphraseOptions, ParaphraseOutcome, PARAPHRASE_INSTRUCTION,
};
pub use sample::sample_corpus;
pub use stats::{corpus_stats, CorpusStats};

/// Axis name → value.
pub type Assignment = BTreeMap<String, String>;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("template is empty")]
    EmptyTemplate,
    #[error("axis `{0}` has no values")]
    EmptyAxis(String),
    #[error("axis `{axis}` has an empty value")]
    EmptyValue { axis: String },
    #[error("axis `{axis}` value {value:?} has leading or trailing whitespace")]
    UntrimmedValue { axis: String, value: String },
    #[error("axis `{axis}` repeats value {value:?}")]
    DuplicateValue { axis: String, value: String },
    #[error("axis `{0}` is defined more than once")]
    DuplicateAxis(String),
    #[error("template names unknown axis `{0}`")]
    UnknownTemplateAxis(String),
    #[error("template names axis `{0}` more than once")]
    RepeatedTemplateAxis(String),
    #[error("axis name is empty")]
    EmptyAxisName,
    #[error("operation requires sampling = {0}")]
    WrongSampling(&'static str),
    #[error("stratified sampling requires a positive target_size")]
    MissingTargetSize,
    #[error("target_size {target} exceeds the {available} available combinations")]
    TargetTooLarge { target: u64, available: u128 },
    #[error("cross product is too large to enumerate")]
    Overflow,
    #[error("assignment is missing axis `{0}`")]
    MissingValue(String),
    #[error("assignment gives axis `{axis}` unknown value {value:?}")]
    UnknownValue { axis: String, value: String },
    #[error("rendered prompt is empty")]
    EmptyRender,
    #[error("invalid quota for axis `{axis}`: {reason}")]
    InvalidQuota { axis: String, reason: String },
    #[error("spec file {path}: {message}")]
    SpecFile { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeAxis {
    pub name: String,
    pub values: Vec<String>,
    #[serde(default)]
    pub is_protected: bool,
}

impl AttributeAxis {
    pub fn new<S: Into<String>>(name: &str, values: impl IntoIterator<Item = S>, is_protected: bool) -> Self {
        AttributeAxis {
            name: name.to_string(),
            values: values.into_iter().map(Into::into).collect(),
            is_protected,
        }
    }

    fn validate(&self) -> Result<(), TaxonomyError> {
        if self.name.trim().is_empty() {
            return Err(TaxonomyError::EmptyAxisName);
        }
        if self.values.is_empty() {
            return Err(TaxonomyError::EmptyAxis(self.name.clone()));
        }
        let mut seen = BTreeSet::new();
        for value in &self.values {
            if value.is_empty() {
                return Err(TaxonomyError::EmptyValue { axis: self.name.clone() });
            }
            if value.trim() != value {
                return Err(TaxonomyError::UntrimmedValue { axis: self.name.clone(), value: value.clone() });
            }
            if !seen.insert(value.as_str()) {
                return Err(TaxonomyError::DuplicateValue { axis: self.name.clone(), value: value.clone() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    FullCrossProduct,
    Stratified,
}

/// Whether protected-axis values appear in the rendered prompt text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QualifierMode {
    #[default]
    WithProtectedQualifiers,
    WithoutProtectedQualifiers,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub axes: Vec<AttributeAxis>,
    pub template: Vec<String>,
    #[serde(default)]
    pub target_size: Option<u64>,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub qualifier_mode: QualifierMode,
    /// Absolute record counts for specific values of one protected axis
    /// (e.g. a fixed number of `non-binary` prompts). Remaining budget on
    /// that axis is split evenly over its other values.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub quotas: BTreeMap<String, BTreeMap<String, u64>>,
}

pub const SHOT_TYPES: [&str; 3] = ["close up", "long shot", "upper body shot"];
pub const AGE_GROUPS: [&str; 3] = ["young", "adult", "old"];
pub const GENDERS: [&str; 3] = ["woman", "man", "non-binary"];
pub const CLOTHING: [&str; 2] = ["wearing work clothes", "wearing ethnic clothes"];
pub const LOCATIONS: [&str; 2] = ["at work", "at home"];

/// Render order of the seven-qualifier template.
pub const TEMPLATE_ORDER: [&str; 7] = ["shot_type", "age", "ethnicity", "gender", "profession", "clothing", "location"];

impl CorpusSpec {
    /// The seven-qualifier taxonomy with caller-supplied ethnicity and
    /// profession lists. Ethnicity and gender are the protected axes.
    pub fn seven_qualifier<E, P>(ethnicities: E, professions: P) -> Self
    where
        E: IntoIterator,
        E::Item: Into<String>,
        P: IntoIterator,
        P::Item: Into<String>,
    {
        let axes = vec![
            AttributeAxis::new("shot_type", SHOT_TYPES, false),
            AttributeAxis::new("age", AGE_GROUPS, false),
            AttributeAxis::new("ethnicity", ethnicities, true),
            AttributeAxis::new("gender", GENDERS, true),
            AttributeAxis::new("profession", professions, false),
            AttributeAxis::new("clothing", CLOTHING, false),
            AttributeAxis::new("location", LOCATIONS, false),
        ];
        CorpusSpec {
            axes,
            template: TEMPLATE_ORDER.iter().map(|s| s.to_string()).collect(),
            target_size: None,
            sampling: Sampling::FullCrossProduct,
            seed: 0,
            qualifier_mode: QualifierMode::WithProtectedQualifiers,
            quotas: BTreeMap::new(),
        }
    }

    /// Load a spec from JSON, or TOML when the extension is `.toml`.
    pub fn from_path(path: &Path) -> Result<Self, TaxonomyError> {
        let err = |message: String| TaxonomyError::SpecFile { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let spec: CorpusSpec = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| err(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| err(e.to_string()))?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn axis(&self, name: &str) -> Option<&AttributeAxis> {
        self.axes.iter().find(|a| a.name == name)
    }

    pub fn validate(&self) -> Result<(), TaxonomyError> {
        let mut names = BTreeSet::new();
        for axis in &self.axes {
            axis.validate()?;
            if !names.insert(axis.name.as_str()) {
                return Err(TaxonomyError::DuplicateAxis(axis.name.clone()));
            }
        }
        if self.template.is_empty() {
            return Err(TaxonomyError::EmptyTemplate);
        }
        let mut used = BTreeSet::new();
        for name in &self.template {
            if !names.contains(name.as_str()) {
                return Err(TaxonomyError::UnknownTemplateAxis(name.clone()));
            }
            if !used.insert(name.as_str()) {
                return Err(TaxonomyError::RepeatedTemplateAxis(name.clone()));
            }
        }
        if self.target_size == Some(0) {
            return Err(TaxonomyError::MissingTargetSize);
        }
        self.validate_quotas()?;
        if self.sampling == Sampling::Stratified {
            let target = self.target_size.ok_or(TaxonomyError::MissingTargetSize)?;
            let available = self.cross_product_size()?;
            if u128::from(target) > available {
                return Err(TaxonomyError::TargetTooLarge { target, available });
            }
        }
        Ok(())
    }

    fn validate_quotas(&self) -> Result<(), TaxonomyError> {
        if self.quotas.len() > 1 {
            let axis = self.quotas.keys().nth(1).cloned().unwrap_or_default();
            return Err(TaxonomyError::InvalidQuota { axis, reason: "quotas are supported on one axis only".into() });
        }
        for (axis_name, quota) in &self.quotas {
            let invalid = |reason: String| TaxonomyError::InvalidQuota { axis: axis_name.clone(), reason };
            let axis = self.axis(axis_name).ok_or_else(|| invalid("no such axis".into()))?;
            if !axis.is_protected {
                return Err(invalid("axis is not protected".into()));
            }
            for value in quota.keys() {
                if !axis.values.contains(value) {
                    return Err(invalid(format!("unknown value {value:?}")));
                }
            }
        }
        Ok(())
    }

    /// Product of axis cardinalities.
    pub fn cross_product_size(&self) -> Result<u128, TaxonomyError> {
        self.axes
            .iter()
            .try_fold(1u128, |acc, a| acc.checked_mul(a.values.len() as u128))
            .ok_or(TaxonomyError::Overflow)
    }

    /// Axis indices in iteration order: template axes first (in template
    /// order), then any remaining axes in declaration order.
    pub(crate) fn iteration_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = self
            .template
            .iter()
            .filter_map(|name| self.axes.iter().position(|a| &a.name == name))
            .collect();
        for idx in 0..self.axes.len() {
            if !order.contains(&idx) {
                order.push(idx);
            }
        }
        order
    }

    /// Assignment for per-axis value indices (indexed like `self.axes`).
    pub(crate) fn assignment_for(&self, value_indices: &[usize]) -> Assignment {
        self.axes
            .iter()
            .zip(value_indices)
            .map(|(axis, &vi)| (axis.name.clone(), axis.values[vi].clone()))
            .collect()
    }

    pub(crate) fn template_record(&self, value_indices: &[usize]) -> Result<PromptRecord, TaxonomyError> {
        let assignment = self.assignment_for(value_indices);
        let text = render_prompt(&assignment, self)?;
        Ok(PromptRecord::new(text, assignment, Origin::Template, None))
    }

    pub fn protected_axes(&self) -> impl Iterator<Item = &AttributeAxis> {
        self.axes.iter().filter(|a| a.is_protected)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Template,
    Paraphrase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: String,
    pub text: String,
    pub assignment: Assignment,
    pub origin: Origin,
    pub parent_id: Option<String>,
}

#[derive(Serialize)]
struct IdPayload<'a> {
    assignment: &'a Assignment,
    origin: Origin,
    parent_id: Option<&'a str>,
    text: &'a str,
}

impl PromptRecord {
    pub fn new(text: String, assignment: Assignment, origin: Origin, parent_id: Option<String>) -> Self {
        let prompt_id = prompt_id(&assignment, origin, parent_id.as_deref(), &text);
        PromptRecord { prompt_id, text, assignment, origin, parent_id }
    }

    /// Whether `prompt_id` matches the record's content.
    pub fn id_is_consistent(&self) -> bool {
        self.prompt_id == prompt_id(&self.assignment, self.origin, self.parent_id.as_deref(), &self.text)
    }
}

/// Content hash over the canonical JSON encoding of the identifying fields.
pub fn prompt_id(assignment: &Assignment, origin: Origin, parent_id: Option<&str>, text: &str) -> String {
    let payload = IdPayload { assignment, origin, parent_id, text };
    let bytes = serde_json::to_vec(&payload).expect("payload is always serializable");
    let digest = Sha256::digest(&bytes);
    hex::encode(&digest[..16])
}

/// Collapse runs of whitespace to single spaces and trim.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Render an assignment in template order using the spec's qualifier mode.
pub fn render_prompt(assignment: &Assignment, spec: &CorpusSpec) -> Result<String, TaxonomyError> {
    render_with_mode(assignment, spec, spec.qualifier_mode)
}

/// Render an assignment in template order. Protected axes are dropped from
/// the text in [`QualifierMode::WithoutProtectedQualifiers`].
pub fn render_with_mode(
    assignment: &Assignment,
    spec: &CorpusSpec,
    mode: QualifierMode,
) -> Result<String, TaxonomyError> {
    if spec.template.is_empty() {
        return Err(TaxonomyError::EmptyTemplate);
    }
    for axis in &spec.axes {
        if !assignment.contains_key(&axis.name) {
            return Err(TaxonomyError::MissingValue(axis.name.clone()));
        }
    }
    let mut parts = Vec::with_capacity(spec.template.len());
    for name in &spec.template {
        let axis = spec.axis(name).ok_or_else(|| TaxonomyError::UnknownTemplateAxis(name.clone()))?;
        let value = assignment.get(name).ok_or_else(|| TaxonomyError::MissingValue(name.clone()))?;
        if mode == QualifierMode::WithoutProtectedQualifiers && axis.is_protected {
            continue;
        }
        parts.push(value.as_str());
    }
    let text = collapse_whitespace(&parts.join(" "));
    if text.is_empty() {
        return Err(TaxonomyError::EmptyRender);
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn korean_doctor() -> (CorpusSpec, Assignment) {
        let spec = CorpusSpec::seven_qualifier(["Korean", "Nigerian"], ["doctor", "chef"]);
        let assignment: Assignment = [
            ("shot_type", "close up"),
            ("age", "young"),
            ("ethnicity", "Korean"),
            ("gender", "woman"),
            ("profession", "doctor"),
            ("clothing", "wearing work clothes"),
            ("location", "at work"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        (spec, assignment)
    }

    #[test]
    fn renders_full_template() {
        let (spec, assignment) = korean_doctor();
        assert_eq!(
            render_prompt(&assignment, &spec).unwrap(),
            "close up young Korean woman doctor wearing work clothes at work"
        );
    }

    #[test]
    fn renders_without_protected_qualifiers() {
        let (mut spec, assignment) = korean_doctor();
        spec.qualifier_mode = QualifierMode::WithoutProtectedQualifiers;
        let full = render_with_mode(&assignment, &spec, QualifierMode::WithProtectedQualifiers).unwrap();
        // independent route: filter the protected tokens out of the full text
        let filtered: Vec<&str> = full.split(' ').filter(|t| *t != "Korean" && *t != "woman").collect();
        let rendered = render_prompt(&assignment, &spec).unwrap();
        assert_eq!(rendered, filtered.join(" "));
        assert_eq!(rendered, "close up young doctor wearing work clothes at work");
    }

    #[test]
    fn empty_template_is_rejected() {
        let (mut spec, assignment) = korean_doctor();
        spec.template.clear();
        assert_eq!(render_prompt(&assignment, &spec), Err(TaxonomyError::EmptyTemplate));
        assert_eq!(spec.validate(), Err(TaxonomyError::EmptyTemplate));
    }

    #[test]
    fn missing_value_names_the_axis() {
        let (spec, mut assignment) = korean_doctor();
        assignment.remove("location");
        assert_eq!(render_prompt(&assignment, &spec), Err(TaxonomyError::MissingValue("location".into())));
    }

    #[test]
    fn whitespace_is_collapsed() {
        let spec = CorpusSpec {
            axes: vec![AttributeAxis::new("a", ["big  red"], false), AttributeAxis::new("b", ["dog"], false)],
            template: vec!["a".into(), "b".into()],
            target_size: None,
            sampling: Sampling::FullCrossProduct,
            seed: 0,
            qualifier_mode: QualifierMode::WithProtectedQualifiers,
            quotas: BTreeMap::new(),
        };
        let a = spec.assignment_for(&[0, 0]);
        assert_eq!(render_prompt(&a, &spec).unwrap(), "big red dog");
    }

    #[test]
    fn validation_names_offending_axis() {
        let (mut spec, _) = korean_doctor();
        spec.axes[1].values.push("young".into());
        assert_eq!(
            spec.validate(),
            Err(TaxonomyError::DuplicateValue { axis: "age".into(), value: "young".into() })
        );
        let (mut spec, _) = korean_doctor();
        spec.axes[4].values.push(" nurse".into());
        assert!(matches!(spec.validate(), Err(TaxonomyError::UntrimmedValue { axis, .. }) if axis == "profession"));
        let (mut spec, _) = korean_doctor();
        spec.axes[0].values.clear();
        assert_eq!(spec.validate(), Err(TaxonomyError::EmptyAxis("shot_type".into())));
        let (mut spec, _) = korean_doctor();
        spec.template.push("mood".into());
        assert_eq!(spec.validate(), Err(TaxonomyError::UnknownTemplateAxis("mood".into())));
    }

    #[test]
    fn prompt_id_is_content_addressed() {
        let (spec, assignment) = korean_doctor();
        let text = render_prompt(&assignment, &spec).unwrap();
        let a = PromptRecord::new(text.clone(), assignment.clone(), Origin::Template, None);
        let b = PromptRecord::new(text.clone(), assignment.clone(), Origin::Template, None);
        assert_eq!(a.prompt_id, b.prompt_id);
        assert!(a.id_is_consistent());
        let c = PromptRecord::new(text, assignment, Origin::Paraphrase, Some(a.prompt_id.clone()));
        assert_ne!(a.prompt_id, c.prompt_id);
    }

    #[test]
    fn record_serializes_exact_fields() {
        let (spec, assignment) = korean_doctor();
        let text = render_prompt(&assignment, &spec).unwrap();
        let rec = PromptRecord::new(text, assignment, Origin::Template, None);
        let value = serde_json::to_value(&rec).unwrap();
        let keys: BTreeSet<_> = value.as_object().unwrap().keys().cloned().collect();
        let expected: BTreeSet<String> =
            ["prompt_id", "text", "assignment", "origin", "parent_id"].iter().map(|s| s.to_string()).collect();
        assert_eq!(keys, expected);
        assert!(value["parent_id"].is_null());
    }

    #[test]
    fn spec_file_loads_json_and_toml() {
        let dir = tempfile::tempdir().unwrap();
        let (spec, _) = korean_doctor();
        let json = dir.path().join("spec.json");
        std::fs::write(&json, serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(CorpusSpec::from_path(&json).unwrap(), spec);
        let toml_path = dir.path().join("spec.toml");
        std::fs::write(
            &toml_path,
            r#"
template = ["gender", "profession"]
sampling = "stratified"
target_size = 4
seed = 9
qualifier_mode = "with_protected_qualifiers"

[[axes]]
name = "gender"
values = ["woman", "man"]
is_protected = true

[[axes]]
name = "profession"
values = ["doctor", "chef", "nurse"]
"#,
        )
        .unwrap();
        let loaded = CorpusSpec::from_path(&toml_path).unwrap();
        assert_eq!(loaded.target_size, Some(4));
        assert_eq!(loaded.sampling, Sampling::Stratified);
    }
}
