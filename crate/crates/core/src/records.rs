//! Generation-log data model and the JSONL exchange format.
//!
//! One line holds one [`GenerationRecord`]: a prompt plus the responses
//! sampled for it, optionally with per-position token distributions,
//! embeddings, reasoning traces and verbalized confidences. Keys the model
//! does not know about are kept in `extra` maps and written back unchanged.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a stored distribution.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    #[serde(rename = "labels")]
    pub token_labels: Vec<String>,
    pub probs: Vec<f64>,
    #[serde(flatten, default, skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

impl TokenDistribution {
    pub fn new(token_labels: Vec<String>, probs: Vec<f64>) -> Self {
        Self {
            token_labels,
            probs,
            extra: Map::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the first maximal probability.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &p) in self.probs.iter().enumerate() {
            match best {
                Some(b) if self.probs[b] >= p => {}
                _ => best = Some(i),
            }
        }
        best
    }

    pub fn prob_of(&self, label: &str) -> Option<f64> {
        self.token_labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.probs[i])
    }

    fn diagnose(&self, path: &str, out: &mut Vec<Diagnostic>) {
        if self.token_labels.len() != self.probs.len() {
            out.push(Diagnostic::new(
                format!("{path}.probs"),
                format!(
                    "{} probabilities for {} labels",
                    self.probs.len(),
                    self.token_labels.len()
                ),
            ));
        }
        let mut seen = HashSet::new();
        for label in &self.token_labels {
            if !seen.insert(label.as_str()) {
                out.push(Diagnostic::new(
                    format!("{path}.labels"),
                    format!("duplicate token label {label:?}"),
                ));
                break;
            }
        }
        if let Some(p) = self
            .probs
            .iter()
            .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            out.push(Diagnostic::new(
                format!("{path}.probs"),
                format!("probability {p} outside [0, 1]"),
            ));
        }
        let total: f64 = self.probs.iter().sum();
        if !total.is_finite() || (total - 1.0).abs() > PROB_SUM_TOLERANCE {
            out.push(Diagnostic::new(
                format!("{path}.probs"),
                format!("probabilities sum to {total}, expected 1"),
            ));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Sample {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_dists: Option<Vec<TokenDistribution>>,
    /// Log-probabilities of the sampled tokens, in nats.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_confidence: Option<f64>,
    #[serde(flatten, default, skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

impl Sample {
    pub fn from_text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Default::default()
        }
    }

    /// The answer field when present, otherwise the full text.
    pub fn answer_or_text(&self) -> &str {
        self.answer.as_deref().unwrap_or(&self.text)
    }

    fn diagnose(&self, path: &str, out: &mut Vec<Diagnostic>) {
        if let Some(dists) = &self.token_dists {
            if dists.is_empty() {
                out.push(Diagnostic::new(
                    format!("{path}.token_dists"),
                    "present but empty",
                ));
            }
            for (i, d) in dists.iter().enumerate() {
                d.diagnose(&format!("{path}.token_dists[{i}]"), out);
            }
        }
        if let Some(lps) = &self.token_logprobs {
            if let Some(lp) = lps.iter().find(|lp| !(**lp <= 0.0)) {
                out.push(Diagnostic::new(
                    format!("{path}.token_logprobs"),
                    format!("log-probability {lp} is not <= 0"),
                ));
            }
        }
        if let Some(emb) = &self.embedding {
            if emb.iter().any(|x| !x.is_finite()) {
                out.push(Diagnostic::new(
                    format!("{path}.embedding"),
                    "non-finite component",
                ));
            }
        }
        if let Some(c) = self.self_confidence {
            if !(0.0..=1.0).contains(&c) {
                out.push(Diagnostic::new(
                    format!("{path}.self_confidence"),
                    format!("{c} outside [0, 1]"),
                ));
            }
        }
    }
}

/// A claim value: numeric values are compared with tolerances, text values
/// by normalized equality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClaimValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for ClaimValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClaimValue::Number(x) => write!(f, "{x}"),
            ClaimValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub key: String,
    pub value: ClaimValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(flatten, default, skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

impl Claim {
    pub fn new(key: impl Into<String>, value: ClaimValue, unit: Option<&str>) -> Self {
        Self {
            key: key.into(),
            value,
            unit: unit.map(str::to_owned),
            extra: Map::new(),
        }
    }
}

/// Root-cause categories used both as ground-truth labels and routing tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureClass {
    Model,
    Context,
    Data,
}

impl FailureClass {
    pub const ALL: [FailureClass; 3] = [
        FailureClass::Model,
        FailureClass::Context,
        FailureClass::Data,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureClass::Model => "model",
            FailureClass::Context => "context",
            FailureClass::Data => "data",
        }
    }
}

impl fmt::Display for FailureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub is_hallucinated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_class: Option<FailureClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct_answer: Option<String>,
    #[serde(flatten, default, skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub prompt: String,
    pub samples: Vec<Sample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_claims: Option<Vec<Claim>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthLabel>,
    #[serde(flatten, default, skip_serializing_if = "Map::is_empty")]
    pub extra: Map<String, Value>,
}

impl GenerationRecord {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>, samples: Vec<Sample>) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            samples,
            reference_claims: None,
            ground_truth: None,
            extra: Map::new(),
        }
    }
}

/// One violated invariant, addressed by its JSON field path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub path: String,
    pub reason: String,
}

impl Diagnostic {
    fn new(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

/// Checks every per-record invariant. Corpus-level uniqueness of ids is
/// checked by [`parse_records`].
pub fn validate_record(record: &GenerationRecord) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if record.id.is_empty() {
        out.push(Diagnostic::new("id", "empty id"));
    }
    if record.samples.is_empty() {
        out.push(Diagnostic::new("samples", "at least one sample required"));
    }
    for (i, s) in record.samples.iter().enumerate() {
        s.diagnose(&format!("samples[{i}]"), &mut out);
    }
    if let Some(claims) = &record.reference_claims {
        for (i, c) in claims.iter().enumerate() {
            if c.key.is_empty() {
                out.push(Diagnostic::new(
                    format!("reference_claims[{i}].key"),
                    "empty key",
                ));
            }
        }
    }
    if let Some(gt) = &record.ground_truth {
        if gt.failure_class.is_some() && !gt.is_hallucinated {
            out.push(Diagnostic::new(
                "ground_truth.failure_class",
                "failure_class set on a record not labeled hallucinated",
            ));
        }
    }
    out
}

/// Reads a JSONL corpus. Blank lines are skipped; line numbers in errors are
/// 1-based.
pub fn parse_records<R: BufRead>(reader: R) -> Result<Vec<GenerationRecord>> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GenerationRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let mut diagnostics = validate_record(&record);
        if !record.id.is_empty() && !ids.insert(record.id.clone()) {
            diagnostics.push(Diagnostic::new("id", "duplicate id within corpus"));
        }
        if !diagnostics.is_empty() {
            return Err(Error::Validation {
                line: line_no,
                record_id: record.id,
                diagnostics,
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn parse_records_str(text: &str) -> Result<Vec<GenerationRecord>> {
    parse_records(text.as_bytes())
}

pub fn write_records<W: Write>(records: &[GenerationRecord], mut writer: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn records_to_string(records: &[GenerationRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_records(records, &mut buf)?;
    // serde_json only emits UTF-8
    Ok(String::from_utf8(buf).expect("serde_json output is UTF-8"))
}
