//! The detect → route → mitigate → validate → refine cycle.
//!
//! Detection computes every signal a record has inputs for. Routing walks an
//! ordered rule list; the first rule that fires decides the tier (Model,
//! Context or Data) and all fired rules contribute recommendations.
//! Mitigation is advisory: the cycle never calls a model. When the corpus
//! holds a re-generated record with id `<id>.retry`, the original is
//! validated against it with the same detectors; otherwise it is flagged for
//! external mitigation. The resulting [`CycleLedger`] is the refinement
//! artifact: which signals fired, what was recommended, and what happened.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consistency::{race_metrics, self_consistency_consensus, RaceConfig, RaceReport};
use crate::error::{Error, Result};
use crate::grounding::{check_claims, ClaimVerdict, FactStore, Tolerance, VerdictStatus};
use crate::records::{FailureClass, GenerationRecord};
use crate::semantic::{
    semantic_entropy_of_record, HashingEmbedder, DEFAULT_CLUSTER_THRESHOLD, DEFAULT_EMBED_DIM,
};
use crate::uncertainty::{parse_self_declared_confidence, sequence_entropy_profile};

pub const RETRY_SUFFIX: &str = ".retry";

/// Routing tiers share the ground-truth failure taxonomy.
pub type Tier = FailureClass;

// ─── Signals ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SignalId {
    HpMean,
    Hs,
    ConsensusSupport,
    SelfConfidence,
    RaceFlag,
    RaceReasoningEntropy,
    RaceAnswerEntropy,
    RaceMutualInformation,
    FactMismatchCount,
    /// Scalar supplied upstream under `external_signals.<name>`.
    External(String),
}

impl SignalId {
    pub const BUILTIN: [SignalId; 9] = [
        SignalId::HpMean,
        SignalId::Hs,
        SignalId::ConsensusSupport,
        SignalId::SelfConfidence,
        SignalId::RaceFlag,
        SignalId::RaceReasoningEntropy,
        SignalId::RaceAnswerEntropy,
        SignalId::RaceMutualInformation,
        SignalId::FactMismatchCount,
    ];
}

impl fmt::Display for SignalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SignalId::HpMean => "h_p_mean",
            SignalId::Hs => "h_s",
            SignalId::ConsensusSupport => "consensus_support",
            SignalId::SelfConfidence => "self_confidence",
            SignalId::RaceFlag => "race_flag",
            SignalId::RaceReasoningEntropy => "race_h_reasoning",
            SignalId::RaceAnswerEntropy => "race_h_answer",
            SignalId::RaceMutualInformation => "race_mutual_information",
            SignalId::FactMismatchCount => "fact_mismatch_count",
            SignalId::External(name) => return write!(f, "external:{name}"),
        };
        f.write_str(s)
    }
}

impl FromStr for SignalId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(name) = s.strip_prefix("external:") {
            if name.is_empty() {
                return Err(Error::Config("external signal needs a name".into()));
            }
            return Ok(SignalId::External(name.to_owned()));
        }
        SignalId::BUILTIN
            .iter()
            .find(|id| id.to_string() == s)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown signal {s:?}")))
    }
}

impl TryFrom<String> for SignalId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SignalId> for String {
    fn from(id: SignalId) -> String {
        id.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSignals {
    pub record_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_p_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus_support: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub race: Option<RaceReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fact_verdicts: Option<Vec<ClaimVerdict>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_signals: Option<BTreeMap<String, f64>>,
}

impl DetectionSignals {
    pub fn empty(record_id: impl Into<String>) -> Self {
        Self {
            record_id: record_id.into(),
            h_p_mean: None,
            h_s: None,
            consensus_support: None,
            self_confidence: None,
            race: None,
            fact_verdicts: None,
            external_signals: None,
        }
    }

    pub fn value(&self, id: &SignalId) -> Option<f64> {
        match id {
            SignalId::HpMean => self.h_p_mean,
            SignalId::Hs => self.h_s,
            SignalId::ConsensusSupport => self.consensus_support,
            SignalId::SelfConfidence => self.self_confidence,
            SignalId::RaceFlag => self.race.as_ref().map(|r| {
                if r.flag_right_answer_wrong_reasoning {
                    1.0
                } else {
                    0.0
                }
            }),
            SignalId::RaceReasoningEntropy => self.race.as_ref().map(|r| r.h_reasoning),
            SignalId::RaceAnswerEntropy => self.race.as_ref().map(|r| r.h_answer),
            SignalId::RaceMutualInformation => self.race.as_ref().map(|r| r.mutual_information),
            SignalId::FactMismatchCount => self.fact_verdicts.as_ref().map(|v| {
                v.iter()
                    .filter(|v| v.status == VerdictStatus::Mismatch)
                    .count() as f64
            }),
            SignalId::External(name) => self.external_signals.as_ref()?.get(name).copied(),
        }
    }

    pub fn has_any(&self) -> bool {
        self.h_p_mean.is_some()
            || self.h_s.is_some()
            || self.consensus_support.is_some()
            || self.self_confidence.is_some()
            || self.race.is_some()
            || self.fact_verdicts.is_some()
            || self.external_signals.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub cluster_threshold: f64,
    pub embed_dim: usize,
    pub race: RaceConfig,
    pub tolerance: Tolerance,
    /// Minimum movement toward passing that counts as an improvement when a
    /// retried signal still sits on the firing side of its threshold.
    pub min_delta: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cluster_threshold: DEFAULT_CLUSTER_THRESHOLD,
            embed_dim: DEFAULT_EMBED_DIM,
            race: RaceConfig::default(),
            tolerance: Tolerance::default(),
            min_delta: 0.1,
        }
    }
}

fn external_signals(record: &GenerationRecord) -> Option<BTreeMap<String, f64>> {
    let obj = record.extra.get("external_signals")?.as_object()?;
    let map: BTreeMap<String, f64> = obj
        .iter()
        .filter_map(|(k, v)| v.as_f64().map(|x| (k.clone(), x)))
        .collect();
    (!map.is_empty()).then_some(map)
}

/// Computes every metric whose inputs the record carries. Missing inputs
/// leave the corresponding signal absent rather than failing.
pub fn detect(
    record: &GenerationRecord,
    config: &PipelineConfig,
    store: Option<&FactStore>,
) -> DetectionSignals {
    let embedder = HashingEmbedder {
        dim: config.embed_dim,
    };
    let mut signals = DetectionSignals::empty(&record.id);

    let profile_means: Vec<f64> = record
        .samples
        .iter()
        .filter_map(|s| sequence_entropy_profile(s).ok())
        .map(|r| r.mean)
        .collect();
    if !profile_means.is_empty() {
        signals.h_p_mean = Some(profile_means.iter().sum::<f64>() / profile_means.len() as f64);
    }

    if record.samples.len() >= 2 {
        signals.h_s = semantic_entropy_of_record(record, &embedder, config.cluster_threshold)
            .ok()
            .map(|r| r.h_s);
        signals.consensus_support =
            self_consistency_consensus(record, &embedder, config.cluster_threshold)
                .ok()
                .map(|c| c.support);
        signals.race = race_metrics(record, &embedder, &config.race).ok();
    }

    let confidences: Vec<f64> = record
        .samples
        .iter()
        .filter_map(|s| {
            s.self_confidence
                .or_else(|| parse_self_declared_confidence(&s.text))
        })
        .collect();
    if !confidences.is_empty() {
        signals.self_confidence = Some(confidences.iter().sum::<f64>() / confidences.len() as f64);
    }

    if let (Some(claims), Some(store)) = (&record.reference_claims, store) {
        signals.fact_verdicts = check_claims(claims, store, config.tolerance).ok();
    }
    signals.external_signals = external_signals(record);
    signals
}

// ─── Rules and routing ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=", alias = "≤")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=", alias = "≥")]
    Ge,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
            Comparator::Gt => value > threshold,
            Comparator::Ge => value >= threshold,
        }
    }

    /// +1 when larger values fire the rule, -1 when smaller ones do.
    fn direction(self) -> f64 {
        match self {
            Comparator::Gt | Comparator::Ge => 1.0,
            Comparator::Lt | Comparator::Le => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterRule {
    pub name: String,
    pub signal: SignalId,
    pub comparator: Comparator,
    pub threshold: f64,
    pub tier: Tier,
    #[serde(default)]
    pub recommended_mitigations: Vec<String>,
}

impl RouterRule {
    pub fn fires(&self, signals: &DetectionSignals) -> bool {
        signals
            .value(&self.signal)
            .is_some_and(|v| self.comparator.holds(v, self.threshold))
    }
}

fn rule(
    name: &str,
    signal: SignalId,
    comparator: Comparator,
    threshold: f64,
    tier: Tier,
    mitigations: &[&str],
) -> RouterRule {
    RouterRule {
        name: name.to_owned(),
        signal,
        comparator,
        threshold,
        tier,
        recommended_mitigations: mitigations.iter().map(|s| s.to_string()).collect(),
    }
}

/// Default rule set, in priority order. Thresholds are starting points to be
/// tuned on labeled corpora.
pub fn default_rules() -> Vec<RouterRule> {
    use Comparator::*;
    vec![
        rule(
            "high-token-entropy",
            SignalId::HpMean,
            Gt,
            0.9,
            Tier::Model,
            &["temperature-calibration-review", "decoding-control"],
        ),
        rule(
            "high-semantic-entropy",
            SignalId::Hs,
            Gt,
            0.45,
            Tier::Model,
            &[
                "self-consistency-filtering",
                "temperature-calibration-review",
            ],
        ),
        rule(
            "low-consensus",
            SignalId::ConsensusSupport,
            Lt,
            0.6,
            Tier::Model,
            &["ensemble-agreement-filtering"],
        ),
        rule(
            "right-answer-wrong-reasoning",
            SignalId::RaceFlag,
            Ge,
            1.0,
            Tier::Context,
            &["reasoning-trace-review", "prompt-optimization"],
        ),
        rule(
            "low-prompt-similarity",
            SignalId::External("prompt_similarity".into()),
            Lt,
            0.5,
            Tier::Context,
            &["prompt-optimization", "context-summarization"],
        ),
        rule(
            "fact-mismatch",
            SignalId::FactMismatchCount,
            Gt,
            0.0,
            Tier::Data,
            &["grounding-refresh", "retrieval-augmented-grounding"],
        ),
    ]
}

/// Parses a JSON rule list. Errors name the offending rule (by name when it
/// has one, else by position).
pub fn load_rules(text: &str) -> Result<Vec<RouterRule>> {
    let raw: Vec<serde_json::Value> = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("rules file is not a JSON list: {e}")))?;
    let mut names = HashSet::new();
    raw.into_iter()
        .enumerate()
        .map(|(i, v)| {
            let label = v
                .get("name")
                .and_then(|n| n.as_str())
                .map(|n| format!("rule {n:?}"))
                .unwrap_or_else(|| format!("rule #{i}"));
            let r: RouterRule =
                serde_json::from_value(v).map_err(|e| Error::Config(format!("{label}: {e}")))?;
            if !r.threshold.is_finite() {
                return Err(Error::Config(format!("{label}: threshold must be finite")));
            }
            if r.name.is_empty() || !names.insert(r.name.clone()) {
                return Err(Error::Config(format!(
                    "{label}: rule names must be nonempty and unique"
                )));
            }
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub before: DetectionSignals,
    pub after: DetectionSignals,
    pub improved: bool,
    pub deltas: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierVerdict {
    pub record_id: String,
    pub fired_rules: Vec<String>,
    pub tier: Option<Tier>,
    pub recommendations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<Validation>,
}

impl TierVerdict {
    pub fn is_pass(&self) -> bool {
        self.tier.is_none()
    }
}

/// Evaluates `rules` in order. Total: every input yields one verdict.
pub fn route(signals: &DetectionSignals, rules: &[RouterRule]) -> TierVerdict {
    let fired: Vec<&RouterRule> = rules.iter().filter(|r| r.fires(signals)).collect();
    let mut recommendations: Vec<String> = Vec::new();
    for m in fired.iter().flat_map(|r| &r.recommended_mitigations) {
        if !recommendations.contains(m) {
            recommendations.push(m.clone());
        }
    }
    TierVerdict {
        record_id: signals.record_id.clone(),
        fired_rules: fired.iter().map(|r| r.name.clone()).collect(),
        tier: fired.first().map(|r| r.tier),
        recommendations,
        validation: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub improved: bool,
    /// after − before for each signal that fired a rule before mitigation.
    pub deltas: BTreeMap<String, f64>,
}

/// Re-scores with the detectors that fired. Improvement is conjunctive:
/// every rule that fired before must now pass, or have moved toward passing
/// by at least `config.min_delta`.
pub fn validate(
    before: &DetectionSignals,
    after: &DetectionSignals,
    rules: &[RouterRule],
    config: &PipelineConfig,
) -> Result<ValidationOutcome> {
    if before.record_id != after.record_id {
        return Err(Error::domain(format!(
            "cannot validate {:?} against {:?}",
            before.record_id, after.record_id
        )));
    }
    let mut improved = true;
    let mut deltas = BTreeMap::new();
    for r in rules.iter().filter(|r| r.fires(before)) {
        let b = before.value(&r.signal).expect("fired rule has a value");
        let ok = match after.value(&r.signal) {
            Some(a) => {
                deltas.insert(r.signal.to_string(), a - b);
                !r.comparator.holds(a, r.threshold)
                    || (b - a) * r.comparator.direction() >= config.min_delta
            }
            None => false,
        };
        improved &= ok;
    }
    Ok(ValidationOutcome { improved, deltas })
}

// ─── Cycle ledger ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    None,
    FlaggedForExternalMitigation,
    ValidatedAgainstRetry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Pending,
    Improved,
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub record_id: String,
    pub signals: DetectionSignals,
    pub verdict: TierVerdict,
    pub action_taken: Action,
    pub outcome: Outcome,
    pub timestamp: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MitigationStats {
    pub recommended: usize,
    pub improved: usize,
    pub residual: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub total: usize,
    pub pass: usize,
    pub tiered: usize,
    pub per_tier: BTreeMap<Tier, usize>,
    pub residuals: usize,
    pub improved: usize,
    pub pending: usize,
    /// How often each rule fired.
    pub rule_counts: BTreeMap<String, usize>,
    /// Outcomes per recommended mitigation, for records that were retried.
    pub mitigations: BTreeMap<String, MitigationStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleLedger {
    pub entries: Vec<LedgerEntry>,
    pub summary: LedgerSummary,
}

fn summarize(entries: &[LedgerEntry]) -> LedgerSummary {
    let mut s = LedgerSummary {
        total: entries.len(),
        per_tier: Tier::ALL.iter().map(|t| (*t, 0)).collect(),
        ..Default::default()
    };
    for e in entries {
        match e.verdict.tier {
            None => s.pass += 1,
            Some(t) => {
                s.tiered += 1;
                *s.per_tier.entry(t).or_default() += 1;
            }
        }
        match e.outcome {
            Outcome::Residual => s.residuals += 1,
            Outcome::Improved => s.improved += 1,
            Outcome::Pending => s.pending += 1,
            Outcome::Pass => {}
        }
        for r in &e.verdict.fired_rules {
            *s.rule_counts.entry(r.clone()).or_default() += 1;
        }
        for m in &e.verdict.recommendations {
            let stats = s.mitigations.entry(m.clone()).or_default();
            stats.recommended += 1;
            match e.outcome {
                Outcome::Improved => stats.improved += 1,
                Outcome::Residual => stats.residual += 1,
                _ => {}
            }
        }
    }
    s
}

/// Runs the cycle over a corpus. Records with id `<id>.retry` whose base id
/// exists are treated as post-mitigation re-generations, not as entries.
/// Deterministic given its inputs apart from `timestamp`.
pub fn run_cycle(
    records: &[GenerationRecord],
    config: &PipelineConfig,
    store: Option<&FactStore>,
    rules: &[RouterRule],
    timestamp: &str,
) -> Result<CycleLedger> {
    let mut by_id: HashMap<&str, &GenerationRecord> = HashMap::with_capacity(records.len());
    for r in records {
        if by_id.insert(r.id.as_str(), r).is_some() {
            return Err(Error::domain(format!("duplicate record id {:?}", r.id)));
        }
    }
    let is_companion = |r: &GenerationRecord| {
        r.id.strip_suffix(RETRY_SUFFIX)
            .is_some_and(|base| by_id.contains_key(base))
    };
    let primaries: Vec<&GenerationRecord> = records.iter().filter(|r| !is_companion(r)).collect();

    let entries: Vec<LedgerEntry> = primaries
        .par_iter()
        .map(|record| {
            let signals = detect(record, config, store);
            let mut verdict = route(&signals, rules);
            let retry = by_id.get(format!("{}{RETRY_SUFFIX}", record.id).as_str());
            let (action, outcome) = match (verdict.tier, retry) {
                (None, _) => (Action::None, Outcome::Pass),
                (Some(_), None) => (Action::FlaggedForExternalMitigation, Outcome::Pending),
                (Some(_), Some(retry)) => {
                    let mut after = detect(retry, config, store);
                    after.record_id = record.id.clone();
                    let v = validate(&signals, &after, rules, config)?;
                    let outcome = if v.improved {
                        Outcome::Improved
                    } else {
                        Outcome::Residual
                    };
                    verdict.validation = Some(Validation {
                        before: signals.clone(),
                        after,
                        improved: v.improved,
                        deltas: v.deltas,
                    });
                    (Action::ValidatedAgainstRetry, outcome)
                }
            };
            Ok(LedgerEntry {
                record_id: record.id.clone(),
                signals,
                verdict,
                action_taken: action,
                outcome,
                timestamp: timestamp.to_owned(),
            })
        })
        .collect::<Result<_>>()?;

    let summary = summarize(&entries);
    Ok(CycleLedger { entries, summary })
}

impl CycleLedger {
    /// Human-readable summary; contains no timestamps.
    pub fn to_markdown(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        let _ = writeln!(out, "# Hallucination cycle summary\n");
        let _ = writeln!(out, "| Metric | Count |\n|---|---|");
        let _ = writeln!(out, "| Records | {} |", s.total);
        let _ = writeln!(out, "| Pass | {} |", s.pass);
        let _ = writeln!(out, "| Tiered | {} |", s.tiered);
        for (tier, n) in &s.per_tier {
            let _ = writeln!(out, "| Tier: {tier} | {n} |");
        }
        let _ = writeln!(out, "| Improved after retry | {} |", s.improved);
        let _ = writeln!(out, "| Residual errors | {} |", s.residuals);
        let _ = writeln!(out, "| Pending external mitigation | {} |", s.pending);

        if !s.rule_counts.is_empty() {
            let _ = writeln!(out, "\n## Rules fired\n\n| Rule | Records |\n|---|---|");
            for (r, n) in &s.rule_counts {
                let _ = writeln!(out, "| {r} | {n} |");
            }
        }
        if !s.mitigations.is_empty() {
            let _ = writeln!(out, "\n## Mitigations\n\n| Mitigation | Recommended | Improved | Residual |\n|---|---|---|---|");
            for (m, st) in &s.mitigations {
                let _ = writeln!(
                    out,
                    "| {m} | {} | {} | {} |",
                    st.recommended, st.improved, st.residual
                );
            }
        }
        let flagged: Vec<&LedgerEntry> = self
            .entries
            .iter()
            .filter(|e| !e.verdict.is_pass())
            .collect();
        if !flagged.is_empty() {
            let _ = writeln!(
                out,
                "\n## Flagged records\n\n| Record | Tier | Rules | Outcome |\n|---|---|---|---|"
            );
            for e in flagged {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {:?} |",
                    e.record_id,
                    e.verdict.tier.map(|t| t.as_str()).unwrap_or("-"),
                    e.verdict.fired_rules.join(", "),
                    e.outcome
                );
            }
        }
        out
    }
}
