//! Agreement-based estimators: self-consistency consensus, agreement across
//! paraphrased queries, and the reasoning/answer entropy decomposition
//! H(R, A) = H(R) + H(A) - I(R; A) used by RACE.
//!
//! All entropies here are plug-in estimates over cluster counts, so every
//! number can be checked by hand from a contingency table.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::GenerationRecord;
use crate::semantic::{cluster_texts, ClusterAssignment, Embedder, DEFAULT_CLUSTER_THRESHOLD};
use crate::uncertainty::entropy_from_counts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub consensus_answer: String,
    pub support: f64,
    pub dissenters: Vec<usize>,
}

/// Picks the largest cluster; equal sizes go to the lexicographically
/// smallest representative text. Returns the winning cluster index.
fn winning_cluster(assignment: &ClusterAssignment, texts: &[&str]) -> usize {
    let sizes = assignment.cluster_sizes();
    (0..sizes.len())
        .min_by(|&a, &b| {
            sizes[b].cmp(&sizes[a]).then_with(|| {
                texts[assignment.representatives[a]].cmp(texts[assignment.representatives[b]])
            })
        })
        .expect("at least one cluster")
}

fn consensus_of_texts<E: Embedder + ?Sized>(
    texts: &[&str],
    embedder: &E,
    threshold: f64,
) -> Result<ConsensusResult> {
    let assignment = cluster_texts(texts, embedder, threshold)?;
    let win = winning_cluster(&assignment, texts);
    Ok(ConsensusResult {
        consensus_answer: texts[assignment.representatives[win]].to_owned(),
        support: assignment.cluster_masses[win],
        dissenters: assignment
            .cluster_of_sample
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != win)
            .map(|(i, _)| i)
            .collect(),
    })
}

/// Majority answer across sampled generations, clustered by meaning. Uses
/// each sample's `answer` field, falling back to its text.
pub fn self_consistency_consensus<E: Embedder + ?Sized>(
    record: &GenerationRecord,
    embedder: &E,
    threshold: f64,
) -> Result<ConsensusResult> {
    if record.samples.len() < 2 {
        return Err(Error::capability(
            "self-consistency needs at least two generations",
        ));
    }
    let texts: Vec<&str> = record.samples.iter().map(|s| s.answer_or_text()).collect();
    consensus_of_texts(&texts, embedder, threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicConsistency {
    pub agreement: f64,
    /// Record-id pairs whose answers fell in different clusters, in corpus order.
    pub contradictions: Vec<(String, String)>,
}

/// Agreement across records that pose the same question in different words.
/// Each record is first reduced to one answer: its consensus when it has
/// several samples, else its single sample.
pub fn intrinsic_consistency<E: Embedder + ?Sized>(
    records: &[GenerationRecord],
    embedder: &E,
    threshold: f64,
) -> Result<IntrinsicConsistency> {
    if records.len() < 2 {
        return Err(Error::capability(
            "intrinsic consistency needs at least two paraphrases",
        ));
    }
    let answers = records
        .iter()
        .map(|r| match r.samples.len() {
            0 => Err(Error::domain(format!("record {} has no samples", r.id))),
            1 => Ok(r.samples[0].answer_or_text().to_owned()),
            _ => self_consistency_consensus(r, embedder, threshold).map(|c| c.consensus_answer),
        })
        .collect::<Result<Vec<String>>>()?;
    let texts: Vec<&str> = answers.iter().map(String::as_str).collect();
    let assignment = cluster_texts(&texts, embedder, threshold)?;
    let agreement = assignment
        .cluster_masses
        .iter()
        .copied()
        .fold(0.0, f64::max);
    let mut contradictions = Vec::new();
    for i in 0..records.len() {
        for j in (i + 1)..records.len() {
            if assignment.cluster_of_sample[i] != assignment.cluster_of_sample[j] {
                contradictions.push((records[i].id.clone(), records[j].id.clone()));
            }
        }
    }
    Ok(IntrinsicConsistency {
        agreement,
        contradictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaceConfig {
    pub reasoning_threshold: f64,
    pub answer_threshold: f64,
    pub flag_answer_support: f64,
    pub flag_reasoning_entropy: f64,
    pub flag_mi_max: f64,
}

impl Default for RaceConfig {
    fn default() -> Self {
        Self {
            reasoning_threshold: DEFAULT_CLUSTER_THRESHOLD,
            answer_threshold: DEFAULT_CLUSTER_THRESHOLD,
            flag_answer_support: 0.8,
            flag_reasoning_entropy: 0.5,
            flag_mi_max: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceReport {
    pub h_reasoning: f64,
    pub h_answer: f64,
    pub h_joint: f64,
    /// H_R + H_A - H_joint, clamped at 0.
    pub mutual_information: f64,
    /// Unclamped plug-in value.
    pub mutual_information_raw: f64,
    pub answer_support: f64,
    pub flag_right_answer_wrong_reasoning: bool,
}

/// Plug-in entropies over the (reasoning cluster, answer cluster)
/// contingency table of one record's samples.
pub fn race_from_assignments(
    reasoning: &ClusterAssignment,
    answers: &ClusterAssignment,
    config: &RaceConfig,
) -> RaceReport {
    let h_reasoning = entropy_from_counts(reasoning.cluster_sizes());
    let h_answer = entropy_from_counts(answers.cluster_sizes());
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    for (&r, &a) in reasoning
        .cluster_of_sample
        .iter()
        .zip(&answers.cluster_of_sample)
    {
        *joint.entry((r, a)).or_default() += 1;
    }
    let mut cells: Vec<usize> = joint.into_values().collect();
    // fixed summation order
    cells.sort_unstable();
    let h_joint = entropy_from_counts(cells);
    let mutual_information_raw = h_reasoning + h_answer - h_joint;
    let mutual_information = mutual_information_raw.max(0.0);
    let answer_support = answers.cluster_masses.iter().copied().fold(0.0, f64::max);
    let flag_right_answer_wrong_reasoning = answer_support >= config.flag_answer_support
        && h_reasoning >= config.flag_reasoning_entropy
        && mutual_information <= config.flag_mi_max;
    RaceReport {
        h_reasoning,
        h_answer,
        h_joint,
        mutual_information,
        mutual_information_raw,
        answer_support,
        flag_right_answer_wrong_reasoning,
    }
}

pub fn race_metrics<E: Embedder + ?Sized>(
    record: &GenerationRecord,
    embedder: &E,
    config: &RaceConfig,
) -> Result<RaceReport> {
    if record.samples.len() < 2 {
        return Err(Error::capability("RACE needs at least two generations"));
    }
    let mut reasonings = Vec::with_capacity(record.samples.len());
    let mut answers = Vec::with_capacity(record.samples.len());
    for (i, s) in record.samples.iter().enumerate() {
        match (&s.reasoning, &s.answer) {
            (Some(r), Some(a)) => {
                reasonings.push(r.as_str());
                answers.push(a.as_str());
            }
            _ => {
                return Err(Error::capability(format!(
                    "sample {i} lacks a reasoning trace or answer"
                )))
            }
        }
    }
    let r = cluster_texts(&reasonings, embedder, config.reasoning_threshold)?;
    let a = cluster_texts(&answers, embedder, config.answer_threshold)?;
    Ok(race_from_assignments(&r, &a, config))
}
