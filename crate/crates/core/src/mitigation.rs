//! Inference-time distribution transforms and context-length management.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::TokenDistribution;

pub const DEFAULT_OVERLAP: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: None,
            top_p: None,
        }
    }
}

impl SamplingPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::domain(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if self.top_k == Some(0) {
            return Err(Error::domain("top_k must be at least 1"));
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::domain(format!("top_p {p} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

fn renormalized(labels: Vec<String>, weights: Vec<f64>) -> TokenDistribution {
    let total: f64 = weights.iter().sum();
    TokenDistribution::new(labels, weights.into_iter().map(|w| w / total).collect())
}

/// Applies temperature, then top-k, then top-p, then renormalizes.
///
/// Temperature works in the probability domain (p^(1/T), renormalized), which
/// equals logit scaling whenever the probabilities came from a softmax.
/// Tokens removed by top-k or top-p are dropped from the output; survivors
/// keep their original order.
pub fn apply_sampling_policy(
    dist: &TokenDistribution,
    policy: &SamplingPolicy,
) -> Result<TokenDistribution> {
    policy.validate()?;
    if dist.is_empty() {
        return Err(Error::domain("empty distribution"));
    }
    let n = dist.len();

    // log domain so tiny temperatures do not underflow the leader
    let logs: Vec<f64> = dist
        .probs
        .iter()
        .map(|&p| {
            if p > 0.0 {
                p.ln() / policy.temperature
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::domain("distribution has no mass"));
    }
    let weights: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let scaled: Vec<f64> = weights.iter().map(|w| w / total).collect();

    // stable sort: ties keep original order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scaled[b].total_cmp(&scaled[a]));

    let mut keep_n = n;
    if let Some(k) = policy.top_k {
        keep_n = keep_n.min(k);
    }
    if let Some(p) = policy.top_p {
        let mut cum = 0.0;
        for (rank, &i) in order.iter().take(keep_n).enumerate() {
            cum += scaled[i];
            if cum >= p - 1e-12 {
                keep_n = rank + 1;
                break;
            }
        }
    }
    let mut kept = vec![false; n];
    for &i in order.iter().take(keep_n) {
        kept[i] = true;
    }
    let (labels, weights): (Vec<String>, Vec<f64>) = (0..n)
        .filter(|&i| kept[i])
        .map(|i| (dist.token_labels[i].clone(), scaled[i]))
        .unzip();
    Ok(renormalized(labels, weights))
}

/// Restricts a distribution to an allowed label set and renormalizes.
pub fn constrained_distribution(
    dist: &TokenDistribution,
    allowed: &HashSet<String>,
) -> Result<TokenDistribution> {
    if allowed.is_empty() {
        return Err(Error::Constraint("allowed set is empty".into()));
    }
    let (labels, weights): (Vec<String>, Vec<f64>) = dist
        .token_labels
        .iter()
        .zip(&dist.probs)
        .filter(|(l, _)| allowed.contains(*l))
        .map(|(l, &p)| (l.clone(), p))
        .unzip();
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Constraint("no permissible token".into()));
    }
    Ok(renormalized(labels, weights))
}

// ─── Chunking ───────────────────────────────────────────────────────────────

/// A slice of a document; offsets count characters, not bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    pub start_offset: usize,
    pub end_offset: usize,
    pub text: String,
}

/// Moves `pos` back to just after a whitespace character, searching at most
/// `window` characters. Returns `pos` unchanged when none is found.
fn snap_back(chars: &[char], pos: usize, window: usize, floor: usize) -> usize {
    let lowest = pos.saturating_sub(window).max(floor + 1);
    (lowest..=pos)
        .rev()
        .find(|&q| q > 0 && q <= chars.len() && chars[q - 1].is_whitespace())
        .unwrap_or(pos)
}

/// Tolerance on the measured overlap fraction that whitespace snapping can
/// introduce, for a given target size.
pub fn snapping_tolerance(target_size: usize) -> f64 {
    (2 * (target_size / 10) + 1) as f64 / target_size as f64
}

/// Sliding-window chunking with overlap.
///
/// Chunk `i` nominally spans `[i * stride, i * stride + target_size)` with
/// `stride = max(1, floor(target_size * (1 - overlap_frac)))`. Interior
/// boundaries snap back to the nearest whitespace within `target_size / 10`
/// characters; the last chunk always ends at the end of the document.
pub fn chunk_document(text: &str, target_size: usize, overlap_frac: f64) -> Result<Vec<Chunk>> {
    if target_size == 0 {
        return Err(Error::domain("target chunk size must be at least 1"));
    }
    if !(0.0..0.5).contains(&overlap_frac) {
        return Err(Error::domain(format!(
            "overlap fraction {overlap_frac} outside [0, 0.5)"
        )));
    }
    let chars: Vec<char> = text.chars().collect();
    let len = chars.len();
    if len == 0 {
        return Ok(Vec::new());
    }
    let stride = ((target_size as f64 * (1.0 - overlap_frac)).floor() as usize).max(1);
    let window = target_size / 10;

    let mut bounds: Vec<(usize, usize)> = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    loop {
        let nominal_end = i * stride + target_size;
        if nominal_end >= len {
            bounds.push((start, len));
            break;
        }
        let nominal_next = (i + 1) * stride;
        // the next start snaps the same way an end does, so a zero-overlap
        // split lands on one shared boundary
        let next_start = snap_back(&chars, nominal_next, window, start);
        let end = snap_back(&chars, nominal_end, window, start).max(next_start);
        bounds.push((start, end));
        start = next_start;
        i += 1;
    }

    Ok(bounds
        .into_iter()
        .enumerate()
        .map(|(index, (s, e))| Chunk {
            index,
            start_offset: s,
            end_offset: e,
            text: chars[s..e].iter().collect(),
        })
        .collect())
}

// ─── Map-reduce summarization ───────────────────────────────────────────────

pub const REDUCE_SEPARATOR: &str = "\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryNode {
    pub level: usize,
    pub index: usize,
    pub text: String,
    /// Node indices in the previous level; empty for map-phase nodes.
    pub children: Vec<usize>,
    /// Source chunk indices covered by this node.
    pub chunk_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTree {
    pub levels: Vec<Vec<SummaryNode>>,
}

impl SummaryTree {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReduceSummary {
    pub summary: String,
    pub tree: SummaryTree,
}

/// Summarizes every chunk, then repeatedly joins groups of `fan_in`
/// summaries and summarizes the joined text until one node remains.
///
/// `summarizer` is the injection point for an external text service; its
/// errors propagate unchanged.
pub fn summarize_map_reduce<F, E>(
    chunks: &[Chunk],
    summarizer: F,
    fan_in: usize,
) -> std::result::Result<MapReduceSummary, E>
where
    F: Fn(&str) -> std::result::Result<String, E>,
    E: From<Error>,
{
    if chunks.is_empty() {
        return Err(Error::domain("map-reduce needs at least one chunk").into());
    }
    if fan_in < 2 {
        return Err(Error::domain("fan-in must be at least 2").into());
    }
    let mut level: Vec<SummaryNode> = chunks
        .iter()
        .enumerate()
        .map(|(i, c)| {
            Ok(SummaryNode {
                level: 0,
                index: i,
                text: summarizer(&c.text)?,
                children: Vec::new(),
                chunk_indices: vec![c.index],
            })
        })
        .collect::<std::result::Result<_, E>>()?;
    let mut levels = Vec::new();
    while level.len() > 1 {
        let depth = levels.len() + 1;
        let next = level
            .chunks(fan_in)
            .enumerate()
            .map(|(g, group)| {
                let joined = group
                    .iter()
                    .map(|n| n.text.as_str())
                    .collect::<Vec<_>>()
                    .join(REDUCE_SEPARATOR);
                Ok(SummaryNode {
                    level: depth,
                    index: g,
                    text: summarizer(&joined)?,
                    children: group.iter().map(|n| n.index).collect(),
                    chunk_indices: group
                        .iter()
                        .flat_map(|n| n.chunk_indices.iter().copied())
                        .collect(),
                })
            })
            .collect::<std::result::Result<Vec<_>, E>>()?;
        levels.push(std::mem::replace(&mut level, next));
    }
    let summary = level[0].text.clone();
    levels.push(level);
    Ok(MapReduceSummary {
        summary,
        tree: SummaryTree { levels },
    })
}
