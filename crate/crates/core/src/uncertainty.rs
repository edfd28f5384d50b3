//! Token-level and sample-level uncertainty estimators.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{Sample, TokenDistribution, PROB_SUM_TOLERANCE};

/// Per-position token entropies of one sampled response, in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub per_position: Vec<f64>,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementReport {
    pub mean_vector: Vec<f64>,
    /// Population variance of each class probability across the prediction sets.
    pub per_class_variance: Vec<f64>,
    /// Mean of `per_class_variance`.
    pub variance: f64,
}

/// Shannon entropy of a probability vector in nats, with 0·ln 0 = 0.
pub fn entropy(probs: &[f64]) -> f64 {
    let h: f64 = probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    // rounding can leave a -0.0 or a tiny negative for one-hot input
    h.max(0.0)
}

/// Plug-in entropy of an empirical distribution given by counts.
pub fn entropy_from_counts<I: IntoIterator<Item = usize>>(counts: I) -> f64 {
    let counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    h.max(0.0)
}

pub fn token_entropy(dist: &TokenDistribution) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::domain("token entropy of an empty distribution"));
    }
    Ok(entropy(&dist.probs))
}

pub fn sequence_entropy_profile(sample: &Sample) -> Result<EntropyReport> {
    let dists = sample
        .token_dists
        .as_ref()
        .filter(|d| !d.is_empty())
        .ok_or_else(|| Error::capability("distribution-level data unavailable"))?;
    let per_position = dists
        .iter()
        .map(token_entropy)
        .collect::<Result<Vec<_>>>()?;
    let mean = per_position.iter().sum::<f64>() / per_position.len() as f64;
    let max = per_position.iter().copied().fold(0.0, f64::max);
    Ok(EntropyReport {
        per_position,
        mean,
        max,
    })
}

/// Plug-in (maximum-likelihood) entropy of the empirical label frequencies.
/// No small-sample bias correction is applied.
pub fn empirical_label_entropy<S: AsRef<str>>(labels: &[S]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::domain("empirical entropy of zero labels"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for l in labels {
        *counts.entry(l.as_ref()).or_default() += 1;
    }
    Ok(entropy_from_counts(counts.into_values()))
}

/// Mean prediction and spread across ensemble members or stochastic passes.
pub fn ensemble_disagreement(prob_vectors: &[Vec<f64>]) -> Result<DisagreementReport> {
    if prob_vectors.len() < 2 {
        return Err(Error::domain(
            "ensemble disagreement needs at least two prediction sets",
        ));
    }
    let dim = prob_vectors[0].len();
    if dim == 0 {
        return Err(Error::domain("empty prediction vector"));
    }
    for (i, v) in prob_vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::domain(format!(
                "prediction set {i} has dimension {}, expected {dim}",
                v.len()
            )));
        }
        let total: f64 = v.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::domain(format!(
                "prediction set {i} sums to {total}, expected 1"
            )));
        }
    }
    let m = prob_vectors.len() as f64;
    let mean_vector: Vec<f64> = (0..dim)
        .map(|k| prob_vectors.iter().map(|v| v[k]).sum::<f64>() / m)
        .collect();
    let per_class_variance: Vec<f64> = (0..dim)
        .map(|k| {
            prob_vectors
                .iter()
                .map(|v| (v[k] - mean_vector[k]).powi(2))
                .sum::<f64>()
                / m
        })
        .collect();
    let variance = per_class_variance.iter().sum::<f64>() / dim as f64;
    Ok(DisagreementReport {
        mean_vector,
        per_class_variance,
        variance,
    })
}

const NUMBER: &str = r"(\d+(?:\.\d+)?|\.\d+)\s*(%)?";

static LABELED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"(?i)confidence\s*[:=]\s*{NUMBER}")).unwrap());
static LOOSE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"(?i)confidence\b[^0-9\n]{{0,40}}?{NUMBER}")).unwrap());
static TRAILING: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"\(\s*{NUMBER}\s*\)\s*[.!]?\s*$")).unwrap());

/// Extracts a verbalized confidence such as `Confidence: 0.65`,
/// `my confidence is about 80%` or a trailing `(0.7)`.
///
/// Returns `None` when no pattern matches or the value falls outside [0, 1]
/// after percent normalization.
pub fn parse_self_declared_confidence(text: &str) -> Option<f64> {
    for re in [&*LABELED, &*LOOSE, &*TRAILING] {
        if let Some(caps) = re.captures(text) {
            let value: f64 = caps[1].parse().ok()?;
            let value = if caps.get(2).is_some() {
                value / 100.0
            } else {
                value
            };
            return (0.0..=1.0).contains(&value).then_some(value);
        }
    }
    None
}
