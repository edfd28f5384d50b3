//! Seeded synthetic corpora with ground-truth labels.
//!
//! Every record has one answer-position token distribution over a small
//! vocabulary of single-word labels. Its latent correct answer is drawn from
//! `softmax(z / true_temperature)` where `z` are the logits behind the
//! emitted probabilities, so fitting a temperature on the corpus recovers
//! `true_temperature`.
//!
//! Injected classes:
//! * model: near-uniform distribution (entropy ≥ 1.2 nats), answers split
//!   across the top labels;
//! * context: unanimous answer, reasoning traces drawn from disjoint
//!   templates;
//! * data: the record's claim is offset from the fact store by ≥ 0.5.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::{FactEntry, FactStore};
use crate::records::{
    Claim, ClaimValue, FailureClass, GenerationRecord, GroundTruthLabel, Sample, TokenDistribution,
};
use crate::semantic::{token_bucket, DEFAULT_EMBED_DIM};
use crate::uncertainty::entropy;

pub const MAX_VOCAB: usize = 64;
const CLEAN_MAX_ENTROPY: f64 = 0.7;
const MODEL_MIN_ENTROPY: f64 = 1.2;
const MIN_DATA_OFFSET: f64 = 0.5;
const CLAIM_UNIT: &str = "%";

const REASONING_TEMPLATES: [&str; 3] = [
    "rates rose sharply",
    "quarterly revenue guidance weakened",
    "regulator tightened capital buffers",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectRates {
    pub model: f64,
    pub context: f64,
    pub data: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSpec {
    pub n_records: usize,
    pub samples_per_record: usize,
    pub true_temperature: f64,
    pub inject_rates: InjectRates,
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for MockSpec {
    fn default() -> Self {
        Self {
            n_records: 100,
            samples_per_record: 5,
            true_temperature: 1.5,
            inject_rates: InjectRates::default(),
            vocab_size: 6,
            seed: 0,
        }
    }
}

impl MockSpec {
    pub fn validate(&self) -> Result<()> {
        let r = self.inject_rates;
        let rates = [r.model, r.context, r.data];
        if rates.iter().any(|x| !(0.0..=1.0).contains(x)) || rates.iter().sum::<f64>() > 1.0 + 1e-12
        {
            return Err(Error::domain(
                "inject rates must lie in [0, 1] and sum to at most 1",
            ));
        }
        if self.n_records == 0 {
            return Err(Error::domain("n_records must be at least 1"));
        }
        if self.samples_per_record < 2 {
            return Err(Error::domain("samples_per_record must be at least 2"));
        }
        if !(self.true_temperature.is_finite() && self.true_temperature > 0.0) {
            return Err(Error::domain("true_temperature must be positive"));
        }
        if !(4..=MAX_VOCAB).contains(&self.vocab_size) {
            return Err(Error::domain(format!(
                "vocab_size must be in 4..={MAX_VOCAB}"
            )));
        }
        Ok(())
    }
}

/// Single-word labels whose embedding buckets are pairwise distinct, so
/// different answers never share a cluster.
pub fn answer_vocabulary(size: usize) -> Vec<String> {
    let mut used = HashSet::new();
    (0..)
        .map(|k| format!("ans{k}"))
        .filter(|w| used.insert(token_bucket(w, DEFAULT_EMBED_DIM)))
        .take(size)
        .collect()
}

fn softmax(z: &[f64], t: f64) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| ((x - m) / t).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn draw_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn normals(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Confident logits: a random leader is boosted until entropy ≤ 0.7.
fn clean_logits(rng: &mut ChaCha8Rng, v: usize) -> Vec<f64> {
    let mut z = normals(rng, v, 2.0);
    let lead = rng.random_range(0..v);
    while entropy(&softmax(&z, 1.0)) > CLEAN_MAX_ENTROPY {
        z[lead] += 0.5;
    }
    z
}

/// Flat logits: shrunk toward zero until entropy ≥ 1.2.
fn flat_logits(rng: &mut ChaCha8Rng, v: usize) -> Vec<f64> {
    let mut z = normals(rng, v, 0.3);
    while entropy(&softmax(&z, 1.0)) < MODEL_MIN_ENTROPY {
        z.iter_mut().for_each(|x| *x *= 0.5);
    }
    z
}

fn top_indices(probs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    idx.truncate(k);
    idx
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn build(spec: &MockSpec) -> Result<(Vec<GenerationRecord>, FactStore)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = answer_vocabulary(spec.vocab_size);
    let rates = spec.inject_rates;
    let mut records = Vec::with_capacity(spec.n_records);
    let mut store = FactStore::new();

    for i in 0..spec.n_records {
        let u: f64 = rng.random();
        let class = if u < rates.model {
            Some(FailureClass::Model)
        } else if u < rates.model + rates.context {
            Some(FailureClass::Context)
        } else if u < rates.model + rates.context + rates.data {
            Some(FailureClass::Data)
        } else {
            None
        };

        let z = if class == Some(FailureClass::Model) {
            flat_logits(&mut rng, spec.vocab_size)
        } else {
            clean_logits(&mut rng, spec.vocab_size)
        };
        let probs = softmax(&z, 1.0);
        let correct = draw_index(&mut rng, &softmax(&z, spec.true_temperature));
        let dist = TokenDistribution::new(vocab.clone(), probs.clone());

        let top = top_indices(&probs, 3);
        let clean_reasoning = format!("baseline outlook favors {}", vocab[top[0]]);
        let samples = (0..spec.samples_per_record)
            .map(|j| {
                let a = match class {
                    Some(FailureClass::Model) => top[j % top.len()],
                    _ => top[0],
                };
                let reasoning = match class {
                    Some(FailureClass::Context) => {
                        REASONING_TEMPLATES[j % REASONING_TEMPLATES.len()].to_owned()
                    }
                    _ => clean_reasoning.clone(),
                };
                Sample {
                    text: vocab[a].clone(),
                    token_dists: Some(vec![dist.clone()]),
                    token_logprobs: Some(vec![probs[a].ln()]),
                    reasoning: Some(reasoning),
                    answer: Some(vocab[a].clone()),
                    self_confidence: Some(probs[a]),
                    ..Default::default()
                }
            })
            .collect();

        let key = format!("metric_{i:05}");
        let reference = round2(rng.random_range(0.0..10.0));
        let offset = round2(rng.random_range(MIN_DATA_OFFSET..2.0));
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let claimed = if class == Some(FailureClass::Data) {
            round2(reference + sign * offset)
        } else {
            reference
        };
        store.insert(
            key.clone(),
            FactEntry {
                value: ClaimValue::Number(reference),
                unit: Some(CLAIM_UNIT.into()),
                as_of: None,
            },
        )?;

        let mut record = GenerationRecord::new(
            format!("mock-{i:05}"),
            format!("Which outcome applies to item {i}, and what is {key}?"),
            samples,
        );
        record.reference_claims = Some(vec![Claim::new(
            key,
            ClaimValue::Number(claimed),
            Some(CLAIM_UNIT),
        )]);
        record.ground_truth = Some(GroundTruthLabel {
            is_hallucinated: class.is_some(),
            failure_class: class,
            correct_answer: Some(vocab[correct].clone()),
            extra: Default::default(),
        });
        records.push(record);
    }
    Ok((records, store))
}

pub fn generate_corpus(spec: &MockSpec) -> Result<Vec<GenerationRecord>> {
    build(spec).map(|(r, _)| r)
}

/// The reference store matching [`generate_corpus`] for the same spec.
pub fn generate_fact_store(spec: &MockSpec) -> Result<FactStore> {
    build(spec).map(|(_, s)| s)
}

pub fn generate(spec: &MockSpec) -> Result<(Vec<GenerationRecord>, FactStore)> {
    build(spec)
}
