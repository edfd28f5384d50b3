//! Meaning-level uncertainty: embed sampled responses, cluster them, and take
//! the entropy of the cluster masses.
//!
//! The default embedder is a hashing bag-of-words model. It is deterministic
//! and dependency-free, which is what offline reports need; records that carry
//! their own `embedding` bypass it entirely.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::GenerationRecord;
use crate::uncertainty::entropy;

pub const DEFAULT_EMBED_DIM: usize = 256;
pub const DEFAULT_CLUSTER_THRESHOLD: f64 = 0.35;

/// Maps text to a fixed-dimension real vector.
pub trait Embedder {
    fn embed(&self, text: &str) -> Vec<f64>;
}

impl<F> Embedder for F
where
    F: Fn(&str) -> Vec<f64>,
{
    fn embed(&self, text: &str) -> Vec<f64> {
        self(text)
    }
}

/// Hashing bag-of-words embedder: lowercase word tokens, FNV-1a hashed into
/// `dim` buckets, counts L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_EMBED_DIM,
        }
    }
}

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for tok in word_tokens(text) {
            v[token_bucket(&tok, self.dim)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

pub fn default_embed(text: &str) -> Vec<f64> {
    HashingEmbedder::default().embed(text)
}

/// Splits on anything that is not alphanumeric or one of `. % $ ' -`, then
/// trims the punctuation that only matters inside a token. Keeps values like
/// `18.5%` and `$3.7b` intact.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || matches!(c, '.' | '%' | '$' | '\'' | '-')))
        .map(|t| t.trim_matches(|c| matches!(c, '.' | '\'' | '-')))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

pub fn token_bucket(token: &str, dim: usize) -> usize {
    (fnv1a64(token.as_bytes()) % dim as u64) as usize
}

/// Partition of samples into semantic clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub cluster_of_sample: Vec<usize>,
    pub cluster_masses: Vec<f64>,
    /// Lowest sample index in each cluster.
    pub representatives: Vec<usize>,
}

impl ClusterAssignment {
    pub fn n_clusters(&self) -> usize {
        self.cluster_masses.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters()];
        for &c in &self.cluster_of_sample {
            sizes[c] += 1;
        }
        sizes
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.cluster_of_sample
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|&x| x == 0.0)
}

/// Cosine distance in [0, 2]. Bit-identical vectors are at distance exactly 0.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 2.0;
    }
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Average-linkage agglomerative clustering under cosine distance.
///
/// Merging stops once the closest pair of clusters is farther apart than
/// `threshold`. Equal distances merge the pair with the lowest
/// (first, second) cluster ids, where a cluster's id is its lowest sample
/// index. Zero vectors never merge and stay singletons. Final cluster
/// indices are numbered by first appearance in sample order.
pub fn cluster_embeddings(vectors: &[Vec<f64>], threshold: f64) -> Result<ClusterAssignment> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::domain("clustering needs at least one vector"));
    }
    if !(0.0..=2.0).contains(&threshold) {
        return Err(Error::domain(format!(
            "cosine-distance threshold {threshold} outside [0, 2]"
        )));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::domain("embeddings have differing dimensions"));
    }

    // Active clusters are keyed by their lowest member index; `dist` holds
    // average-linkage distances between active clusters.
    let mut active: Vec<bool> = vectors.iter().map(|v| !is_zero(v)).collect();
    let mut size = vec![1usize; n];
    let mut parent: Vec<usize> = (0..n).collect();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = cosine_distance(&vectors[i], &vectors[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }

    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            for j in ((i + 1)..n).filter(|&j| active[j]) {
                let d = dist[i][j];
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((i, j, d));
                }
            }
        }
        let Some((a, b, d)) = best else { break };
        if d > threshold {
            break;
        }
        // merge b into a (a < b keeps the lowest index as the id)
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in (0..n).filter(|&k| active[k] && k != a && k != b) {
            let merged = (na * dist[a][k] + nb * dist[b][k]) / (na + nb);
            dist[a][k] = merged;
            dist[k][a] = merged;
        }
        size[a] += size[b];
        active[b] = false;
        parent[b] = a;
    }

    fn root(parent: &[usize], mut i: usize) -> usize {
        while parent[i] != i {
            i = parent[i];
        }
        i
    }

    let mut label_of_root = vec![usize::MAX; n];
    let mut cluster_of_sample = Vec::with_capacity(n);
    let mut representatives = Vec::new();
    for i in 0..n {
        let r = root(&parent, i);
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = representatives.len();
            representatives.push(i);
        }
        cluster_of_sample.push(label_of_root[r]);
    }
    let mut counts = vec![0usize; representatives.len()];
    for &c in &cluster_of_sample {
        counts[c] += 1;
    }
    let cluster_masses = counts.iter().map(|&c| c as f64 / n as f64).collect();
    Ok(ClusterAssignment {
        cluster_of_sample,
        cluster_masses,
        representatives,
    })
}

pub fn semantic_entropy(assignment: &ClusterAssignment) -> f64 {
    entropy(&assignment.cluster_masses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticEntropyResult {
    pub h_s: f64,
    pub assignment: ClusterAssignment,
}

/// Embeds `texts`, using `precomputed[i]` where available.
pub(crate) fn embed_all<E: Embedder + ?Sized>(
    texts: &[&str],
    precomputed: &[Option<&Vec<f64>>],
    embedder: &E,
) -> Vec<Vec<f64>> {
    texts
        .iter()
        .zip(precomputed)
        .map(|(t, pre)| match pre {
            Some(v) => (*v).clone(),
            None => embedder.embed(t),
        })
        .collect()
}

/// Clusters strings by meaning with the given embedder.
pub fn cluster_texts<E: Embedder + ?Sized>(
    texts: &[&str],
    embedder: &E,
    threshold: f64,
) -> Result<ClusterAssignment> {
    let vectors: Vec<Vec<f64>> = texts.iter().map(|t| embedder.embed(t)).collect();
    cluster_embeddings(&vectors, threshold)
}

/// Samples every response of `record`, clusters them, and returns the
/// entropy of the cluster masses. Stored embeddings take precedence over the
/// embedder.
pub fn semantic_entropy_of_record<E: Embedder + ?Sized>(
    record: &GenerationRecord,
    embedder: &E,
    threshold: f64,
) -> Result<SemanticEntropyResult> {
    if record.samples.len() < 2 {
        return Err(Error::capability(
            "semantic entropy requires multiple generations",
        ));
    }
    let texts: Vec<&str> = record.samples.iter().map(|s| s.text.as_str()).collect();
    let pre: Vec<Option<&Vec<f64>>> = record
        .samples
        .iter()
        .map(|s| s.embedding.as_ref())
        .collect();
    let vectors = embed_all(&texts, &pre, embedder);
    let assignment = cluster_embeddings(&vectors, threshold)?;
    Ok(SemanticEntropyResult {
        h_s: semantic_entropy(&assignment),
        assignment,
    })
}
