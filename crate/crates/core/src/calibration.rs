//! Calibration metrics and post-hoc calibrators.
//!
//! | Item                          | Fit                      | Apply                       |
//! |-------------------------------|--------------------------|-----------------------------|
//! | [`compute_ece`]               | n/a                      | equal-width binning         |
//! | [`TemperatureModel`]          | golden-section on ln T   | softmax(z / T)              |
//! | [`IsotonicModel`]             | pool adjacent violators  | step-function lookup        |
//! | [`bayesian_aggregate`]        | n/a                      | mean + percentile interval  |
//! | [`aggregate_self_evaluation`] | n/a                      | fraction of "yes" votes     |

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::entropy;

pub const DEFAULT_ECE_BINS: usize = 10;
pub const DEFAULT_T_BOUNDS: (f64, f64) = (0.05, 20.0);
pub const DEFAULT_T_TOLERANCE: f64 = 1e-4;

// ─── Expected calibration error ─────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Fraction correct; 0 for an empty bin.
    pub accuracy: f64,
    /// Mean confidence; 0 for an empty bin.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinTable {
    pub edges: Vec<f64>,
    pub bins: Vec<Bin>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EceReport {
    pub ece: f64,
    pub bin_table: BinTable,
}

fn bin_index(conf: f64, m: usize) -> usize {
    // right-open bins, last bin closed at 1
    ((conf * m as f64).floor() as usize).min(m - 1)
}

/// Expected calibration error over `m` equal-width confidence bins.
pub fn compute_ece(pairs: &[(f64, bool)], m: usize) -> Result<EceReport> {
    if pairs.is_empty() {
        return Err(Error::domain("ECE of an empty prediction set"));
    }
    if m == 0 {
        return Err(Error::domain("ECE needs at least one bin"));
    }
    if let Some((c, _)) = pairs.iter().find(|(c, _)| !(0.0..=1.0).contains(c)) {
        return Err(Error::domain(format!("confidence {c} outside [0, 1]")));
    }
    let mut counts = vec![0usize; m];
    let mut correct = vec![0usize; m];
    let mut conf_sum = vec![0.0; m];
    for &(c, ok) in pairs {
        let b = bin_index(c, m);
        counts[b] += 1;
        conf_sum[b] += c;
        correct[b] += usize::from(ok);
    }
    let n = pairs.len();
    let edges: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
    let mut ece = 0.0;
    let bins = (0..m)
        .map(|b| {
            let (accuracy, confidence) = if counts[b] == 0 {
                (0.0, 0.0)
            } else {
                let k = counts[b] as f64;
                (correct[b] as f64 / k, conf_sum[b] / k)
            };
            if counts[b] > 0 {
                ece += counts[b] as f64 / n as f64 * (accuracy - confidence).abs();
            }
            Bin {
                lower: edges[b],
                upper: edges[b + 1],
                count: counts[b],
                accuracy,
                confidence,
            }
        })
        .collect();
    Ok(EceReport {
        ece,
        bin_table: BinTable { edges, bins, n },
    })
}

// ─── Temperature scaling ────────────────────────────────────────────────────

/// Softmax of `logits / t` with max subtraction.
pub fn apply_temperature(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain(format!(
            "temperature must be positive, got {t}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::domain("softmax of an empty logit vector"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::domain("non-finite logit"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| ((z - max) / t).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

fn log_softmax_at(logits: &[f64], t: f64, idx: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits
        .iter()
        .map(|z| ((z - max) / t).exp())
        .sum::<f64>()
        .ln();
    (logits[idx] - max) / t - lse
}

/// Mean negative log-likelihood of `labels` under softmax(z / t).
pub fn mean_nll(logit_sets: &[Vec<f64>], labels: &[usize], t: f64) -> f64 {
    let total: f64 = logit_sets
        .iter()
        .zip(labels)
        .map(|(z, &y)| -log_softmax_at(z, t, y))
        .sum();
    total / logit_sets.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureModel {
    #[serde(rename = "T")]
    pub temperature: f64,
    /// Mean NLL on the fit set at the fitted temperature, nats per example.
    pub fit_nll: f64,
    pub n_fit: usize,
}

impl TemperatureModel {
    pub fn apply(&self, logits: &[f64]) -> Result<Vec<f64>> {
        apply_temperature(logits, self.temperature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureFitConfig {
    pub bounds: (f64, f64),
    pub tolerance: f64,
}

impl Default for TemperatureFitConfig {
    fn default() -> Self {
        Self {
            bounds: DEFAULT_T_BOUNDS,
            tolerance: DEFAULT_T_TOLERANCE,
        }
    }
}

pub fn fit_temperature(logit_sets: &[Vec<f64>], labels: &[usize]) -> Result<TemperatureModel> {
    fit_temperature_with(logit_sets, labels, TemperatureFitConfig::default())
}

/// Minimizes mean NLL over T by golden-section search on ln T.
///
/// NLL is convex in 1/T, hence unimodal in ln T. The search stops when the
/// bracket is narrower than `tolerance` in T; the bracket endpoints and T = 1
/// are also scored so the result never loses to them.
pub fn fit_temperature_with(
    logit_sets: &[Vec<f64>],
    labels: &[usize],
    config: TemperatureFitConfig,
) -> Result<TemperatureModel> {
    let (lo, hi) = config.bounds;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) || !(config.tolerance > 0.0) {
        return Err(Error::Config(format!(
            "invalid temperature bounds {lo}..{hi} / tolerance {}",
            config.tolerance
        )));
    }
    if logit_sets.len() != labels.len() {
        return Err(Error::Fit(format!(
            "{} logit vectors but {} labels",
            logit_sets.len(),
            labels.len()
        )));
    }
    if logit_sets.len() < 2 {
        return Err(Error::Fit(
            "temperature fit needs at least two examples".into(),
        ));
    }
    for (i, (z, &y)) in logit_sets.iter().zip(labels).enumerate() {
        if y >= z.len() {
            return Err(Error::Fit(format!(
                "label {y} out of range for example {i}"
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Fit(format!("non-finite logit in example {i}")));
        }
    }
    let degenerate = logit_sets.iter().all(|z| z.iter().all(|&v| v == z[0]));
    if degenerate {
        return Err(Error::Fit(
            "all logit vectors are constant; temperature is unidentifiable".into(),
        ));
    }

    let nll = |ln_t: f64| mean_nll(logit_sets, labels, ln_t.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (nll(c), nll(d));
    while b.exp() - a.exp() > config.tolerance {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = nll(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = nll(d);
        }
    }
    let mid = 0.5 * (a + b);
    let mut candidates = vec![mid.exp(), lo, hi];
    if (lo..=hi).contains(&1.0) {
        candidates.push(1.0);
    }
    let (temperature, fit_nll) = candidates
        .into_iter()
        .map(|t| (t, mean_nll(logit_sets, labels, t)))
        .fold((f64::NAN, f64::INFINITY), |best, cur| {
            if cur.1 < best.1 {
                cur
            } else {
                best
            }
        });
    Ok(TemperatureModel {
        temperature,
        fit_nll,
        n_fit: logit_sets.len(),
    })
}

/// Token entropy after temperature scaling the position's logits.
pub fn calibrated_token_entropy(logits: &[f64], t: f64) -> Result<f64> {
    Ok(entropy(&apply_temperature(logits, t)?))
}

/// Probability of a whole generated sequence after temperature scaling every
/// position. Needs full per-position logits; sampled-token log-probabilities
/// alone cannot be rescaled.
pub fn calibrated_sequence_probability(
    per_position_logits: &[Vec<f64>],
    chosen: &[usize],
    t: f64,
) -> Result<f64> {
    if per_position_logits.is_empty() || per_position_logits.len() != chosen.len() {
        return Err(Error::capability(
            "full per-position distributions are required for every generated token",
        ));
    }
    if !(t > 0.0) {
        return Err(Error::domain(format!(
            "temperature must be positive, got {t}"
        )));
    }
    let mut log_p = 0.0;
    for (pos, (z, &w)) in per_position_logits.iter().zip(chosen).enumerate() {
        if w >= z.len() {
            return Err(Error::domain(format!(
                "chosen index {w} out of range at position {pos}"
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite logit at position {pos}")));
        }
        log_p += log_softmax_at(z, t, w);
    }
    Ok(log_p.exp())
}

/// Mean of temperature-scaled softmaxes over stochastic forward passes.
pub fn mc_calibrated_mean(pass_logits: &[Vec<f64>], t: f64) -> Result<Vec<f64>> {
    let first = pass_logits
        .first()
        .ok_or_else(|| Error::domain("no forward passes"))?;
    let dim = first.len();
    let mut mean = vec![0.0; dim];
    for (m, z) in pass_logits.iter().enumerate() {
        if z.len() != dim {
            return Err(Error::domain(format!(
                "pass {m} has dimension {}, expected {dim}",
                z.len()
            )));
        }
        for (acc, p) in mean.iter_mut().zip(apply_temperature(z, t)?) {
            *acc += p;
        }
    }
    let k = pass_logits.len() as f64;
    mean.iter_mut().for_each(|x| *x /= k);
    Ok(mean)
}

// ─── Isotonic regression ────────────────────────────────────────────────────

/// Monotone step function. `values[i]` applies from `breakpoints[i]` up to
/// the next breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicModel {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl IsotonicModel {
    pub fn apply(&self, score: f64) -> f64 {
        apply_isotonic(self, score)
    }

    /// Sum of squared errors of the fitted step function on `pairs`.
    pub fn sse(&self, pairs: &[(f64, bool)]) -> f64 {
        pairs
            .iter()
            .map(|&(s, y)| (f64::from(u8::from(y)) - self.apply(s)).powi(2))
            .sum()
    }
}

/// Groups equal scores: returns (distinct score, mean outcome, count) sorted
/// by score.
pub(crate) fn group_ties(pairs: &[(f64, bool)]) -> Vec<(f64, f64, usize)> {
    let mut sorted: Vec<(f64, bool)> = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups: Vec<(f64, f64, usize)> = Vec::new();
    for (s, y) in sorted {
        let y = f64::from(u8::from(y));
        match groups.last_mut() {
            Some((gs, sum, n)) if *gs == s => {
                *sum += y;
                *n += 1;
            }
            _ => groups.push((s, y, 1)),
        }
    }
    for g in &mut groups {
        g.1 /= g.2 as f64;
    }
    groups
}

/// Least-squares non-decreasing fit by pool adjacent violators.
///
/// Tied scores are pooled before the pass so the fitted function is
/// single-valued. Each pooled block contributes one breakpoint at its lowest
/// score.
pub fn fit_isotonic(pairs: &[(f64, bool)]) -> Result<IsotonicModel> {
    if pairs.is_empty() {
        return Err(Error::domain("isotonic fit needs at least one pair"));
    }
    if pairs.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::domain("non-finite score"));
    }
    // stack of blocks: (first score, weighted mean, weight)
    let mut blocks: Vec<(f64, f64, f64)> = Vec::new();
    for (s, mean, n) in group_ties(pairs) {
        let mut cur = (s, mean, n as f64);
        while let Some(&(ps, pm, pw)) = blocks.last() {
            if pm <= cur.1 {
                break;
            }
            blocks.pop();
            let w = pw + cur.2;
            cur = (ps, (pm * pw + cur.1 * cur.2) / w, w);
        }
        blocks.push(cur);
    }
    Ok(IsotonicModel {
        breakpoints: blocks.iter().map(|b| b.0).collect(),
        values: blocks.iter().map(|b| b.1).collect(),
    })
}

/// Step-function lookup, clamped to the first and last fitted values.
pub fn apply_isotonic(model: &IsotonicModel, score: f64) -> f64 {
    let idx = model.breakpoints.partition_point(|&b| b <= score);
    model.values[idx.saturating_sub(1)]
}

// ─── Serialized calibration artifacts ──────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CalibrationMap {
    Temperature(TemperatureModel),
    Isotonic(IsotonicModel),
}

impl CalibrationMap {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: CalibrationMap = serde_json::from_str(text)?;
        match &map {
            CalibrationMap::Temperature(m) if !(m.temperature > 0.0) => {
                return Err(Error::Load(format!(
                    "non-positive temperature {}",
                    m.temperature
                )))
            }
            CalibrationMap::Isotonic(m)
                if m.breakpoints.len() != m.values.len()
                    || m.values.is_empty()
                    || m.breakpoints.windows(2).any(|w| w[0] >= w[1])
                    || m.values.windows(2).any(|w| w[0] > w[1]) =>
            {
                return Err(Error::Load("malformed isotonic map".into()))
            }
            _ => {}
        }
        Ok(map)
    }
}

// ─── Bayesian aggregation ───────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredibleSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

/// Percentile by linear interpolation between order statistics of `sorted`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean and equal-tailed percentile interval of probability samples drawn
/// from a posterior (or any stochastic ensemble).
pub fn bayesian_aggregate(prob_samples: &[f64], level: f64) -> Result<CredibleSummary> {
    if prob_samples.is_empty() {
        return Err(Error::domain("no probability samples"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!(
            "credible level {level} outside (0, 1)"
        )));
    }
    if prob_samples.iter().any(|p| !p.is_finite()) {
        return Err(Error::domain("non-finite probability sample"));
    }
    let mut sorted = prob_samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let tail = (1.0 - level) / 2.0;
    let lower = percentile(&sorted, tail);
    let upper = percentile(&sorted, 1.0 - tail);
    Ok(CredibleSummary {
        // rounding in the sum can push the mean a hair past a constant sample
        mean: mean.clamp(sorted[0], sorted[sorted.len() - 1]),
        lower,
        upper,
        level,
    })
}

// ─── Multi-pass self-evaluation ─────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vote {
    Yes,
    No,
    Unsure,
}

impl FromStr for Vote {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" => Ok(Vote::Yes),
            "no" => Ok(Vote::No),
            "unsure" => Ok(Vote::Unsure),
            other => Err(Error::domain(format!("unrecognized vote {other:?}"))),
        }
    }
}

/// Fraction of passes that judged the answer correct. `Unsure` and `No`
/// both count only toward the denominator.
pub fn aggregate_self_evaluation(votes: &[Vote]) -> Result<f64> {
    if votes.is_empty() {
        return Err(Error::domain("no self-evaluation votes"));
    }
    let yes = votes.iter().filter(|&&v| v == Vote::Yes).count();
    Ok(yes as f64 / votes.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn single_bin_gap() {
        let mut pairs = vec![(0.92, true); 75];
        pairs.extend(vec![(0.92, false); 25]);
        let r = compute_ece(&pairs, 10).unwrap();
        assert!((r.ece - 0.17).abs() < 1e-12, "{}", r.ece);
        assert_eq!(r.bin_table.bins[9].count, 100);
        assert_eq!(r.bin_table.bins.iter().map(|b| b.count).sum::<usize>(), 100);
    }

    #[test]
    fn ece_edge_cases() {
        assert_eq!(compute_ece(&[(1.0, true)], 10).unwrap().ece, 0.0);
        assert!(compute_ece(&[], 10).is_err());
        assert!(compute_ece(&[(1.2, true)], 10).is_err());
        assert!(compute_ece(&[(0.5, true)], 0).is_err());
        let r = compute_ece(&[(0.0, false), (1.0, true), (0.1, false)], 10).unwrap();
        assert_eq!(r.bin_table.bins[0].count, 1);
        assert_eq!(r.bin_table.bins[1].count, 1);
        assert_eq!(r.bin_table.bins[9].count, 1);
        assert_eq!(r.bin_table.edges.len(), 11);
    }

    #[test]
    fn calibrated_generator_has_small_ece() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pairs: Vec<(f64, bool)> = (0..10_000)
            .map(|_| (0.7, rng.random::<f64>() < 0.7))
            .collect();
        let ece = compute_ece(&pairs, 10).unwrap().ece;
        assert!(ece < 0.02, "{ece}");
    }

    #[test]
    fn softmax_identity_and_limits() {
        let z = [2.0, 1.0, 0.0];
        let p = apply_temperature(&z, 1.0).unwrap();
        let denom: f64 = z.iter().map(|v: &f64| v.exp()).sum();
        for (pi, zi) in p.iter().zip(z) {
            assert!((pi - zi.exp() / denom).abs() < 1e-15);
        }
        let hot = apply_temperature(&z, 1000.0).unwrap();
        let spread = hot.iter().copied().fold(f64::MIN, f64::max)
            - hot.iter().copied().fold(f64::MAX, f64::min);
        assert!(spread < 0.01);
        assert!(apply_temperature(&z, 0.0).is_err());
        assert!(apply_temperature(&z, -1.0).is_err());
    }

    #[test]
    fn calibrated_entropy_examples() {
        let z = [5.0, 0.0, 0.0];
        assert_eq!(
            calibrated_token_entropy(&z, 1.0).unwrap(),
            entropy(&apply_temperature(&z, 1.0).unwrap())
        );
        assert!(
            calibrated_token_entropy(&z, 2.0).unwrap() > calibrated_token_entropy(&z, 1.0).unwrap()
        );
        assert!(calibrated_token_entropy(&[100.0, 0.0], 1.0).unwrap() < 1e-30);
        // at T=50: p = softmax([2, 0]) => H = ln(1+e^2) - 2 e^2/(1+e^2)
        let h = calibrated_token_entropy(&[100.0, 0.0], 50.0).unwrap();
        let e2 = 2f64.exp();
        let expect = (1.0 + e2).ln() - 2.0 * e2 / (1.0 + e2);
        assert!((h - expect).abs() < 1e-12);
        let h = calibrated_token_entropy(&[100.0, 0.0], 1e4).unwrap();
        assert!((h - 2f64.ln()).abs() < 1e-4);
    }

    #[test]
    fn sequence_probability() {
        let p = calibrated_sequence_probability(&[vec![1.0, 2.0, 0.5]], &[1], 1.0).unwrap();
        let expect = apply_temperature(&[1.0, 2.0, 0.5], 1.0).unwrap()[1];
        assert!((p - expect).abs() < 1e-15);

        let p = calibrated_sequence_probability(&[vec![3.0, 3.0], vec![-1.0, -1.0]], &[0, 1], 1.7)
            .unwrap();
        assert!((p - 0.25).abs() < 1e-15);

        // hand evaluation of the product, 3 positions x 4 classes at T = 1.5
        let z: [Vec<f64>; 3] = [
            vec![2.0, 0.5, -1.0, 0.0],
            vec![0.1, 0.2, 0.3, 0.4],
            vec![-2.0, 4.0, 1.0, 1.0],
        ];
        let chosen = [0, 3, 2];
        let mut expect = 1.0;
        for (zz, &w) in z.iter().zip(&chosen) {
            let denom: f64 = zz.iter().map(|v| (v / 1.5).exp()).sum();
            expect *= (zz[w] / 1.5).exp() / denom;
        }
        let p = calibrated_sequence_probability(&z, &chosen, 1.5).unwrap();
        assert!((p - expect).abs() < 1e-14, "{p} vs {expect}");

        assert!(matches!(
            calibrated_sequence_probability(&[], &[], 1.0),
            Err(Error::Capability(_))
        ));
        assert!(calibrated_sequence_probability(&[vec![1.0]], &[3], 1.0).is_err());
    }

    #[test]
    fn mc_mean() {
        let z = vec![0.3, -0.2, 1.1];
        assert_eq!(
            mc_calibrated_mean(std::slice::from_ref(&z), 1.3).unwrap(),
            apply_temperature(&z, 1.3).unwrap()
        );

        let m = mc_calibrated_mean(&[vec![1.5, -0.5], vec![-1.5, 0.5]], 0.7).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-15 && (m[1] - 0.5).abs() < 1e-15);

        let passes = [
            vec![0.2, 1.0, -0.4],
            vec![2.0, 0.0, 0.0],
            vec![-1.0, 0.5, 0.5],
        ];
        let m = mc_calibrated_mean(&passes, 1.5).unwrap();
        for k in 0..3 {
            let expect: f64 = passes
                .iter()
                .map(|z| {
                    let d: f64 = z.iter().map(|v| (v / 1.5).exp()).sum();
                    (z[k] / 1.5).exp() / d
                })
                .sum::<f64>()
                / 3.0;
            assert!((m[k] - expect).abs() < 1e-15);
        }
        assert!(mc_calibrated_mean(&[vec![1.0], vec![1.0, 2.0]], 1.0).is_err());
        assert!(mc_calibrated_mean(&[], 1.0).is_err());
    }

    /// Grid search over T in {0.10, 0.11, ..., 5.00}; independent of the
    /// golden-section path.
    fn grid_oracle(z: &[Vec<f64>], y: &[usize]) -> f64 {
        (10..=500)
            .map(|i| i as f64 / 100.0)
            .map(|t| (t, mean_nll(z, y, t)))
            .fold((0.0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
            .0
    }

    fn synth(n: usize, true_t: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut zs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let z: Vec<f64> = (0..4)
                .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let p = apply_temperature(&z, true_t).unwrap();
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let y = p
                .iter()
                .position(|&pi| {
                    acc += pi;
                    u < acc
                })
                .unwrap_or(p.len() - 1);
            zs.push(z);
            ys.push(y);
        }
        (zs, ys)
    }

    #[test]
    fn recovers_unit_temperature() {
        let (z, y) = synth(5000, 1.0, 11);
        let m = fit_temperature(&z, &y).unwrap();
        assert!((m.temperature - 1.0).abs() < 0.05, "{}", m.temperature);
        assert!((m.temperature - grid_oracle(&z, &y)).abs() < 0.02);
    }

    #[test]
    fn recovers_overconfidence_temperature() {
        let (z, y) = synth(5000, 1.5, 12);
        let m = fit_temperature(&z, &y).unwrap();
        assert!((m.temperature - 1.5).abs() < 0.1, "{}", m.temperature);
        assert!((m.temperature - grid_oracle(&z, &y)).abs() < 0.02);
        assert_eq!(m.n_fit, 5000);
    }

    #[test]
    fn fit_never_worse_than_unit_temperature() {
        let z = vec![vec![3.0, -3.0], vec![-3.0, 3.0]];
        let y = vec![0, 1];
        let m = fit_temperature(&z, &y).unwrap();
        assert!(m.fit_nll <= mean_nll(&z, &y, 1.0));
        assert!(m.temperature < 0.1, "{}", m.temperature);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_temperature(&[vec![1.0, 1.0], vec![2.0, 2.0]], &[0, 1]),
            Err(Error::Fit(_))
        ));
        assert!(fit_temperature(&[vec![1.0, 0.0]], &[0]).is_err());
        assert!(fit_temperature(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0, 2]).is_err());
    }

    #[test]
    fn isotonic_remaps_overconfident_scores() {
        let mut pairs = Vec::new();
        pairs.extend((0..20).map(|i| (0.6, i < 10)));
        pairs.extend((0..20).map(|i| (0.9, i < 17)));
        let m = fit_isotonic(&pairs).unwrap();
        assert!((m.apply(0.6) - 0.5).abs() < 1e-12);
        assert!((m.apply(0.9) - 0.85).abs() < 1e-12);
    }

    #[test]
    fn isotonic_monotone_data_is_untouched() {
        let pairs = [
            (0.1, false),
            (0.2, false),
            (0.2, true),
            (0.5, true),
            (0.9, true),
        ];
        let m = fit_isotonic(&pairs).unwrap();
        assert_eq!(m.breakpoints, vec![0.1, 0.2, 0.5, 0.9]);
        assert_eq!(m.values, vec![0.0, 0.5, 1.0, 1.0]);
        assert_eq!(m.apply(0.0), 0.0);
        assert_eq!(m.apply(0.3), 0.5);
        assert_eq!(m.apply(2.0), 1.0);
    }

    #[test]
    fn isotonic_pools_violators() {
        let pairs = [(0.1, true), (0.2, false), (0.3, false), (0.4, true)];
        let m = fit_isotonic(&pairs).unwrap();
        assert_eq!(m.breakpoints, vec![0.1, 0.4]);
        assert!((m.values[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.values[1], 1.0);
    }

    #[test]
    fn calibration_map_json() {
        let t = CalibrationMap::Temperature(TemperatureModel {
            temperature: 1.5,
            fit_nll: 0.4,
            n_fit: 10,
        });
        let text = t.to_json().unwrap();
        assert!(text.contains("\"kind\": \"temperature\""));
        assert!(text.contains("\"T\": 1.5"));
        assert_eq!(CalibrationMap::from_json(&text).unwrap(), t);
        let bad = r#"{"kind":"isotonic","breakpoints":[0.5,0.1],"values":[0.1,0.2]}"#;
        assert!(CalibrationMap::from_json(bad).is_err());
    }

    #[test]
    fn credible_summary_examples() {
        let c = bayesian_aggregate(&[0.8; 100], 0.95).unwrap();
        assert_eq!((c.mean, c.lower, c.upper), (0.8, 0.8, 0.8));

        let c = bayesian_aggregate(&[0.0, 1.0], 0.95).unwrap();
        assert_eq!(c.mean, 0.5);
        assert!((c.lower - 0.025).abs() < 1e-15);
        assert!((c.upper - 0.975).abs() < 1e-15);

        assert!(bayesian_aggregate(&[], 0.95).is_err());
        assert!(bayesian_aggregate(&[0.5], 1.0).is_err());
    }

    #[test]
    fn credible_summary_for_skewed_posterior() {
        // 41 posterior draws between 0.65 and 0.90, mass concentrated near 0.80
        let mut draws = vec![0.65, 0.66, 0.69, 0.72, 0.74, 0.76, 0.77];
        draws.extend(std::iter::repeat_n(0.78, 8));
        draws.extend(std::iter::repeat_n(0.80, 10));
        draws.extend(std::iter::repeat_n(0.84, 8));
        draws.extend([0.85, 0.86, 0.87, 0.88, 0.89, 0.89, 0.90, 0.90]);
        assert_eq!(draws.len(), 41);
        let c = bayesian_aggregate(&draws, 0.95).unwrap();

        // sorting oracle: rank h = 40 * q, linear interpolation
        let mut s = draws.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lo_h = 40.0 * 0.025;
        let hi_h = 40.0 * 0.975;
        let lo = s[1] + (lo_h - 1.0) * (s[2] - s[1]);
        let hi = s[39] + (hi_h - 39.0) * (s[40] - s[39]);
        assert!((c.lower - lo).abs() < 1e-12);
        assert!((c.upper - hi).abs() < 1e-12);
        assert!((c.mean - 0.80).abs() < 0.01, "{}", c.mean);
        assert!((c.lower - 0.65).abs() < 0.02 && (c.upper - 0.90).abs() < 0.02);
    }

    #[test]
    fn self_evaluation_votes() {
        let v = aggregate_self_evaluation(&[Vote::Yes, Vote::Yes, Vote::Unsure]).unwrap();
        assert!((v - 0.667).abs() < 0.001);
        assert_eq!(aggregate_self_evaluation(&[Vote::Yes; 4]).unwrap(), 1.0);
        assert_eq!(aggregate_self_evaluation(&[Vote::Unsure; 3]).unwrap(), 0.0);
        assert!(aggregate_self_evaluation(&[]).is_err());
        assert_eq!("Unsure".parse::<Vote>().unwrap(), Vote::Unsure);
        assert!("maybe".parse::<Vote>().is_err());
    }

    proptest! {
        #[test]
        fn temperature_preserves_ranking(
            z in prop::collection::vec(-20.0f64..20.0, 1..10),
            t in prop_oneof![Just(0.1), Just(1.0), Just(5.0), Just(20.0), 0.05f64..50.0],
        ) {
            let p = apply_temperature(&z, t).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..z.len() {
                for j in 0..z.len() {
                    if z[i] < z[j] {
                        prop_assert!(p[i] <= p[j]);
                    }
                }
            }
        }

        #[test]
        fn fitted_nll_beats_unit_temperature(seed in any::<u64>()) {
            let (z, y) = synth(40, 1.0 + (seed % 3) as f64 * 0.5, seed);
            prop_assume!(!z.iter().all(|v| v.iter().all(|&x| x == v[0])));
            let m = fit_temperature(&z, &y).unwrap();
            prop_assert!(m.fit_nll <= mean_nll(&z, &y, 1.0));
            prop_assert!((DEFAULT_T_BOUNDS.0..=DEFAULT_T_BOUNDS.1).contains(&m.temperature));
        }

        #[test]
        fn isotonic_is_monotone(
            pairs in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..40),
            probes in prop::collection::vec(-0.5f64..1.5, 2..20),
        ) {
            let m = fit_isotonic(&pairs).unwrap();
            prop_assert!(m.values.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(m.breakpoints.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(m.values.iter().all(|v| (0.0..=1.0).contains(v)));
            let mut probes = probes;
            probes.sort_by(f64::total_cmp);
            let mapped: Vec<f64> = probes.iter().map(|&s| m.apply(s)).collect();
            prop_assert!(mapped.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn credible_summary_translates(
            xs in prop::collection::vec(0.0f64..0.5, 1..30),
            c in 0.0f64..0.5,
        ) {
            let a = bayesian_aggregate(&xs, 0.9).unwrap();
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let b = bayesian_aggregate(&shifted, 0.9).unwrap();
            prop_assert!(a.lower <= a.mean && a.mean <= a.upper);
            prop_assert!((b.mean - a.mean - c).abs() < 1e-9);
            prop_assert!((b.lower - a.lower - c).abs() < 1e-9);
            prop_assert!((b.upper - a.upper - c).abs() < 1e-9);
        }

        #[test]
        fn votes_are_bounded_and_order_free(raw in prop::collection::vec(0u8..3, 1..20)) {
            let votes: Vec<Vote> = raw.iter().map(|v| [Vote::Yes, Vote::No, Vote::Unsure][*v as usize]).collect();
            let a = aggregate_self_evaluation(&votes).unwrap();
            let mut rev = votes.clone();
            rev.reverse();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(a, aggregate_self_evaluation(&rev).unwrap());
        }

        #[test]
        fn ece_is_bounded(pairs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..60), m in 1usize..20) {
            let r = compute_ece(&pairs, m).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.ece));
            prop_assert_eq!(r.bin_table.bins.iter().map(|b| b.count).sum::<usize>(), pairs.len());
        }
    }
}
