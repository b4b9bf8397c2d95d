//! Ranking-quality metrics: min-max standardization, top-k policy values
//! and Spearman rank correlation.

use thiserror::Error;

use crate::selectors::RankedCandidates;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("all values are equal; standardization is undefined")]
    Degenerate,
    #[error("zero rank variance; correlation is undefined")]
    ZeroRankVariance,
    #[error("k = {k} exceeds the number of candidates {m}")]
    KTooLarge { k: usize, m: usize },
    #[error("candidate '{0}' has no ground-truth record")]
    MissingTruth(String),
}

/// Ground-truth value of one candidate's greedy policy.
#[derive(Debug, Clone)]
pub struct PolicyValueRecord {
    pub candidate_id: String,
    pub value: f64,
    pub std_error: f64,
}

/// Min-max standardization to [0, 1].
pub fn standardize_values(values: &[f64]) -> Result<Vec<f64>, MetricError> {
    if values.len() < 2 {
        return Err(MetricError::TooFew { needed: 2, got: values.len() });
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return Err(MetricError::Degenerate);
    }
    Ok(values.iter().map(|v| (v - min) / (max - min)).collect())
}

/// Mean and max standardized true value of the method's top-k candidates.
///
/// A wholly degenerate ranking (every candidate flagged, e.g. importance
/// sampling scoring everything zero) carries no information; both metrics
/// then report the coin-flip convention 0.5.
pub fn top_k_metrics(
    ranked: &RankedCandidates,
    truth: &[PolicyValueRecord],
    k: usize,
) -> Result<(f64, f64), MetricError> {
    if k > ranked.entries.len() {
        return Err(MetricError::KTooLarge { k, m: ranked.entries.len() });
    }
    if ranked.degenerate {
        return Ok((0.5, 0.5));
    }
    let standardized = standardize_values(&truth.iter().map(|r| r.value).collect::<Vec<_>>())?;
    let value_of = |id: &str| -> Result<f64, MetricError> {
        truth
            .iter()
            .position(|r| r.candidate_id == id)
            .map(|i| standardized[i])
            .ok_or_else(|| MetricError::MissingTruth(id.to_string()))
    };
    let mut mean = 0.0;
    let mut max = f64::NEG_INFINITY;
    for entry in ranked.entries.iter().take(k) {
        let v = value_of(&entry.candidate_id)?;
        mean += v;
        max = max.max(v);
    }
    Ok((mean / k as f64, max))
}

/// Average ranks with ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share rank mean of (i+1)..=(j+1).
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman_rank_corr(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(MetricError::TooFew { needed: 2, got: a.len().min(b.len()) });
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        let da = ra[i] - ma;
        let db = rb[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(MetricError::ZeroRankVariance);
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}
