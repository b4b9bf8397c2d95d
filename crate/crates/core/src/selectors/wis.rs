//! Weighted per-decision importance sampling.
//!
//! Each trajectory contributes a discounted-reward numerator and a
//! discounted-weight denominator built from cumulative likelihood ratios;
//! the estimate is the ratio of the pooled sums, so it is a convex
//! combination of per-trajectory normalized returns. Ratios of a
//! deterministic target policy against a stochastic logger vanish
//! exponentially fast, which is what makes this estimator degenerate on
//! sparse-reward data: the flags record exactly that failure mode.

use crate::candidates::CandidateSet;
use crate::data::{DatasetSplit, OfflineDataset};
use crate::value::{greedy_policy, Policy, TieRule};

use super::{
    rank_scores, RankedCandidates, ScoreDirection, SelectionScore, Selector, SelectorContext,
    SelectorError,
};

/// Importance-sampling estimate with its degeneracy diagnostics.
#[derive(Debug, Clone)]
pub struct WisOutcome {
    pub estimate: f64,
    /// Set when the pooled denominator or numerator is exactly zero; the
    /// estimate is then recorded as 0.
    pub flag: Option<WisFlag>,
    /// Effective sample size of the per-trajectory denominator weights.
    pub effective_sample_size: f64,
    /// Fraction of trajectories whose every cumulative ratio is zero.
    pub zero_ratio_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WisFlag {
    ZeroDenominator,
    ZeroNumerator,
}

impl WisFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            WisFlag::ZeroDenominator => "zero_denominator",
            WisFlag::ZeroNumerator => "zero_numerator",
        }
    }
}

/// Pooled weighted per-decision importance-sampling estimate of the value
/// of `policy` under logging policy `behavior`, summing at most `horizon`
/// decision steps per trajectory.
pub fn wis_estimate(
    policy: &Policy,
    data: &OfflineDataset,
    behavior: &Policy,
    gamma: f64,
    horizon: usize,
) -> Result<WisOutcome, SelectorError> {
    let mut numerators = Vec::with_capacity(data.num_trajectories());
    let mut denominators = Vec::with_capacity(data.num_trajectories());
    for traj in &data.trajectories {
        let mut ratio = 1.0;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut discount = 1.0;
        for (step, tr) in traj.transitions.iter().take(horizon).enumerate() {
            let mu = behavior.action_probs(&tr.state)[tr.action];
            if mu <= 0.0 {
                return Err(SelectorError::ZeroBehaviorProb { traj: traj.id, step });
            }
            let pi = policy.action_probs(&tr.state)[tr.action];
            ratio *= pi / mu;
            num += discount * tr.reward * ratio;
            den += discount * ratio;
            discount *= gamma;
            if ratio == 0.0 {
                break;
            }
        }
        numerators.push(num);
        denominators.push(den);
    }

    let num: f64 = numerators.iter().sum();
    let den: f64 = denominators.iter().sum();
    let den_sq: f64 = denominators.iter().map(|d| d * d).sum();
    let effective_sample_size = if den_sq > 0.0 { den * den / den_sq } else { 0.0 };
    let zero_ratio_fraction = denominators.iter().filter(|&&d| d == 0.0).count() as f64
        / denominators.len() as f64;

    let (estimate, flag) = if den == 0.0 {
        (0.0, Some(WisFlag::ZeroDenominator))
    } else if num == 0.0 {
        (0.0, Some(WisFlag::ZeroNumerator))
    } else {
        (num / den, None)
    };
    Ok(WisOutcome { estimate, flag, effective_sample_size, zero_ratio_fraction })
}

pub struct WisSelector;

impl Selector for WisSelector {
    fn name(&self) -> &'static str {
        "wis"
    }

    fn direction(&self) -> ScoreDirection {
        ScoreDirection::HigherIsBetter
    }

    fn rank(
        &self,
        candidates: &CandidateSet,
        split: &DatasetSplit,
        ctx: &SelectorContext,
    ) -> Result<RankedCandidates, SelectorError> {
        if candidates.is_empty() {
            return Err(SelectorError::NoCandidates);
        }
        // Importance sampling needs no held-out data and is variance
        // limited, so it consumes the full trajectory pool.
        let data = split.source();
        let num_actions = data.config.num_actions;
        let scores = candidates
            .iter()
            .map(|c| {
                let policy = greedy_policy(&c.q, num_actions, TieRule::FirstIndex);
                let outcome = wis_estimate(
                    &policy,
                    &data,
                    &ctx.behavior,
                    ctx.gamma_eval,
                    ctx.wis_horizon,
                )?;
                Ok(SelectionScore {
                    candidate_id: c.id.clone(),
                    method: "wis".into(),
                    score: outcome.estimate,
                    flag: outcome.flag.map(|f| f.as_str().to_string()),
                    aux_backup_mse: None,
                    aux_ess: Some(outcome.effective_sample_size),
                })
            })
            .collect::<Result<Vec<_>, SelectorError>>()?;
        Ok(rank_scores("wis", scores, ScoreDirection::HigherIsBetter))
    }
}
