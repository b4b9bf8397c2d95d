//! Empirical mean squared Bellman error on the validation split.
//!
//! The single-sample bootstrap residual is unbiased for the true squared
//! Bellman error only in deterministic environments; otherwise it is
//! inflated by the conditional variance of the targets.

use crate::candidates::CandidateSet;
use crate::data::{DatasetSplit, OfflineDataset};
use crate::qfit::{bootstrap_targets, residual_mse};
use crate::value::QFunction;

use super::{
    rank_scores, RankedCandidates, ScoreDirection, SelectionScore, Selector, SelectorContext,
    SelectorError,
};

/// Mean over `val` of (q(s,a) - r - gamma * (1 - terminal) * max_a' q(s',a'))^2.
pub fn emsbe_score(q: &QFunction, val: &OfflineDataset, gamma: f64) -> SelectionScore {
    let targets = bootstrap_targets(q, val, gamma);
    SelectionScore {
        candidate_id: q.label.clone(),
        method: "emsbe".into(),
        score: residual_mse(q, val, &targets),
        flag: None,
        aux_backup_mse: None,
        aux_ess: None,
    }
}

pub struct EmsbeSelector;

impl Selector for EmsbeSelector {
    fn name(&self) -> &'static str {
        "emsbe"
    }

    fn direction(&self) -> ScoreDirection {
        ScoreDirection::LowerIsBetter
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
        let scores = candidates
            .iter()
            .map(|c| {
                let mut s = emsbe_score(&c.q, &split.validation, ctx.gamma_train);
                s.candidate_id = c.id.clone();
                s
            })
            .collect();
        Ok(rank_scores("emsbe", scores, ScoreDirection::LowerIsBetter))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{chain2, chain2_dataset, enumerated_mdp_and_dataset};
    use crate::tabular::{random_tabular_q, TabularQ};
    use approx::assert_abs_diff_eq;

    fn q_from_table(table: TabularQ) -> QFunction {
        QFunction::from_fn("table", move |s, a| table.get(s[0] as usize, a))
    }

    #[test]
    fn zero_in_a_deterministic_environment_at_the_fixed_point() {
        let data = chain2_dataset(1);
        let q_star = chain2().value_iteration(1e-12);
        let score = emsbe_score(&q_from_table(q_star), &data, 0.5);
        assert!(score.score < 1e-18, "{}", score.score);
    }

    #[test]
    fn variance_floor_despite_zero_bellman_error() {
        // Coin-flip data: Q* = 0 has zero Bellman error but the empirical
        // residual is the mean of r^2 = 1.
        use crate::data::{OfflineDataset, Trajectory, Transition};
        let trajectories = [1.0, -1.0, 1.0, -1.0]
            .iter()
            .enumerate()
            .map(|(i, &r)| Trajectory {
                id: i as u64,
                transitions: vec![Transition {
                    state: vec![0.0],
                    action: 0,
                    reward: r,
                    next_state: vec![if r > 0.0 { 0.0 } else { 1.0 }],
                    terminal: false,
                }],
            })
            .collect();
        let data =
            OfflineDataset::new(trajectories, crate::fixtures::tabular_config(2, 0.0)).unwrap();
        let score = emsbe_score(&QFunction::zero(), &data, 0.0);
        assert_abs_diff_eq!(score.score, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn matches_the_population_form_on_enumerated_data() {
        for seed in 0..4 {
            let gamma = 0.9;
            let (mdp, data) = enumerated_mdp_and_dataset(seed, 3, 2, gamma);
            let table = random_tabular_q(seed, 3, 2, 2.0);
            let score = emsbe_score(&q_from_table(table.clone()), &data, gamma);
            let exact = mdp.population_emsbe(&table).unwrap();
            assert_abs_diff_eq!(score.score, exact, epsilon = 1e-10);
        }
    }
}
