//! Fitted Q-evaluation.
//!
//! Iterates the policy-evaluation analogue of the fitted Q-iteration update
//! (the bootstrap takes the policy's expectation instead of the max) on the
//! training split, then scores the policy at the validation split's
//! empirical initial-state distribution. The regression backend is an
//! explicit argument: its choice materially changes the estimate and there
//! is no offline signal to tune it, which is the documented weakness this
//! harness measures.

use rayon::prelude::*;

use crate::candidates::CandidateSet;
use crate::data::{DatasetSplit, OfflineDataset};
use crate::qfit::{PerActionModel, RepeatedQFit};
use crate::regression::RegressorSpec;
use crate::value::{greedy_policy, Policy, QFunction, TieRule};

use super::{
    rank_scores, RankedCandidates, ScoreDirection, SelectionScore, Selector, SelectorContext,
    SelectorError,
};

/// Runs `iterations` fitted policy-evaluation steps on `train`, returning
/// the final action-value estimate for `policy`.
pub fn fqe_fit_q(
    policy: &Policy,
    train: &OfflineDataset,
    regressor: &RegressorSpec,
    iterations: usize,
    gamma: f64,
) -> Result<QFunction, SelectorError> {
    let mut fitter = RepeatedQFit::new(regressor, train)?;
    // The policy is fixed, so its next-state action distribution is too.
    let next_probs: Vec<Vec<f64>> =
        train.transitions().map(|tr| policy.action_probs(&tr.next_state)).collect();
    let mut model: Option<std::sync::Arc<PerActionModel>> = None;
    for _ in 0..iterations {
        let targets = fitter.expectation_targets(model.as_deref(), &next_probs, gamma);
        model = Some(std::sync::Arc::new(fitter.fit(&targets)?));
    }
    let model = model.expect("iterations >= 1");
    Ok(QFunction::new(format!("fqe[{}]", policy.label), model))
}

/// FQE value estimate: the mean over validation-trajectory initial states
/// of the policy's expected fitted action value.
pub fn fqe_evaluate(
    policy: &Policy,
    split: &DatasetSplit,
    regressor: &RegressorSpec,
    iterations: usize,
    gamma: f64,
) -> Result<SelectionScore, SelectorError> {
    let q = fqe_fit_q(policy, &split.train, regressor, iterations, gamma)?;
    let num_actions = split.train.config.num_actions;
    let mut total = 0.0;
    let mut n = 0usize;
    for s0 in split.validation.initial_states() {
        let probs = policy.action_probs(s0);
        total += (0..num_actions).map(|a| probs[a] * q.value(s0, a)).sum::<f64>();
        n += 1;
    }
    Ok(SelectionScore {
        candidate_id: policy.label.clone(),
        method: "fqe".into(),
        score: total / n as f64,
        flag: None,
        aux_backup_mse: None,
        aux_ess: None,
    })
}

pub struct FqeSelector;

impl Selector for FqeSelector {
    fn name(&self) -> &'static str {
        "fqe"
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
        let num_actions = split.train.config.num_actions;
        let scores: Result<Vec<SelectionScore>, SelectorError> = candidates
            .iter()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|c| {
                let policy = greedy_policy(&c.q, num_actions, TieRule::FirstIndex);
                let mut score = fqe_evaluate(
                    &policy,
                    split,
                    &ctx.fqe_regressor,
                    ctx.fqe_iterations,
                    ctx.gamma_train,
                )?;
                score.candidate_id = c.id.clone();
                Ok(score)
            })
            .collect();
        Ok(rank_scores("fqe", scores?, ScoreDirection::HigherIsBetter))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_by_trajectory, DatasetSplit};
    use crate::fixtures::{chain2_dataset, sampled_dataset_from_mdp};
    use crate::tabular::{random_tabular_mdp, RewardNoise, TabularMdp, TabularPolicy};
    use approx::assert_abs_diff_eq;

    #[test]
    fn chain2_fixed_action_value_is_two() {
        let data = chain2_dataset(2);
        let split = split_by_trajectory(&data, 0.5, 1).unwrap();
        let policy = Policy::fixed(1, 2);
        let score =
            fqe_evaluate(&policy, &split, &RegressorSpec::CellMean, 60, 0.5).unwrap();
        assert_abs_diff_eq!(score.score, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn gamma_zero_reduces_to_immediate_reward_regression() {
        let data = chain2_dataset(2);
        let split = split_by_trajectory(&data, 0.5, 1).unwrap();
        let policy = Policy::fixed(1, 2);
        let score = fqe_evaluate(&policy, &split, &RegressorSpec::CellMean, 5, 0.0).unwrap();
        // E[r | s0, a=1] = 1 on chain2.
        assert_abs_diff_eq!(score.score, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn matches_the_linear_solve_on_empirical_mdps() {
        for seed in 0..5 {
            let mdp = random_tabular_mdp(seed, 4, 2, 0.5, RewardNoise::Stochastic);
            let data = sampled_dataset_from_mdp(&mdp, 12, seed + 100);
            let empirical = TabularMdp::empirical_from_dataset(&data, 0.5).unwrap();
            let policy_actions: Vec<usize> = (0..4).map(|s| s % 2).collect();
            let tab_policy = TabularPolicy::deterministic(4, 2, &policy_actions);
            let exact = empirical.policy_q(&tab_policy);

            let acts = policy_actions.clone();
            let policy = Policy::new(
                "alt",
                true,
                std::sync::Arc::new(Deterministic { actions: acts }),
            );
            let q = fqe_fit_q(&policy, &data, &RegressorSpec::CellMean, 60, 0.5).unwrap();
            for s in 0..4 {
                for a in 0..2 {
                    assert_abs_diff_eq!(
                        q.value(&[s as f64], a),
                        exact.get(s, a),
                        epsilon = 1e-8
                    );
                }
            }
        }
    }

    struct Deterministic {
        actions: Vec<usize>,
    }
    impl crate::value::ActionRule for Deterministic {
        fn action_probs(&self, state: &[f64]) -> Vec<f64> {
            let mut p = vec![0.0, 0.0];
            p[self.actions[state[0] as usize]] = 1.0;
            p
        }
    }

    #[test]
    fn empirical_initial_states_come_from_validation() {
        let data = chain2_dataset(4);
        // Hand-build a split so validation keeps two trajectories.
        let split = DatasetSplit {
            train: crate::data::OfflineDataset {
                trajectories: data.trajectories[..2].to_vec(),
                config: data.config,
            },
            validation: crate::data::OfflineDataset {
                trajectories: data.trajectories[2..].to_vec(),
                config: data.config,
            },
            seed: 0,
        };
        let score =
            fqe_evaluate(&Policy::fixed(1, 2), &split, &RegressorSpec::CellMean, 60, 0.5)
                .unwrap();
        // All trajectories start at s0, so the score is Q(s0, a1) = 2.
        assert_abs_diff_eq!(score.score, 2.0, epsilon = 1e-10);
    }
}
