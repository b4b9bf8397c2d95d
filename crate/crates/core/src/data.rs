//! Transitions, trajectories, offline datasets and trajectory-level splits.
//!
//! All types are immutable after construction. Operations are pure given
//! their inputs and an explicit seed, so values can be shared freely across
//! worker threads.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid mdp config: {0}")]
    InvalidConfig(String),
    #[error("dataset must contain at least {needed} trajectories, got {got}")]
    TooFewTrajectories { needed: usize, got: usize },
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("transition violates config: {0}")]
    InvalidTransition(String),
    #[error("trajectory {id} breaks the state chain at step {step}")]
    BrokenChain { id: u64, step: usize },
}

/// Environment-level constants shared by every module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdpConfig {
    pub num_actions: usize,
    pub state_dim: usize,
    /// Discount used when training and scoring Q-functions.
    pub gamma_train: f64,
    /// Discount used for online evaluation of policies (may be 1).
    pub gamma_eval: f64,
    /// Episode length used for online evaluation.
    pub eval_horizon: usize,
}

impl MdpConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_actions < 2 {
            return Err(DataError::InvalidConfig(format!(
                "num_actions must be >= 2 for nontrivial control, got {}",
                self.num_actions
            )));
        }
        if self.state_dim == 0 {
            return Err(DataError::InvalidConfig("state_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gamma_train) {
            return Err(DataError::InvalidConfig(format!(
                "gamma_train must lie in [0,1), got {}",
                self.gamma_train
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma_eval) {
            return Err(DataError::InvalidConfig(format!(
                "gamma_eval must lie in [0,1], got {}",
                self.gamma_eval
            )));
        }
        if self.eval_horizon == 0 {
            return Err(DataError::InvalidConfig("eval_horizon must be >= 1".into()));
        }
        Ok(())
    }
}

/// One logged environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// When true, `next_state` is never used as a bootstrap source.
    pub terminal: bool,
}

/// An ordered episode of transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    /// Discounted return of the logged rewards: sum of gamma^t * r_t.
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut total = 0.0;
        let mut weight = 1.0;
        for tr in &self.transitions {
            total += weight * tr.reward;
            weight *= gamma;
        }
        total
    }
}

/// A static collection of trajectories plus the environment constants
/// needed to interpret them.
#[derive(Debug, Clone)]
pub struct OfflineDataset {
    pub trajectories: Vec<Trajectory>,
    pub config: MdpConfig,
}

impl OfflineDataset {
    pub fn new(trajectories: Vec<Trajectory>, config: MdpConfig) -> Result<Self, DataError> {
        let ds = Self { trajectories, config };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        self.config.validate()?;
        if self.trajectories.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        for traj in &self.trajectories {
            for (step, tr) in traj.transitions.iter().enumerate() {
                if tr.action >= self.config.num_actions {
                    return Err(DataError::InvalidTransition(format!(
                        "action {} out of range in trajectory {}",
                        tr.action, traj.id
                    )));
                }
                if tr.state.len() != self.config.state_dim
                    || tr.next_state.len() != self.config.state_dim
                {
                    return Err(DataError::InvalidTransition(format!(
                        "state dim mismatch in trajectory {}",
                        traj.id
                    )));
                }
                if step + 1 < traj.transitions.len() && !tr.terminal {
                    let next = &traj.transitions[step + 1];
                    if tr.next_state != next.state {
                        return Err(DataError::BrokenChain { id: traj.id, step });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.trajectories.iter().map(|t| t.transitions.len()).sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flat_map(|t| t.transitions.iter())
    }

    /// Initial state of every trajectory (for empirical d0 estimates).
    pub fn initial_states(&self) -> impl Iterator<Item = &[f64]> {
        self.trajectories
            .iter()
            .filter_map(|t| t.transitions.first().map(|tr| tr.state.as_slice()))
    }
}

/// Trajectory-level train/validation partition.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: OfflineDataset,
    pub validation: OfflineDataset,
    pub seed: u64,
}

impl DatasetSplit {
    /// The union of both sides, in train-then-validation order.
    pub fn source(&self) -> OfflineDataset {
        let mut trajectories = self.train.trajectories.clone();
        trajectories.extend(self.validation.trajectories.iter().cloned());
        OfflineDataset { trajectories, config: self.train.config }
    }
}

/// Randomly partitions trajectories into train and validation sets.
///
/// The train side receives round-half-up of `train_fraction * N`
/// trajectories, clamped so that both sides stay nonempty. The permutation
/// is a function of `seed` alone.
pub fn split_by_trajectory(
    data: &OfflineDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidFraction(train_fraction));
    }
    let n = data.num_trajectories();
    if n < 2 {
        return Err(DataError::TooFewTrajectories { needed: 2, got: n });
    }
    let raw = (train_fraction * n as f64 + 0.5).floor() as usize;
    let n_train = raw.clamp(1, n - 1);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream(seed, &[rng::tags::SPLIT]);
    // Fisher-Yates, explicit so the permutation stays pinned to this crate.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }

    let mut train_idx: Vec<usize> = order[..n_train].to_vec();
    let mut val_idx: Vec<usize> = order[n_train..].to_vec();
    // Preserve original trajectory order within each side.
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    let take = |idx: &[usize]| -> Vec<Trajectory> {
        idx.iter().map(|&i| data.trajectories[i].clone()).collect()
    };
    Ok(DatasetSplit {
        train: OfflineDataset { trajectories: take(&train_idx), config: data.config },
        validation: OfflineDataset { trajectories: take(&val_idx), config: data.config },
        seed,
    })
}

/// Discretizes a continuous state into an integer key.
pub type Discretizer<'a> = &'a dyn Fn(&[f64]) -> Vec<i64>;

/// Count table over discretized (state, action) cells.
///
/// For every observed state key, all actions are reported, so empty action
/// coverage shows up as an explicit zero cell (a psi = 0 warning signal).
#[derive(Debug, Clone)]
pub struct StateActionCounts {
    pub counts: BTreeMap<(Vec<i64>, usize), usize>,
    pub num_actions: usize,
}

impl StateActionCounts {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn zero_cells(&self) -> usize {
        self.counts.values().filter(|&&c| c == 0).count()
    }
}

/// Tallies transitions per discretized (state, action) cell.
pub fn empirical_state_action_counts(
    data: &OfflineDataset,
    discretize: Discretizer,
) -> StateActionCounts {
    let mut counts: BTreeMap<(Vec<i64>, usize), usize> = BTreeMap::new();
    for tr in data.transitions() {
        let key = discretize(&tr.state);
        for a in 0..data.config.num_actions {
            counts.entry((key.clone(), a)).or_insert(0);
        }
        *counts.entry((key, tr.action)).or_insert(0) += 1;
    }
    StateActionCounts { counts, num_actions: data.config.num_actions }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    pub(crate) fn test_config(state_dim: usize) -> MdpConfig {
        MdpConfig {
            num_actions: 2,
            state_dim,
            gamma_train: 0.9,
            gamma_eval: 1.0,
            eval_horizon: 100,
        }
    }

    fn reward_trajectory(id: u64, rewards: &[f64]) -> Trajectory {
        let transitions = rewards
            .iter()
            .enumerate()
            .map(|(t, &r)| Transition {
                state: vec![t as f64],
                action: 0,
                reward: r,
                next_state: vec![(t + 1) as f64],
                terminal: false,
            })
            .collect();
        Trajectory { id, transitions }
    }

    fn dataset_with(n: usize) -> OfflineDataset {
        let trajectories = (0..n).map(|i| reward_trajectory(i as u64, &[1.0, 2.0])).collect();
        OfflineDataset::new(trajectories, test_config(1)).unwrap()
    }

    #[test]
    fn discounted_return_examples() {
        let t = reward_trajectory(0, &[1.0, 1.0, 1.0]);
        assert_eq!(t.discounted_return(0.5), 1.75);
        let empty = Trajectory { id: 1, transitions: vec![] };
        assert_eq!(empty.discounted_return(0.3), 0.0);
        let t = reward_trajectory(2, &[2.0, -1.0]);
        assert_eq!(t.discounted_return(1.0), 1.0);
    }

    #[test]
    fn split_fractions() {
        let split = split_by_trajectory(&dataset_with(10), 0.8, 3).unwrap();
        assert_eq!(split.train.num_trajectories(), 8);
        assert_eq!(split.validation.num_trajectories(), 2);

        let split = split_by_trajectory(&dataset_with(25), 0.8, 3).unwrap();
        assert_eq!(split.train.num_trajectories(), 20);
        assert_eq!(split.validation.num_trajectories(), 5);
    }

    #[test]
    fn split_is_deterministic_in_seed() {
        let data = dataset_with(12);
        let ids = |d: &OfflineDataset| d.trajectories.iter().map(|t| t.id).collect::<Vec<_>>();
        let a = split_by_trajectory(&data, 0.75, 42).unwrap();
        let b = split_by_trajectory(&data, 0.75, 42).unwrap();
        assert_eq!(ids(&a.train), ids(&b.train));
        assert_eq!(ids(&a.validation), ids(&b.validation));
        let c = split_by_trajectory(&data, 0.75, 43).unwrap();
        assert_ne!(ids(&a.train), ids(&c.train));
    }

    #[test]
    fn split_rejects_tiny_datasets_and_bad_fractions() {
        let one = dataset_with(1);
        assert!(matches!(
            split_by_trajectory(&one, 0.8, 0),
            Err(DataError::TooFewTrajectories { .. })
        ));
        let data = dataset_with(5);
        assert!(matches!(split_by_trajectory(&data, 1.0, 0), Err(DataError::InvalidFraction(_))));
        assert!(matches!(split_by_trajectory(&data, 0.0, 0), Err(DataError::InvalidFraction(_))));
    }

    #[test]
    fn split_clamps_to_nonempty_sides() {
        // round(0.95 * 2) = 2 would empty the validation side.
        let split = split_by_trajectory(&dataset_with(2), 0.95, 0).unwrap();
        assert_eq!(split.train.num_trajectories(), 1);
        assert_eq!(split.validation.num_trajectories(), 1);
    }

    #[test]
    fn counts_examples() {
        let config = test_config(1);
        let transitions = (0..4)
            .map(|_| Transition {
                state: vec![0.0],
                action: 1,
                reward: 0.0,
                next_state: vec![0.0],
                terminal: true,
            })
            .collect();
        let data = OfflineDataset::new(
            vec![Trajectory { id: 0, transitions }],
            config,
        )
        .unwrap();
        let counts = empirical_state_action_counts(&data, &|s| vec![s[0] as i64]);
        assert_eq!(counts.total(), 4);
        assert_eq!(counts.counts[&(vec![0], 1)], 4);
        // Action 0 was never taken: reported as an explicit zero cell.
        assert_eq!(counts.counts[&(vec![0], 0)], 0);
        assert_eq!(counts.zero_cells(), 1);
    }

    #[test]
    fn counts_match_multinomial_expectation() {
        // Two tabular states, uniform data: cell counts near N / |cells|.
        let mut rng = stream(9, &[]);
        let n = 4000usize;
        let transitions: Vec<Transition> = (0..n)
            .map(|_| Transition {
                state: vec![rng.gen_range(0..2) as f64],
                action: rng.gen_range(0..2),
                reward: 0.0,
                next_state: vec![0.0],
                terminal: true,
            })
            .collect();
        let data = OfflineDataset::new(
            vec![Trajectory { id: 0, transitions }],
            test_config(1),
        )
        .unwrap();
        let counts = empirical_state_action_counts(&data, &|s| vec![s[0] as i64]);
        let expected = n as f64 / 4.0;
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for (_, &c) in &counts.counts {
            assert!((c as f64 - expected).abs() < 4.0 * sigma);
        }
    }

    proptest! {
        #[test]
        fn split_partitions_exactly(n in 2usize..40, frac in 0.05f64..0.95, seed in 0u64..500) {
            let data = dataset_with(n);
            let split = split_by_trajectory(&data, frac, seed).unwrap();
            let mut ids: Vec<u64> = split.train.trajectories.iter()
                .chain(split.validation.trajectories.iter())
                .map(|t| t.id)
                .collect();
            ids.sort_unstable();
            let expected: Vec<u64> = (0..n as u64).collect();
            prop_assert_eq!(ids, expected);
            prop_assert!(split.train.num_trajectories() >= 1);
            prop_assert!(split.validation.num_trajectories() >= 1);
        }

        #[test]
        fn return_is_linear_in_rewards(rewards in prop::collection::vec(-5.0f64..5.0, 0..12),
                                       scale in -3.0f64..3.0,
                                       gamma in 0.0f64..=1.0) {
            let base = reward_trajectory(0, &rewards);
            let scaled: Vec<f64> = rewards.iter().map(|r| scale * r).collect();
            let scaled_traj = reward_trajectory(1, &scaled);
            let lhs = scaled_traj.discounted_return(gamma);
            let rhs = scale * base.discounted_return(gamma);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn split_then_merge_recovers_transitions(n in 2usize..20, seed in 0u64..100) {
            let data = dataset_with(n);
            let split = split_by_trajectory(&data, 0.8, seed).unwrap();
            let merged = split.source();
            let mut original: Vec<String> = data.transitions()
                .map(|t| format!("{:?}", t)).collect();
            let mut recovered: Vec<String> = merged.transitions()
                .map(|t| format!("{:?}", t)).collect();
            original.sort();
            recovered.sort();
            prop_assert_eq!(original, recovered);
        }
    }
}
