//! Small exactly-solvable instances and dataset generators used by the
//! verification suites. Index-coded tabular states are stored as
//! one-dimensional real arrays so the same data types flow through the
//! regression and selector stacks.

use rand::Rng;

use crate::data::{MdpConfig, OfflineDataset, Trajectory, Transition};
use crate::rng;
use crate::tabular::{RewardNoise, TabularMdp};

/// Config for index-coded tabular datasets.
pub fn tabular_config(num_actions: usize, gamma: f64) -> MdpConfig {
    MdpConfig {
        num_actions,
        state_dim: 1,
        gamma_train: gamma,
        gamma_eval: gamma,
        eval_horizon: 100,
    }
}

/// Two-state chain: from s0, action 0 loops with reward 0 and action 1
/// moves to s1 with reward 1; s1 absorbs with reward 1. gamma = 0.5,
/// uniform weights, starts at s0. Q* = [[1, 2], [2, 2]].
pub fn chain2() -> TabularMdp {
    let mut transition = vec![0.0; 2 * 2 * 2];
    let mut reward = vec![0.0; 2 * 2 * 2];
    let idx = |s: usize, a: usize, s2: usize| (s * 2 + a) * 2 + s2;
    transition[idx(0, 0, 0)] = 1.0;
    transition[idx(0, 1, 1)] = 1.0;
    transition[idx(1, 0, 1)] = 1.0;
    transition[idx(1, 1, 1)] = 1.0;
    reward[idx(0, 1, 1)] = 1.0;
    reward[idx(1, 0, 1)] = 1.0;
    reward[idx(1, 1, 1)] = 1.0;
    TabularMdp {
        num_states: 2,
        num_actions: 2,
        transition,
        reward,
        initial_dist: vec![1.0, 0.0],
        gamma: 0.5,
        weights: vec![0.25; 4],
    }
}

/// Coin flip with gamma = 0: a single action lands uniformly on one of two
/// outcome states paying +1 or -1. The Bellman backup of any Q is zero and
/// the conditional target variance is 1.
pub fn coin() -> TabularMdp {
    // reward[s][0][s2] depends only on the landing state.
    let transition = vec![0.5, 0.5, 0.5, 0.5];
    let reward = vec![1.0, -1.0, 1.0, -1.0];
    TabularMdp {
        num_states: 2,
        num_actions: 1,
        transition,
        reward,
        initial_dist: vec![0.5, 0.5],
        gamma: 0.0,
        weights: vec![0.5, 0.5],
    }
}

/// A chained dataset whose empirical MDP is exactly [`chain2`], starting at
/// s0 (so the empirical d0 is a point mass on s0). `copies` identical
/// trajectories are emitted with distinct ids so the dataset can be split
/// into sides with identical empirical content.
pub fn chain2_dataset(copies: usize) -> OfflineDataset {
    let step = |s: f64, a: usize, r: f64, s2: f64| Transition {
        state: vec![s],
        action: a,
        reward: r,
        next_state: vec![s2],
        terminal: false,
    };
    let transitions = vec![
        step(0.0, 0, 0.0, 0.0),
        step(0.0, 1, 1.0, 1.0),
        step(1.0, 0, 1.0, 1.0),
        step(1.0, 1, 1.0, 1.0),
    ];
    let trajectories = (0..copies)
        .map(|i| Trajectory { id: i as u64, transitions: transitions.clone() })
        .collect();
    OfflineDataset::new(trajectories, tabular_config(2, 0.5)).unwrap()
}

/// A random finite MDP with rational transition probabilities plus a dataset
/// that enumerates it exactly: every (s, a, s') triple appears with
/// multiplicity equal to its defining count, as single-transition
/// trajectories. The empirical distribution of the dataset therefore equals
/// the MDP's transition law and state-action weighting *exactly*, which is
/// the infinite-data regime the selector recovery results are stated in.
pub fn enumerated_mdp_and_dataset(
    seed: u64,
    num_states: usize,
    num_actions: usize,
    gamma: f64,
) -> (TabularMdp, OfflineDataset) {
    let mut rng = rng::stream(seed, &[rng::tags::ORACLE, 0xE7]);
    let cells = num_states * num_actions;
    let counts: Vec<u32> =
        (0..cells * num_states).map(|_| rng.gen_range(1..=4)).collect();
    let rewards_by_landing: Vec<f64> =
        (0..cells * num_states).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let mut transition = vec![0.0; cells * num_states];
    let mut weights = vec![0.0; cells];
    for row in 0..cells {
        let row_sum: f64 =
            counts[row * num_states..(row + 1) * num_states].iter().map(|&c| c as f64).sum();
        weights[row] = row_sum / total;
        for s2 in 0..num_states {
            transition[row * num_states + s2] = counts[row * num_states + s2] as f64 / row_sum;
        }
    }
    // d0 is arbitrary for these suites; use the state marginal of the weights.
    let mut d0 = vec![0.0; num_states];
    for s in 0..num_states {
        for a in 0..num_actions {
            d0[s] += weights[s * num_actions + a];
        }
    }

    let mdp = TabularMdp {
        num_states,
        num_actions,
        transition,
        reward: rewards_by_landing.clone(),
        initial_dist: d0,
        gamma,
        weights,
    };
    mdp.validate().expect("constructed distributions are normalized");

    let mut trajectories = Vec::new();
    let mut id = 0u64;
    for s in 0..num_states {
        for a in 0..num_actions {
            for s2 in 0..num_states {
                let idx = (s * num_actions + a) * num_states + s2;
                for _ in 0..counts[idx] {
                    trajectories.push(Trajectory {
                        id,
                        transitions: vec![Transition {
                            state: vec![s as f64],
                            action: a,
                            reward: rewards_by_landing[idx],
                            next_state: vec![s2 as f64],
                            terminal: false,
                        }],
                    });
                    id += 1;
                }
            }
        }
    }
    let data = OfflineDataset::new(trajectories, tabular_config(num_actions, gamma)).unwrap();
    (mdp, data)
}

/// Samples an index-coded dataset from a tabular MDP with guaranteed
/// coverage: every (s, a) cell receives `per_cell` independent draws of the
/// landing state, emitted as single-transition trajectories. The empirical
/// MDP of the result is well defined on every cell.
pub fn sampled_dataset_from_mdp(mdp: &TabularMdp, per_cell: usize, seed: u64) -> OfflineDataset {
    let mut rng = rng::stream(seed, &[rng::tags::DATASET, 0x5A]);
    let mut trajectories = Vec::new();
    let mut id = 0u64;
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            for _ in 0..per_cell {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut s2 = mdp.num_states - 1;
                for cand in 0..mdp.num_states {
                    acc += mdp.t(s, a, cand);
                    if u < acc {
                        s2 = cand;
                        break;
                    }
                }
                trajectories.push(Trajectory {
                    id,
                    transitions: vec![Transition {
                        state: vec![s as f64],
                        action: a,
                        reward: mdp.r(s, a, s2),
                        next_state: vec![s2 as f64],
                        terminal: false,
                    }],
                });
                id += 1;
            }
        }
    }
    OfflineDataset::new(trajectories, tabular_config(mdp.num_actions, mdp.gamma)).unwrap()
}

/// A split whose two sides carry identical empirical content: the same
/// trajectories duplicated under disjoint ids. Used by the exact-recovery
/// suites, which are stated in the regime where train and validation share
/// one distribution.
pub fn mirrored_split(data: &OfflineDataset) -> crate::data::DatasetSplit {
    let train = data.clone();
    let mut validation = data.clone();
    let offset = data.num_trajectories() as u64;
    for t in &mut validation.trajectories {
        t.id += offset;
    }
    crate::data::DatasetSplit { train, validation, seed: 0 }
}

/// Zeroes out rewards before step `start` of every trajectory. Models
/// sparse-reward settings where returns only materialize late in an episode.
pub fn mask_early_rewards(data: &OfflineDataset, start: usize) -> OfflineDataset {
    let trajectories = data
        .trajectories
        .iter()
        .map(|traj| Trajectory {
            id: traj.id,
            transitions: traj
                .transitions
                .iter()
                .enumerate()
                .map(|(t, tr)| {
                    let mut tr = tr.clone();
                    if t < start {
                        tr.reward = 0.0;
                    }
                    tr
                })
                .collect(),
        })
        .collect();
    OfflineDataset { trajectories, config: data.config }
}

/// Convenience wrapper used by the verification suites.
pub fn random_mdp(seed: u64, num_states: usize, num_actions: usize, gamma: f64) -> TabularMdp {
    crate::tabular::random_tabular_mdp(seed, num_states, num_actions, gamma, RewardNoise::Stochastic)
}
