//! A four-state continuous stochastic environment with a binary action.
//!
//! Coordinate 1 carries the signal: it follows
//! `sqrt(x) * s1 + (a - 0.5) + N(0, 0.75 - x)` and the reward is the next
//! value of that coordinate. Coordinates 2-4 follow
//! `sqrt(4x - 2) * sj + N(0, 3 - 4x)` and are independent of both action
//! and reward. The stochasticity parameter is `phi = 0.75 - x`; at
//! `phi = 0` both noise variances vanish and the dynamics are
//! deterministic. For any admissible `x`, a standard-normal start under
//! uniform actions keeps every coordinate at mean 0 and variance 1 forever.
//!
//! Episodes never terminate; evaluation truncates at a configured horizon.
//! The always-play-action-1 policy is optimal, and the optimal action-value
//! function is affine in `(a, s1)`.

use rayon::prelude::*;
use thiserror::Error;

use crate::data::{MdpConfig, OfflineDataset, Trajectory, Transition};
use crate::regression::{fit, DesignMatrix, RegressorSpec};
use crate::rng::{self, tags, ChaCha8Rng};
use crate::value::{Policy, QFunction};

pub const TOY_STATE_DIM: usize = 4;
pub const TOY_NUM_ACTIONS: usize = 2;

/// Environment constants used by every toy experiment: train with discount
/// 0.9, evaluate undiscounted over 100 steps.
pub fn toy_mdp_config() -> MdpConfig {
    MdpConfig {
        num_actions: TOY_NUM_ACTIONS,
        state_dim: TOY_STATE_DIM,
        gamma_train: 0.9,
        gamma_eval: 1.0,
        eval_horizon: 100,
    }
}

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("x must lie in [0.5, 0.75], got {0}")]
    InvalidX(f64),
    #[error("degenerate regression design: {0}")]
    DegenerateDesign(String),
}

pub type ToyState = [f64; 4];

#[derive(Debug, Clone, Copy)]
pub struct ToyConfig {
    /// Dynamics parameter; `phi = 0.75 - x` is the noise level.
    pub x: f64,
    pub num_trajectories: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl ToyConfig {
    pub fn from_phi(phi: f64, num_trajectories: usize, horizon: usize, seed: u64) -> Result<Self, ToyError> {
        let cfg = Self { x: 0.75 - phi, num_trajectories, horizon, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn phi(&self) -> f64 {
        0.75 - self.x
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        if !(0.5..=0.75).contains(&self.x) {
            return Err(ToyError::InvalidX(self.x));
        }
        Ok(())
    }

    fn signal_sd(&self) -> f64 {
        (0.75 - self.x).max(0.0).sqrt()
    }

    fn nuisance_sd(&self) -> f64 {
        (3.0 - 4.0 * self.x).max(0.0).sqrt()
    }
}

/// One environment step. The reward is the next value of coordinate 1.
pub fn step(
    cfg: &ToyConfig,
    state: &ToyState,
    action: usize,
    noise_rng: &mut ChaCha8Rng,
) -> (ToyState, f64) {
    let mut next = [0.0; 4];
    next[0] = cfg.x.sqrt() * state[0] + (action as f64 - 0.5)
        + rng::normal(noise_rng, 0.0, cfg.signal_sd());
    let decay = (4.0 * cfg.x - 2.0).max(0.0).sqrt();
    for j in 1..4 {
        next[j] = decay * state[j] + rng::normal(noise_rng, 0.0, cfg.nuisance_sd());
    }
    (next, next[0])
}

fn initial_state(noise_rng: &mut ChaCha8Rng) -> ToyState {
    [
        rng::standard_normal(noise_rng),
        rng::standard_normal(noise_rng),
        rng::standard_normal(noise_rng),
        rng::standard_normal(noise_rng),
    ]
}

/// Simulates one episode, returning the visited rewards.
/// Action sampling and environment noise draw from separate streams, so at
/// `phi = 0` two runs with the same action stream coincide exactly
/// regardless of the noise seed.
pub fn simulate_rewards(
    cfg: &ToyConfig,
    policy: &Policy,
    horizon: usize,
    action_rng: &mut ChaCha8Rng,
    noise_rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut state = initial_state(noise_rng);
    let mut rewards = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let action = policy.sample(&state, action_rng);
        let (next, reward) = step(cfg, &state, action, noise_rng);
        rewards.push(reward);
        state = next;
    }
    rewards
}

/// Generates `num_trajectories` episodes of `horizon` transitions under the
/// behavior policy. Initial states are i.i.d. standard normal per
/// coordinate; no state is terminal.
pub fn generate_dataset(cfg: &ToyConfig, behavior: &Policy) -> OfflineDataset {
    let trajectories: Vec<Trajectory> = (0..cfg.num_trajectories)
        .map(|i| {
            let mut action_rng = rng::stream(cfg.seed, &[tags::DATASET, tags::ACTIONS, i as u64]);
            let mut noise_rng = rng::stream(cfg.seed, &[tags::DATASET, tags::NOISE, i as u64]);
            let mut state = initial_state(&mut noise_rng);
            let mut transitions = Vec::with_capacity(cfg.horizon);
            for _ in 0..cfg.horizon {
                let action = behavior.sample(&state, &mut action_rng);
                let (next, reward) = step(cfg, &state, action, &mut noise_rng);
                transitions.push(Transition {
                    state: state.to_vec(),
                    action,
                    reward,
                    next_state: next.to_vec(),
                    terminal: false,
                });
                state = next;
            }
            Trajectory { id: i as u64, transitions }
        })
        .collect();
    OfflineDataset::new(trajectories, toy_mdp_config()).unwrap()
}

/// Monte Carlo policy value estimate.
#[derive(Debug, Clone, Copy)]
pub struct PolicyValue {
    pub mean: f64,
    pub std_error: f64,
    pub episodes: usize,
}

/// Mean discounted return of `policy` over `num_episodes` simulated
/// episodes of length `horizon`. The evaluation convention is 1000
/// episodes, horizon 100, gamma 1.
pub fn rollout_policy_value(
    cfg: &ToyConfig,
    policy: &Policy,
    num_episodes: usize,
    horizon: usize,
    gamma: f64,
    seed: u64,
) -> PolicyValue {
    let returns: Vec<f64> = (0..num_episodes)
        .into_par_iter()
        .map(|e| {
            let mut action_rng = rng::stream(seed, &[tags::EVAL, tags::ACTIONS, e as u64]);
            let mut noise_rng = rng::stream(seed, &[tags::EVAL, tags::NOISE, e as u64]);
            let rewards = simulate_rewards(cfg, policy, horizon, &mut action_rng, &mut noise_rng);
            let mut total = 0.0;
            let mut w = 1.0;
            for r in rewards {
                total += w * r;
                w *= gamma;
            }
            total
        })
        .collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    PolicyValue { mean, std_error: (var / n).sqrt(), episodes: num_episodes }
}

/// Approximates the optimal action-value function by rolling out the
/// optimal policy (always action 1) after one uniformly drawn free action,
/// then regressing the discounted return on the covariates `(a0, s0_1)`.
/// The returned Q-function is affine in `(a, s1)` and ignores the nuisance
/// coordinates.
pub fn approx_q_star(
    cfg: &ToyConfig,
    num_rollouts: usize,
    horizon: usize,
    gamma: f64,
    seed: u64,
) -> Result<QFunction, ToyError> {
    let rows: Vec<(f64, f64, f64)> = (0..num_rollouts)
        .into_par_iter()
        .map(|e| {
            let mut action_rng = rng::stream(seed, &[tags::QSTAR, tags::ACTIONS, e as u64]);
            let mut noise_rng = rng::stream(seed, &[tags::QSTAR, tags::NOISE, e as u64]);
            let mut state = initial_state(&mut noise_rng);
            let s01 = state[0];
            let a0 = if rand::Rng::gen::<bool>(&mut action_rng) { 1 } else { 0 };
            let mut total = 0.0;
            let mut w = 1.0;
            for t in 0..horizon {
                let action = if t == 0 { a0 } else { 1 };
                let (next, reward) = step(cfg, &state, action, &mut noise_rng);
                total += w * reward;
                w *= gamma;
                state = next;
            }
            (a0 as f64, s01, total)
        })
        .collect();

    let a_spread = rows.iter().any(|r| r.0 != rows[0].0);
    let s_spread = rows.iter().any(|r| r.1 != rows[0].1);
    if !a_spread || !s_spread {
        return Err(ToyError::DegenerateDesign(
            "covariates (a0, s0_1) have no variation".into(),
        ));
    }

    let design = DesignMatrix::new(
        rows.iter().map(|&(a, s, _)| vec![1.0, a, s]).collect(),
        rows.iter().map(|&(_, _, y)| y).collect(),
    )
    .expect("rows are rectangular and returns finite");
    let model = fit(&RegressorSpec::PolyRidge { degree: 1, lambda: 0.0 }, &design)
        .map_err(|e| ToyError::DegenerateDesign(e.to_string()))?;
    Ok(QFunction::from_fn("qstar-approx", move |state, action| {
        model.predict(&[1.0, action as f64, state[0]])
    }))
}

/// Ground-truth squared-Bellman-error oracle.
///
/// A large reference set (2000 episodes of 100 steps under the behavior
/// policy) supplies bootstrap targets; the backup at a query point is the
/// mean target of its k = 100 nearest reference transitions *with the same
/// action*, under a Euclidean metric with coordinate 1 doubled. An
/// independent weighting set (1000 episodes of 25 steps) supplies the query
/// points. Neighbor lists depend only on geometry, so one oracle evaluates
/// any number of candidates cheaply.
pub struct KnnOracle {
    /// (reward, next_state) per reference transition.
    reference: Vec<(f64, ToyState)>,
    /// Query points and their k reference-neighbor indices.
    queries: Vec<(ToyState, usize, Vec<u32>)>,
    gamma: f64,
    k: usize,
}

pub const ORACLE_REFERENCE_EPISODES: usize = 2000;
pub const ORACLE_REFERENCE_HORIZON: usize = 100;
pub const ORACLE_QUERY_EPISODES: usize = 1000;
pub const ORACLE_QUERY_HORIZON: usize = 25;
pub const ORACLE_NEIGHBORS: usize = 100;

impl KnnOracle {
    pub fn new(cfg: &ToyConfig, gamma: f64, seed: u64) -> Self {
        Self::with_sizes(
            cfg,
            gamma,
            seed,
            ORACLE_REFERENCE_EPISODES,
            ORACLE_REFERENCE_HORIZON,
            ORACLE_QUERY_EPISODES,
            ORACLE_QUERY_HORIZON,
            ORACLE_NEIGHBORS,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_sizes(
        cfg: &ToyConfig,
        gamma: f64,
        seed: u64,
        reference_episodes: usize,
        reference_horizon: usize,
        query_episodes: usize,
        query_horizon: usize,
        k: usize,
    ) -> Self {
        let behavior = Policy::uniform(TOY_NUM_ACTIONS);
        let ref_cfg = ToyConfig {
            x: cfg.x,
            num_trajectories: reference_episodes,
            horizon: reference_horizon,
            seed: rng::derive_seed(seed, &[tags::ORACLE, 1]),
        };
        let query_cfg = ToyConfig {
            x: cfg.x,
            num_trajectories: query_episodes,
            horizon: query_horizon,
            seed: rng::derive_seed(seed, &[tags::ORACLE, 2]),
        };
        let reference_set = generate_dataset(&ref_cfg, &behavior);
        let query_set = generate_dataset(&query_cfg, &behavior);

        let to_state = |v: &[f64]| -> ToyState { [v[0], v[1], v[2], v[3]] };
        let reference: Vec<(f64, ToyState)> = reference_set
            .transitions()
            .map(|tr| (tr.reward, to_state(&tr.next_state)))
            .collect();
        // Weighted coordinates for the distance metric, grouped by action.
        let mut by_action: Vec<Vec<(u32, ToyState)>> = vec![Vec::new(); TOY_NUM_ACTIONS];
        for (i, tr) in reference_set.transitions().enumerate() {
            let mut s = to_state(&tr.state);
            s[0] *= 2.0;
            by_action[tr.action].push((i as u32, s));
        }

        let query_points: Vec<(ToyState, usize)> = query_set
            .transitions()
            .map(|tr| (to_state(&tr.state), tr.action))
            .collect();
        let queries: Vec<(ToyState, usize, Vec<u32>)> = query_points
            .into_par_iter()
            .map(|(state, action)| {
                let mut probe = state;
                probe[0] *= 2.0;
                let neighbors = nearest_k(&by_action[action], &probe, k);
                (state, action, neighbors)
            })
            .collect();

        Self { reference, queries, gamma, k }
    }

    /// Oracle squared Bellman error of `q`: the mean over query points of
    /// (q(s,a) - knn-backup(s,a))^2.
    pub fn msbe(&self, q: &QFunction) -> f64 {
        let targets: Vec<f64> = self
            .reference
            .par_iter()
            .map(|(r, next)| r + self.gamma * q.max_value(next, TOY_NUM_ACTIONS))
            .collect();
        let sse: f64 = self
            .queries
            .par_iter()
            .map(|(state, action, neighbors)| {
                let backup: f64 =
                    neighbors.iter().map(|&i| targets[i as usize]).sum::<f64>()
                        / neighbors.len() as f64;
                let e = q.value(state, *action) - backup;
                e * e
            })
            .sum();
        sse / self.queries.len() as f64
    }

    pub fn neighbors_per_query(&self) -> usize {
        self.k
    }
}

/// Exact k-nearest search by scan; ties break on the reference index.
fn nearest_k(points: &[(u32, ToyState)], probe: &ToyState, k: usize) -> Vec<u32> {
    let k = k.min(points.len());
    let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
    for &(idx, p) in points {
        let mut d = 0.0;
        for j in 0..4 {
            let diff = p[j] - probe[j];
            d += diff * diff;
        }
        if best.len() == k {
            let worst = best[k - 1];
            if (d, idx) >= (worst.0, worst.1) {
                continue;
            }
            best.pop();
        }
        let pos = best.partition_point(|&(bd, bi)| (bd, bi) < (d, idx));
        best.insert(pos, (d, idx));
    }
    best.into_iter().map(|(_, i)| i).collect()
}

/// One-shot oracle evaluation at the published sizes.
pub fn msbe_knn_oracle(cfg: &ToyConfig, q: &QFunction, gamma: f64, seed: u64) -> f64 {
    KnnOracle::new(cfg, gamma, seed).msbe(q)
}
