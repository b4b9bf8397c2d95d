//! Exact finite-MDP computations.
//!
//! Everything here is brute force on dense tensors: the Bellman optimality
//! operator, value iteration, policy evaluation by linear solve, and the
//! exact mean squared Bellman error in both its population and
//! single-sample-bootstrap forms. These serve as the ground-truth oracle
//! for the selector implementations and the bound suites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::data::OfflineDataset;
use crate::rng;

#[derive(Debug, Error)]
pub enum TabularError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("row {0} of the transition tensor does not sum to 1")]
    BadTransitionRow(usize),
    #[error("distribution does not sum to 1: {0}")]
    BadDistribution(String),
    #[error("dataset is not index-coded tabular data: {0}")]
    NotTabular(String),
    #[error("state-action cells never observed: {0:?}")]
    MissingCells(Vec<(usize, usize)>),
    #[error("parse error in mdp text format: {0}")]
    Parse(String),
}

/// Dense Q-table.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularQ {
    pub num_states: usize,
    pub num_actions: usize,
    pub values: Vec<f64>,
}

impl TabularQ {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self { num_states, num_actions, values: vec![0.0; num_states * num_actions] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let num_states = rows.len();
        let num_actions = rows[0].len();
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self { num_states, num_actions, values }
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.num_actions + a] = v;
    }

    pub fn max_over_actions(&self, s: usize) -> f64 {
        (0..self.num_actions).map(|a| self.get(s, a)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action with first-index tie-breaking.
    pub fn greedy_action(&self, s: usize) -> usize {
        let mut best = 0;
        for a in 1..self.num_actions {
            if self.get(s, a) > self.get(s, best) {
                best = a;
            }
        }
        best
    }

    pub fn sup_distance(&self, other: &TabularQ) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Stochastic tabular policy: probs[s][a].
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    pub num_states: usize,
    pub num_actions: usize,
    pub probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn deterministic(num_states: usize, num_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; num_states * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * num_actions + a] = 1.0;
        }
        Self { num_states, num_actions, probs }
    }

    pub fn greedy_from(q: &TabularQ) -> Self {
        let actions: Vec<usize> = (0..q.num_states).map(|s| q.greedy_action(s)).collect();
        Self::deterministic(q.num_states, q.num_actions, &actions)
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }
}

/// Finite MDP with dense transition and reward tensors, an initial-state
/// distribution, and an explicit state-action weighting used by the
/// population error norms.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// transition[s][a][s'], row-major.
    pub transition: Vec<f64>,
    /// reward[s][a][s'], row-major. Scalar-reward MDPs set all s' slices equal.
    pub reward: Vec<f64>,
    pub initial_dist: Vec<f64>,
    pub gamma: f64,
    /// weights[s][a]: the data distribution the error norms integrate over.
    pub weights: Vec<f64>,
}

impl TabularMdp {
    #[inline]
    fn sa(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    #[inline]
    pub fn t(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transition[(s * self.num_actions + a) * self.num_states + s2]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.reward[(s * self.num_actions + a) * self.num_states + s2]
    }

    #[inline]
    pub fn weight(&self, s: usize, a: usize) -> f64 {
        self.weights[self.sa(s, a)]
    }

    /// Minimum state-action weight (the coverage constant).
    pub fn psi(&self) -> f64 {
        self.weights.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<(), TabularError> {
        let tol = 1e-12;
        for row in 0..self.num_states * self.num_actions {
            let sum: f64 =
                self.transition[row * self.num_states..(row + 1) * self.num_states].iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(TabularError::BadTransitionRow(row));
            }
        }
        let d0: f64 = self.initial_dist.iter().sum();
        if (d0 - 1.0).abs() > tol {
            return Err(TabularError::BadDistribution(format!("d0 sums to {d0}")));
        }
        let w: f64 = self.weights.iter().sum();
        if (w - 1.0).abs() > tol {
            return Err(TabularError::BadDistribution(format!("weights sum to {w}")));
        }
        Ok(())
    }

    fn check_shape(&self, q: &TabularQ) -> Result<(), TabularError> {
        if q.num_states != self.num_states || q.num_actions != self.num_actions {
            return Err(TabularError::ShapeMismatch(format!(
                "q is {}x{}, mdp is {}x{}",
                q.num_states, q.num_actions, self.num_states, self.num_actions
            )));
        }
        Ok(())
    }

    /// One application of the Bellman optimality operator:
    /// out[s][a] = sum_s' T(s'|s,a) * (R(s,a,s') + gamma * max_a' q[s'][a']).
    pub fn bellman_backup(&self, q: &TabularQ) -> Result<TabularQ, TabularError> {
        self.check_shape(q)?;
        let maxes: Vec<f64> = (0..self.num_states).map(|s| q.max_over_actions(s)).collect();
        let mut out = TabularQ::zeros(self.num_states, self.num_actions);
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let mut acc = 0.0;
                for s2 in 0..self.num_states {
                    acc += self.t(s, a, s2) * (self.r(s, a, s2) + self.gamma * maxes[s2]);
                }
                out.set(s, a, acc);
            }
        }
        Ok(out)
    }

    /// Iterates the Bellman operator from zero until the sup-norm update is
    /// at most `tol * (1 - gamma) / gamma`, which bounds the fixed-point gap
    /// by `tol`.
    pub fn value_iteration(&self, tol: f64) -> TabularQ {
        let mut q = TabularQ::zeros(self.num_states, self.num_actions);
        let stop = if self.gamma > 0.0 { tol * (1.0 - self.gamma) / self.gamma } else { tol };
        for _ in 0..1_000_000 {
            let next = self.bellman_backup(&q).expect("shapes fixed");
            let delta = next.sup_distance(&q);
            q = next;
            if delta <= stop {
                break;
            }
        }
        q
    }

    /// State values of a policy via the linear solve V = r_pi + gamma P_pi V.
    pub fn policy_state_values(&self, policy: &TabularPolicy) -> Vec<f64> {
        let n = self.num_states;
        let mut p_pi = DMatrix::<f64>::zeros(n, n);
        let mut r_pi = DVector::<f64>::zeros(n);
        for s in 0..n {
            for a in 0..self.num_actions {
                let pa = policy.prob(s, a);
                if pa == 0.0 {
                    continue;
                }
                for s2 in 0..n {
                    let t = self.t(s, a, s2);
                    p_pi[(s, s2)] += pa * t;
                    r_pi[s] += pa * t * self.r(s, a, s2);
                }
            }
        }
        let system = DMatrix::<f64>::identity(n, n) - self.gamma * p_pi;
        let v = system.lu().solve(&r_pi).expect("I - gamma P is nonsingular for gamma < 1");
        v.iter().copied().collect()
    }

    /// J(pi) = d0 . V^pi.
    pub fn policy_value(&self, policy: &TabularPolicy) -> f64 {
        let v = self.policy_state_values(policy);
        self.initial_dist.iter().zip(&v).map(|(d, v)| d * v).sum()
    }

    /// Action-value table of a policy: Q^pi(s,a) = E[R + gamma V^pi(s')].
    pub fn policy_q(&self, policy: &TabularPolicy) -> TabularQ {
        let v = self.policy_state_values(policy);
        let mut q = TabularQ::zeros(self.num_states, self.num_actions);
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let mut acc = 0.0;
                for s2 in 0..self.num_states {
                    acc += self.t(s, a, s2) * (self.r(s, a, s2) + self.gamma * v[s2]);
                }
                q.set(s, a, acc);
            }
        }
        q
    }

    /// Weighted mean squared Bellman error of `q` (variable-target form).
    pub fn msbe(&self, q: &TabularQ) -> Result<f64, TabularError> {
        let backup = self.bellman_backup(q)?;
        Ok((0..self.num_states * self.num_actions)
            .map(|i| {
                let d = q.values[i] - backup.values[i];
                self.weights[i] * d * d
            })
            .sum())
    }

    /// Infinite-data empirical MSBE: the expectation over (s,a) ~ weights and
    /// s' ~ T of the squared single-sample bootstrap residual.
    pub fn population_emsbe(&self, q: &TabularQ) -> Result<f64, TabularError> {
        self.check_shape(q)?;
        let maxes: Vec<f64> = (0..self.num_states).map(|s| q.max_over_actions(s)).collect();
        let mut total = 0.0;
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let w = self.weight(s, a);
                if w == 0.0 {
                    continue;
                }
                let mut acc = 0.0;
                for s2 in 0..self.num_states {
                    let resid = q.get(s, a) - self.r(s, a, s2) - self.gamma * maxes[s2];
                    acc += self.t(s, a, s2) * resid * resid;
                }
                total += w * acc;
            }
        }
        Ok(total)
    }

    /// Weighted expectation of the conditional target variance
    /// Var[R + gamma max_a' q(s', a') | s, a], computed directly from T.
    pub fn target_variance(&self, q: &TabularQ) -> Result<f64, TabularError> {
        self.check_shape(q)?;
        let maxes: Vec<f64> = (0..self.num_states).map(|s| q.max_over_actions(s)).collect();
        let mut total = 0.0;
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let mut mean = 0.0;
                let mut second = 0.0;
                for s2 in 0..self.num_states {
                    let target = self.r(s, a, s2) + self.gamma * maxes[s2];
                    mean += self.t(s, a, s2) * target;
                    second += self.t(s, a, s2) * target * target;
                }
                total += self.weight(s, a) * (second - mean * mean);
            }
        }
        Ok(total)
    }

    /// Weighted squared distance to the optimal action-value function.
    pub fn estimation_error(&self, q: &TabularQ) -> Result<f64, TabularError> {
        self.check_shape(q)?;
        let q_star = self.value_iteration(1e-10);
        Ok((0..self.num_states * self.num_actions)
            .map(|i| {
                let d = q.values[i] - q_star.values[i];
                self.weights[i] * d * d
            })
            .sum())
    }

    /// Plain-text serialization. Layout:
    ///
    /// ```text
    /// tabular-mdp v1
    /// states S actions A gamma G
    /// transition    # S*A lines of S probabilities, row (s,a) in s-major order
    /// reward        # S*A lines of S values
    /// d0            # one line of S probabilities
    /// weights       # one line of S*A probabilities, s-major
    /// ```
    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let fmt_row = |row: &[f64]| {
            row.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(" ")
        };
        let mut out = String::new();
        writeln!(out, "tabular-mdp v1").unwrap();
        writeln!(
            out,
            "states {} actions {} gamma {:.16e}",
            self.num_states, self.num_actions, self.gamma
        )
        .unwrap();
        writeln!(out, "transition").unwrap();
        for row in 0..self.num_states * self.num_actions {
            writeln!(out, "{}", fmt_row(&self.transition[row * self.num_states..(row + 1) * self.num_states]))
                .unwrap();
        }
        writeln!(out, "reward").unwrap();
        for row in 0..self.num_states * self.num_actions {
            writeln!(out, "{}", fmt_row(&self.reward[row * self.num_states..(row + 1) * self.num_states]))
                .unwrap();
        }
        writeln!(out, "d0").unwrap();
        writeln!(out, "{}", fmt_row(&self.initial_dist)).unwrap();
        writeln!(out, "weights").unwrap();
        writeln!(out, "{}", fmt_row(&self.weights)).unwrap();
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TabularError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let err = |msg: &str| TabularError::Parse(msg.to_string());
        let header = lines.next().ok_or_else(|| err("empty input"))?;
        if header.trim() != "tabular-mdp v1" {
            return Err(err("expected header 'tabular-mdp v1'"));
        }
        let dims = lines.next().ok_or_else(|| err("missing dimension line"))?;
        let parts: Vec<&str> = dims.split_whitespace().collect();
        if parts.len() != 6 || parts[0] != "states" || parts[2] != "actions" || parts[4] != "gamma"
        {
            return Err(err("malformed dimension line"));
        }
        let num_states: usize = parts[1].parse().map_err(|_| err("bad state count"))?;
        let num_actions: usize = parts[3].parse().map_err(|_| err("bad action count"))?;
        let gamma: f64 = parts[5].parse().map_err(|_| err("bad gamma"))?;

        let parse_row = |line: &str, n: usize| -> Result<Vec<f64>, TabularError> {
            let row: Result<Vec<f64>, _> =
                line.split_whitespace().map(|t| t.parse::<f64>()).collect();
            let row = row.map_err(|_| err("bad float"))?;
            if row.len() != n {
                return Err(err("wrong row length"));
            }
            Ok(row)
        };
        let expect_section = |lines: &mut dyn Iterator<Item = &str>, name: &str| {
            match lines.next() {
                Some(l) if l.trim() == name => Ok(()),
                _ => Err(err(&format!("expected section '{name}'"))),
            }
        };

        expect_section(&mut lines, "transition")?;
        let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
        for _ in 0..num_states * num_actions {
            let line = lines.next().ok_or_else(|| err("truncated transition block"))?;
            transition.extend(parse_row(line, num_states)?);
        }
        expect_section(&mut lines, "reward")?;
        let mut reward = Vec::with_capacity(num_states * num_actions * num_states);
        for _ in 0..num_states * num_actions {
            let line = lines.next().ok_or_else(|| err("truncated reward block"))?;
            reward.extend(parse_row(line, num_states)?);
        }
        expect_section(&mut lines, "d0")?;
        let initial_dist =
            parse_row(lines.next().ok_or_else(|| err("missing d0 row"))?, num_states)?;
        expect_section(&mut lines, "weights")?;
        let weights = parse_row(
            lines.next().ok_or_else(|| err("missing weights row"))?,
            num_states * num_actions,
        )?;

        let mdp = TabularMdp {
            num_states,
            num_actions,
            transition,
            reward,
            initial_dist,
            gamma,
            weights,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Builds the empirical MDP of an index-coded dataset: states must be
    /// one-dimensional integer-valued arrays. Transition probabilities and
    /// rewards are cell frequencies and means, the weighting is the observed
    /// (s,a) frequency, and d0 is the empirical initial-state distribution.
    ///
    /// Fails if any (s,a) cell of the implied state space was never
    /// observed, because the empirical Bellman operator is undefined there.
    pub fn empirical_from_dataset(
        data: &OfflineDataset,
        gamma: f64,
    ) -> Result<Self, TabularError> {
        let decode = |state: &[f64]| -> Result<usize, TabularError> {
            if state.len() != 1 {
                return Err(TabularError::NotTabular(format!(
                    "expected 1-dimensional index-coded states, got dim {}",
                    state.len()
                )));
            }
            let v = state[0];
            if v < 0.0 || v.fract() != 0.0 {
                return Err(TabularError::NotTabular(format!("state {v} is not an index")));
            }
            Ok(v as usize)
        };

        let mut max_state = 0usize;
        for tr in data.transitions() {
            max_state = max_state.max(decode(&tr.state)?).max(decode(&tr.next_state)?);
        }
        let s_count = max_state + 1;
        let a_count = data.config.num_actions;

        let mut counts = vec![0.0f64; s_count * a_count * s_count];
        let mut reward_sums = vec![0.0f64; s_count * a_count * s_count];
        let mut d0 = vec![0.0f64; s_count];
        for traj in &data.trajectories {
            if let Some(first) = traj.transitions.first() {
                d0[decode(&first.state)?] += 1.0;
            }
            for tr in &traj.transitions {
                let s = decode(&tr.state)?;
                let s2 = decode(&tr.next_state)?;
                let idx = (s * a_count + tr.action) * s_count + s2;
                counts[idx] += 1.0;
                reward_sums[idx] += tr.reward;
            }
        }

        let total: f64 = counts.iter().sum();
        let mut transition = vec![0.0f64; counts.len()];
        let mut reward = vec![0.0f64; counts.len()];
        let mut weights = vec![0.0f64; s_count * a_count];
        let mut missing = Vec::new();
        for s in 0..s_count {
            for a in 0..a_count {
                let base = (s * a_count + a) * s_count;
                let row_sum: f64 = counts[base..base + s_count].iter().sum();
                if row_sum == 0.0 {
                    missing.push((s, a));
                    continue;
                }
                weights[s * a_count + a] = row_sum / total;
                for s2 in 0..s_count {
                    if counts[base + s2] > 0.0 {
                        transition[base + s2] = counts[base + s2] / row_sum;
                        reward[base + s2] = reward_sums[base + s2] / counts[base + s2];
                    }
                }
            }
        }
        if !missing.is_empty() {
            return Err(TabularError::MissingCells(missing));
        }
        let d0_total: f64 = d0.iter().sum();
        for v in &mut d0 {
            *v /= d0_total;
        }
        let mdp = TabularMdp {
            num_states: s_count,
            num_actions: a_count,
            transition,
            reward,
            initial_dist: d0,
            gamma,
            weights,
        };
        mdp.validate()?;
        Ok(mdp)
    }
}

/// Reward structure for randomly generated MDPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardNoise {
    /// R(s,a,s') does not depend on s' (zero conditional variance given a
    /// deterministic transition row).
    Deterministic,
    /// R(s,a,s') varies with the landing state.
    Stochastic,
}

/// Random test-instance generator.
///
/// Transition rows are normalized uniform draws, rewards lie in [-1, 1],
/// d0 is a random simplex point, and the state-action weights are a random
/// simplex point mixed with 20% uniform mass so the minimum weight is at
/// least 0.2 / (S * A).
pub fn random_tabular_mdp(
    seed: u64,
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    reward_noise: RewardNoise,
) -> TabularMdp {
    let mut rng = rng::stream(seed, &[rng::tags::ORACLE]);
    let simplex = |n: usize, rng: &mut rng::ChaCha8Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    };

    let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        transition.extend(simplex(num_states, &mut rng));
    }
    let mut reward = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        match reward_noise {
            RewardNoise::Deterministic => {
                let r = rng.gen_range(-1.0..1.0);
                reward.extend(std::iter::repeat(r).take(num_states));
            }
            RewardNoise::Stochastic => {
                reward.extend((0..num_states).map(|_| rng.gen_range(-1.0..1.0)));
            }
        }
    }
    let initial_dist = simplex(num_states, &mut rng);
    let raw_weights = simplex(num_states * num_actions, &mut rng);
    let cells = (num_states * num_actions) as f64;
    let weights: Vec<f64> = raw_weights.into_iter().map(|w| 0.8 * w + 0.2 / cells).collect();

    let mdp = TabularMdp {
        num_states,
        num_actions,
        transition,
        reward,
        initial_dist,
        gamma,
        weights,
    };
    debug_assert!(mdp.validate().is_ok());
    mdp
}

/// Random Q-table with entries in [-scale, scale].
pub fn random_tabular_q(seed: u64, num_states: usize, num_actions: usize, scale: f64) -> TabularQ {
    let mut rng = rng::stream(seed, &[rng::tags::ORACLE, 0x71]);
    let values = (0..num_states * num_actions).map(|_| rng.gen_range(-scale..scale)).collect();
    TabularQ { num_states, num_actions, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{chain2, coin};
    use approx::assert_abs_diff_eq;

    #[test]
    fn chain2_backup_of_zero() {
        let mdp = chain2();
        let backup = mdp.bellman_backup(&TabularQ::zeros(2, 2)).unwrap();
        assert_eq!(backup.values, vec![0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn coin_backup_is_zero_for_any_q() {
        let mdp = coin();
        for seed in 0..5 {
            let q = random_tabular_q(seed, mdp.num_states, mdp.num_actions, 3.0);
            let backup = mdp.bellman_backup(&q).unwrap();
            for v in backup.values {
                assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn q_star_is_a_fixed_point() {
        let mdp = chain2();
        let q_star = mdp.value_iteration(1e-12);
        assert_abs_diff_eq!(q_star.get(0, 0), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(q_star.get(0, 1), 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(q_star.get(1, 0), 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(q_star.get(1, 1), 2.0, epsilon = 1e-9);
        let backup = mdp.bellman_backup(&q_star).unwrap();
        assert!(backup.sup_distance(&q_star) < 1e-9);
    }

    #[test]
    fn coin_q_star_is_zero() {
        let q_star = coin().value_iteration(1e-12);
        for v in q_star.values {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn value_iteration_contracts_at_rate_gamma() {
        let mdp = random_tabular_mdp(11, 5, 3, 0.8, RewardNoise::Stochastic);
        let q_star = mdp.value_iteration(1e-12);
        let mut q = TabularQ::zeros(5, 3);
        let mut last = q.sup_distance(&q_star);
        for _ in 0..20 {
            q = mdp.bellman_backup(&q).unwrap();
            let gap = q.sup_distance(&q_star);
            assert!(gap <= mdp.gamma * last + 1e-12);
            last = gap;
        }
    }

    #[test]
    fn chain2_policy_values() {
        let mdp = chain2();
        let always_a1 = TabularPolicy::deterministic(2, 2, &[1, 1]);
        assert_abs_diff_eq!(mdp.policy_value(&always_a1), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn coin_policy_value_is_zero() {
        let mdp = coin();
        let only = TabularPolicy::deterministic(2, 1, &[0, 0]);
        assert_abs_diff_eq!(mdp.policy_value(&only), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn greedy_of_q_star_attains_the_best_deterministic_policy() {
        for seed in 0..10 {
            let mdp = random_tabular_mdp(seed, 4, 2, 0.7, RewardNoise::Stochastic);
            let q_star = mdp.value_iteration(1e-12);
            let greedy = TabularPolicy::greedy_from(&q_star);
            let j_greedy = mdp.policy_value(&greedy);
            // Exhaustive enumeration of all A^S deterministic policies.
            let mut best = f64::NEG_INFINITY;
            for code in 0..(mdp.num_actions as u32).pow(mdp.num_states as u32) {
                let mut actions = Vec::with_capacity(mdp.num_states);
                let mut c = code;
                for _ in 0..mdp.num_states {
                    actions.push((c % mdp.num_actions as u32) as usize);
                    c /= mdp.num_actions as u32;
                }
                let pi = TabularPolicy::deterministic(mdp.num_states, mdp.num_actions, &actions);
                best = best.max(mdp.policy_value(&pi));
            }
            assert_abs_diff_eq!(j_greedy, best, epsilon = 1e-8);
        }
    }

    #[test]
    fn msbe_examples() {
        let chain = chain2();
        let q_star = chain.value_iteration(1e-12);
        assert!(chain.msbe(&q_star).unwrap() < 1e-18);
        // q = 0 with uniform weights: mean of squares of [[0,1],[1,1]].
        assert_abs_diff_eq!(chain.msbe(&TabularQ::zeros(2, 2)).unwrap(), 0.75, epsilon = 1e-12);

        let coin = coin();
        let c = 0.4;
        let q = TabularQ::from_rows(&[vec![c], vec![c]]);
        assert_abs_diff_eq!(coin.msbe(&q).unwrap(), c * c, epsilon = 1e-12);
    }

    #[test]
    fn population_emsbe_examples() {
        let coin = coin();
        let c = 0.4;
        let q = TabularQ::from_rows(&[vec![c], vec![c]]);
        // Variance of the +-1 reward is 1, so the bootstrap form adds 1.
        assert_abs_diff_eq!(coin.population_emsbe(&q).unwrap(), c * c + 1.0, epsilon = 1e-12);
        let q_star = coin.value_iteration(1e-12);
        assert_abs_diff_eq!(coin.population_emsbe(&q_star).unwrap(), 1.0, epsilon = 1e-12);

        // Deterministic MDP: bootstrap and population forms coincide.
        let chain = chain2();
        for seed in 0..5 {
            let q = random_tabular_q(seed, 2, 2, 2.0);
            assert_abs_diff_eq!(
                chain.population_emsbe(&q).unwrap(),
                chain.msbe(&q).unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn estimation_error_examples() {
        let chain = chain2();
        let q_star = chain.value_iteration(1e-12);
        assert!(chain.estimation_error(&q_star).unwrap() < 1e-16);
        assert_abs_diff_eq!(
            chain.estimation_error(&TabularQ::zeros(2, 2)).unwrap(),
            3.25,
            epsilon = 1e-8
        );
        // Pointwise shrinkage toward Q* cannot increase the error.
        let hi = chain.estimation_error(&TabularQ::zeros(2, 2)).unwrap();
        let halfway = TabularQ {
            num_states: 2,
            num_actions: 2,
            values: q_star.values.iter().map(|v| 0.5 * v).collect(),
        };
        assert!(chain.estimation_error(&halfway).unwrap() <= hi);
    }

    #[test]
    fn random_mdp_is_reproducible_and_valid() {
        let a = random_tabular_mdp(7, 5, 3, 0.9, RewardNoise::Stochastic);
        let b = random_tabular_mdp(7, 5, 3, 0.9, RewardNoise::Stochastic);
        assert_eq!(a.transition, b.transition);
        assert_eq!(a.reward, b.reward);
        assert_eq!(a.weights, b.weights);
        a.validate().unwrap();
        assert!(a.psi() >= 0.2 / 15.0 - 1e-12);
        for row in 0..15 {
            let sum: f64 = a.transition[row * 5..(row + 1) * 5].iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn text_format_round_trips() {
        let mdp = random_tabular_mdp(3, 4, 2, 0.85, RewardNoise::Stochastic);
        let text = mdp.to_text();
        let back = TabularMdp::from_text(&text).unwrap();
        assert_eq!(mdp.transition, back.transition);
        assert_eq!(mdp.reward, back.reward);
        assert_eq!(mdp.initial_dist, back.initial_dist);
        assert_eq!(mdp.weights, back.weights);
        assert_eq!(mdp.gamma, back.gamma);
    }

    #[test]
    fn from_text_rejects_garbage() {
        assert!(TabularMdp::from_text("nope").is_err());
        let mdp = chain2();
        let mut text = mdp.to_text();
        text = text.replace("weights", "wights");
        assert!(TabularMdp::from_text(&text).is_err());
    }
}
