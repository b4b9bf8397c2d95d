//! Machine checks of the exact error-bound and recovery results on random
//! tabular instances.
//!
//! Each suite samples small random MDPs and Q-tables, evaluates both sides
//! of an inequality (or identity) with the brute-force oracles, and reports
//! the worst violation. These are the exit gates for the tabular layer:
//! the weighted-norm error and regret bounds, the bootstrap-residual
//! inflation identity, the sup-norm bounds, operator contraction, and the
//! exact recovery of the weighted Bellman error by validated regression on
//! enumerated data.

use rand::Rng;

use crate::fixtures::{enumerated_mdp_and_dataset, mirrored_split};
use crate::regression::RegressorSpec;
use crate::rng;
use crate::selectors::{estimate_backup, sbv_score};
use crate::tabular::{
    random_tabular_mdp, random_tabular_q, RewardNoise, TabularMdp, TabularPolicy, TabularQ,
};
use crate::value::QFunction;

/// Result of one suite: the largest observed violation against its
/// tolerance.
#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub max_violation: f64,
    pub tolerance: f64,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.max_violation <= self.tolerance
    }
}

struct Instance {
    mdp: TabularMdp,
    qs: Vec<TabularQ>,
}

fn instances(num_mdps: usize, qs_per_mdp: usize, seed: u64) -> Vec<Instance> {
    let mut meta = rng::stream(seed, &[0x9199]);
    (0..num_mdps)
        .map(|i| {
            let s = meta.gen_range(2..=6);
            let a = meta.gen_range(2..=3);
            let gamma = meta.gen_range(0.3..0.95);
            let mdp = random_tabular_mdp(
                rng::derive_seed(seed, &[1, i as u64]),
                s,
                a,
                gamma,
                RewardNoise::Stochastic,
            );
            let qs = (0..qs_per_mdp)
                .map(|j| random_tabular_q(rng::derive_seed(seed, &[2, i as u64, j as u64]), s, a, 2.0))
                .collect();
            Instance { mdp, qs }
        })
        .collect()
}

/// Weighted-norm estimation bound: ||q - Q*||^2_w <= msbe / (psi (1-gamma)^2).
pub fn check_estimation_bound(num_mdps: usize, qs_per_mdp: usize, seed: u64) -> SuiteOutcome {
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    for inst in instances(num_mdps, qs_per_mdp, seed) {
        let psi = inst.mdp.psi();
        let gamma = inst.mdp.gamma;
        for q in &inst.qs {
            let eps_sq = inst.mdp.msbe(q).unwrap();
            let bound = eps_sq / (psi * (1.0 - gamma) * (1.0 - gamma));
            let lhs = inst.mdp.estimation_error(q).unwrap();
            worst = worst.max(lhs - bound);
            cases += 1;
        }
    }
    SuiteOutcome { name: "estimation-bound", cases, max_violation: worst, tolerance: 1e-8 }
}

/// Regret bound: J(pi*) - J(greedy(q)) <= 2 sqrt(msbe) / (psi (1-gamma)^2).
pub fn check_regret_bound(num_mdps: usize, qs_per_mdp: usize, seed: u64) -> SuiteOutcome {
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    for inst in instances(num_mdps, qs_per_mdp, seed) {
        let psi = inst.mdp.psi();
        let gamma = inst.mdp.gamma;
        let q_star = inst.mdp.value_iteration(1e-10);
        let j_star = inst.mdp.policy_value(&TabularPolicy::greedy_from(&q_star));
        for q in &inst.qs {
            let eps = inst.mdp.msbe(q).unwrap().sqrt();
            let bound = 2.0 * eps / (psi * (1.0 - gamma) * (1.0 - gamma));
            let j_q = inst.mdp.policy_value(&TabularPolicy::greedy_from(q));
            worst = worst.max((j_star - j_q) - bound);
            cases += 1;
        }
    }
    SuiteOutcome { name: "regret-bound", cases, max_violation: worst, tolerance: 1e-8 }
}

/// The estimation-bound constant is strictly tighter than the regret
/// constant whenever psi < 1 and gamma > 0.
pub fn check_constant_ordering(num_mdps: usize, seed: u64) -> SuiteOutcome {
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    for inst in instances(num_mdps, 1, seed) {
        let psi = inst.mdp.psi();
        let gamma = inst.mdp.gamma;
        let est = 1.0 / (psi.sqrt() * (1.0 - gamma));
        let reg = 2.0 / (psi * (1.0 - gamma) * (1.0 - gamma));
        worst = worst.max(est - reg);
        cases += 1;
    }
    // Strict ordering: any nonnegative value is a violation.
    SuiteOutcome { name: "bound-constant-ordering", cases, max_violation: worst, tolerance: 0.0 }
}

/// Bootstrap-residual identity: population single-sample error equals the
/// weighted error plus the expected conditional target variance.
pub fn check_bootstrap_identity(num_mdps: usize, qs_per_mdp: usize, seed: u64) -> SuiteOutcome {
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    for inst in instances(num_mdps, qs_per_mdp, seed) {
        for q in &inst.qs {
            let lhs = inst.mdp.population_emsbe(q).unwrap() - inst.mdp.msbe(q).unwrap();
            let rhs = inst.mdp.target_variance(q).unwrap();
            worst = worst.max((lhs - rhs).abs());
            cases += 1;
        }
    }
    SuiteOutcome { name: "bootstrap-identity", cases, max_violation: worst, tolerance: 1e-10 }
}

/// Sup-norm bounds: ||q - Q*||_inf <= ||q - B q||_inf / (1 - gamma) and
/// ||V* - V^{greedy(q)}||_inf <= 2 ||q - B q||_inf / (1 - gamma)^2.
pub fn check_supnorm_bounds(num_mdps: usize, qs_per_mdp: usize, seed: u64) -> SuiteOutcome {
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    for inst in instances(num_mdps, qs_per_mdp, seed) {
        let gamma = inst.mdp.gamma;
        let q_star = inst.mdp.value_iteration(1e-10);
        let v_star: Vec<f64> =
            (0..inst.mdp.num_states).map(|s| q_star.max_over_actions(s)).collect();
        for q in &inst.qs {
            let backup = inst.mdp.bellman_backup(q).unwrap();
            let residual = q.sup_distance(&backup);
            worst = worst.max(q.sup_distance(&q_star) - residual / (1.0 - gamma));

            let v_pi = inst.mdp.policy_state_values(&TabularPolicy::greedy_from(q));
            let value_gap = v_star
                .iter()
                .zip(&v_pi)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(value_gap - 2.0 * residual / ((1.0 - gamma) * (1.0 - gamma)));
            cases += 2;
        }
    }
    SuiteOutcome { name: "supnorm-bounds", cases, max_violation: worst, tolerance: 1e-8 }
}

/// Operator contraction: ||B q1 - B q2||_inf <= gamma ||q1 - q2||_inf.
pub fn check_contraction(num_mdps: usize, pairs_per_mdp: usize, seed: u64) -> SuiteOutcome {
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    for inst in instances(num_mdps, 2 * pairs_per_mdp, seed) {
        for pair in inst.qs.chunks_exact(2) {
            let b1 = inst.mdp.bellman_backup(&pair[0]).unwrap();
            let b2 = inst.mdp.bellman_backup(&pair[1]).unwrap();
            let lhs = b1.sup_distance(&b2);
            let rhs = inst.mdp.gamma * pair[0].sup_distance(&pair[1]);
            worst = worst.max(lhs - rhs);
            cases += 1;
        }
    }
    SuiteOutcome { name: "bellman-contraction", cases, max_violation: worst, tolerance: 1e-10 }
}

/// Exact recovery: on enumerated data, the validated-regression error
/// estimate with the per-cell backend equals the weighted Bellman error of
/// the empirical MDP.
pub fn check_recovery_exactness(num_instances: usize, seed: u64) -> SuiteOutcome {
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    let mut meta = rng::stream(seed, &[0x9233]);
    for i in 0..num_instances {
        let s = meta.gen_range(2..=5);
        let gamma = meta.gen_range(0.3..0.9);
        let (mdp, data) =
            enumerated_mdp_and_dataset(rng::derive_seed(seed, &[3, i as u64]), s, 2, gamma);
        let split = mirrored_split(&data);
        for j in 0..2 {
            let table = random_tabular_q(rng::derive_seed(seed, &[4, i as u64, j]), s, 2, 2.0);
            let shared = table.clone();
            let q = QFunction::from_fn("q", move |st, a| shared.get(st[0] as usize, a));
            let backup =
                estimate_backup(&q, &split, &[RegressorSpec::CellMean], gamma).unwrap();
            let score = sbv_score(&q, &backup, &split.validation).score;
            let exact = mdp.msbe(&table).unwrap();
            worst = worst.max((score - exact).abs());
            cases += 1;
        }
    }
    SuiteOutcome { name: "recovery-exactness", cases, max_violation: worst, tolerance: 1e-10 }
}

/// The checks behind `verify-props`, at the published sizes.
pub fn run_all(num_mdps: usize, seed: u64) -> Vec<SuiteOutcome> {
    vec![
        check_estimation_bound(num_mdps, 5, seed),
        check_regret_bound(num_mdps, 5, seed),
        check_constant_ordering(num_mdps, seed),
        check_bootstrap_identity(num_mdps, 5, seed),
        check_supnorm_bounds(num_mdps, 5, seed),
        check_contraction(num_mdps, 5, seed),
        check_recovery_exactness(num_mdps.div_euclid(2).max(10), seed),
    ]
}

/// Same checks against one explicit MDP with random Q-tables.
pub fn check_single_mdp(mdp: &TabularMdp, seed: u64) -> Vec<SuiteOutcome> {
    let qs: Vec<TabularQ> = (0..5)
        .map(|j| random_tabular_q(rng::derive_seed(seed, &[5, j]), mdp.num_states, mdp.num_actions, 2.0))
        .collect();
    let psi = mdp.psi();
    let gamma = mdp.gamma;
    let q_star = mdp.value_iteration(1e-10);
    let j_star = mdp.policy_value(&TabularPolicy::greedy_from(&q_star));
    let v_star: Vec<f64> = (0..mdp.num_states).map(|s| q_star.max_over_actions(s)).collect();

    let mut est = f64::NEG_INFINITY;
    let mut reg = f64::NEG_INFINITY;
    let mut ident = f64::NEG_INFINITY;
    let mut sup = f64::NEG_INFINITY;
    let mut contraction = f64::NEG_INFINITY;
    for (j, q) in qs.iter().enumerate() {
        let eps_sq = mdp.msbe(q).unwrap();
        est = est.max(
            mdp.estimation_error(q).unwrap() - eps_sq / (psi * (1.0 - gamma) * (1.0 - gamma)),
        );
        let j_q = mdp.policy_value(&TabularPolicy::greedy_from(q));
        reg = reg
            .max((j_star - j_q) - 2.0 * eps_sq.sqrt() / (psi * (1.0 - gamma) * (1.0 - gamma)));
        ident = ident.max(
            (mdp.population_emsbe(q).unwrap() - mdp.msbe(q).unwrap()
                - mdp.target_variance(q).unwrap())
            .abs(),
        );
        let backup = mdp.bellman_backup(q).unwrap();
        let residual = q.sup_distance(&backup);
        sup = sup.max(q.sup_distance(&q_star) - residual / (1.0 - gamma));
        let v_pi = mdp.policy_state_values(&TabularPolicy::greedy_from(q));
        let gap =
            v_star.iter().zip(&v_pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        sup = sup.max(gap - 2.0 * residual / ((1.0 - gamma) * (1.0 - gamma)));
        let other = &qs[(j + 1) % qs.len()];
        let b2 = mdp.bellman_backup(other).unwrap();
        contraction =
            contraction.max(backup.sup_distance(&b2) - gamma * q.sup_distance(other));
    }
    vec![
        SuiteOutcome { name: "estimation-bound", cases: qs.len(), max_violation: est, tolerance: 1e-8 },
        SuiteOutcome { name: "regret-bound", cases: qs.len(), max_violation: reg, tolerance: 1e-8 },
        SuiteOutcome { name: "bootstrap-identity", cases: qs.len(), max_violation: ident, tolerance: 1e-10 },
        SuiteOutcome { name: "supnorm-bounds", cases: 2 * qs.len(), max_violation: sup, tolerance: 1e-8 },
        SuiteOutcome { name: "bellman-contraction", cases: qs.len(), max_violation: contraction, tolerance: 1e-10 },
    ]
}
