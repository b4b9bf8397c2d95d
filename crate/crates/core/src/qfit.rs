//! Supervised fitting of Q-functions: one independent regressor per action.
//!
//! Candidate training (FQI), backup estimation and FQE all reduce to the
//! same step — build per-transition regression targets, group transitions
//! by action, fit the configured backend on each group. The fitted bundle
//! evaluates as a Q-function.

use std::sync::Arc;

use thiserror::Error;

use crate::data::{OfflineDataset, Transition};
use crate::regression::{fit, DesignMatrix, FittedRegressor, RegressionError, RegressorSpec};
use crate::value::{Policy, QFunction, StateActionValue};

#[derive(Debug, Error)]
pub enum QFitError {
    #[error("no transitions with action {0}; cannot fit a per-action model")]
    MissingAction(usize),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error("target count {targets} does not match transition count {transitions}")]
    TargetMismatch { targets: usize, transitions: usize },
}

/// One fitted regressor per action, sharing a single feature map.
pub struct PerActionModel {
    spec: RegressorSpec,
    models: Vec<FittedRegressor>,
}

impl PerActionModel {
    pub fn spec(&self) -> &RegressorSpec {
        &self.spec
    }

    pub fn num_actions(&self) -> usize {
        self.models.len()
    }

    pub fn predict(&self, state: &[f64], action: usize) -> f64 {
        self.models[action].predict_state(state)
    }
}

impl StateActionValue for PerActionModel {
    fn value(&self, state: &[f64], action: usize) -> f64 {
        self.models[action].predict_state(state)
    }

    fn max_value(&self, state: &[f64], num_actions: usize) -> f64 {
        // One featurization shared across all actions.
        let features = self.spec.features(state);
        (0..num_actions.min(self.models.len()))
            .map(|a| self.models[a].predict(&features))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn values(&self, state: &[f64], num_actions: usize) -> Vec<f64> {
        let features = self.spec.features(state);
        (0..num_actions.min(self.models.len()))
            .map(|a| self.models[a].predict(&features))
            .collect()
    }
}

/// Bootstrapped backup targets r + gamma * (1 - terminal) * max_a' q(s', a'),
/// in dataset iteration order.
pub fn bootstrap_targets(q: &QFunction, data: &OfflineDataset, gamma: f64) -> Vec<f64> {
    let num_actions = data.config.num_actions;
    data.transitions()
        .map(|tr| {
            if tr.terminal {
                tr.reward
            } else {
                tr.reward + gamma * q.max_value(&tr.next_state, num_actions)
            }
        })
        .collect()
}

/// Policy-expectation targets r + gamma * (1 - terminal) *
/// E_{a' ~ pi(. | s')} q(s', a'), in dataset iteration order.
pub fn policy_targets(
    q: &QFunction,
    policy: &Policy,
    data: &OfflineDataset,
    gamma: f64,
) -> Vec<f64> {
    let num_actions = data.config.num_actions;
    data.transitions()
        .map(|tr| {
            if tr.terminal {
                tr.reward
            } else {
                let probs = policy.action_probs(&tr.next_state);
                let expected: f64 =
                    (0..num_actions).map(|a| probs[a] * q.value(&tr.next_state, a)).sum();
                tr.reward + gamma * expected
            }
        })
        .collect()
}

/// Per-action design matrices for the given targets (targets aligned with
/// dataset iteration order).
pub fn per_action_designs(
    spec: &RegressorSpec,
    data: &OfflineDataset,
    targets: &[f64],
) -> Result<Vec<DesignMatrix>, QFitError> {
    if targets.len() != data.num_transitions() {
        return Err(QFitError::TargetMismatch {
            targets: targets.len(),
            transitions: data.num_transitions(),
        });
    }
    let num_actions = data.config.num_actions;
    let mut features: Vec<Vec<Vec<f64>>> = vec![Vec::new(); num_actions];
    let mut ys: Vec<Vec<f64>> = vec![Vec::new(); num_actions];
    for (tr, &y) in data.transitions().zip(targets) {
        features[tr.action].push(spec.features(&tr.state));
        ys[tr.action].push(y);
    }
    features
        .into_iter()
        .zip(ys)
        .map(|(f, y)| DesignMatrix::new(f, y).map_err(QFitError::from))
        .collect()
}

/// Fits `spec` to the targets, one model per action.
pub fn fit_per_action(
    spec: &RegressorSpec,
    data: &OfflineDataset,
    targets: &[f64],
) -> Result<PerActionModel, QFitError> {
    let designs = per_action_designs(spec, data, targets)?;
    let mut models = Vec::with_capacity(designs.len());
    for (action, design) in designs.iter().enumerate() {
        if design.is_empty() {
            return Err(QFitError::MissingAction(action));
        }
        models.push(fit(spec, design)?);
    }
    Ok(PerActionModel { spec: spec.clone(), models })
}

/// Wraps a fitted bundle as a labeled Q-function.
pub fn q_from_model(label: impl Into<String>, model: PerActionModel) -> QFunction {
    QFunction::new(label, Arc::new(model))
}

impl PerActionModel {
    /// Max action value from a precomputed feature row.
    pub fn max_from_features(&self, features: &[f64]) -> f64 {
        self.models
            .iter()
            .map(|m| m.predict(features))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Probability-weighted action value from a precomputed feature row.
    pub fn expectation_from_features(&self, features: &[f64], probs: &[f64]) -> f64 {
        self.models
            .iter()
            .zip(probs)
            .map(|(m, p)| p * m.predict(features))
            .sum()
    }
}

enum RepeatSolver {
    /// One factorized ridge system per action; solves are back-substitutions.
    Ridge(Vec<crate::regression::RidgeFactor>),
    /// Backends without a reusable factorization refit from scratch.
    Generic,
}

/// Iterative fitting against a fixed design: features, per-action row
/// assignment and (for ridge) the normal-equation factorization are
/// computed once, then each iteration only rebuilds targets and solves.
/// Fitted Q-iteration and fitted policy evaluation both run through this.
pub struct RepeatedQFit {
    spec: RegressorSpec,
    designs: Vec<DesignMatrix>,
    /// transition index (dataset order) -> (action, row within design).
    slots: Vec<(usize, usize)>,
    next_features: Vec<Vec<f64>>,
    rewards: Vec<f64>,
    terminals: Vec<bool>,
    solver: RepeatSolver,
}

impl RepeatedQFit {
    pub fn new(spec: &RegressorSpec, data: &OfflineDataset) -> Result<Self, QFitError> {
        let num_actions = data.config.num_actions;
        let mut designs: Vec<DesignMatrix> = (0..num_actions).map(|_| DesignMatrix::default()).collect();
        let mut slots = Vec::with_capacity(data.num_transitions());
        let mut next_features = Vec::with_capacity(data.num_transitions());
        let mut rewards = Vec::with_capacity(data.num_transitions());
        let mut terminals = Vec::with_capacity(data.num_transitions());
        for tr in data.transitions() {
            let design = &mut designs[tr.action];
            slots.push((tr.action, design.features.len()));
            design.features.push(spec.features(&tr.state));
            design.targets.push(0.0);
            next_features.push(spec.features(&tr.next_state));
            rewards.push(tr.reward);
            terminals.push(tr.terminal);
        }
        for (action, design) in designs.iter().enumerate() {
            if design.is_empty() {
                return Err(QFitError::MissingAction(action));
            }
        }
        let solver = match spec {
            RegressorSpec::PolyRidge { lambda, .. } => {
                let factors = designs
                    .iter()
                    .map(|d| crate::regression::RidgeFactor::new(d, *lambda))
                    .collect::<Result<Vec<_>, _>>()?;
                RepeatSolver::Ridge(factors)
            }
            _ => RepeatSolver::Generic,
        };
        Ok(Self {
            spec: spec.clone(),
            designs,
            slots,
            next_features,
            rewards,
            terminals,
            solver,
        })
    }

    /// r + gamma * (1 - terminal) * max_a' q(s', a'), with q = 0 when no
    /// model is given (the all-zero initialization).
    pub fn bootstrap_targets(&self, model: Option<&PerActionModel>, gamma: f64) -> Vec<f64> {
        (0..self.rewards.len())
            .map(|i| {
                if self.terminals[i] {
                    self.rewards[i]
                } else {
                    let bootstrap = match model {
                        Some(m) => m.max_from_features(&self.next_features[i]),
                        None => 0.0,
                    };
                    self.rewards[i] + gamma * bootstrap
                }
            })
            .collect()
    }

    /// r + gamma * (1 - terminal) * E_{a' ~ probs}[q(s', a')], with fixed
    /// per-transition next-state action probabilities.
    pub fn expectation_targets(
        &self,
        model: Option<&PerActionModel>,
        next_probs: &[Vec<f64>],
        gamma: f64,
    ) -> Vec<f64> {
        (0..self.rewards.len())
            .map(|i| {
                if self.terminals[i] {
                    self.rewards[i]
                } else {
                    let bootstrap = match model {
                        Some(m) => {
                            m.expectation_from_features(&self.next_features[i], &next_probs[i])
                        }
                        None => 0.0,
                    };
                    self.rewards[i] + gamma * bootstrap
                }
            })
            .collect()
    }

    /// Fits all per-action models against targets given in dataset order.
    pub fn fit(&mut self, targets: &[f64]) -> Result<PerActionModel, QFitError> {
        if targets.len() != self.slots.len() {
            return Err(QFitError::TargetMismatch {
                targets: targets.len(),
                transitions: self.slots.len(),
            });
        }
        for (&(action, row), &y) in self.slots.iter().zip(targets) {
            self.designs[action].targets[row] = y;
        }
        let models = match &self.solver {
            RepeatSolver::Ridge(factors) => self
                .designs
                .iter()
                .zip(factors)
                .map(|(design, factor)| {
                    let model = factor.solve(&design.targets)?;
                    Ok(crate::regression::FittedRegressor::from_prediction(
                        self.spec.clone(),
                        Box::new(model),
                        factor.pseudo,
                    ))
                })
                .collect::<Result<Vec<_>, crate::regression::RegressionError>>()?,
            RepeatSolver::Generic => self
                .designs
                .iter()
                .map(|design| fit(&self.spec, design))
                .collect::<Result<Vec<_>, _>>()?,
        };
        Ok(PerActionModel { spec: self.spec.clone(), models })
    }
}

/// Squared-residual mean of `q` against the given targets:
/// mean over transitions of (q(s, a) - target)^2.
pub fn residual_mse(q: &QFunction, data: &OfflineDataset, targets: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (tr, &y) in data.transitions().zip(targets) {
        let e = q.value(&tr.state, tr.action) - y;
        sum += e * e;
    }
    sum / targets.len() as f64
}

/// Convenience iterator adapter used by scoring code.
pub fn transitions_of(data: &OfflineDataset) -> impl Iterator<Item = &Transition> {
    data.transitions()
}
