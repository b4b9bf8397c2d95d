//! Q-functions and policies.
//!
//! A Q-function here is *any* deterministic real-valued map of state-action
//! pairs, not necessarily an action-value function of some policy. Concrete
//! evaluators live behind the [`StateActionValue`] trait so tabular lookups,
//! fitted regressors and closed-form candidates all share one interface.

use std::sync::Arc;

use rand::Rng;

/// Evaluable map (state, action) -> real. Implementations must be
/// deterministic: identical inputs give identical outputs.
pub trait StateActionValue: Send + Sync {
    fn value(&self, state: &[f64], action: usize) -> f64;

    /// max over actions of `value(state, a)`. Implementations that share
    /// feature computations across actions should override this.
    fn max_value(&self, state: &[f64], num_actions: usize) -> f64 {
        (0..num_actions)
            .map(|a| self.value(state, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// All action values at one state. Overridden where one featurization
    /// serves every action.
    fn values(&self, state: &[f64], num_actions: usize) -> Vec<f64> {
        (0..num_actions).map(|a| self.value(state, a)).collect()
    }
}

/// A shareable Q-function with a human-readable label.
#[derive(Clone)]
pub struct QFunction {
    eval: Arc<dyn StateActionValue>,
    pub label: String,
}

impl std::fmt::Debug for QFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QFunction").field("label", &self.label).finish()
    }
}

impl QFunction {
    pub fn new(label: impl Into<String>, eval: Arc<dyn StateActionValue>) -> Self {
        Self { eval, label: label.into() }
    }

    /// The zero Q-function. Its greedy policy with random tie-breaking is
    /// the uniform behavior policy.
    pub fn zero() -> Self {
        struct Zero;
        impl StateActionValue for Zero {
            fn value(&self, _: &[f64], _: usize) -> f64 {
                0.0
            }
        }
        Self::new("zero", Arc::new(Zero))
    }

    /// Wraps a closure; used by tests and closed-form candidates.
    pub fn from_fn(
        label: impl Into<String>,
        f: impl Fn(&[f64], usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        struct FnEval<F>(F);
        impl<F: Fn(&[f64], usize) -> f64 + Send + Sync> StateActionValue for FnEval<F> {
            fn value(&self, state: &[f64], action: usize) -> f64 {
                self.0(state, action)
            }
        }
        Self::new(label, Arc::new(FnEval(f)))
    }

    pub fn value(&self, state: &[f64], action: usize) -> f64 {
        self.eval.value(state, action)
    }

    pub fn max_value(&self, state: &[f64], num_actions: usize) -> f64 {
        self.eval.max_value(state, num_actions)
    }

    pub fn values(&self, state: &[f64], num_actions: usize) -> Vec<f64> {
        self.eval.values(state, num_actions)
    }

    /// Greedy action under first-index tie-breaking.
    pub fn greedy_action(&self, state: &[f64], num_actions: usize) -> usize {
        let mut best = 0;
        let mut best_v = self.value(state, 0);
        for a in 1..num_actions {
            let v = self.value(state, a);
            if v > best_v {
                best = a;
                best_v = v;
            }
        }
        best
    }
}

/// How greedy policies resolve exact ties between actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieRule {
    /// Lowest action index wins; the policy is deterministic.
    FirstIndex,
    /// Uniform over the argmax set; sampling draws from the passed rng.
    Random,
}

/// Maps states to action distributions.
pub trait ActionRule: Send + Sync {
    fn action_probs(&self, state: &[f64]) -> Vec<f64>;
}

#[derive(Clone)]
pub struct Policy {
    rule: Arc<dyn ActionRule>,
    pub is_deterministic: bool,
    pub label: String,
}

impl std::fmt::Debug for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Policy")
            .field("label", &self.label)
            .field("is_deterministic", &self.is_deterministic)
            .finish()
    }
}

impl Policy {
    pub fn new(label: impl Into<String>, deterministic: bool, rule: Arc<dyn ActionRule>) -> Self {
        Self { rule, is_deterministic: deterministic, label: label.into() }
    }

    /// Uniform distribution over all actions.
    pub fn uniform(num_actions: usize) -> Self {
        struct Uniform(usize);
        impl ActionRule for Uniform {
            fn action_probs(&self, _: &[f64]) -> Vec<f64> {
                vec![1.0 / self.0 as f64; self.0]
            }
        }
        Self::new("uniform", false, Arc::new(Uniform(num_actions)))
    }

    /// Always plays the given action.
    pub fn fixed(action: usize, num_actions: usize) -> Self {
        struct Fixed {
            action: usize,
            num_actions: usize,
        }
        impl ActionRule for Fixed {
            fn action_probs(&self, _: &[f64]) -> Vec<f64> {
                let mut p = vec![0.0; self.num_actions];
                p[self.action] = 1.0;
                p
            }
        }
        Self::new(
            format!("fixed-{action}"),
            true,
            Arc::new(Fixed { action, num_actions }),
        )
    }

    pub fn action_probs(&self, state: &[f64]) -> Vec<f64> {
        self.rule.action_probs(state)
    }

    /// Inverse-CDF sample from the action distribution.
    pub fn sample<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> usize {
        let probs = self.action_probs(state);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        probs.len() - 1
    }
}

/// Greedy policy of a Q-function with the stated tie rule.
pub fn greedy_policy(q: &QFunction, num_actions: usize, tie_rule: TieRule) -> Policy {
    struct Greedy {
        q: QFunction,
        num_actions: usize,
        tie_rule: TieRule,
    }
    impl ActionRule for Greedy {
        fn action_probs(&self, state: &[f64]) -> Vec<f64> {
            let values = self.q.values(state, self.num_actions);
            let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut probs = vec![0.0; self.num_actions];
            match self.tie_rule {
                TieRule::FirstIndex => {
                    let a = values.iter().position(|&v| v == best).unwrap_or(0);
                    probs[a] = 1.0;
                }
                TieRule::Random => {
                    let ties: Vec<usize> = values
                        .iter()
                        .enumerate()
                        .filter(|(_, &v)| v == best)
                        .map(|(a, _)| a)
                        .collect();
                    let p = 1.0 / ties.len() as f64;
                    for a in ties {
                        probs[a] = p;
                    }
                }
            }
            probs
        }
    }
    Policy::new(
        format!("greedy({})", q.label),
        tie_rule == TieRule::FirstIndex,
        Arc::new(Greedy { q: q.clone(), num_actions, tie_rule }),
    )
}
