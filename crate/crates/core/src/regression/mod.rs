//! Supervised regression backends.
//!
//! Each backend implements [`Prediction`] behind [`fit`], dispatched from a
//! [`RegressorSpec`]. The spec also owns the feature map: polynomial ridge
//! expands states into monomials, the others consume raw state coordinates.
//! Model selection is plain validation MSE over a spec list.

mod cell;
mod forest;
mod knn;
mod poly;

pub use poly::poly_feature_count;
pub(crate) use poly::RidgeFactor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error("design matrix is empty")]
    EmptyDesign,
    #[error("design matrix is malformed: {0}")]
    BadDesign(String),
    #[error("invalid regressor spec: {0}")]
    InvalidSpec(String),
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("no regressor spec could be fit: {0}")]
    AllSpecsFailed(String),
}

/// An interchangeable regression strategy, identified by kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressorSpec {
    /// Closed-form ridge on a total-degree polynomial expansion of the state.
    PolyRidge { degree: usize, lambda: f64 },
    /// k-nearest-neighbor mean with optional per-coordinate distance weights.
    Knn {
        k: usize,
        #[serde(default)]
        feature_weights: Option<Vec<f64>>,
    },
    /// Bagged variance-reduction regression trees.
    Forest { num_trees: usize, min_leaf: usize, m_try: usize, seed: u64 },
    /// Exhaustive per-cell means keyed on the exact feature bit pattern;
    /// unseen cells fall back to the global target mean. On fully-covered
    /// tabular data this is the empirical conditional expectation.
    CellMean,
}

impl RegressorSpec {
    /// One-line identifier used in reports and manifests.
    pub fn describe(&self) -> String {
        match self {
            RegressorSpec::PolyRidge { degree, lambda } => {
                format!("poly_ridge(d={degree};l={lambda})")
            }
            RegressorSpec::Knn { k, .. } => format!("knn(k={k})"),
            RegressorSpec::Forest { num_trees, min_leaf, m_try, .. } => {
                format!("forest(trees={num_trees};n_min={min_leaf};m_try={m_try})")
            }
            RegressorSpec::CellMean => "cell_mean".into(),
        }
    }

    pub fn validate(&self) -> Result<(), RegressionError> {
        match self {
            RegressorSpec::PolyRidge { degree, lambda } => {
                if *degree < 1 {
                    return Err(RegressionError::InvalidSpec("degree must be >= 1".into()));
                }
                if *lambda < 0.0 {
                    return Err(RegressionError::InvalidSpec("lambda must be >= 0".into()));
                }
            }
            RegressorSpec::Knn { k, .. } => {
                if *k < 1 {
                    return Err(RegressionError::InvalidSpec("k must be >= 1".into()));
                }
            }
            RegressorSpec::Forest { num_trees, min_leaf, m_try, .. } => {
                if *num_trees < 1 || *min_leaf < 1 || *m_try < 1 {
                    return Err(RegressionError::InvalidSpec(
                        "forest parameters must be >= 1".into(),
                    ));
                }
            }
            RegressorSpec::CellMean => {}
        }
        Ok(())
    }

    /// Feature map for this backend. Polynomial ridge expands all monomials
    /// of the state with total degree at most `degree`; action identity is
    /// handled by fitting one model per action, so the action never enters
    /// the features.
    pub fn features(&self, state: &[f64]) -> Vec<f64> {
        match self {
            RegressorSpec::PolyRidge { degree, .. } => poly::poly_features(state, *degree),
            _ => state.to_vec(),
        }
    }

    /// Whether the hypothesis class contains every constant function. Used
    /// by the backup-vs-EMSBE diagnostic.
    pub fn includes_constant(&self) -> bool {
        matches!(self, RegressorSpec::PolyRidge { .. })
    }
}

/// Feature rows plus regression targets.
#[derive(Debug, Clone, Default)]
pub struct DesignMatrix {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl DesignMatrix {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self, RegressionError> {
        let dm = Self { features, targets };
        dm.validate()?;
        Ok(dm)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn validate(&self) -> Result<(), RegressionError> {
        if self.features.len() != self.targets.len() {
            return Err(RegressionError::BadDesign(format!(
                "{} feature rows vs {} targets",
                self.features.len(),
                self.targets.len()
            )));
        }
        if let Some(first) = self.features.first() {
            let width = first.len();
            if self.features.iter().any(|r| r.len() != width) {
                return Err(RegressionError::BadDesign("ragged feature rows".into()));
            }
        }
        if self.targets.iter().any(|t| !t.is_finite()) {
            return Err(RegressionError::BadDesign("non-finite target".into()));
        }
        Ok(())
    }
}

/// A trained model.
pub trait Prediction: Send + Sync {
    fn predict(&self, features: &[f64]) -> f64;
}

/// Spec plus learned parameters. Prediction is deterministic after fitting.
pub struct FittedRegressor {
    pub spec: RegressorSpec,
    model: Box<dyn Prediction>,
    /// Set when a singular unpenalized system was resolved by a
    /// minimum-norm pseudo-solve.
    pub pseudo_solved: bool,
}

impl FittedRegressor {
    pub(crate) fn from_prediction(
        spec: RegressorSpec,
        model: Box<dyn Prediction>,
        pseudo_solved: bool,
    ) -> Self {
        Self { spec, model, pseudo_solved }
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        self.model.predict(features)
    }

    /// Featurize-and-predict convenience for raw states.
    pub fn predict_state(&self, state: &[f64]) -> f64 {
        self.model.predict(&self.spec.features(state))
    }
}

/// Fits `spec` to the design matrix. Rows must have been produced by
/// `spec.features`.
pub fn fit(spec: &RegressorSpec, data: &DesignMatrix) -> Result<FittedRegressor, RegressionError> {
    spec.validate()?;
    data.validate()?;
    if data.is_empty() {
        return Err(RegressionError::EmptyDesign);
    }
    let (model, pseudo_solved): (Box<dyn Prediction>, bool) = match spec {
        RegressorSpec::PolyRidge { lambda, .. } => {
            let (m, pseudo) = poly::fit_ridge(data, *lambda)?;
            (Box::new(m), pseudo)
        }
        RegressorSpec::Knn { k, feature_weights } => {
            (Box::new(knn::fit_knn(data, *k, feature_weights.clone())?), false)
        }
        RegressorSpec::Forest { num_trees, min_leaf, m_try, seed } => (
            Box::new(forest::fit_forest(data, *num_trees, *min_leaf, *m_try, *seed)?),
            false,
        ),
        RegressorSpec::CellMean => (Box::new(cell::fit_cell_mean(data)), false),
    };
    Ok(FittedRegressor { spec: spec.clone(), model, pseudo_solved })
}

/// Mean squared prediction error on the given data.
pub fn validation_mse(model: &FittedRegressor, data: &DesignMatrix) -> Result<f64, RegressionError> {
    data.validate()?;
    if data.is_empty() {
        return Err(RegressionError::EmptyDesign);
    }
    let sse: f64 = data
        .features
        .iter()
        .zip(&data.targets)
        .map(|(x, y)| {
            let e = model.predict(x) - y;
            e * e
        })
        .sum();
    Ok(sse / data.len() as f64)
}

/// Outcome of validation-MSE model selection over a spec list.
pub struct SelectionOutcome {
    pub best_index: usize,
    pub best: FittedRegressor,
    /// (spec, validation MSE) for every spec, in input order. Failed fits
    /// record an infinite MSE.
    pub mse_table: Vec<(RegressorSpec, f64)>,
}

/// Fits every spec on `train`, scores on `val`, returns the argmin.
/// Ties resolve to the first spec in list order.
pub fn select_regressor(
    specs: &[RegressorSpec],
    train: &DesignMatrix,
    val: &DesignMatrix,
) -> Result<SelectionOutcome, RegressionError> {
    if specs.is_empty() {
        return Err(RegressionError::InvalidSpec("spec list is empty".into()));
    }
    let mut best: Option<(usize, FittedRegressor, f64)> = None;
    let mut mse_table = Vec::with_capacity(specs.len());
    let mut last_err = String::new();
    for (i, spec) in specs.iter().enumerate() {
        // Train rows must match this spec's feature map; callers that mix
        // feature maps build per-spec designs upstream.
        match fit(spec, train).and_then(|m| validation_mse(&m, val).map(|mse| (m, mse))) {
            Ok((model, mse)) => {
                mse_table.push((spec.clone(), mse));
                let better = match &best {
                    None => true,
                    Some((_, _, best_mse)) => mse < *best_mse,
                };
                if better {
                    best = Some((i, model, mse));
                }
            }
            Err(e) => {
                last_err = e.to_string();
                mse_table.push((spec.clone(), f64::INFINITY));
            }
        }
    }
    match best {
        Some((best_index, best, _)) => Ok(SelectionOutcome { best_index, best, mse_table }),
        None => Err(RegressionError::AllSpecsFailed(last_err)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn design_for(spec: &RegressorSpec, states: &[Vec<f64>], targets: &[f64]) -> DesignMatrix {
        DesignMatrix::new(
            states.iter().map(|s| spec.features(s)).collect(),
            targets.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn poly_feature_examples() {
        let spec = RegressorSpec::PolyRidge { degree: 1, lambda: 0.0 };
        assert_eq!(spec.features(&[2.0, 3.0, 4.0, 5.0]), vec![1.0, 2.0, 3.0, 4.0, 5.0]);

        let spec = RegressorSpec::PolyRidge { degree: 2, lambda: 0.0 };
        let f = spec.features(&[2.0, 3.0]);
        assert_eq!(f.len(), 6);
        assert_eq!(f, vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);

        for (dim, d) in [(1usize, 1usize), (2, 2), (3, 2), (4, 3), (2, 5)] {
            let spec = RegressorSpec::PolyRidge { degree: d, lambda: 0.0 };
            let state = vec![1.5; dim];
            assert_eq!(spec.features(&state).len(), poly_feature_count(dim, d));
        }
    }

    #[test]
    fn ridge_interpolates_clean_linear_data() {
        let spec = RegressorSpec::PolyRidge { degree: 1, lambda: 0.0 };
        let states: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let targets: Vec<f64> = states.iter().map(|s| 2.0 * s[0]).collect();
        let model = fit(&spec, &design_for(&spec, &states, &targets)).unwrap();
        assert_abs_diff_eq!(model.predict_state(&[3.5]), 7.0, epsilon = 1e-10);
        assert_abs_diff_eq!(model.predict_state(&[0.0]), 0.0, epsilon = 1e-10);
        assert!(!model.pseudo_solved);
    }

    #[test]
    fn huge_lambda_collapses_to_target_mean() {
        let spec = RegressorSpec::PolyRidge { degree: 2, lambda: 1e12 };
        let mut rng = stream(4, &[]);
        let states: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.gen_range(-2.0..2.0)]).collect();
        let targets: Vec<f64> = states.iter().map(|s| 3.0 * s[0] + 1.0).collect();
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        let model = fit(&spec, &design_for(&spec, &states, &targets)).unwrap();
        assert_abs_diff_eq!(model.predict_state(&[1.7]), mean, epsilon = 1e-6);
    }

    #[test]
    fn singular_unpenalized_fit_is_flagged() {
        // Duplicate coordinates make the expansion rank deficient.
        let spec = RegressorSpec::PolyRidge { degree: 1, lambda: 0.0 };
        let states: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, i as f64]).collect();
        let targets: Vec<f64> = states.iter().map(|s| s[0]).collect();
        let model = fit(&spec, &design_for(&spec, &states, &targets)).unwrap();
        assert!(model.pseudo_solved);
        assert_abs_diff_eq!(model.predict_state(&[2.0, 2.0]), 2.0, epsilon = 1e-8);
    }

    #[test]
    fn knn_k1_memorizes_training_points() {
        let spec = RegressorSpec::Knn { k: 1, feature_weights: None };
        let states: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, -(i as f64)]).collect();
        let targets: Vec<f64> = (0..8).map(|i| (i * i) as f64).collect();
        let model = fit(&spec, &design_for(&spec, &states, &targets)).unwrap();
        for (s, y) in states.iter().zip(&targets) {
            assert_eq!(model.predict_state(s), *y);
        }
    }

    #[test]
    fn ridge_train_mse_is_nondecreasing_in_lambda() {
        let mut rng = stream(9, &[]);
        let states: Vec<Vec<f64>> =
            (0..50).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let targets: Vec<f64> = states
            .iter()
            .map(|s| s[0] - 0.5 * s[1] + 0.3 * rng.gen_range(-1.0..1.0))
            .collect();
        let mut last = -1.0;
        for lambda in [0.0, 0.01, 0.1, 1.0, 10.0, 100.0, 1e4] {
            let spec = RegressorSpec::PolyRidge { degree: 2, lambda };
            let design = design_for(&spec, &states, &targets);
            let model = fit(&spec, &design).unwrap();
            let mse = validation_mse(&model, &design).unwrap();
            assert!(mse + 1e-12 >= last, "lambda={lambda}: {mse} < {last}");
            last = mse;
        }
    }

    #[test]
    fn closed_form_matches_gradient_descent() {
        // Pre-standardized columns keep the internal scaling an identity,
        // so both solvers minimize the same quadratic.
        let mut rng = stream(21, &[]);
        let n = 30;
        for lambda in [0.0, 0.5, 3.0] {
            let mut col1: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut col2: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for col in [&mut col1, &mut col2] {
                let m = col.iter().sum::<f64>() / n as f64;
                let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64).sqrt();
                for v in col.iter_mut() {
                    *v = (*v - m) / sd;
                }
            }
            let features: Vec<Vec<f64>> =
                (0..n).map(|i| vec![1.0, col1[i], col2[i]]).collect();
            let targets: Vec<f64> =
                (0..n).map(|i| 1.5 * col1[i] - 0.7 * col2[i] + rng.gen_range(-0.1..0.1)).collect();
            let design = DesignMatrix::new(features.clone(), targets.clone()).unwrap();
            let (model, _) = super::poly::fit_ridge(&design, lambda).unwrap();

            // Gradient descent on ||y - Xw||^2 + lambda * ||w_[1..]||^2.
            let mut w = vec![0.0; 3];
            let lr = 1e-3;
            for _ in 0..200_000 {
                let mut grad = vec![0.0; 3];
                for i in 0..n {
                    let pred: f64 = (0..3).map(|j| w[j] * features[i][j]).sum();
                    let e = pred - targets[i];
                    for j in 0..3 {
                        grad[j] += 2.0 * e * features[i][j];
                    }
                }
                for j in 1..3 {
                    grad[j] += 2.0 * lambda * w[j];
                }
                for j in 0..3 {
                    w[j] -= lr * grad[j];
                }
            }
            for i in 0..n {
                let gd: f64 = (0..3).map(|j| w[j] * features[i][j]).sum();
                assert_abs_diff_eq!(model.predict(&features[i]), gd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn cell_mean_recovers_per_cell_targets() {
        let spec = RegressorSpec::CellMean;
        let states = vec![vec![0.0], vec![0.0], vec![1.0], vec![1.0], vec![1.0]];
        let targets = vec![1.0, 3.0, 5.0, 7.0, 9.0];
        let model = fit(&spec, &design_for(&spec, &states, &targets)).unwrap();
        assert_eq!(model.predict_state(&[0.0]), 2.0);
        assert_eq!(model.predict_state(&[1.0]), 7.0);
        // Unseen cell falls back to the global mean.
        assert_eq!(model.predict_state(&[2.0]), 5.0);
    }

    #[test]
    fn validation_mse_examples() {
        let spec = RegressorSpec::PolyRidge { degree: 1, lambda: 0.0 };
        let states: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let targets: Vec<f64> = states.iter().map(|s| 2.0 * s[0] + 1.0).collect();
        let design = design_for(&spec, &states, &targets);
        let model = fit(&spec, &design).unwrap();
        assert!(validation_mse(&model, &design).unwrap() < 1e-18);

        // A constant-mean model scores the (population) variance of targets.
        let mean_spec = RegressorSpec::PolyRidge { degree: 1, lambda: 1e14 };
        let model = fit(&mean_spec, &design).unwrap();
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        let var = targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / targets.len() as f64;
        assert_abs_diff_eq!(validation_mse(&model, &design).unwrap(), var, epsilon = 1e-6);

        // Two-pass naive oracle.
        let naive: f64 = design
            .features
            .iter()
            .zip(&design.targets)
            .map(|(x, y)| (model.predict(x) - y) * (model.predict(x) - y))
            .sum::<f64>()
            / design.len() as f64;
        assert_abs_diff_eq!(validation_mse(&model, &design).unwrap(), naive, epsilon = 1e-12);

        assert!(matches!(
            validation_mse(&model, &DesignMatrix::default()),
            Err(RegressionError::EmptyDesign)
        ));
    }

    #[test]
    fn selection_prefers_lower_validation_mse() {
        let specs = vec![
            RegressorSpec::PolyRidge { degree: 1, lambda: 0.0 },
            RegressorSpec::PolyRidge { degree: 1, lambda: 1e12 },
        ];
        let states: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 5.0]).collect();
        let targets: Vec<f64> = states.iter().map(|s| 2.0 * s[0]).collect();
        let train = design_for(&specs[0], &states[..15], &targets[..15]);
        let val = design_for(&specs[0], &states[15..], &targets[15..]);
        let outcome = select_regressor(&specs, &train, &val).unwrap();
        assert_eq!(outcome.best_index, 0);

        let single = select_regressor(&specs[..1], &train, &val).unwrap();
        assert_eq!(single.best_index, 0);
    }

    #[test]
    fn heavy_penalty_wins_on_pure_noise_most_seeds() {
        let specs = [
            RegressorSpec::PolyRidge { degree: 3, lambda: 0.0 },
            RegressorSpec::PolyRidge { degree: 3, lambda: 1e6 },
        ];
        let mut penalized_wins = 0;
        for seed in 0..20 {
            let mut rng = stream(seed, &[0xBB]);
            let gen_set = |rng: &mut crate::rng::ChaCha8Rng, n: usize| {
                let states: Vec<Vec<f64>> =
                    (0..n).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
                let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (states, targets)
            };
            let (train_s, train_y) = gen_set(&mut rng, 15);
            let (val_s, val_y) = gen_set(&mut rng, 30);
            let train = design_for(&specs[0], &train_s, &train_y);
            let val = design_for(&specs[0], &val_s, &val_y);
            let unpenalized = validation_mse(&fit(&specs[0], &train).unwrap(), &val).unwrap();
            let penalized = validation_mse(&fit(&specs[1], &train).unwrap(), &val).unwrap();
            if penalized <= unpenalized {
                penalized_wins += 1;
            }
        }
        assert!(penalized_wins > 10, "penalized won only {penalized_wins}/20");
    }
}
