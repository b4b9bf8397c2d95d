//! k-nearest-neighbor regression with weighted Euclidean distance.
//! Distance ties break by sample index, so predictions are deterministic.

use super::{DesignMatrix, Prediction, RegressionError};

pub struct KnnModel {
    points: Vec<Vec<f64>>,
    targets: Vec<f64>,
    k: usize,
    weights: Option<Vec<f64>>,
}

impl KnnModel {
    fn distance2(&self, a: &[f64], b: &[f64]) -> f64 {
        match &self.weights {
            Some(w) => a
                .iter()
                .zip(b)
                .zip(w)
                .map(|((x, y), wi)| {
                    let d = wi * (x - y);
                    d * d
                })
                .sum(),
            None => a
                .iter()
                .zip(b)
                .map(|(x, y)| {
                    let d = x - y;
                    d * d
                })
                .sum(),
        }
    }
}

impl Prediction for KnnModel {
    fn predict(&self, features: &[f64]) -> f64 {
        let k = self.k.min(self.points.len());
        // Bounded insertion sort into the k best (distance, index) pairs.
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, p) in self.points.iter().enumerate() {
            let d = self.distance2(features, p);
            if best.len() == k {
                let worst = best[k - 1];
                if (d, i) >= (worst.0, worst.1) {
                    continue;
                }
                best.pop();
            }
            let pos = best.partition_point(|&(bd, bi)| (bd, bi) < (d, i));
            best.insert(pos, (d, i));
        }
        let sum: f64 = best.iter().map(|&(_, i)| self.targets[i]).sum();
        sum / best.len() as f64
    }
}

pub fn fit_knn(
    data: &DesignMatrix,
    k: usize,
    weights: Option<Vec<f64>>,
) -> Result<KnnModel, RegressionError> {
    if let Some(w) = &weights {
        if w.len() != data.features[0].len() {
            return Err(RegressionError::InvalidSpec(format!(
                "feature_weights has length {}, features have length {}",
                w.len(),
                data.features[0].len()
            )));
        }
    }
    Ok(KnnModel { points: data.features.clone(), targets: data.targets.clone(), k, weights })
}
