//! Exhaustive per-cell mean regression.
//!
//! Keys are the exact bit patterns of the feature vector, so this backend
//! realizes the empirical conditional expectation on tabular data: at every
//! observed cell the prediction is the cell's target mean, which is the
//! minimizer of the squared loss over unrestricted functions.

use std::collections::HashMap;

use super::{DesignMatrix, Prediction};

pub struct CellMeanModel {
    cells: HashMap<Vec<u64>, f64>,
    global_mean: f64,
}

fn key(features: &[f64]) -> Vec<u64> {
    features.iter().map(|v| v.to_bits()).collect()
}

impl Prediction for CellMeanModel {
    fn predict(&self, features: &[f64]) -> f64 {
        *self.cells.get(&key(features)).unwrap_or(&self.global_mean)
    }
}

pub fn fit_cell_mean(data: &DesignMatrix) -> CellMeanModel {
    let mut sums: HashMap<Vec<u64>, (f64, usize)> = HashMap::new();
    for (x, y) in data.features.iter().zip(&data.targets) {
        let entry = sums.entry(key(x)).or_insert((0.0, 0));
        entry.0 += y;
        entry.1 += 1;
    }
    let cells = sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    let global_mean = data.targets.iter().sum::<f64>() / data.len() as f64;
    CellMeanModel { cells, global_mean }
}
