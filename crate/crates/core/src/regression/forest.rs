//! Bagged regression trees.
//!
//! Each tree grows on a with-replacement bootstrap sample, splitting on the
//! best of `m_try` randomly sampled features by variance reduction. A split
//! is admitted only if both children keep at least `min_leaf` rows. The
//! forest predicts the mean of its trees.

use rand::Rng;

use crate::rng;

use super::{DesignMatrix, Prediction, RegressionError};

enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

impl Node {
    fn predict(&self, features: &[f64]) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split { feature, threshold, left, right } => {
                if features[*feature] <= *threshold {
                    left.predict(features)
                } else {
                    right.predict(features)
                }
            }
        }
    }
}

pub struct ForestModel {
    trees: Vec<Node>,
}

impl ForestModel {
    #[cfg(test)]
    pub(crate) fn tree_predictions(&self, features: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict(features)).collect()
    }
}

impl Prediction for ForestModel {
    fn predict(&self, features: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(features)).sum();
        sum / self.trees.len() as f64
    }
}

struct TreeBuilder<'a> {
    data: &'a DesignMatrix,
    m_try: usize,
    min_leaf: usize,
    num_features: usize,
}

impl TreeBuilder<'_> {
    fn mean(&self, rows: &[usize]) -> f64 {
        rows.iter().map(|&i| self.data.targets[i]).sum::<f64>() / rows.len() as f64
    }

    fn grow(&self, rows: Vec<usize>, rng: &mut rng::ChaCha8Rng) -> Node {
        if rows.len() < 2 * self.min_leaf {
            return Node::Leaf(self.mean(&rows));
        }
        // Partial Fisher-Yates over feature indices.
        let mut candidates: Vec<usize> = (0..self.num_features).collect();
        for i in 0..self.m_try.min(self.num_features) {
            let j = rng.gen_range(i..self.num_features);
            candidates.swap(i, j);
        }
        let candidates = &candidates[..self.m_try.min(self.num_features)];

        let mut best: Option<(f64, usize, f64)> = None; // (sse, feature, threshold)
        for &feature in candidates {
            let mut order = rows.clone();
            order.sort_by(|&a, &b| {
                self.data.features[a][feature]
                    .partial_cmp(&self.data.features[b][feature])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let total_sum: f64 = order.iter().map(|&i| self.data.targets[i]).sum();
            let total_sq: f64 =
                order.iter().map(|&i| self.data.targets[i] * self.data.targets[i]).sum();
            let n = order.len() as f64;
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for split in 1..order.len() {
                let prev = order[split - 1];
                let cur = order[split];
                let y = self.data.targets[prev];
                left_sum += y;
                left_sq += y * y;
                let lv = self.data.features[prev][feature];
                let rv = self.data.features[cur][feature];
                if lv == rv {
                    continue;
                }
                if split < self.min_leaf || order.len() - split < self.min_leaf {
                    continue;
                }
                let nl = split as f64;
                let nr = n - nl;
                let right_sum = total_sum - left_sum;
                let right_sq = total_sq - left_sq;
                let sse = (left_sq - left_sum * left_sum / nl)
                    + (right_sq - right_sum * right_sum / nr);
                let threshold = 0.5 * (lv + rv);
                if best.map_or(true, |(b, _, _)| sse < b) {
                    best = Some((sse, feature, threshold));
                }
            }
        }
        match best {
            None => Node::Leaf(self.mean(&rows)),
            Some((_, feature, threshold)) => {
                let (left, right): (Vec<usize>, Vec<usize>) =
                    rows.into_iter().partition(|&i| self.data.features[i][feature] <= threshold);
                Node::Split {
                    feature,
                    threshold,
                    left: Box::new(self.grow(left, rng)),
                    right: Box::new(self.grow(right, rng)),
                }
            }
        }
    }
}

pub fn fit_forest(
    data: &DesignMatrix,
    num_trees: usize,
    min_leaf: usize,
    m_try: usize,
    seed: u64,
) -> Result<ForestModel, RegressionError> {
    let num_features = data.features[0].len();
    if m_try > num_features {
        return Err(RegressionError::InvalidSpec(format!(
            "m_try {m_try} exceeds feature count {num_features}"
        )));
    }
    let builder = TreeBuilder { data, m_try, min_leaf, num_features };
    let n = data.len();
    let trees = (0..num_trees)
        .map(|t| {
            let mut rng = rng::stream(seed, &[rng::tags::CANDIDATES, 0xF0, t as u64]);
            let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            builder.grow(rows, &mut rng)
        })
        .collect();
    Ok(ForestModel { trees })
}
