//! Polynomial ridge regression with a closed-form normal-equation solve.
//!
//! Features are standardized by training-set mean and standard deviation
//! (frozen for prediction). The intercept column is excluded from both the
//! standardization and the ridge penalty, so a huge penalty collapses the
//! model onto the target mean.

use nalgebra::{DMatrix, DVector};

use super::{DesignMatrix, Prediction, RegressionError};

/// Number of monomials of total degree <= degree in `dim` variables:
/// C(dim + degree, degree).
pub fn poly_feature_count(dim: usize, degree: usize) -> usize {
    let mut count = 1usize;
    // Running binomial coefficient product.
    for i in 1..=degree {
        count = count * (dim + i) / i;
    }
    count
}

/// All monomials of the state with total degree <= degree, in graded
/// lexicographic order starting with the constant 1.
pub fn poly_features(state: &[f64], degree: usize) -> Vec<f64> {
    let dim = state.len();
    // powers[i][e] = state[i]^e.
    let mut powers = Vec::with_capacity(dim);
    for &x in state {
        let mut p = Vec::with_capacity(degree + 1);
        let mut acc = 1.0;
        for _ in 0..=degree {
            p.push(acc);
            acc *= x;
        }
        powers.push(p);
    }
    let mut out = Vec::with_capacity(poly_feature_count(dim, degree));
    let mut exponents = vec![0usize; dim];
    for total in 0..=degree {
        emit_monomials(&mut out, &powers, &mut exponents, 0, total);
    }
    out
}

fn emit_monomials(
    out: &mut Vec<f64>,
    powers: &[Vec<f64>],
    exponents: &mut [usize],
    coord: usize,
    remaining: usize,
) {
    if coord == powers.len() - 1 {
        exponents[coord] = remaining;
        let value: f64 =
            exponents.iter().enumerate().map(|(i, &e)| powers[i][e]).product();
        out.push(value);
        return;
    }
    // Highest exponent first on the leading coordinate: x1^2, x1*x2, x2^2.
    for e in (0..=remaining).rev() {
        exponents[coord] = e;
        emit_monomials(out, powers, exponents, coord + 1, remaining - e);
    }
}

pub struct RidgeModel {
    weights: Vec<f64>,
    centers: Vec<f64>,
    scales: Vec<f64>,
}

impl Prediction for RidgeModel {
    fn predict(&self, features: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.weights.len() {
            acc += self.weights[j] * (features[j] - self.centers[j]) / self.scales[j];
        }
        acc
    }
}

enum Factorization {
    /// Cholesky of the penalized normal matrix Z'Z + lambda I'.
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    /// Minimum-norm least squares on Z itself, with the singular-value
    /// cutoff; used for unpenalized or rank-deficient systems.
    Svd { svd: nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>, eps: f64 },
}

/// Fixed-design ridge solver: the standardization and factorization are
/// computed once, after which any number of target vectors solve in
/// O(n p + p^2). Iterative fitters reuse one factor per action across every
/// iteration.
pub struct RidgeFactor {
    z: DMatrix<f64>,
    centers: Vec<f64>,
    scales: Vec<f64>,
    factorization: Factorization,
    /// True when the unpenalized system was rank deficient and solves fall
    /// back to the minimum norm solution.
    pub pseudo: bool,
}

impl RidgeFactor {
    /// Standardizes the design (column 0 is the intercept and passes
    /// through) and factorizes the penalized normal system.
    pub fn new(data: &DesignMatrix, lambda: f64) -> Result<Self, RegressionError> {
        let n = data.len();
        let p = data.features[0].len();
        let mut centers = vec![0.0; p];
        let mut scales = vec![1.0; p];
        for j in 1..p {
            let mean: f64 = data.features.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let var: f64 = data.features.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>()
                / n as f64;
            let sd = var.sqrt();
            centers[j] = mean;
            // Constant columns collapse to zero after centering; the unit
            // scale keeps them harmless.
            scales[j] = if sd > 1e-12 { sd } else { 1.0 };
        }
        let z = DMatrix::<f64>::from_fn(n, p, |i, j| {
            (data.features[i][j] - centers[j]) / scales[j]
        });

        let mut pseudo = false;
        let factorization = if lambda > 0.0 {
            let mut normal = z.transpose() * &z;
            for j in 1..p {
                normal[(j, j)] += lambda;
            }
            match normal.cholesky() {
                Some(chol) => Factorization::Cholesky(chol),
                None => {
                    pseudo = true;
                    Self::svd_of(&z)
                }
            }
        } else {
            let f = Self::svd_of(&z);
            if let Factorization::Svd { svd, eps } = &f {
                let rank = svd.singular_values.iter().filter(|&&s| s > *eps).count();
                if rank < p {
                    pseudo = true;
                }
            }
            f
        };
        Ok(Self { z, centers, scales, factorization, pseudo })
    }

    fn svd_of(z: &DMatrix<f64>) -> Factorization {
        let svd = z.clone().svd(true, true);
        let eps = svd.singular_values.iter().cloned().fold(0.0, f64::max) * 1e-10;
        Factorization::Svd { svd, eps }
    }

    /// Solves for one target vector.
    pub fn solve(&self, targets: &[f64]) -> Result<RidgeModel, RegressionError> {
        let y = DVector::<f64>::from_iterator(targets.len(), targets.iter().copied());
        let weights = match &self.factorization {
            Factorization::Cholesky(chol) => chol.solve(&(self.z.transpose() * &y)),
            Factorization::Svd { svd, eps } => svd
                .solve(&y, *eps)
                .map_err(|e| RegressionError::DegenerateDesign(e.to_string()))?,
        };
        Ok(RidgeModel {
            weights: weights.iter().copied().collect(),
            centers: self.centers.clone(),
            scales: self.scales.clone(),
        })
    }
}

/// Solves (Z'Z + lambda I') w = Z'y on standardized features Z, where I'
/// zeroes the intercept entry. A singular unpenalized system falls back to
/// a minimum-norm SVD solve and reports `true` in the second slot.
pub fn fit_ridge(data: &DesignMatrix, lambda: f64) -> Result<(RidgeModel, bool), RegressionError> {
    let factor = RidgeFactor::new(data, lambda)?;
    let model = factor.solve(&data.targets)?;
    Ok((model, factor.pseudo))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_count_matches_binomial() {
        assert_eq!(poly_feature_count(4, 3), 35);
        assert_eq!(poly_feature_count(2, 2), 6);
        assert_eq!(poly_feature_count(1, 5), 6);
    }

    #[test]
    fn degree_zero_terms_come_first() {
        let f = poly_features(&[2.0, 3.0], 3);
        assert_eq!(f[0], 1.0);
        assert_eq!(&f[1..3], &[2.0, 3.0]);
        // Degree-2 block: x1^2, x1 x2, x2^2.
        assert_eq!(&f[3..6], &[4.0, 6.0, 9.0]);
        // Degree-3 block: x1^3, x1^2 x2, x1 x2^2, x2^3.
        assert_eq!(&f[6..10], &[8.0, 12.0, 18.0, 27.0]);
    }
}
