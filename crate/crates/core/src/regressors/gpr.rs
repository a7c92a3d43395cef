use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::knn::sq_dist;
use crate::error::{Error, Result};

/// Zero-mean Gaussian process with a unit-variance RBF kernel and a
/// diagonal regularizer `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GprModel {
    pub alpha: f64,
    pub length_scale: f64,
    pub points: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    /// Lower Cholesky factor of `K + alpha I`, row-major.
    pub factor: Vec<f64>,
    /// `(K + alpha I)^-1 y`, one vector per target.
    pub weights: Vec<Vec<f64>>,
}

impl GprModel {
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        rbf(self.length_scale, a, b)
    }

    pub fn fit(x: &[Vec<f64>], y: &[Vec<f64>], alpha: f64, length_scale: f64) -> Result<Self> {
        if !(alpha >= 0.0 && length_scale > 0.0) {
            return Err(Error::Config(
                "gpr: alpha must be >= 0 and length scale > 0".into(),
            ));
        }
        let n = x.len();
        let mut k = DMatrix::from_fn(n, n, |i, j| rbf(length_scale, &x[i], &x[j]));
        for i in 0..n {
            k[(i, i)] += alpha;
        }
        let chol = k
            .cholesky()
            .ok_or_else(|| Error::Training("gpr: kernel matrix is not positive definite".into()))?;
        let n_targets = y[0].len();
        let weights = (0..n_targets)
            .map(|t| {
                let b = DVector::from_iterator(n, y.iter().map(|r| r[t]));
                chol.solve(&b).iter().copied().collect()
            })
            .collect();
        let l = chol.l();
        let factor = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| l[(i, j)])
            .collect();
        Ok(Self {
            alpha,
            length_scale,
            points: x.to_vec(),
            targets: y.to_vec(),
            factor,
            weights,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let kx: Vec<f64> = self.points.iter().map(|p| self.kernel(p, x)).collect();
        self.weights
            .iter()
            .map(|w| w.iter().zip(&kx).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Posterior variance of the latent function at `x`.
    pub fn predict_variance(&self, x: &[f64]) -> f64 {
        let n = self.points.len();
        let l = DMatrix::from_row_slice(n, n, &self.factor);
        let kx = DVector::from_iterator(n, self.points.iter().map(|p| self.kernel(p, x)));
        let v = l
            .solve_lower_triangular(&kx)
            .unwrap_or_else(|| DVector::zeros(n));
        (1.0 - v.norm_squared()).max(0.0)
    }
}

fn rbf(length_scale: f64, a: &[f64], b: &[f64]) -> f64 {
    (-0.5 * sq_dist(a, b) / (length_scale * length_scale)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let x: Vec<Vec<f64>> = (0..12)
            .map(|i| vec![i as f64 * 0.9, (i as f64 * 0.7).sin()])
            .collect();
        let y = x
            .iter()
            .map(|r| vec![r[0].cos() + r[1], 2.0 * r[1]])
            .collect();
        (x, y)
    }

    #[test]
    fn near_interpolation_without_regularizer() {
        let (x, y) = data();
        let m = GprModel::fit(&x, &y, 1e-10, 1.0).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            for (a, b) in m.predict(xi).iter().zip(yi) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        assert!(m.predict_variance(&x[3]) < 1e-6);
        assert!(m.predict_variance(&[100.0, 0.0]) > 0.99);
    }

    #[test]
    fn training_error_shrinks_with_alpha() {
        let (x, y) = data();
        let err = |alpha: f64| {
            let m = GprModel::fit(&x, &y, alpha, 1.6).unwrap();
            x.iter()
                .zip(&y)
                .map(|(xi, yi)| (m.predict(xi)[0] - yi[0]).abs())
                .fold(0.0, f64::max)
        };
        let e = [err(1e-1), err(1e-2), err(1e-3)];
        assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
    }
}
