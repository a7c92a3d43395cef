use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordinary least squares with intercept, one weight vector per target.
/// `weights[t][0]` is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<Vec<f64>>,
}

impl LinearModel {
    pub fn fit(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<Self> {
        let n = x.len();
        let d = x[0].len();
        let design = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
        // minimum-norm solution; constant feature columns make the design rank deficient
        let svd = design.svd(true, true);
        let n_targets = y[0].len();
        let mut weights = Vec::with_capacity(n_targets);
        for t in 0..n_targets {
            let b = DVector::from_iterator(n, y.iter().map(|r| r[t]));
            let w = svd
                .solve(&b, 1e-12)
                .map_err(|e| Error::Training(format!("linear: {e}")))?;
            weights.push(w.iter().copied().collect());
        }
        Ok(Self { weights })
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w[0] + w[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}
