use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform-weight k-nearest-neighbour regression in standardized space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub points: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl KnnModel {
    pub fn fit(x: &[Vec<f64>], y: &[Vec<f64>], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("knn: k must be >= 1".into()));
        }
        if x.len() < k {
            return Err(Error::Training(format!(
                "knn: need at least k = {k} rows, got {}",
                x.len()
            )));
        }
        Ok(Self {
            k,
            points: x.to_vec(),
            targets: y.to_vec(),
        })
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut order: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (sq_dist(p, x), i))
            .collect();
        // ties resolve to the lower training index
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let dim = self.targets[0].len();
        let mut out = vec![0.0; dim];
        for &(_, i) in &order[..self.k] {
            for (o, t) in out.iter_mut().zip(&self.targets[i]) {
                *o += t;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.k as f64);
        out
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
