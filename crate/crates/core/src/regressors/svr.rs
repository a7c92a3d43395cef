//! epsilon-insensitive support vector regression with an RBF kernel.
//!
//! The dual is written in the signed variables `beta_i = alpha_i - alpha_i*`:
//!
//! ```text
//! max  W(beta) = y.beta - eps |beta|_1 - 1/2 beta' K beta
//! s.t. sum(beta) = 0,  -C <= beta_i <= C
//! ```
//!
//! and solved by two-variable coordinate ascent: each step picks the maximal
//! KKT-violating pair and maximizes `W` exactly along `beta_i += t,
//! beta_j -= t`, which keeps the equality constraint.

use serde::{Deserialize, Serialize};

use super::knn::sq_dist;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrSettings {
    pub c: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

/// One single-output machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub gamma: f64,
    pub support: Vec<Vec<f64>>,
    pub dual_coef: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone)]
pub struct SvrFit {
    pub model: SvrModel,
    pub iterations: usize,
    /// Dual objective sampled after every `n` pair updates and at the end.
    pub objective_history: Vec<f64>,
    /// Full dual vector, including zeros.
    pub beta: Vec<f64>,
}

pub fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    (-gamma * sq_dist(a, b)).exp()
}

fn objective(beta: &[f64], y: &[f64], grad: &[f64], eps: f64) -> f64 {
    // K beta = y - grad
    beta.iter()
        .zip(y.iter().zip(grad))
        .map(|(b, (yi, gi))| 0.5 * b * (yi + gi) - eps * b.abs())
        .sum()
}

pub fn fit(x: &[Vec<f64>], y: &[f64], s: &SvrSettings) -> Result<SvrFit> {
    let n = x.len();
    if n < 2 {
        return Err(Error::Training("svr: need at least 2 rows".into()));
    }
    if !(s.c > 0.0 && s.epsilon >= 0.0 && s.gamma > 0.0) {
        return Err(Error::Config(
            "svr: C and gamma must be > 0, epsilon >= 0".into(),
        ));
    }
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| rbf(s.gamma, &x[i], &x[j])).collect())
        .collect();

    let (c, eps) = (s.c, s.epsilon);
    let mut beta = vec![0.0; n];
    let mut grad = y.to_vec();
    let mut history = vec![objective(&beta, y, &grad, eps)];
    let mut iterations = 0;

    // right/left derivatives of W along +e_i
    let d_up = |b: f64, g: f64| g - eps * if b >= 0.0 { 1.0 } else { -1.0 };
    let d_down = |b: f64, g: f64| g - eps * if b > 0.0 { 1.0 } else { -1.0 };

    let (up, low) = loop {
        let mut i_best = None;
        let mut up = f64::NEG_INFINITY;
        let mut j_best = None;
        let mut low = f64::INFINITY;
        for t in 0..n {
            if beta[t] < c {
                let v = d_up(beta[t], grad[t]);
                if v > up {
                    up = v;
                    i_best = Some(t);
                }
            }
            if beta[t] > -c {
                let v = d_down(beta[t], grad[t]);
                if v < low {
                    low = v;
                    j_best = Some(t);
                }
            }
        }
        let (Some(i), Some(j)) = (i_best, j_best) else {
            break (up, low);
        };
        if up - low <= s.tolerance || i == j {
            break (up, low);
        }
        if iterations >= s.max_iterations {
            return Err(Error::Training(format!(
                "svr: KKT gap {:.3e} above tolerance after {iterations} iterations",
                up - low
            )));
        }

        let t = line_max(
            beta[i],
            beta[j],
            grad[i] - grad[j],
            k[i][i] + k[j][j] - 2.0 * k[i][j],
            c,
            eps,
        );
        if t == 0.0 {
            break (up, low);
        }
        beta[i] += t;
        beta[j] -= t;
        for (g, row) in grad.iter_mut().zip(&k) {
            *g -= t * (row[i] - row[j]);
        }
        iterations += 1;
        if iterations % n == 0 {
            history.push(objective(&beta, y, &grad, eps));
        }
    };
    history.push(objective(&beta, y, &grad, eps));

    let bias = if up.is_finite() && low.is_finite() {
        0.5 * (up + low)
    } else {
        0.0
    };
    let mut support = Vec::new();
    let mut dual_coef = Vec::new();
    for (t, b) in beta.iter().enumerate() {
        if *b != 0.0 {
            support.push(x[t].clone());
            dual_coef.push(*b);
        }
    }
    Ok(SvrFit {
        model: SvrModel {
            gamma: s.gamma,
            support,
            dual_coef,
            bias,
        },
        iterations,
        objective_history: history,
        beta,
    })
}

/// Exact maximizer over `t` of
/// `-eta/2 t^2 + g t - eps (|bi + t| + |bj - t|)` within the box.
fn line_max(bi: f64, bj: f64, g: f64, eta: f64, c: f64, eps: f64) -> f64 {
    let lo = (-c - bi).max(bj - c);
    let hi = (c - bi).min(bj + c);
    if lo > hi {
        return 0.0;
    }
    let w = |t: f64| -0.5 * eta * t * t + g * t - eps * ((bi + t).abs() + (bj - t).abs());
    let mut candidates = vec![
        lo,
        hi,
        0.0_f64.clamp(lo, hi),
        (-bi).clamp(lo, hi),
        bj.clamp(lo, hi),
    ];
    if eta > 1e-12 {
        for si in [-1.0, 1.0] {
            for sj in [-1.0, 1.0] {
                candidates.push(((g - eps * si + eps * sj) / eta).clamp(lo, hi));
            }
        }
    }
    let base = w(0.0);
    let mut best = (0.0, base);
    for t in candidates {
        let v = w(t);
        if v > best.1 {
            best = (t, v);
        }
    }
    best.0
}

impl SvrModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.support
            .iter()
            .zip(&self.dual_coef)
            .map(|(s, b)| b * rbf(self.gamma, s, x))
            .sum::<f64>()
            + self.bias
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn settings() -> SvrSettings {
        SvrSettings {
            c: 1.4,
            epsilon: 0.029,
            gamma: 1.0 / 3.0,
            tolerance: 1e-3,
            max_iterations: 1_000_000,
        }
    }

    fn data(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect())
            .collect();
        let y = x
            .iter()
            .map(|r| r[0] - 0.5 * r[1] * r[1] + 0.3 * r[2])
            .collect();
        (x, y)
    }

    #[test]
    fn box_constraints_and_balance() {
        let (x, y) = data(80);
        let fit = fit(&x, &y, &settings()).unwrap();
        assert!(fit.beta.iter().all(|b| b.abs() <= 1.4 + 1e-12));
        assert!(fit.beta.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn objective_never_decreases() {
        let (x, y) = data(80);
        let fit = fit(&x, &y, &settings()).unwrap();
        assert!(fit.objective_history.len() >= 2);
        for w in fit.objective_history.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0),
                "{} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn fits_within_margin_on_training_points() {
        let (x, y) = data(80);
        let fit = fit(&x, &y, &settings()).unwrap();
        let errs: Vec<f64> = x
            .iter()
            .zip(&y)
            .map(|(xi, yi)| (fit.model.predict(xi) - yi).abs())
            .collect();
        let worst_free = x
            .iter()
            .zip(&y)
            .zip(&fit.beta)
            .filter(|(_, b)| b.abs() < 1.4)
            .map(|((xi, yi), _)| (fit.model.predict(xi) - yi).abs())
            .fold(0.0, f64::max);
        // KKT: points strictly inside the box lie within eps (+ solver tolerance)
        assert!(worst_free <= 0.029 + 1e-3, "{worst_free}");
        assert!(errs.iter().sum::<f64>() / 80.0 < 0.1);
    }

    #[test]
    fn line_search_is_exact_on_grid() {
        let (bi, bj, g, eta, c, eps) = (0.3, -0.2, 0.7, 1.1, 1.4, 0.05);
        let t = line_max(bi, bj, g, eta, c, eps);
        let w = |t: f64| -0.5 * eta * t * t + g * t - eps * ((bi + t).abs() + (bj - t).abs());
        let lo = (-c - bi).max(bj - c);
        let hi = (c - bi).min(bj + c);
        for k in 0..=2000 {
            let s = lo + (hi - lo) * k as f64 / 2000.0;
            assert!(w(t) >= w(s) - 1e-12);
        }
    }
}
