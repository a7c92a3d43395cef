//! Recovering RRI coefficients from virtual-experiment data.
//!
//! * two steady runs give `(r_lin, r_quad)` exactly through a 2x2 solve;
//! * one transient run then gives `L` by scalar least squares on the residual;
//! * the transient-optimized (TO) variant fits all three on the transient run.
//!
//! The first trace sample has no backward-difference derivative and is left
//! out of every transient fit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BifurcationGeometry, Outlet};
use crate::junction::RRICoefficients;
use crate::oracle::{SteadySample, TransientTrace};

const COLUMN_NAMES: [&str; 3] = ["Q", "Q^2", "Q_dot"];

/// Relative size below which a pivot of the scaled QR factor counts as zero.
const RANK_TOL: f64 = 1e-10;

/// Exact two-point steady fit.
pub fn fit_steady(s50: &SteadySample, s100: &SteadySample) -> Result<(f64, f64)> {
    let (q1, p1) = (s50.q_outlet, s50.dp);
    let (q2, p2) = (s100.q_outlet, s100.dp);
    let det = q1 * q2 * (q2 - q1);
    if det == 0.0 || !det.is_finite() {
        return Err(Error::DegenerateData(format!(
            "steady samples at Q = {q1} and Q = {q2} do not determine (r_lin, r_quad)"
        )));
    }
    let r_lin = (p1 * q2 * q2 - p2 * q1 * q1) / det;
    let r_quad = (q1 * p2 - q2 * p1) / det;
    Ok((r_lin, r_quad))
}

/// Least-squares steady fit over any number of operating points.
pub fn fit_steady_least_squares(samples: &[SteadySample]) -> Result<(f64, f64)> {
    let rows: Vec<[f64; 2]> = samples
        .iter()
        .map(|s| [s.q_outlet, s.q_outlet * s.q_outlet])
        .collect();
    let y: Vec<f64> = samples.iter().map(|s| s.dp).collect();
    let (beta, _) = least_squares(&rows, &y, &COLUMN_NAMES[..2])?;
    Ok((beta[0], beta[1]))
}

/// `L = sum(r_i qdot_i) / sum(qdot_i^2)` over the given rows.
pub fn inductance_least_squares(residuals: &[f64], q_dot: &[f64]) -> Result<f64> {
    if residuals.len() != q_dot.len() {
        return Err(Error::DimensionMismatch {
            expected: residuals.len(),
            got: q_dot.len(),
        });
    }
    let denom: f64 = q_dot.iter().map(|d| d * d).sum();
    if denom == 0.0 {
        return Err(Error::DegenerateData(
            "all flow derivatives are zero".into(),
        ));
    }
    let numer: f64 = residuals.iter().zip(q_dot).map(|(r, d)| r * d).sum();
    Ok(numer / denom)
}

/// Fit `L` with the resistive coefficients held fixed.
pub fn fit_inductance(trace: &TransientTrace, r_lin: f64, r_quad: f64) -> Result<f64> {
    trace.validate()?;
    let rows = 1..trace.len();
    let residuals: Vec<f64> = rows
        .clone()
        .map(|i| trace.dp[i] - r_lin * trace.q[i] - r_quad * trace.q[i] * trace.q[i])
        .collect();
    inductance_least_squares(&residuals, &trace.q_dot[rows])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransientFit {
    pub coeffs: RRICoefficients,
    pub residual_rms: f64,
}

/// Design rows `[Q, Q^2, Q_dot]` and targets of a trace, first sample excluded.
pub fn transient_design(trace: &TransientTrace) -> (Vec<[f64; 3]>, Vec<f64>) {
    let rows = (1..trace.len())
        .map(|i| [trace.q[i], trace.q[i] * trace.q[i], trace.q_dot[i]])
        .collect();
    (rows, trace.dp[1..].to_vec())
}

/// Fit all three coefficients to a transient trace.
pub fn fit_transient_optimized(trace: &TransientTrace) -> Result<TransientFit> {
    trace.validate()?;
    let (rows, y) = transient_design(trace);
    let (beta, residual_rms) = least_squares(&rows, &y, &COLUMN_NAMES)?;
    Ok(TransientFit {
        coeffs: RRICoefficients::new(beta[0], beta[1], beta[2]),
        residual_rms,
    })
}

/// Householder QR on column-equilibrated rows. Returns the minimizer and the
/// RMS residual.
fn least_squares<const N: usize>(
    rows: &[[f64; N]],
    y: &[f64],
    names: &[&str],
) -> Result<([f64; N], f64)> {
    let m = rows.len();
    if m < N {
        return Err(Error::DegenerateData(format!(
            "{m} equations cannot determine {N} coefficients"
        )));
    }
    let mut scale = [0.0; N];
    for (j, s) in scale.iter_mut().enumerate() {
        *s = rows.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt();
        if *s == 0.0 || !s.is_finite() {
            return Err(Error::DegenerateData(format!(
                "column {} is identically zero",
                names[j]
            )));
        }
    }
    let x = DMatrix::from_fn(m, N, |i, j| rows[i][j] / scale[j]);
    let b = DVector::from_column_slice(y);

    let qr = x.clone().qr();
    let r = qr.r();
    let max_pivot = (0..N).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    for j in 0..N {
        if r[(j, j)].abs() <= RANK_TOL * max_pivot {
            let span: Vec<&str> = names[..j].to_vec();
            return Err(Error::DegenerateData(format!(
                "rank-deficient design: column {} lies in the span of {{{}}}",
                names[j],
                span.join(", ")
            )));
        }
    }
    let qtb = qr.q().transpose() * &b;
    let z = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::DegenerateData("singular triangular factor".into()))?;

    let mut beta = [0.0; N];
    for j in 0..N {
        beta[j] = z[j] / scale[j];
    }
    let sse: f64 = rows
        .iter()
        .zip(y)
        .map(|(r, yi)| {
            let pred: f64 = r.iter().zip(&beta).map(|(a, c)| a * c).sum();
            (pred - yi).powi(2)
        })
        .sum();
    Ok((beta, (sse / m as f64).sqrt()))
}

/// All coefficient fits for one geometry/outlet pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedRecord {
    pub geometry: BifurcationGeometry,
    pub outlet: Outlet,
    /// `(r_lin, r_quad)` from the steady runs.
    pub steady: (f64, f64),
    /// `L` fitted with the steady resistances held fixed.
    pub inductance: f64,
    pub to_coeffs: RRICoefficients,
    /// RMS residual of the TO fit, dyn/cm².
    pub residual_rms: f64,
}

impl FittedRecord {
    /// Steady resistances plus separately fitted inductance.
    pub fn standard_coeffs(&self) -> RRICoefficients {
        RRICoefficients::new(self.steady.0, self.steady.1, self.inductance)
    }
}

/// Run every fit for one outlet. `steady` must hold at least the 50% and
/// 100% runs; with `four_point` all supplied runs enter a least-squares fit.
pub fn fit_record(
    geometry: BifurcationGeometry,
    outlet: Outlet,
    steady: &[SteadySample],
    trace: &TransientTrace,
    four_point: bool,
) -> Result<FittedRecord> {
    let at = |frac: f64| {
        steady
            .iter()
            .find(|s| s.inlet_fraction == frac)
            .ok_or_else(|| {
                Error::DegenerateData(format!("missing steady run at {}%", frac * 100.0))
            })
    };
    let steady_fit = if four_point {
        fit_steady_least_squares(steady)?
    } else {
        fit_steady(at(0.5)?, at(1.0)?)?
    };
    let inductance = fit_inductance(trace, steady_fit.0, steady_fit.1)?;
    let to = fit_transient_optimized(trace)?;
    Ok(FittedRecord {
        geometry,
        outlet,
        steady: steady_fit,
        inductance,
        to_coeffs: to.coeffs,
        residual_rms: to.residual_rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::junction::{dp_rri, FlowState};

    fn sample(q: f64, dp: f64, f: f64) -> SteadySample {
        SteadySample {
            q_outlet: q,
            dp,
            inlet_fraction: f,
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn synth_trace(c: RRICoefficients, n: usize) -> TransientTrace {
        let dt = 0.001;
        let times: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let period = (n - 1) as f64 * dt;
        let q: Vec<f64> = times
            .iter()
            .map(|t| 17.0 * (std::f64::consts::PI * t / period).sin().powi(2) + 0.3 * t)
            .collect();
        let mut q_dot = vec![0.0; n];
        for i in 1..n {
            q_dot[i] = (q[i] - q[i - 1]) / dt;
        }
        let dp = (0..n)
            .map(|i| dp_rri(&c, FlowState::new(q[i], q_dot[i])))
            .collect();
        TransientTrace {
            times,
            q,
            q_dot,
            dp,
            dt,
        }
    }

    #[test]
    fn steady_linear_data() {
        let (a, b) = fit_steady(&sample(1.5, 3.0, 0.5), &sample(3.0, 6.0, 1.0)).unwrap();
        assert!((a - 2.0).abs() < 1e-14);
        assert!(b.abs() < 1e-14);
    }

    #[test]
    fn steady_hand_solved() {
        let (a, b) = fit_steady(&sample(1.0, 3.0, 0.5), &sample(2.0, 8.0, 1.0)).unwrap();
        assert_eq!((a, b), (2.0, 1.0));
    }

    #[test]
    fn steady_singular() {
        assert!(matches!(
            fit_steady(&sample(2.0, 3.0, 0.5), &sample(2.0, 8.0, 1.0)),
            Err(Error::DegenerateData(_))
        ));
        assert!(fit_steady(&sample(0.0, 0.0, 0.5), &sample(2.0, 8.0, 1.0)).is_err());
    }

    #[test]
    fn steady_interpolates() {
        let s = [sample(7.3, -812.4, 0.5), sample(14.9, -2231.7, 1.0)];
        let (a, b) = fit_steady(&s[0], &s[1]).unwrap();
        let c = RRICoefficients::new(a, b, 0.0);
        for x in s {
            assert!(rel(dp_rri(&c, FlowState::steady(x.q_outlet)), x.dp) < 1e-14);
        }
    }

    #[test]
    fn four_point_agrees_on_exact_data() {
        let c = RRICoefficients::new(-60.0, -4.0, 0.0);
        let s: Vec<_> = [0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|f| sample(20.0 * f, dp_rri(&c, FlowState::steady(20.0 * f)), *f))
            .collect();
        let (a, b) = fit_steady_least_squares(&s).unwrap();
        assert!(rel(a, -60.0) < 1e-10 && rel(b, -4.0) < 1e-10);
    }

    #[test]
    fn inductance_quotient() {
        assert_eq!(
            inductance_least_squares(&[2.0, -2.0], &[1.0, -1.0]).unwrap(),
            2.0
        );
        assert_eq!(
            inductance_least_squares(&[0.0, 0.0, 0.0], &[1.0, 5.0, -2.0]).unwrap(),
            0.0
        );
        assert!(matches!(
            inductance_least_squares(&[1.0, 2.0], &[0.0, 0.0]),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn inductance_from_exact_trace() {
        let c = RRICoefficients::new(-91.7, -8.2, -36.0);
        let t = synth_trace(c, 1001);
        let l = fit_inductance(&t, c.r_lin, c.r_quad).unwrap();
        assert!(rel(l, c.inductance) < 1e-9);
    }

    #[test]
    fn transient_recovers_synthesized_coefficients() {
        let c = RRICoefficients::new(-91.7, -8.2, -36.0);
        let fit = fit_transient_optimized(&synth_trace(c, 1001)).unwrap();
        for (a, b) in fit.coeffs.to_array().iter().zip(c.to_array()) {
            assert!(rel(*a, b) < 1e-9, "{a} vs {b}");
        }
        assert!(fit.residual_rms < 1e-9);
    }

    #[test]
    fn rank_deficiency_is_named() {
        let mut t = synth_trace(RRICoefficients::new(1.0, 1.0, 1.0), 50);
        t.q_dot = t.q.clone();
        let err = fit_transient_optimized(&t).unwrap_err().to_string();
        assert!(err.contains("Q_dot") && err.contains("{Q, Q^2}"), "{err}");

        let mut t = synth_trace(RRICoefficients::new(1.0, 1.0, 1.0), 50);
        t.q_dot = vec![0.0; 50];
        assert!(fit_transient_optimized(&t)
            .unwrap_err()
            .to_string()
            .contains("Q_dot"));
    }

    #[test]
    fn zero_derivative_trace_rejected() {
        let t = TransientTrace {
            times: vec![0.0, 0.1, 0.2],
            q: vec![1.0, 1.0, 1.0],
            q_dot: vec![0.0; 3],
            dp: vec![1.0; 3],
            dt: 0.1,
        };
        assert!(matches!(
            fit_inductance(&t, 0.0, 0.0),
            Err(Error::DegenerateData(_))
        ));
    }
}
