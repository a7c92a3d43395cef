//! Damped Newton solver for a single bifurcation network.
//!
//! Unknowns are `(P_inlet, Q_1, Q_2)`. Residuals:
//!
//! ```text
//! F0 = Q_1 + Q_2 - Q_inlet
//! Fk = R_k Q_k + P_distal,k - P_inlet - dP_k(Q_k, Qdot_k)      k = 1, 2
//! ```
//!
//! In transient runs `Qdot_k = (Q_k - Q_k,prev) / dt`, so the inductive term
//! enters the Jacobian as `L / dt`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::dyn_to_mmhg;
use crate::junction::{FlowState, JunctionLaw};

/// Outlet closure `P_outlet = resistance * Q + distal_pressure`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    /// g cm^-4 s^-1
    pub resistance: f64,
    /// dyn/cm²
    pub distal_pressure: f64,
}

impl Default for BoundaryCondition {
    fn default() -> Self {
        Self {
            resistance: 100.0,
            distal_pressure: 0.0,
        }
    }
}

impl BoundaryCondition {
    pub fn validate(&self) -> Result<()> {
        if !(self.resistance > 0.0 && self.resistance.is_finite()) {
            return Err(Error::Config(format!(
                "outlet resistance must be > 0, got {}",
                self.resistance
            )));
        }
        if !self.distal_pressure.is_finite() {
            return Err(Error::Config("distal pressure must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutletState {
    pub q: f64,
    pub q_dot: f64,
    pub p_outlet: f64,
    /// Closure value at the converged flow state.
    pub dp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub time: f64,
    pub q_inlet: f64,
    pub p_inlet: f64,
    pub outlets: [OutletState; 2],
}

impl NetworkState {
    pub fn mass_imbalance(&self) -> f64 {
        self.outlets[0].q + self.outlets[1].q - self.q_inlet
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Pressure residuals must fall below `rel_tol` times the largest of 1,
    /// `|P_inlet|` and the magnitudes of the terms in their equation.
    pub rel_tol: f64,
    /// Mass residual must fall below `mass_tol * max(1, |Q_inlet|)`.
    pub mass_tol: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            max_halvings: 30,
            rel_tol: 1e-10,
            mass_tol: 1e-12,
        }
    }
}

/// Per-solve diagnostics.
#[derive(Debug, Clone, Default)]
pub struct SolveReport {
    pub iterations: usize,
    /// Infinity norm of the residual before each iteration and after the last.
    pub residual_history: Vec<f64>,
}

/// Inlet flow and, for transient steps, the backward-difference memory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    pub q_inlet: f64,
    pub previous: Option<([f64; 2], f64)>,
}

impl StepContext {
    pub fn steady(q_inlet: f64) -> Self {
        Self {
            q_inlet,
            previous: None,
        }
    }

    pub fn transient(q_inlet: f64, previous_flows: [f64; 2], dt: f64) -> Self {
        Self {
            q_inlet,
            previous: Some((previous_flows, dt)),
        }
    }

    fn flow_state(&self, k: usize, q: f64) -> FlowState {
        match self.previous {
            Some((prev, dt)) => FlowState::new(q, (q - prev[k]) / dt),
            None => FlowState::steady(q),
        }
    }

    fn q_dot_factor(&self) -> f64 {
        match self.previous {
            Some((_, dt)) => 1.0 / dt,
            None => 0.0,
        }
    }
}

/// Prescribed inlet flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Waveform {
    Constant {
        flow: f64,
    },
    /// `q_max * sin^2(pi t / period)`: zero at both ends, peak at mid-period.
    SineSquared {
        q_max: f64,
        period: f64,
    },
}

impl Waveform {
    pub fn flow_at(&self, t: f64) -> f64 {
        match *self {
            Waveform::Constant { flow } => flow,
            Waveform::SineSquared { q_max, period } => {
                let s = (PI * t / period).sin();
                q_max * s * s
            }
        }
    }
}

pub struct JunctionNetwork<'a> {
    laws: [&'a dyn JunctionLaw; 2],
    bcs: [BoundaryCondition; 2],
    split_weights: [f64; 2],
    config: NewtonConfig,
}

impl<'a> JunctionNetwork<'a> {
    /// `split_weights` (normally the outlet areas) seed the initial flow split.
    pub fn new(
        laws: [&'a dyn JunctionLaw; 2],
        bcs: [BoundaryCondition; 2],
        split_weights: [f64; 2],
    ) -> Result<Self> {
        for bc in &bcs {
            bc.validate()?;
        }
        if !(split_weights.iter().all(|w| *w > 0.0 && w.is_finite())) {
            return Err(Error::Config("split weights must be positive".into()));
        }
        Ok(Self {
            laws,
            bcs,
            split_weights,
            config: NewtonConfig::default(),
        })
    }

    pub fn with_config(mut self, config: NewtonConfig) -> Self {
        self.config = config;
        self
    }

    pub fn residual(&self, x: &[f64; 3], ctx: &StepContext) -> [f64; 3] {
        let [p_in, q1, q2] = *x;
        let mut f = [q1 + q2 - ctx.q_inlet, 0.0, 0.0];
        for (k, q) in [q1, q2].into_iter().enumerate() {
            let dp = self.laws[k].pressure_difference(ctx.flow_state(k, q), ctx.q_inlet);
            f[k + 1] = self.bcs[k].resistance * q + self.bcs[k].distal_pressure - p_in - dp;
        }
        f
    }

    pub fn jacobian(&self, x: &[f64; 3], ctx: &StepContext) -> [[f64; 3]; 3] {
        let mut jac = [[0.0, 1.0, 1.0], [-1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        let qdot_factor = ctx.q_dot_factor();
        for k in 0..2 {
            let q = x[k + 1];
            let (d_q, d_qdot) = self.laws[k].derivatives(ctx.flow_state(k, q), ctx.q_inlet);
            jac[k + 1][k + 1] = self.bcs[k].resistance - d_q - d_qdot * qdot_factor;
        }
        jac
    }

    /// Area-weighted split with the outlet-1 pressure relation for `P_inlet`.
    pub fn initial_guess(&self, ctx: &StepContext) -> [f64; 3] {
        let total = self.split_weights[0] + self.split_weights[1];
        let q1 = ctx.q_inlet * self.split_weights[0] / total;
        let q2 = ctx.q_inlet - q1;
        let dp1 = self.laws[0].pressure_difference(ctx.flow_state(0, q1), ctx.q_inlet);
        let p_in = self.bcs[0].resistance * q1 + self.bcs[0].distal_pressure - dp1;
        [p_in, q1, q2]
    }

    fn converged(&self, f: &[f64; 3], x: &[f64; 3], ctx: &StepContext) -> bool {
        let m_tol = self.config.mass_tol * ctx.q_inlet.abs().max(1.0);
        if f[0].abs() > m_tol {
            return false;
        }
        (0..2).all(|k| f[k + 1].abs() <= self.config.rel_tol * self.pressure_scale(x, ctx, k))
    }

    /// Largest term of pressure equation `k`. The backward difference scales
    /// round-off in `Q` by `dP/dQdot / dt`, so that term enters too.
    fn pressure_scale(&self, x: &[f64; 3], ctx: &StepContext, k: usize) -> f64 {
        let q = x[k + 1];
        let s = ctx.flow_state(k, q);
        let bc = &self.bcs[k];
        let dp = self.laws[k].pressure_difference(s, ctx.q_inlet);
        let (_, d_qdot) = self.laws[k].derivatives(s, ctx.q_inlet);
        let q_prev = ctx.previous.map_or(0.0, |(p, _)| p[k]);
        let memory = d_qdot.abs() * ctx.q_dot_factor() * q.abs().max(q_prev.abs());
        [
            1.0,
            x[0].abs(),
            (bc.resistance * q).abs(),
            bc.distal_pressure.abs(),
            dp.abs(),
            memory,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn solve(
        &self,
        ctx: &StepContext,
        guess: Option<[f64; 3]>,
    ) -> Result<(NetworkState, SolveReport)> {
        let mut x = guess.unwrap_or_else(|| self.initial_guess(ctx));
        let mut f = self.residual(&x, ctx);
        let mut report = SolveReport::default();
        report.residual_history.push(inf_norm(&f));

        while !self.converged(&f, &x, ctx) {
            if report.iterations >= self.config.max_iterations || !f.iter().all(|v| v.is_finite()) {
                return Err(Error::NonConvergence {
                    iterations: report.iterations,
                    residual_norm: inf_norm(&f),
                    iterate: x,
                });
            }
            let jac = self.jacobian(&x, ctx);
            let m = Matrix3::from_fn(|i, j| jac[i][j]);
            let rhs = Vector3::new(-f[0], -f[1], -f[2]);
            let delta = m.lu().solve(&rhs).ok_or(Error::NonConvergence {
                iterations: report.iterations,
                residual_norm: inf_norm(&f),
                iterate: x,
            })?;

            let norm0 = two_norm(&f);
            let mut lambda = 1.0;
            let mut trial;
            let mut f_trial;
            let mut halvings = 0;
            loop {
                trial = [
                    x[0] + lambda * delta[0],
                    x[1] + lambda * delta[1],
                    x[2] + lambda * delta[2],
                ];
                f_trial = self.residual(&trial, ctx);
                let accept = two_norm(&f_trial) <= (1.0 - 1e-4 * lambda) * norm0;
                if accept || halvings >= self.config.max_halvings {
                    break;
                }
                lambda *= 0.5;
                halvings += 1;
            }
            x = trial;
            f = f_trial;
            report.iterations += 1;
            report.residual_history.push(inf_norm(&f));
        }

        Ok((self.state_at(&x, ctx), report))
    }

    fn state_at(&self, x: &[f64; 3], ctx: &StepContext) -> NetworkState {
        let outlet = |k: usize| {
            let q = x[k + 1];
            let s = ctx.flow_state(k, q);
            OutletState {
                q,
                q_dot: s.q_dot,
                p_outlet: self.bcs[k].resistance * q + self.bcs[k].distal_pressure,
                dp: self.laws[k].pressure_difference(s, ctx.q_inlet),
            }
        };
        NetworkState {
            time: 0.0,
            q_inlet: ctx.q_inlet,
            p_inlet: x[0],
            outlets: [outlet(0), outlet(1)],
        }
    }

    pub fn solve_steady(&self, q_inlet: f64) -> Result<NetworkState> {
        if !(q_inlet >= 0.0 && q_inlet.is_finite()) {
            return Err(Error::Domain(format!(
                "inlet flow must be >= 0, got {q_inlet}"
            )));
        }
        Ok(self.solve(&StepContext::steady(q_inlet), None)?.0)
    }

    /// March `n = round(period / dt)` backward-Euler steps from `t = 0`.
    /// Step 0 is a steady solve, so it carries `Qdot = 0`.
    pub fn solve_transient(
        &self,
        waveform: &Waveform,
        period: f64,
        dt: f64,
    ) -> Result<Vec<NetworkState>> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("time step must be > 0, got {dt}")));
        }
        if !(period >= 0.0 && period.is_finite()) {
            return Err(Error::Domain(format!(
                "duration must be >= 0, got {period}"
            )));
        }
        let n_steps = (period / dt).round() as usize;
        let mut series = Vec::with_capacity(n_steps + 1);

        let step_err = |step: usize, time: f64, e: Error| Error::Step {
            step,
            time,
            source: Box::new(e),
        };

        let ctx0 = StepContext::steady(waveform.flow_at(0.0));
        let (mut state, _) = self.solve(&ctx0, None).map_err(|e| step_err(0, 0.0, e))?;
        let mut x = [state.p_inlet, state.outlets[0].q, state.outlets[1].q];
        series.push(state);

        for step in 1..=n_steps {
            let t = step as f64 * dt;
            let ctx = StepContext::transient(waveform.flow_at(t), [x[1], x[2]], dt);
            let (s, _) = self
                .solve(&ctx, Some(x))
                .map_err(|e| step_err(step, t, e))?;
            state = s;
            state.time = t;
            x = [state.p_inlet, state.outlets[0].q, state.outlets[1].q];
            series.push(state);
        }
        Ok(series)
    }
}

fn inf_norm(f: &[f64; 3]) -> f64 {
    f.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn two_norm(f: &[f64; 3]) -> f64 {
    f.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Time-series CSV with pressures in dyn/cm² and mmHg.
pub fn write_series_csv<W: Write>(mut w: W, series: &[NetworkState]) -> std::io::Result<()> {
    writeln!(w, "t,P_inlet,Q1,P1,Q2,P2,P_inlet_mmHg,P1_mmHg,P2_mmHg")?;
    for s in series {
        let [o1, o2] = s.outlets;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            s.time,
            s.p_inlet,
            o1.q,
            o1.p_outlet,
            o2.q,
            o2.p_outlet,
            dyn_to_mmhg(s.p_inlet),
            dyn_to_mmhg(o1.p_outlet),
            dyn_to_mmhg(o2.p_outlet)
        )?;
    }
    Ok(())
}

/// Signed area enclosed by the `(Q, dP)` curve, by the trapezoid rule on
/// `∮ dP dQ`. Open curves are closed with a straight segment.
pub fn loop_area(q: &[f64], dp: &[f64]) -> f64 {
    let n = q.len().min(dp.len());
    if n < 2 {
        return 0.0;
    }
    let mut area = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        area += 0.5 * (dp[i] + dp[j]) * (q[j] - q[i]);
    }
    area
}
