//! Synthetic ground truth standing in for resolved 3D flow simulations.
//!
//! Each outlet follows a hidden pressure law built from Poiseuille segment
//! resistance, a Bernoulli-type convective term with a turning loss, and the
//! inertance of the fluid columns between the measurement stations. Virtual
//! experiments run that law through the network solver under resistance
//! outlet conditions, exactly as a full simulation would be post-processed.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BifurcationGeometry, FluidProperties, Outlet};
use crate::junction::{dp_rri, poiseuille_resistance, FlowState, JunctionLaw, RRICoefficients};
use crate::solver::{BoundaryCondition, JunctionNetwork, NetworkState, Waveform};

/// Turning-loss factor applied to the outlet dynamic pressure.
pub const TURNING_LOSS: f64 = 1.5;

/// Inlet fractions of the two steady runs.
pub const STEADY_FRACTIONS: [f64; 2] = [0.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleLaw {
    /// Exactly the RRI form; fits recover the hidden coefficients.
    PureRri,
    /// RRI plus a `sign(Q)|Q|^p` transitional loss no RRI block represents.
    Nonideal,
}

impl std::str::FromStr for OracleLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pure_rri" => Ok(OracleLaw::PureRri),
            "nonideal" => Ok(OracleLaw::Nonideal),
            _ => Err(Error::Config(format!(
                "unknown oracle mode '{s}'; expected one of: pure_rri, nonideal"
            ))),
        }
    }
}

impl std::fmt::Display for OracleLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OracleLaw::PureRri => "pure_rri",
            OracleLaw::Nonideal => "nonideal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleMode {
    pub law: OracleLaw,
    /// Gaussian measurement noise on every reported dP, dyn/cm².
    pub noise_std: f64,
    /// Scale of the transitional term relative to `r_quad`.
    pub nonideal_coefficient: f64,
    pub nonideal_exponent: f64,
}

impl OracleMode {
    pub fn pure() -> Self {
        Self {
            law: OracleLaw::PureRri,
            noise_std: 0.0,
            nonideal_coefficient: 0.1,
            nonideal_exponent: 1.75,
        }
    }

    pub fn nonideal() -> Self {
        Self {
            law: OracleLaw::Nonideal,
            ..Self::pure()
        }
    }

    pub fn with_noise(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        if !(self.nonideal_coefficient.is_finite() && self.nonideal_exponent.is_finite()) {
            return Err(Error::Config(
                "nonideal term parameters must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Everything a virtual experiment depends on besides geometry and flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub mode: OracleMode,
    pub fluid: FluidProperties,
    pub outlet_bc: BoundaryCondition,
    /// Duration of the transient pulse, s.
    pub period: f64,
    /// s
    pub dt: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            mode: OracleMode::pure(),
            fluid: FluidProperties::default(),
            outlet_bc: BoundaryCondition::default(),
            period: 1.0,
            dt: 0.001,
        }
    }
}

impl OracleConfig {
    pub fn with_mode(mut self, mode: OracleMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        self.fluid.validate()?;
        self.outlet_bc.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::Config(format!(
                "period must be > 0, got {}",
                self.period
            )));
        }
        let steps = self.period / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::Config(format!(
                "period {} is not a multiple of dt {}",
                self.period, self.dt
            )));
        }
        Ok(())
    }
}

/// The hidden coefficients of one outlet.
pub fn true_coefficients(
    geom: &BifurcationGeometry,
    outlet: Outlet,
    fluid: &FluidProperties,
) -> Result<RRICoefficients> {
    geom.validate()?;
    let r_k = geom.outlet_radius(outlet);
    let r_other = geom.outlet_radius(outlet.other());
    let a_in = geom.inlet_area();
    let a_k = geom.outlet_area(outlet);
    let l_k = geom.outlet_length(outlet);

    let r_lin = -(poiseuille_resistance(geom.l_inlet, geom.r_inlet, fluid)
        + poiseuille_resistance(l_k, r_k, fluid));

    // Murray-type split: share of inlet flow carried by this outlet.
    let split = r_k.powi(3) / (r_k.powi(3) + r_other.powi(3));
    let loss = 1.0 + TURNING_LOSS * geom.outlet_angle(outlet).sin();
    let r_quad = 0.5 * fluid.density * (1.0 / (split * split * a_in * a_in) - loss / (a_k * a_k));

    let inductance = -fluid.density * (geom.l_inlet / a_in + l_k / a_k);
    Ok(RRICoefficients::new(r_lin, r_quad, inductance))
}

/// `q_max * sin^2(pi t / period)` on `[0, period]`.
pub fn inlet_waveform(t: f64, q_max: f64, period: f64) -> Result<f64> {
    if !(period > 0.0) {
        return Err(Error::Domain(format!(
            "waveform period must be > 0, got {period}"
        )));
    }
    if !(0.0..=period).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, {period}]")));
    }
    Ok(Waveform::SineSquared { q_max, period }.flow_at(t))
}

/// Per-outlet hidden law.
#[derive(Debug, Clone, Copy)]
struct OracleOutletLaw {
    coeffs: RRICoefficients,
    extra: f64,
    exponent: f64,
}

impl OracleOutletLaw {
    fn new(coeffs: RRICoefficients, mode: &OracleMode) -> Self {
        let extra = match mode.law {
            OracleLaw::PureRri => 0.0,
            OracleLaw::Nonideal => mode.nonideal_coefficient * coeffs.r_quad,
        };
        Self {
            coeffs,
            extra,
            exponent: mode.nonideal_exponent,
        }
    }
}

impl JunctionLaw for OracleOutletLaw {
    fn pressure_difference(&self, state: FlowState, _q_inlet: f64) -> f64 {
        let base = dp_rri(&self.coeffs, state);
        if self.extra == 0.0 {
            return base;
        }
        base + self.extra * state.q.signum() * state.q.abs().powf(self.exponent)
    }

    fn derivatives(&self, state: FlowState, _q_inlet: f64) -> (f64, f64) {
        let (dq, dqd) = crate::junction::dp_rri_derivatives(&self.coeffs, state);
        if self.extra == 0.0 {
            return (dq, dqd);
        }
        let extra = self.extra * self.exponent * state.q.abs().powf(self.exponent - 1.0);
        (dq + extra, dqd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadySample {
    pub q_outlet: f64,
    pub dp: f64,
    pub inlet_fraction: f64,
}

/// Per-outlet record of a transient run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientTrace {
    pub times: Vec<f64>,
    pub q: Vec<f64>,
    /// Backward difference; zero at the first sample.
    pub q_dot: Vec<f64>,
    pub dp: Vec<f64>,
    pub dt: f64,
}

impl TransientTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if self.q.len() != n || self.q_dot.len() != n || self.dp.len() != n {
            return Err(Error::DegenerateData(
                "trace columns have unequal lengths".into(),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(Error::DegenerateData("trace dt must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientRun {
    pub q_inlet: Vec<f64>,
    pub p_inlet: Vec<f64>,
    pub outlets: [TransientTrace; 2],
}

impl TransientRun {
    /// Columns `t, Q, Q_dot, dP_outlet1, dP_outlet2`; `Q` is the inlet flow.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,Q,Q_dot,dP_outlet1,dP_outlet2")?;
        let trace = &self.outlets[0];
        for i in 0..trace.len() {
            let q_dot = if i == 0 {
                0.0
            } else {
                (self.q_inlet[i] - self.q_inlet[i - 1]) / trace.dt
            };
            writeln!(
                w,
                "{},{},{},{},{}",
                trace.times[i],
                self.q_inlet[i],
                q_dot,
                self.outlets[0].dp[i],
                self.outlets[1].dp[i]
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Oracle {
    config: OracleConfig,
}

impl Oracle {
    pub fn new(config: OracleConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    fn laws(&self, geom: &BifurcationGeometry) -> Result<[OracleOutletLaw; 2]> {
        let f = &self.config.fluid;
        Ok([
            OracleOutletLaw::new(
                true_coefficients(geom, Outlet::First, f)?,
                &self.config.mode,
            ),
            OracleOutletLaw::new(
                true_coefficients(geom, Outlet::Second, f)?,
                &self.config.mode,
            ),
        ])
    }

    fn with_network<T>(
        &self,
        geom: &BifurcationGeometry,
        run: impl FnOnce(&JunctionNetwork<'_>) -> Result<T>,
    ) -> Result<T> {
        let laws = self.laws(geom)?;
        let bc = self.config.outlet_bc;
        let net = JunctionNetwork::new(
            [&laws[0], &laws[1]],
            [bc, bc],
            [
                geom.outlet_area(Outlet::First),
                geom.outlet_area(Outlet::Second),
            ],
        )?;
        run(&net)
    }

    fn noise(&self, seed: u64, stream: u64) -> Option<(ChaCha8Rng, Normal<f64>)> {
        if self.config.mode.noise_std == 0.0 {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let normal = Normal::new(0.0, self.config.mode.noise_std).ok()?;
        Some((rng, normal))
    }

    /// Converged network state without measurement noise.
    pub fn steady_state(&self, geom: &BifurcationGeometry, q_inlet: f64) -> Result<NetworkState> {
        self.with_network(geom, |net| net.solve_steady(q_inlet))
    }

    /// One steady experiment at `inlet_fraction * q_peak`.
    pub fn run_steady(
        &self,
        geom: &BifurcationGeometry,
        q_peak: f64,
        inlet_fraction: f64,
        seed: u64,
    ) -> Result<[SteadySample; 2]> {
        if !(q_peak >= 0.0) {
            return Err(Error::Domain(format!(
                "inlet flow must be >= 0, got {q_peak}"
            )));
        }
        let state = self.steady_state(geom, inlet_fraction * q_peak)?;
        let stream = (inlet_fraction * 1000.0).round() as u64;
        let mut noise = self.noise(seed, stream);
        let mut sample = |k: usize| {
            let o = state.outlets[k];
            let eps = noise.as_mut().map_or(0.0, |(rng, n)| n.sample(rng));
            SteadySample {
                q_outlet: o.q,
                dp: o.dp + eps,
                inlet_fraction,
            }
        };
        Ok([sample(0), sample(1)])
    }

    /// The sine-squared pulse with peak `q_max` over `[0, period]`.
    pub fn run_transient(
        &self,
        geom: &BifurcationGeometry,
        q_max: f64,
        seed: u64,
    ) -> Result<TransientRun> {
        let cfg = &self.config;
        let waveform = Waveform::SineSquared {
            q_max,
            period: cfg.period,
        };
        let series = self.with_network(geom, |net| {
            net.solve_transient(&waveform, cfg.period, cfg.dt)
        })?;
        let mut noise = self.noise(seed, 0);

        let times: Vec<f64> = series.iter().map(|s| s.time).collect();
        let trace = |k: usize, noise: &mut Option<(ChaCha8Rng, Normal<f64>)>| TransientTrace {
            times: times.clone(),
            q: series.iter().map(|s| s.outlets[k].q).collect(),
            q_dot: series.iter().map(|s| s.outlets[k].q_dot).collect(),
            dp: series
                .iter()
                .map(|s| s.outlets[k].dp + noise.as_mut().map_or(0.0, |(rng, n)| n.sample(rng)))
                .collect(),
            dt: cfg.dt,
        };
        let first = trace(0, &mut noise);
        let second = trace(1, &mut noise);
        Ok(TransientRun {
            q_inlet: series.iter().map(|s| s.q_inlet).collect(),
            p_inlet: series.iter().map(|s| s.p_inlet).collect(),
            outlets: [first, second],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CohortName, CohortSpec};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn hand_geometry() -> BifurcationGeometry {
        BifurcationGeometry {
            r_inlet: 0.5,
            r_outlet_1: 0.3,
            r_outlet_2: 0.3,
            theta_1: 30f64.to_radians(),
            theta_2: 30f64.to_radians(),
            l_outlet_1: 6.0,
            l_outlet_2: 6.0,
            l_inlet: 10.0,
        }
    }

    fn pulmonary() -> BifurcationGeometry {
        let mut g = CohortSpec::builtin(CohortName::Pulmonary)
            .nominal()
            .geometry;
        g.r_outlet_2 *= 1.1;
        g.theta_2 *= 0.9;
        g
    }

    #[test]
    fn hand_evaluated_coefficients() {
        let c = true_coefficients(&hand_geometry(), Outlet::First, &FluidProperties::default())
            .unwrap();
        assert!(rel(c.r_lin, -91.74869845321233) < 1e-13);
        assert!(rel(c.r_quad, -8.165086417304778) < 1e-13);
        assert!(rel(c.inductance, -35.990237797847264) < 1e-13);
    }

    #[test]
    fn symmetric_geometry_symmetric_coefficients() {
        let g = hand_geometry();
        let f = FluidProperties::default();
        assert_eq!(
            true_coefficients(&g, Outlet::First, &f).unwrap(),
            true_coefficients(&g, Outlet::Second, &f).unwrap()
        );
    }

    #[test]
    fn inductance_always_negative() {
        let f = FluidProperties::default();
        for cohort in CohortName::ALL {
            let spec = CohortSpec::builtin(cohort);
            for seed in 0..100 {
                let g = crate::geometry::sample_cohort_geometry(&spec, seed).unwrap();
                for o in Outlet::BOTH {
                    assert!(true_coefficients(&g, o, &f).unwrap().inductance < 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_radius_is_domain_error() {
        let mut g = hand_geometry();
        g.r_outlet_2 = 0.0;
        assert!(matches!(
            true_coefficients(&g, Outlet::First, &FluidProperties::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn waveform_values() {
        assert_eq!(inlet_waveform(0.0, 10.0, 1.0).unwrap(), 0.0);
        assert!((inlet_waveform(0.5, 10.0, 1.0).unwrap() - 10.0).abs() < 1e-12);
        assert!((inlet_waveform(0.25, 10.0, 1.0).unwrap() - 5.0).abs() < 1e-12);
        assert!(inlet_waveform(0.5, 10.0, 0.0).is_err());
        assert!(inlet_waveform(1.5, 10.0, 1.0).is_err());
    }

    #[test]
    fn steady_zero_flow() {
        let oracle = Oracle::new(OracleConfig::default()).unwrap();
        let s = oracle.run_steady(&pulmonary(), 0.0, 1.0, 0).unwrap();
        for x in s {
            assert_eq!(x.q_outlet, 0.0);
            assert_eq!(x.dp, 0.0);
        }
    }

    #[test]
    fn steady_symmetric_split() {
        let oracle =
            Oracle::new(OracleConfig::default().with_mode(OracleMode::nonideal())).unwrap();
        let s = oracle.run_steady(&hand_geometry(), 30.0, 1.0, 0).unwrap();
        assert!((s[0].q_outlet - 15.0).abs() < 1e-12 * 30.0);
        assert!((s[1].q_outlet - 15.0).abs() < 1e-12 * 30.0);
    }

    #[test]
    fn pure_steady_reports_rri_law() {
        let oracle = Oracle::new(OracleConfig::default()).unwrap();
        let g = pulmonary();
        for frac in STEADY_FRACTIONS {
            let s = oracle.run_steady(&g, 25.0, frac, 0).unwrap();
            assert!((s[0].q_outlet + s[1].q_outlet - frac * 25.0).abs() <= 1e-12 * 25.0);
            for o in Outlet::BOTH {
                let c = true_coefficients(&g, o, &oracle.config().fluid).unwrap();
                let x = s[o.index()];
                assert_eq!(x.dp, dp_rri(&c, FlowState::steady(x.q_outlet)));
                assert_eq!(x.inlet_fraction, frac);
            }
        }
    }

    #[test]
    fn transient_trace_contract() {
        let oracle = Oracle::new(OracleConfig::default()).unwrap();
        let g = pulmonary();
        let run = oracle.run_transient(&g, 30.0, 0).unwrap();
        assert_eq!(run.outlets[0].len(), 1001);
        for (k, trace) in run.outlets.iter().enumerate() {
            trace.validate().unwrap();
            assert_eq!(trace.q_dot[0], 0.0);
            let c = true_coefficients(&g, Outlet::BOTH[k], &oracle.config().fluid).unwrap();
            for i in 0..trace.len() {
                if i > 0 {
                    assert_eq!(trace.q_dot[i], (trace.q[i] - trace.q[i - 1]) / trace.dt);
                }
                let expect = dp_rri(&c, FlowState::new(trace.q[i], trace.q_dot[i]));
                assert!((trace.dp[i] - expect).abs() <= 1e-10 * expect.abs().max(1e-30));
            }
        }
        for i in 0..run.q_inlet.len() {
            let imbalance = run.outlets[0].q[i] + run.outlets[1].q[i] - run.q_inlet[i];
            assert!(imbalance.abs() <= 1e-12 * run.q_inlet[i].max(1.0));
        }
        assert!((run.q_inlet[500] - 30.0).abs() < 1e-9);
    }

    #[test]
    fn zero_pulse_gives_zero_trace() {
        let oracle = Oracle::new(OracleConfig::default()).unwrap();
        let run = oracle.run_transient(&pulmonary(), 0.0, 0).unwrap();
        for t in &run.outlets {
            assert!(t.q.iter().chain(&t.q_dot).chain(&t.dp).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn deterministic_with_noise() {
        let cfg = OracleConfig::default().with_mode(OracleMode::nonideal().with_noise(5.0));
        let oracle = Oracle::new(cfg).unwrap();
        let g = pulmonary();
        let a = oracle.run_transient(&g, 20.0, 11).unwrap();
        let b = oracle.run_transient(&g, 20.0, 11).unwrap();
        assert_eq!(a, b);
        let c = oracle.run_transient(&g, 20.0, 12).unwrap();
        assert_ne!(a.outlets[0].dp, c.outlets[0].dp);
        let s1 = oracle.run_steady(&g, 20.0, 0.5, 3).unwrap();
        let s2 = oracle.run_steady(&g, 20.0, 0.5, 3).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn constant_inflow_settles_to_steady_values() {
        let oracle =
            Oracle::new(OracleConfig::default().with_mode(OracleMode::nonideal())).unwrap();
        let g = pulmonary();
        let steady = oracle.steady_state(&g, 22.0).unwrap();
        let series = oracle
            .with_network(&g, |net| {
                net.solve_transient(&Waveform::Constant { flow: 22.0 }, 0.2, 0.001)
            })
            .unwrap();
        let last = series.last().unwrap();
        for k in 0..2 {
            assert!(rel(last.outlets[k].q, steady.outlets[k].q) < 1e-3);
            assert!(rel(last.outlets[k].dp, steady.outlets[k].dp) < 1e-3);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = OracleConfig::default();
        cfg.dt = 0.0003;
        assert!(Oracle::new(cfg).is_err());
        let cfg = OracleConfig::default().with_mode(OracleMode::pure().with_noise(-1.0));
        assert!(Oracle::new(cfg).is_err());
        assert_eq!(
            "nonideal".parse::<OracleLaw>().unwrap(),
            OracleLaw::Nonideal
        );
        assert!("x".parse::<OracleLaw>().is_err());
    }
}
