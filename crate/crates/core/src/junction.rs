//! Closed-form pressure-difference closures for one inlet/outlet pair of a
//! bifurcation.
//!
//! Sign convention everywhere: `dP = P_outlet - P_inlet`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BifurcationGeometry, FluidProperties, Outlet};

/// Coefficients of `dP = r_lin * Q + r_quad * Q^2 + inductance * dQ/dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RRICoefficients {
    /// g cm^-4 s^-1
    pub r_lin: f64,
    /// g cm^-7
    pub r_quad: f64,
    /// g cm^-4
    pub inductance: f64,
}

impl RRICoefficients {
    pub fn new(r_lin: f64, r_quad: f64, inductance: f64) -> Self {
        Self {
            r_lin,
            r_quad,
            inductance,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.r_lin, self.r_quad, self.inductance]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// The steady (resistor-resistor) part alone.
    pub fn without_inductance(self) -> Self {
        Self {
            inductance: 0.0,
            ..self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowState {
    /// cm³/s
    pub q: f64,
    /// cm³/s²
    pub q_dot: f64,
}

impl FlowState {
    pub fn new(q: f64, q_dot: f64) -> Self {
        Self { q, q_dot }
    }

    pub fn steady(q: f64) -> Self {
        Self { q, q_dot: 0.0 }
    }
}

/// Static pressure continuity.
pub fn dp_static() -> f64 {
    0.0
}

/// Total pressure continuity.
pub fn dp_total_pressure(u_inlet: f64, u_outlet: f64, fluid: &FluidProperties) -> f64 {
    0.5 * fluid.density * (u_inlet * u_inlet - u_outlet * u_outlet)
}

/// Map the stored deviation angle onto the angle argument of the Unified0D+
/// loss so that a straight continuation has no turning loss.
pub fn unified0d_angle(theta_geom: f64) -> f64 {
    PI - theta_geom
}

/// Unified0D+ junction loss, evaluated as written:
/// `(1 - u_in / u_out * cos(3/4 (pi - theta))) * rho * u_out^2`.
pub fn dp_unified0d(
    u_inlet: f64,
    u_outlet: f64,
    theta_eq3: f64,
    fluid: &FluidProperties,
) -> Result<f64> {
    if u_outlet == 0.0 {
        return Err(Error::Domain("unified0d: outlet velocity is zero".into()));
    }
    let c = (0.75 * (PI - theta_eq3)).cos();
    Ok((1.0 - (u_inlet / u_outlet) * c) * fluid.density * u_outlet * u_outlet)
}

/// Same value as [`dp_unified0d`] multiplied out, which stays defined at
/// `u_outlet = 0`. Returns `(dP, d dP / d u_outlet)`.
fn unified0d_expanded(u_inlet: f64, u_outlet: f64, theta_eq3: f64, density: f64) -> (f64, f64) {
    let c = (0.75 * (PI - theta_eq3)).cos();
    let value = density * u_outlet * u_outlet - density * c * u_inlet * u_outlet;
    let slope = 2.0 * density * u_outlet - density * c * u_inlet;
    (value, slope)
}

/// Poiseuille pressure drop per unit flow, `8 mu l / (pi r^4)`.
pub fn poiseuille_resistance(length: f64, radius: f64, fluid: &FluidProperties) -> f64 {
    8.0 * fluid.dynamic_viscosity * length / (PI * radius.powi(4))
}

/// Unified0D+ moved from the branch point to the measurement stations by
/// subtracting the Poiseuille drops along the inlet and outlet segments.
/// `adjustment` is added verbatim (zero unless a correction is supplied).
pub fn dp_unified0d_poiseuille(
    geom: &BifurcationGeometry,
    outlet: Outlet,
    q_inlet: f64,
    q_outlet: f64,
    fluid: &FluidProperties,
    adjustment: f64,
) -> Result<f64> {
    let law = Unified0dPoiseuille::new(geom, outlet, *fluid, adjustment)?;
    Ok(law.value(q_inlet, q_outlet).0)
}

pub fn dp_rri(coeffs: &RRICoefficients, state: FlowState) -> f64 {
    coeffs.r_lin * state.q + coeffs.r_quad * state.q * state.q + coeffs.inductance * state.q_dot
}

/// `(d dP / dQ, d dP / dQdot)`.
pub fn dp_rri_derivatives(coeffs: &RRICoefficients, state: FlowState) -> (f64, f64) {
    (
        coeffs.r_lin + 2.0 * coeffs.r_quad * state.q,
        coeffs.inductance,
    )
}

/// A pressure-difference closure usable inside the network solver.
///
/// The inlet flow is prescribed by the network, so it enters as a parameter
/// and derivatives are taken at fixed inlet flow.
pub trait JunctionLaw: Send + Sync {
    fn pressure_difference(&self, state: FlowState, q_inlet: f64) -> f64;

    fn derivatives(&self, state: FlowState, q_inlet: f64) -> (f64, f64);
}

impl JunctionLaw for RRICoefficients {
    fn pressure_difference(&self, state: FlowState, _q_inlet: f64) -> f64 {
        dp_rri(self, state)
    }

    fn derivatives(&self, state: FlowState, _q_inlet: f64) -> (f64, f64) {
        dp_rri_derivatives(self, state)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StaticContinuity;

impl JunctionLaw for StaticContinuity {
    fn pressure_difference(&self, _state: FlowState, _q_inlet: f64) -> f64 {
        dp_static()
    }

    fn derivatives(&self, _state: FlowState, _q_inlet: f64) -> (f64, f64) {
        (0.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TotalPressureContinuity {
    inlet_area: f64,
    outlet_area: f64,
    fluid: FluidProperties,
}

impl TotalPressureContinuity {
    pub fn new(geom: &BifurcationGeometry, outlet: Outlet, fluid: FluidProperties) -> Result<Self> {
        geom.validate()?;
        Ok(Self {
            inlet_area: geom.inlet_area(),
            outlet_area: geom.outlet_area(outlet),
            fluid,
        })
    }
}

impl JunctionLaw for TotalPressureContinuity {
    fn pressure_difference(&self, state: FlowState, q_inlet: f64) -> f64 {
        dp_total_pressure(
            q_inlet / self.inlet_area,
            state.q / self.outlet_area,
            &self.fluid,
        )
    }

    fn derivatives(&self, state: FlowState, _q_inlet: f64) -> (f64, f64) {
        let u_out = state.q / self.outlet_area;
        (-self.fluid.density * u_out / self.outlet_area, 0.0)
    }
}

/// Unified0D+ with Poiseuille segment corrections, as a solver closure.
#[derive(Debug, Clone, Copy)]
pub struct Unified0dPoiseuille {
    inlet_area: f64,
    outlet_area: f64,
    theta_eq3: f64,
    inlet_resistance: f64,
    outlet_resistance: f64,
    density: f64,
    adjustment: f64,
}

impl Unified0dPoiseuille {
    pub fn new(
        geom: &BifurcationGeometry,
        outlet: Outlet,
        fluid: FluidProperties,
        adjustment: f64,
    ) -> Result<Self> {
        let r_out = geom.outlet_radius(outlet);
        if !(geom.r_inlet > 0.0 && r_out > 0.0) {
            return Err(Error::Domain(format!(
                "unified0d: radii must be positive (inlet {}, outlet {r_out})",
                geom.r_inlet
            )));
        }
        Ok(Self {
            inlet_area: geom.inlet_area(),
            outlet_area: geom.outlet_area(outlet),
            theta_eq3: unified0d_angle(geom.outlet_angle(outlet)),
            inlet_resistance: poiseuille_resistance(geom.l_inlet, geom.r_inlet, &fluid),
            outlet_resistance: poiseuille_resistance(geom.outlet_length(outlet), r_out, &fluid),
            density: fluid.density,
            adjustment,
        })
    }

    fn value(&self, q_inlet: f64, q_outlet: f64) -> (f64, f64) {
        let (u, du) = unified0d_expanded(
            q_inlet / self.inlet_area,
            q_outlet / self.outlet_area,
            self.theta_eq3,
            self.density,
        );
        let dp = u + self.adjustment
            - self.inlet_resistance * q_inlet
            - self.outlet_resistance * q_outlet;
        (dp, du / self.outlet_area - self.outlet_resistance)
    }
}

impl JunctionLaw for Unified0dPoiseuille {
    fn pressure_difference(&self, state: FlowState, q_inlet: f64) -> f64 {
        self.value(q_inlet, state.q).0
    }

    fn derivatives(&self, state: FlowState, q_inlet: f64) -> (f64, f64) {
        (self.value(q_inlet, state.q).1, 0.0)
    }
}

/// Closure selector for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClosureKind {
    Static,
    Total,
    Unified0d,
    Rri,
}

impl FromStr for ClosureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(ClosureKind::Static),
            "total" => Ok(ClosureKind::Total),
            "unified0d" => Ok(ClosureKind::Unified0d),
            "rri" => Ok(ClosureKind::Rri),
            _ => Err(Error::Config(format!(
                "unknown closure '{s}'; expected one of: static, total, unified0d, rri"
            ))),
        }
    }
}

impl fmt::Display for ClosureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClosureKind::Static => "static",
            ClosureKind::Total => "total",
            ClosureKind::Unified0d => "unified0d",
            ClosureKind::Rri => "rri",
        })
    }
}

/// Build the analytic closure for one outlet. `Rri` needs coefficients and
/// is not constructed here.
pub fn analytic_law(
    kind: ClosureKind,
    geom: &BifurcationGeometry,
    outlet: Outlet,
    fluid: FluidProperties,
) -> Result<Box<dyn JunctionLaw>> {
    match kind {
        ClosureKind::Static => Ok(Box::new(StaticContinuity)),
        ClosureKind::Total => Ok(Box::new(TotalPressureContinuity::new(geom, outlet, fluid)?)),
        ClosureKind::Unified0d => Ok(Box::new(Unified0dPoiseuille::new(
            geom, outlet, fluid, 0.0,
        )?)),
        ClosureKind::Rri => Err(Error::Config(
            "the rri closure needs coefficients from a trained model".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fluid() -> FluidProperties {
        FluidProperties::default()
    }

    fn geom() -> BifurcationGeometry {
        BifurcationGeometry {
            r_inlet: 0.5,
            r_outlet_1: 0.35,
            r_outlet_2: 0.4,
            theta_1: 0.3,
            theta_2: 0.4,
            l_outlet_1: 10.5,
            l_outlet_2: 11.0,
            l_inlet: 10.0,
        }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn static_is_zero() {
        assert_eq!(dp_static(), 0.0);
        assert_eq!(
            StaticContinuity.pressure_difference(FlowState::new(3.0, 2.0), 5.0),
            0.0
        );
    }

    #[test]
    fn total_pressure_values() {
        assert_eq!(dp_total_pressure(7.0, 7.0, &fluid()), 0.0);
        assert!((dp_total_pressure(10.0, 0.0, &fluid()) - 53.0).abs() < 1e-12);
        assert_eq!(
            dp_total_pressure(3.0, 4.0, &fluid()),
            dp_total_pressure(-3.0, -4.0, &fluid())
        );
    }

    #[test]
    fn unified0d_values() {
        let f = fluid();
        assert!(dp_unified0d(40.0, 40.0, PI, &f).unwrap().abs() < 1e-9);
        let u = 12.0;
        assert!(rel(dp_unified0d(0.0, u, 0.7, &f).unwrap(), f.density * u * u) < 1e-15);
        // hand evaluation: (1 - 50/80 cos(3pi/16)) * 1.06 * 6400
        assert!(
            rel(
                dp_unified0d(50.0, 80.0, 0.75 * PI, &f).unwrap(),
                3258.568843837208
            ) < 1e-13
        );
        assert!(matches!(
            dp_unified0d(1.0, 0.0, 1.0, &f),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn unified0d_straight_continuation_is_lossless() {
        let f = fluid();
        assert!(
            dp_unified0d(30.0, 30.0, unified0d_angle(0.0), &f)
                .unwrap()
                .abs()
                < 1e-9
        );
    }

    #[test]
    fn poiseuille_values() {
        let f = fluid();
        let g = geom();
        assert_eq!(
            dp_unified0d_poiseuille(&g, Outlet::First, 0.0, 0.0, &f, 0.0).unwrap(),
            0.0
        );
        assert!(
            rel(
                poiseuille_resistance(10.0, 0.5, &f) * 50.0,
                814.8733086305042
            ) < 1e-13
        );

        let f2 = FluidProperties::new(f.density, 2.0 * f.dynamic_viscosity).unwrap();
        let base = |fl: &FluidProperties| {
            let law = Unified0dPoiseuille::new(&g, Outlet::First, *fl, 0.0).unwrap();
            law.inlet_resistance * 30.0 + law.outlet_resistance * 14.0
        };
        assert!(rel(base(&f2), 2.0 * base(&f)) < 1e-15);

        let mut bad = g;
        bad.r_outlet_1 = 0.0;
        assert!(matches!(
            dp_unified0d_poiseuille(&bad, Outlet::First, 1.0, 1.0, &f, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn rri_values() {
        let c = RRICoefficients::new(2.0, 1.0, -0.5);
        assert_eq!(dp_rri(&c, FlowState::new(0.0, 0.0)), 0.0);
        assert_eq!(dp_rri(&c, FlowState::new(3.0, 4.0)), 13.0);
        let rr = c.without_inductance();
        assert_eq!(
            dp_rri(&rr, FlowState::new(3.0, 4.0)),
            dp_rri(&rr, FlowState::new(3.0, -9.0))
        );
        assert_eq!(
            dp_rri_derivatives(&c, FlowState::new(0.0, 1.0)),
            (2.0, -0.5)
        );
        let flat = RRICoefficients::new(2.0, 0.0, -0.5);
        assert_eq!(
            dp_rri_derivatives(&flat, FlowState::steady(1.0)).0,
            dp_rri_derivatives(&flat, FlowState::steady(100.0)).0
        );
    }

    #[test]
    fn rri_derivative_matches_central_difference() {
        let c = RRICoefficients::new(-91.7, -8.16, -36.0);
        let s = FlowState::new(10.0, 5.0);
        let (dq, dqd) = dp_rri_derivatives(&c, s);
        let h = 1e-6 * 10.0;
        let fd_q = (dp_rri(&c, FlowState::new(s.q + h, s.q_dot))
            - dp_rri(&c, FlowState::new(s.q - h, s.q_dot)))
            / (2.0 * h);
        let h = 1e-6 * 5.0;
        let fd_qd = (dp_rri(&c, FlowState::new(s.q, s.q_dot + h))
            - dp_rri(&c, FlowState::new(s.q, s.q_dot - h)))
            / (2.0 * h);
        assert!(rel(dq, fd_q) < 1e-8);
        assert!(rel(dqd, fd_qd) < 1e-8);
    }

    #[test]
    fn closure_kind_parse() {
        assert_eq!(
            "unified0d".parse::<ClosureKind>().unwrap(),
            ClosureKind::Unified0d
        );
        assert!("nope".parse::<ClosureKind>().is_err());
    }

    fn central(law: &dyn JunctionLaw, s: FlowState, q_in: f64) -> (f64, f64) {
        let hq = 1e-6 * s.q.abs().max(1.0);
        let hd = 1e-6 * s.q_dot.abs().max(1.0);
        let dq = (law.pressure_difference(FlowState::new(s.q + hq, s.q_dot), q_in)
            - law.pressure_difference(FlowState::new(s.q - hq, s.q_dot), q_in))
            / (2.0 * hq);
        let dd = (law.pressure_difference(FlowState::new(s.q, s.q_dot + hd), q_in)
            - law.pressure_difference(FlowState::new(s.q, s.q_dot - hd), q_in))
            / (2.0 * hd);
        (dq, dd)
    }

    fn close(a: f64, b: f64, scale: f64) -> bool {
        (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(scale)
    }

    proptest! {
        #[test]
        fn rri_linear_in_qdot(
            r_lin in -200.0..0.0f64, r_quad in -20.0..20.0f64, l in -80.0..0.0f64,
            q in -50.0..50.0f64, a in -500.0..500.0f64, b in -500.0..500.0f64,
        ) {
            let c = RRICoefficients::new(r_lin, r_quad, l);
            let d = dp_rri(&c, FlowState::new(q, a + b)) - dp_rri(&c, FlowState::new(q, a));
            prop_assert!((d - l * b).abs() <= 1e-9 * (1.0 + (l * b).abs() + dp_rri(&c, FlowState::new(q, a)).abs()));
        }

        #[test]
        fn unified0d_homogeneous_degree_two(
            u_in in 1.0..200.0f64, u_out in 1.0..200.0f64, theta in 2.0..3.1f64, s in 0.1..5.0f64,
        ) {
            let f = FluidProperties::default();
            let base = dp_unified0d(u_in, u_out, theta, &f).unwrap();
            let scaled = dp_unified0d(s * u_in, s * u_out, theta, &f).unwrap();
            prop_assert!((scaled - s * s * base).abs() <= 1e-10 * (1.0 + (s * s * base).abs()));
        }

        #[test]
        fn inviscid_poiseuille_equals_unified0d(
            q_in in 1.0..100.0f64, frac in 0.1..0.9f64,
        ) {
            let g = geom();
            let f = FluidProperties { density: 1.06, dynamic_viscosity: 0.0 };
            let q_out = frac * q_in;
            let lhs = dp_unified0d_poiseuille(&g, Outlet::First, q_in, q_out, &f, 0.0).unwrap();
            let rhs = dp_unified0d(
                q_in / g.inlet_area(), q_out / g.outlet_area(Outlet::First),
                unified0d_angle(g.theta_1), &f,
            ).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }

        #[test]
        fn analytic_derivatives_match_finite_differences(
            q in 0.5..80.0f64, q_dot in -300.0..300.0f64, frac in 0.2..0.8f64,
            r_lin in -200.0..-1.0f64, r_quad in -20.0..20.0f64, l in -80.0..-1.0f64,
        ) {
            let g = geom();
            let f = FluidProperties::default();
            let q_in = q / frac;
            let s = FlowState::new(q, q_dot);
            let laws: Vec<Box<dyn JunctionLaw>> = vec![
                Box::new(RRICoefficients::new(r_lin, r_quad, l)),
                Box::new(TotalPressureContinuity::new(&g, Outlet::First, f).unwrap()),
                Box::new(Unified0dPoiseuille::new(&g, Outlet::Second, f, 0.0).unwrap()),
            ];
            for law in &laws {
                let (aq, ad) = law.derivatives(s, q_in);
                let (fq, fd) = central(law.as_ref(), s, q_in);
                let scale = 1e-6 * law.pressure_difference(s, q_in).abs() / q.abs().max(1.0);
                prop_assert!(close(aq, fq, scale), "dQ {aq} vs {fq}");
                prop_assert!(close(ad, fd, scale), "dQdot {ad} vs {fd}");
            }
        }
    }
}
