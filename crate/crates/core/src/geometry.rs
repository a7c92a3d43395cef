//! Bifurcation geometry, fluid properties, units and cohort sampling.
//!
//! Everything inside the crate is CGS: cm, g, s, dyn/cm². Pressures are only
//! converted to mmHg where they are reported.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// dyn/cm² per mmHg.
pub const DYN_PER_MMHG: f64 = 1333.22;

/// Measurement stations sit this many inlet diameters from the junction.
pub const STATION_DIAMETERS: f64 = 10.0;

pub fn dyn_to_mmhg(p: f64) -> f64 {
    p / DYN_PER_MMHG
}

pub fn mmhg_to_dyn(p: f64) -> f64 {
    p * DYN_PER_MMHG
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluidProperties {
    /// g/cm³
    pub density: f64,
    /// poise
    pub dynamic_viscosity: f64,
}

impl Default for FluidProperties {
    fn default() -> Self {
        Self {
            density: 1.06,
            dynamic_viscosity: 0.04,
        }
    }
}

impl FluidProperties {
    pub fn new(density: f64, dynamic_viscosity: f64) -> Result<Self> {
        let fluid = Self {
            density,
            dynamic_viscosity,
        };
        fluid.validate()?;
        Ok(fluid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::Config(format!(
                "density must be > 0, got {}",
                self.density
            )));
        }
        if !(self.dynamic_viscosity > 0.0 && self.dynamic_viscosity.is_finite()) {
            return Err(Error::Config(format!(
                "dynamic viscosity must be > 0, got {}",
                self.dynamic_viscosity
            )));
        }
        Ok(())
    }
}

/// Which daughter vessel a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outlet {
    #[serde(rename = "1")]
    First,
    #[serde(rename = "2")]
    Second,
}

impl Outlet {
    pub const BOTH: [Outlet; 2] = [Outlet::First, Outlet::Second];

    pub fn index(self) -> usize {
        match self {
            Outlet::First => 0,
            Outlet::Second => 1,
        }
    }

    pub fn other(self) -> Outlet {
        match self {
            Outlet::First => Outlet::Second,
            Outlet::Second => Outlet::First,
        }
    }

    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }
}

/// Idealized bifurcation: one inlet, two outlets. Angles are deviations of
/// each outlet from the inlet axis, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BifurcationGeometry {
    pub r_inlet: f64,
    pub r_outlet_1: f64,
    pub r_outlet_2: f64,
    pub theta_1: f64,
    pub theta_2: f64,
    pub l_outlet_1: f64,
    pub l_outlet_2: f64,
    pub l_inlet: f64,
}

impl BifurcationGeometry {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r_inlet", self.r_inlet),
            ("r_outlet_1", self.r_outlet_1),
            ("r_outlet_2", self.r_outlet_2),
            ("l_outlet_1", self.l_outlet_1),
            ("l_outlet_2", self.l_outlet_2),
            ("l_inlet", self.l_inlet),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("theta_1", self.theta_1), ("theta_2", self.theta_2)] {
            if !(0.0..PI / 2.0).contains(&v) {
                return Err(Error::Domain(format!(
                    "{name} must lie in [0, pi/2), got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn outlet_radius(&self, outlet: Outlet) -> f64 {
        match outlet {
            Outlet::First => self.r_outlet_1,
            Outlet::Second => self.r_outlet_2,
        }
    }

    pub fn outlet_angle(&self, outlet: Outlet) -> f64 {
        match outlet {
            Outlet::First => self.theta_1,
            Outlet::Second => self.theta_2,
        }
    }

    pub fn outlet_length(&self, outlet: Outlet) -> f64 {
        match outlet {
            Outlet::First => self.l_outlet_1,
            Outlet::Second => self.l_outlet_2,
        }
    }

    pub fn inlet_area(&self) -> f64 {
        PI * self.r_inlet * self.r_inlet
    }

    pub fn outlet_area(&self, outlet: Outlet) -> f64 {
        let r = self.outlet_radius(outlet);
        PI * r * r
    }

    pub fn with_outlet_radius(mut self, outlet: Outlet, radius: f64) -> Self {
        match outlet {
            Outlet::First => self.r_outlet_1 = radius,
            Outlet::Second => self.r_outlet_2 = radius,
        }
        self
    }

    /// Geometric features with `outlet` in the modeled-outlet slot.
    pub fn feature_vector(&self, outlet: Outlet) -> FeatureVector {
        let v = FeatureVector([
            self.r_inlet,
            self.r_outlet_1,
            self.r_outlet_2,
            self.theta_1,
            self.theta_2,
            self.l_outlet_1,
            self.l_outlet_2,
        ]);
        match outlet {
            Outlet::First => v,
            Outlet::Second => v.swap_roles(),
        }
    }
}

pub const N_FEATURES: usize = 7;

/// `[r_inlet, r_outlet, r_aux, theta_outlet, theta_aux, l_outlet, l_aux]`.
/// The order is part of every model file; never reorder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    /// Exchange the modeled and auxiliary outlets.
    pub fn swap_roles(self) -> Self {
        let a = self.0;
        FeatureVector([a[0], a[2], a[1], a[4], a[3], a[6], a[5]])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Interval { lo: v[0], hi: v[1] }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) {
            return Err(Error::Config(format!(
                "{what}: interval bounds must be finite"
            )));
        }
        if self.lo > self.hi {
            return Err(Error::Config(format!(
                "{what}: lower bound {} exceeds upper bound {}",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.lo + (self.hi - self.lo) * u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CohortName {
    Isoradial,
    Pulmonary,
    Brachiocephalic,
}

impl CohortName {
    pub const ALL: [CohortName; 3] = [
        CohortName::Isoradial,
        CohortName::Pulmonary,
        CohortName::Brachiocephalic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CohortName::Isoradial => "isoradial",
            CohortName::Pulmonary => "pulmonary",
            CohortName::Brachiocephalic => "brachiocephalic",
        }
    }

    /// Geometry count of the reference datasets.
    pub fn reference_size(self) -> usize {
        match self {
            CohortName::Isoradial => 187,
            CohortName::Pulmonary => 123,
            CohortName::Brachiocephalic => 110,
        }
    }
}

impl fmt::Display for CohortName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CohortName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CohortName::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown cohort '{s}'; expected one of: isoradial, pulmonary, brachiocephalic"
                ))
            })
    }
}

/// Outlet radii are either sampled directly or as a multiple of the inlet radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutletRadiusRange {
    OutletRadius(Interval),
    RadiusRatio(Interval),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutletSampling {
    #[default]
    Shared,
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub name: CohortName,
    /// cm
    pub inlet_radius: Interval,
    #[serde(flatten)]
    pub outlet: OutletRadiusRange,
    pub outlet_angle_deg: Interval,
    /// cm/s
    pub inlet_velocity: Interval,
    /// One outlet radius draw shared by both outlets, or one per outlet.
    #[serde(default)]
    pub outlet_sampling: OutletSampling,
    /// Extra segment length beyond the station rule, in inlet radii.
    #[serde(default = "default_length_jitter")]
    pub length_jitter: Interval,
}

fn default_length_jitter() -> Interval {
    Interval::new(0.0, 2.0)
}

impl CohortSpec {
    pub fn builtin(name: CohortName) -> Self {
        match name {
            CohortName::Isoradial => CohortSpec {
                name,
                inlet_radius: Interval::new(0.44, 0.66),
                outlet: OutletRadiusRange::OutletRadius(Interval::new(0.44, 0.66)),
                outlet_angle_deg: Interval::new(36.0, 54.0),
                inlet_velocity: Interval::new(49.0, 74.0),
                outlet_sampling: OutletSampling::Shared,
                length_jitter: default_length_jitter(),
            },
            // Ratio bounds are the tabulated outlet-radius bounds divided by
            // the matching inlet-radius bounds, so the extreme products land
            // on the tabulated extremes.
            CohortName::Pulmonary => CohortSpec {
                name,
                inlet_radius: Interval::new(0.28, 0.37),
                outlet: OutletRadiusRange::RadiusRatio(Interval::new(0.16 / 0.28, 0.27 / 0.37)),
                outlet_angle_deg: Interval::new(13.0, 19.0),
                inlet_velocity: Interval::new(95.0, 140.0),
                outlet_sampling: OutletSampling::Shared,
                length_jitter: default_length_jitter(),
            },
            CohortName::Brachiocephalic => CohortSpec {
                name,
                inlet_radius: Interval::new(0.46, 0.59),
                outlet: OutletRadiusRange::RadiusRatio(Interval::new(0.28 / 0.46, 0.43 / 0.59)),
                outlet_angle_deg: Interval::new(16.0, 24.0),
                inlet_velocity: Interval::new(127.0, 180.0),
                outlet_sampling: OutletSampling::Shared,
                length_jitter: default_length_jitter(),
            },
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: CohortSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.inlet_radius.validate("inlet_radius")?;
        match &self.outlet {
            OutletRadiusRange::OutletRadius(i) => i.validate("outlet_radius")?,
            OutletRadiusRange::RadiusRatio(i) => i.validate("radius_ratio")?,
        }
        self.outlet_angle_deg.validate("outlet_angle_deg")?;
        self.inlet_velocity.validate("inlet_velocity")?;
        self.length_jitter.validate("length_jitter")?;
        if self.length_jitter.lo < 0.0 {
            return Err(Error::Config("length_jitter must be non-negative".into()));
        }
        let (out_lo, _) = self.outlet_bounds();
        if self.inlet_radius.lo <= 0.0 || out_lo <= 0.0 {
            return Err(Error::Config("radii must be positive".into()));
        }
        if self.outlet_angle_deg.lo < 0.0 || self.outlet_angle_deg.hi >= 90.0 {
            return Err(Error::Config("outlet_angle_deg must lie in [0, 90)".into()));
        }
        if self.inlet_velocity.lo < 0.0 {
            return Err(Error::Config("inlet_velocity must be non-negative".into()));
        }
        Ok(())
    }

    /// Range of absolute outlet radii this spec can produce.
    pub fn outlet_bounds(&self) -> (f64, f64) {
        match self.outlet {
            OutletRadiusRange::OutletRadius(i) => (i.lo, i.hi),
            OutletRadiusRange::RadiusRatio(i) => {
                (i.lo * self.inlet_radius.lo, i.hi * self.inlet_radius.hi)
            }
        }
    }

    /// Geometry at the midpoint of every interval, with nominal lengths.
    pub fn nominal(&self) -> CohortSample {
        let r_in = self.inlet_radius.midpoint();
        let r_out = match self.outlet {
            OutletRadiusRange::OutletRadius(i) => i.midpoint(),
            OutletRadiusRange::RadiusRatio(i) => i.midpoint() * r_in,
        };
        let theta = self.outlet_angle_deg.midpoint().to_radians();
        let l = STATION_DIAMETERS * 2.0 * r_in + self.length_jitter.midpoint() * r_in;
        CohortSample {
            geometry: BifurcationGeometry {
                r_inlet: r_in,
                r_outlet_1: r_out,
                r_outlet_2: r_out,
                theta_1: theta,
                theta_2: theta,
                l_outlet_1: l,
                l_outlet_2: l,
                l_inlet: l,
            },
            inlet_velocity: self.inlet_velocity.midpoint(),
        }
    }
}

/// One draw from a cohort: the geometry plus its peak inlet velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortSample {
    pub geometry: BifurcationGeometry,
    /// cm/s
    pub inlet_velocity: f64,
}

impl CohortSample {
    /// Peak inlet flow (cm³/s) implied by the sampled velocity.
    pub fn inlet_flow(&self) -> f64 {
        self.inlet_velocity * self.geometry.inlet_area()
    }
}

/// Seeded generator for the `index`-th member of a cohort. Independent
/// streams keep draws stable regardless of generation order.
pub fn cohort_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn sample_cohort<R: Rng>(spec: &CohortSpec, rng: &mut R) -> Result<CohortSample> {
    spec.validate()?;
    let r_inlet = spec.inlet_radius.sample(rng);
    let mut outlet_radius = || match spec.outlet {
        OutletRadiusRange::OutletRadius(i) => i.sample(rng),
        OutletRadiusRange::RadiusRatio(i) => r_inlet * i.sample(rng),
    };
    let r_outlet_1 = outlet_radius();
    let r_outlet_2 = match spec.outlet_sampling {
        OutletSampling::Shared => r_outlet_1,
        OutletSampling::Independent => outlet_radius(),
    };
    let theta_1 = spec.outlet_angle_deg.sample(rng).to_radians();
    let theta_2 = spec.outlet_angle_deg.sample(rng).to_radians();
    let inlet_velocity = spec.inlet_velocity.sample(rng);

    let base = STATION_DIAMETERS * 2.0 * r_inlet;
    let jitter = Interval::new(
        spec.length_jitter.lo * r_inlet,
        spec.length_jitter.hi * r_inlet,
    );
    let l_inlet = base + jitter.sample(rng);
    let l_outlet_1 = base + jitter.sample(rng);
    let l_outlet_2 = base + jitter.sample(rng);

    Ok(CohortSample {
        geometry: BifurcationGeometry {
            r_inlet,
            r_outlet_1,
            r_outlet_2,
            theta_1,
            theta_2,
            l_outlet_1,
            l_outlet_2,
            l_inlet,
        },
        inlet_velocity,
    })
}

pub fn sample_cohort_geometry(spec: &CohortSpec, rng_seed: u64) -> Result<BifurcationGeometry> {
    let mut rng = cohort_rng(rng_seed, 0);
    Ok(sample_cohort(spec, &mut rng)?.geometry)
}
