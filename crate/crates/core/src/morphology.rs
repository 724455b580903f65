//! Quadcopter morphology space and the morphology → talent map.
//!
//! The talent map is a momentum-theory surrogate of a quad-H delivery UAV.
//! Frame, motor, battery and propeller masses come from linear coefficients;
//! thrust and hover power use ideal actuator-disk relations; cruise speed is
//! derived from the thrust margin against aerodynamic drag.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mass of one emergency-supply package.
pub const PACKAGE_MASS_KG: f64 = 0.4;

/// Number of morphology design variables.
pub const N_VARS: usize = 7;

/// Number of talent metrics.
pub const N_TALENTS: usize = 3;

pub const VAR_NAMES: [&str; N_VARS] = [
    "arm_length",
    "arm_width",
    "motor_power",
    "battery_capacity",
    "battery_mass_fraction",
    "propeller_diameter",
    "payload_mass_budget",
];

pub const TALENT_NAMES: [&str; N_TALENTS] = ["flight_range", "nominal_speed", "package_capacity"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorphologyVector {
    /// Arm length from hub to motor axis, meters.
    pub arm_length: f64,
    /// Arm width, meters.
    pub arm_width: f64,
    /// Rated shaft power per motor, watts.
    pub motor_power: f64,
    /// Battery capacity, watt-hours.
    pub battery_capacity: f64,
    /// Fraction of battery pack mass that is cells (the rest is casing and BMS).
    pub battery_mass_fraction: f64,
    /// Propeller diameter, meters.
    pub propeller_diameter: f64,
    /// Payload mass the airframe is sized for, kilograms.
    pub payload_mass_budget: f64,
}

impl MorphologyVector {
    pub fn to_array(&self) -> [f64; N_VARS] {
        [
            self.arm_length,
            self.arm_width,
            self.motor_power,
            self.battery_capacity,
            self.battery_mass_fraction,
            self.propeller_diameter,
            self.payload_mass_budget,
        ]
    }

    pub fn from_array(v: [f64; N_VARS]) -> Self {
        MorphologyVector {
            arm_length: v[0],
            arm_width: v[1],
            motor_power: v[2],
            battery_capacity: v[3],
            battery_mass_fraction: v[4],
            propeller_diameter: v[5],
            payload_mass_budget: v[6],
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; N_VARS] = v
            .try_into()
            .map_err(|_| Error::InvalidArgument(format!("expected {N_VARS} morphology values, got {}", v.len())))?;
        Ok(Self::from_array(arr))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Capability metrics of a robot. All three are maximized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TalentVector {
    /// Kilometers.
    pub flight_range: f64,
    /// Meters per second.
    pub nominal_speed: f64,
    /// Number of packages; continuous during search, floored in simulation.
    pub package_capacity: f64,
}

impl TalentVector {
    pub fn new(flight_range: f64, nominal_speed: f64, package_capacity: f64) -> Self {
        TalentVector {
            flight_range,
            nominal_speed,
            package_capacity,
        }
    }

    pub fn to_array(&self) -> [f64; N_TALENTS] {
        [self.flight_range, self.nominal_speed, self.package_capacity]
    }

    pub fn from_array(v: [f64; N_TALENTS]) -> Self {
        TalentVector::new(v[0], v[1], v[2])
    }

    /// Whole packages a robot with these talents can carry.
    pub fn whole_packages(&self) -> u32 {
        if self.package_capacity.is_finite() && self.package_capacity > 0.0 {
            self.package_capacity.floor() as u32
        } else {
            0
        }
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorphologyBounds {
    pub lower: MorphologyVector,
    pub upper: MorphologyVector,
    /// Multiplier applied to the upper bounds for the single-robot study.
    #[serde(default = "default_srta_scale")]
    pub srta_scale: f64,
}

fn default_srta_scale() -> f64 {
    3.5
}

impl Default for MorphologyBounds {
    fn default() -> Self {
        MorphologyBounds {
            lower: MorphologyVector {
                arm_length: 0.15,
                arm_width: 0.02,
                motor_power: 100.0,
                battery_capacity: 50.0,
                battery_mass_fraction: 0.6,
                propeller_diameter: 0.1,
                payload_mass_budget: 0.4,
            },
            upper: MorphologyVector {
                arm_length: 0.5,
                arm_width: 0.08,
                motor_power: 400.0,
                battery_capacity: 300.0,
                battery_mass_fraction: 0.9,
                propeller_diameter: 0.6,
                payload_mass_budget: 4.0,
            },
            srta_scale: default_srta_scale(),
        }
    }
}

impl MorphologyBounds {
    pub fn validate(&self) -> Result<()> {
        let lo = self.lower.to_array();
        let hi = self.upper.to_array();
        for (i, name) in VAR_NAMES.iter().enumerate() {
            if !(lo[i].is_finite() && hi[i].is_finite()) {
                return Err(Error::Config(format!("bound for {name} is not finite")));
            }
            if lo[i] <= 0.0 {
                return Err(Error::Config(format!("lower bound for {name} must be positive")));
            }
            if lo[i] >= hi[i] {
                return Err(Error::Config(format!(
                    "lower bound for {name} ({}) must be below upper bound ({})",
                    lo[i], hi[i]
                )));
            }
        }
        if self.upper.battery_mass_fraction > 1.0 {
            return Err(Error::Config("battery_mass_fraction upper bound exceeds 1".into()));
        }
        if !(self.srta_scale.is_finite() && self.srta_scale >= 1.0) {
            return Err(Error::Config("srta_scale must be >= 1".into()));
        }
        Ok(())
    }

    /// Bounds for the single-robot study: upper bounds multiplied by
    /// `srta_scale`. The cell mass fraction is a ratio and stays capped at 1.
    pub fn srta(&self) -> MorphologyBounds {
        let mut upper = self.upper.to_array();
        for v in upper.iter_mut() {
            *v *= self.srta_scale;
        }
        upper[4] = (self.upper.battery_mass_fraction * self.srta_scale).min(1.0);
        MorphologyBounds {
            lower: self.lower,
            upper: MorphologyVector::from_array(upper),
            srta_scale: self.srta_scale,
        }
    }

    pub fn contains(&self, x: &MorphologyVector) -> bool {
        let (lo, hi, v) = (self.lower.to_array(), self.upper.to_array(), x.to_array());
        (0..N_VARS).all(|i| v[i] >= lo[i] && v[i] <= hi[i])
    }

    pub fn clamp(&self, x: &MorphologyVector) -> MorphologyVector {
        let (lo, hi, mut v) = (self.lower.to_array(), self.upper.to_array(), x.to_array());
        for i in 0..N_VARS {
            v[i] = v[i].clamp(lo[i], hi[i]);
        }
        MorphologyVector::from_array(v)
    }
}

/// Coefficients of the physics surrogate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicsCoefficients {
    pub gravity: f64,
    pub air_density: f64,
    /// Hub, avionics and body shell, kg.
    pub base_mass: f64,
    /// Arm mass per unit planform area, kg/m^2.
    pub arm_areal_density: f64,
    /// Motor + ESC mass per watt of rated power, kg/W.
    pub motor_mass_per_watt: f64,
    /// Cell-level specific energy, Wh/kg.
    pub cell_specific_energy: f64,
    /// Propeller mass per squared diameter, kg/m^2.
    pub propeller_mass_coeff: f64,
    /// Payload bay and release mechanism mass per kg of payload budget.
    pub payload_bay_fraction: f64,
    /// Rotor figure of merit.
    pub rotor_efficiency: f64,
    /// Cruise power as a multiple of hover power.
    pub cruise_power_factor: f64,
    /// Usable fraction of stored battery energy.
    pub discharge_efficiency: f64,
    /// Thrust-to-weight ratio required to carry packages with control margin.
    pub min_thrust_to_weight: f64,
    /// Body drag area C_d*A, m^2.
    pub body_drag_area: f64,
    /// Drag coefficient of the arm planform.
    pub arm_drag_coeff: f64,
    /// Drag area added per kg of payload budget, m^2/kg.
    pub payload_drag_area: f64,
    /// Nominal cruise speed as a fraction of maximum level speed.
    pub cruise_speed_fraction: f64,
    /// Required arm width per sqrt(root bending moment), m/sqrt(N*m).
    pub arm_stress_coeff: f64,
}

impl Default for PhysicsCoefficients {
    fn default() -> Self {
        PhysicsCoefficients {
            gravity: 9.81,
            air_density: 1.225,
            base_mass: 0.3,
            arm_areal_density: 8.0,
            motor_mass_per_watt: 0.0008,
            cell_specific_energy: 150.0,
            propeller_mass_coeff: 0.3,
            payload_bay_fraction: 0.15,
            rotor_efficiency: 0.7,
            cruise_power_factor: 4.0,
            discharge_efficiency: 0.85,
            min_thrust_to_weight: 1.3,
            body_drag_area: 0.16,
            arm_drag_coeff: 0.5,
            payload_drag_area: 0.01,
            cruise_speed_fraction: 0.3,
            arm_stress_coeff: 0.012,
        }
    }
}

/// Intermediate quantities of the surrogate, exposed for diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlightPerformance {
    pub empty_mass: f64,
    pub gross_mass: f64,
    pub max_thrust: f64,
    pub thrust_per_motor: f64,
    pub hover_power: f64,
    pub cruise_power: f64,
    pub max_speed: f64,
}

impl PhysicsCoefficients {
    pub fn performance(&self, x: &MorphologyVector) -> FlightPerformance {
        let disk_area = PI * x.propeller_diameter * x.propeller_diameter / 4.0;
        let two_rho_a = 2.0 * self.air_density * disk_area;
        let thrust_per_motor = (self.rotor_efficiency * x.motor_power).powf(2.0 / 3.0) * two_rho_a.cbrt();
        let max_thrust = 4.0 * thrust_per_motor;

        let arm_area = 4.0 * x.arm_length * x.arm_width;
        let battery_mass = x.battery_capacity / (self.cell_specific_energy * x.battery_mass_fraction);
        let empty_mass = self.base_mass
            + self.arm_areal_density * arm_area
            + self.motor_mass_per_watt * 4.0 * x.motor_power
            + battery_mass
            + self.propeller_mass_coeff * 4.0 * x.propeller_diameter * x.propeller_diameter
            + self.payload_bay_fraction * x.payload_mass_budget;
        let gross_mass = empty_mass + x.payload_mass_budget;
        let weight = gross_mass * self.gravity;

        let hover_power = weight.powf(1.5) / (4.0 * two_rho_a).sqrt() / self.rotor_efficiency;
        let cruise_power = self.cruise_power_factor * hover_power;

        let drag_area =
            self.body_drag_area + self.arm_drag_coeff * arm_area + self.payload_drag_area * x.payload_mass_budget;
        let horizontal_thrust = (max_thrust * max_thrust - weight * weight).max(0.0).sqrt();
        let max_speed = (2.0 * horizontal_thrust / (self.air_density * drag_area)).sqrt();

        FlightPerformance {
            empty_mass,
            gross_mass,
            max_thrust,
            thrust_per_motor,
            hover_power,
            cruise_power,
            max_speed,
        }
    }

    pub fn talents(&self, x: &MorphologyVector) -> Result<TalentVector> {
        if !x.is_finite() {
            return Err(Error::InvalidArgument("morphology contains non-finite values".into()));
        }
        if x.to_array().iter().any(|v| *v <= 0.0) {
            return Err(Error::InvalidArgument("morphology values must be positive".into()));
        }
        let perf = self.performance(x);
        let nominal_speed = self.cruise_speed_fraction * perf.max_speed;
        let endurance_s = x.battery_capacity * 3600.0 * self.discharge_efficiency / perf.cruise_power;
        let flight_range = endurance_s * nominal_speed / 1000.0;

        let liftable = perf.max_thrust / (self.gravity * self.min_thrust_to_weight) - perf.empty_mass;
        let package_capacity = liftable.min(x.payload_mass_budget).max(0.0) / PACKAGE_MASS_KG;

        Ok(TalentVector {
            flight_range,
            nominal_speed,
            package_capacity,
        })
    }

    /// Constraint values, each satisfied when `<= 0`:
    /// propeller overlap, thrust feasibility, arm root bending.
    pub fn constraints(&self, x: &MorphologyVector) -> Result<[f64; 3]> {
        if !x.is_finite() {
            return Err(Error::InvalidArgument("morphology contains non-finite values".into()));
        }
        let perf = self.performance(x);
        let overlap = x.propeller_diameter - SQRT_2 * x.arm_length;
        let thrust = perf.gross_mass * self.gravity - perf.max_thrust;
        let required_width = self.arm_stress_coeff * (perf.thrust_per_motor * x.arm_length).max(0.0).sqrt();
        let bending = required_width - x.arm_width;
        Ok([overlap, thrust, bending])
    }

    /// Sum of positive constraint values; zero for feasible designs.
    pub fn violation(&self, x: &MorphologyVector) -> Result<f64> {
        Ok(self.constraints(x)?.iter().map(|c| c.max(0.0)).sum())
    }
}

/// Talent map with default coefficients.
pub fn evaluate_talents(x: &MorphologyVector) -> Result<TalentVector> {
    PhysicsCoefficients::default().talents(x)
}

/// Geometric and thrust constraints with default coefficients.
pub fn geometric_constraints(x: &MorphologyVector) -> Result<[f64; 3]> {
    PhysicsCoefficients::default().constraints(x)
}

pub fn random_morphology(bounds: &MorphologyBounds, seed: u64) -> MorphologyVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_morphology(bounds, &mut rng)
}

pub fn sample_morphology<R: Rng + ?Sized>(bounds: &MorphologyBounds, rng: &mut R) -> MorphologyVector {
    let (lo, hi) = (bounds.lower.to_array(), bounds.upper.to_array());
    let mut v = [0.0; N_VARS];
    for i in 0..N_VARS {
        v[i] = rng.random_range(lo[i]..=hi[i]);
    }
    MorphologyVector::from_array(v)
}

/// Bounds and physics coefficients as loaded from the `[morphology]` table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MorphologyConfig {
    pub bounds: MorphologyBounds,
    pub physics: PhysicsCoefficients,
}

impl MorphologyConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: MorphologyConfig = toml::from_str(s).map_err(|e| Error::Config(format!("morphology config: {e}")))?;
        cfg.bounds.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }
}

/// Writes designs and their talents as comma-separated rows with a header.
pub fn write_fixture_csv<W: Write>(out: W, physics: &PhysicsCoefficients, designs: &[MorphologyVector]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = VAR_NAMES.to_vec();
    header.extend(TALENT_NAMES);
    header.extend(["overlap", "thrust", "bending"]);
    w.write_record(&header)?;
    for x in designs {
        let t = physics.talents(x)?;
        let g = physics.constraints(x)?;
        let row: Vec<String> = x
            .to_array()
            .iter()
            .chain(t.to_array().iter())
            .chain(g.iter())
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<fixture>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mid(bounds: &MorphologyBounds) -> MorphologyVector {
        let (lo, hi) = (bounds.lower.to_array(), bounds.upper.to_array());
        let mut v = [0.0; N_VARS];
        for i in 0..N_VARS {
            v[i] = 0.5 * (lo[i] + hi[i]);
        }
        MorphologyVector::from_array(v)
    }

    #[test]
    fn lower_bound_talents_are_positive() {
        let b = MorphologyBounds::default();
        let t = evaluate_talents(&b.lower).unwrap();
        assert!(
            t.flight_range > 0.0 && t.nominal_speed > 0.0 && t.package_capacity > 0.0,
            "{t:?}"
        );
        // minimum-thrust design cannot lift a whole package
        assert_eq!(t.whole_packages(), 0);
    }

    #[test]
    fn lower_bound_regression_fixture() {
        let t = evaluate_talents(&MorphologyBounds::default().lower).unwrap();
        let expected = lower_bound_fixture();
        for (a, b) in t.to_array().iter().zip(expected.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{t:?} vs {expected:?}");
        }
    }

    // Surrogate evaluated at the default lower bounds with default coefficients.
    fn lower_bound_fixture() -> [f64; 3] {
        [0.24380950957184624, 2.3217763278587, 0.21004351336915916]
    }

    #[test]
    fn more_battery_more_range_less_speed() {
        let b = MorphologyBounds::default();
        let mut x = mid(&b);
        x.battery_capacity = 120.0;
        let a = evaluate_talents(&x).unwrap();
        x.battery_capacity = 180.0;
        let c = evaluate_talents(&x).unwrap();
        assert!(c.flight_range > a.flight_range, "{a:?} {c:?}");
        assert!(c.nominal_speed < a.nominal_speed, "{a:?} {c:?}");
    }

    #[test]
    fn overlap_constraint_boundary() {
        let mut x = mid(&MorphologyBounds::default());
        x.arm_length = 0.3;
        x.propeller_diameter = SQRT_2 * 0.3;
        assert_eq!(geometric_constraints(&x).unwrap()[0], 0.0);
        x.propeller_diameter = 2.0 * SQRT_2 * 0.3;
        let g = geometric_constraints(&x).unwrap()[0];
        assert!((g - SQRT_2 * 0.3).abs() < 1e-12);
    }

    #[test]
    fn overweight_design_violates_thrust() {
        let b = MorphologyBounds::default();
        let mut x = b.lower;
        x.battery_capacity = 300.0;
        x.payload_mass_budget = 4.0;
        let g = geometric_constraints(&x).unwrap();
        assert!(g[1] > 0.0, "{g:?}");
        assert_eq!(evaluate_talents(&x).unwrap().nominal_speed, 0.0);
    }

    #[test]
    fn non_finite_rejected() {
        let mut x = mid(&MorphologyBounds::default());
        x.motor_power = f64::NAN;
        assert!(matches!(evaluate_talents(&x), Err(Error::InvalidArgument(_))));
        assert!(geometric_constraints(&x).is_err());
    }

    #[test]
    fn sampling_is_seeded_and_in_box() {
        let b = MorphologyBounds::default();
        assert_eq!(random_morphology(&b, 7), random_morphology(&b, 7));
        assert_ne!(random_morphology(&b, 7), random_morphology(&b, 8));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            assert!(b.contains(&sample_morphology(&b, &mut rng)));
        }
    }

    #[test]
    fn srta_bounds_scale_upper_and_cap_fraction() {
        let b = MorphologyBounds::default();
        let s = b.srta();
        assert_eq!(s.lower, b.lower);
        assert!((s.upper.motor_power - 1400.0).abs() < 1e-9);
        assert_eq!(s.upper.battery_mass_fraction, 1.0);
        s.validate().unwrap();
    }

    #[test]
    fn config_round_trip_through_toml() {
        let cfg = MorphologyConfig::default();
        let s = toml::to_string(&cfg).unwrap();
        assert_eq!(MorphologyConfig::from_toml_str(&s).unwrap(), cfg);
        let partial = "[physics]\nbase_mass = 0.5\n";
        let p = MorphologyConfig::from_toml_str(partial).unwrap();
        assert_eq!(p.physics.base_mass, 0.5);
        assert_eq!(p.bounds, MorphologyBounds::default());
    }

    #[test]
    fn inverted_bounds_rejected() {
        let mut b = MorphologyBounds::default();
        b.lower.arm_length = 0.6;
        assert!(b.validate().is_err());
    }

    #[test]
    fn fixture_csv_has_header_and_rows() {
        let b = MorphologyBounds::default();
        let mut buf = Vec::new();
        write_fixture_csv(&mut buf, &PhysicsCoefficients::default(), &[b.lower, b.upper]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 3);
        assert!(s.starts_with("arm_length,"));
    }
}
