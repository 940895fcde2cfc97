//! Parameter tables, run configuration, and validation.
//!
//! Defaults reproduce the published parameter tables for the human driver
//! model, the two-layer controller, and the fitted polynomial fuel model.
//! Configs are plain serde structs; the CLI reads them from TOML files whose
//! keys mirror the field names here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Driver-model assignment of one vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VehicleKind {
    Human,
    Automated,
}

/// Kinematic state of one vehicle in the platoon.
///
/// Positions are longitudinal, increasing downstream; within a platoon they
/// are strictly decreasing with follower index (the leader is farthest
/// downstream). Velocity never goes negative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u64,
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
    pub kind: VehicleKind,
}

/// Intelligent Driver Model parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    /// Free-flow speed, m/s.
    pub v0: f64,
    /// Desired time headway, s.
    pub t_headway: f64,
    /// Maximum acceleration, m/s^2.
    pub a: f64,
    /// Comfortable deceleration, m/s^2.
    pub b: f64,
    /// Acceleration exponent.
    pub delta: f64,
    /// Jam (standstill) gap, m.
    pub s0: f64,
    /// Std. dev. of the per-step Gaussian acceleration noise, m/s^2.
    pub noise_std: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0: 45.0,
            t_headway: 1.0,
            a: 1.3,
            b: 2.0,
            delta: 4.0,
            s0: 2.0,
            noise_std: 0.3,
        }
    }
}

/// Two-layer controller parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerParams {
    /// Proportional gain on time-gap error, (m/s)/s.
    pub kp: f64,
    /// Differential gain on speed difference, dimensionless.
    pub kd: f64,
    /// Desired time headway, s.
    pub h_des: f64,
    /// Sliding window length for the macroscopic speed estimate, m.
    pub w: f64,
    /// Minimum safe space headway, m.
    pub s_min: f64,
    /// Minimum safe time headway, s.
    pub h_min: f64,
    /// Safety decision-making horizon, s.
    pub tau_s: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            kp: 2.0,
            kd: 0.5,
            h_des: 2.0,
            w: 3000.0,
            s_min: 5.0,
            h_min: 0.5,
            tau_s: 5.0,
        }
    }
}

/// Fitted polynomial fuel-rate model coefficients (grams/second), with a
/// fuel-cut floor `beta`. Road grade is fixed at zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyParams {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub q0: f64,
    pub q1: f64,
    /// Minimum fuel rate, g/s.
    pub beta: f64,
    /// Road grade, radians. Fixed at 0; the grade-dependent model variant
    /// is not implemented.
    pub grade: f64,
    /// Grams of gasoline per US gallon (density 737 g/L x 3.78541 L/gal).
    /// The fuel model's g/s output is converted to gallons with this.
    pub grams_per_gallon: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            c0: 0.14631965,
            c1: 0.01217904,
            c2: 0.0,
            c3: 0.00002743,
            p0: 0.04553801,
            p1: 0.04743683,
            p2: 0.00180224,
            q0: 0.0,
            q1: 0.02609037,
            beta: 0.01311175,
            grade: 0.0,
            grams_per_gallon: 2789.9,
        }
    }
}

/// Stochastic lane-change perturbation parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LaneChangeParams {
    /// Gaps wider than this are candidates for insertion, m.
    pub gap_threshold: f64,
    /// Insertion probability per candidate gap per second, 1/s.
    pub insert_prob_per_s: f64,
    /// Interval between removal checks, s.
    pub removal_period: f64,
    /// Vehicle count the removal rule relaxes toward. Zero means "use the
    /// configured platoon size".
    pub target_count: usize,
}

impl Default for LaneChangeParams {
    fn default() -> Self {
        Self {
            gap_threshold: 40.0,
            insert_prob_per_s: 0.05,
            removal_period: 30.0,
            target_count: 0,
        }
    }
}

/// Full configuration of one simulation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Number of following vehicles.
    pub platoon_size: usize,
    /// Step size, s.
    pub dt: f64,
    /// AV penetration rate, percent of the platoon.
    pub penetration: f64,
    /// Run seed; every random draw derives from it.
    pub seed: u64,
    /// Vehicle length, m (bumper-to-bumper gaps subtract this).
    pub vehicle_length: f64,
    pub controller: ControllerParams,
    pub idm: IdmParams,
    pub energy: EnergyParams,
    /// Lane-change perturbations; `None` disables them.
    pub lane_change: Option<LaneChangeParams>,
    /// Acceleration envelope used when AVs track commanded speeds, m/s^2.
    pub av_accel_bounds: [f64; 2],
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            platoon_size: 200,
            dt: 0.1,
            penetration: 4.0,
            seed: 0,
            vehicle_length: 4.5,
            controller: ControllerParams::default(),
            idm: IdmParams::default(),
            energy: EnergyParams::default(),
            lane_change: None,
            av_accel_bounds: [-3.0, 1.5],
        }
    }
}

impl SimConfig {
    /// Follower spacing between automated vehicles, or `None` when fully
    /// human. Non-integral `100/p` is rounded to the nearest spacing >= 1.
    pub fn av_spacing(&self) -> Option<usize> {
        if self.penetration <= 0.0 {
            None
        } else {
            Some(((100.0 / self.penetration).round() as usize).max(1))
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Outcome of config validation: hard violations and advisory warnings.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_runnable(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every invariant of the config; report-only, never errors.
pub fn validate_config(config: &SimConfig) -> ValidationReport {
    let mut r = ValidationReport::default();
    let mut fail = |msg: String| r.violations.push(msg);
    let not_positive = |v: f64| !v.is_finite() || v <= 0.0;

    if config.platoon_size < 1 {
        fail("platoon_size must be at least 1".into());
    }
    if not_positive(config.dt) {
        fail("dt must be positive".into());
    }
    if !(0.0..=100.0).contains(&config.penetration) {
        fail("penetration must be within [0, 100]".into());
    }
    if not_positive(config.vehicle_length) {
        fail("vehicle_length must be positive".into());
    }
    if config.av_accel_bounds[0] >= 0.0 || config.av_accel_bounds[1] <= 0.0 {
        fail("av_accel_bounds must bracket zero (a_min < 0 < a_max)".into());
    }

    let idm = &config.idm;
    for (name, v) in [
        ("idm.v0", idm.v0),
        ("idm.t_headway", idm.t_headway),
        ("idm.a", idm.a),
        ("idm.b", idm.b),
        ("idm.s0", idm.s0),
    ] {
        if not_positive(v) {
            fail(format!("{name} must be positive"));
        }
    }
    if idm.noise_std < 0.0 {
        fail("idm.noise_std must be non-negative".into());
    }

    let c = &config.controller;
    for (name, v) in [
        ("controller.kp", c.kp),
        ("controller.kd", c.kd),
        ("controller.h_des", c.h_des),
        ("controller.w", c.w),
        ("controller.s_min", c.s_min),
        ("controller.h_min", c.h_min),
        ("controller.tau_s", c.tau_s),
    ] {
        if not_positive(v) {
            fail(format!("{name} must be positive"));
        }
    }
    if c.h_min >= c.h_des {
        fail("controller.h_min must be smaller than controller.h_des".into());
    }

    if config.energy.beta < 0.0 {
        fail("energy.beta must be non-negative".into());
    }
    if not_positive(config.energy.grams_per_gallon) {
        fail("energy.grams_per_gallon must be positive".into());
    }

    if let Some(lc) = &config.lane_change {
        for (name, v) in [
            ("lane_change.gap_threshold", lc.gap_threshold),
            ("lane_change.insert_prob_per_s", lc.insert_prob_per_s),
            ("lane_change.removal_period", lc.removal_period),
        ] {
            if not_positive(v) {
                r.violations.push(format!("{name} must be positive"));
            }
        }
    }

    if config.penetration > 0.0 {
        let exact = 100.0 / config.penetration;
        if (exact - exact.round()).abs() > 1e-9 {
            r.warnings.push(format!(
                "100/p not integral; AV spacing rounded to {}",
                config.av_spacing().unwrap()
            ));
        }
    }

    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tables_match_published_values() {
        let idm = IdmParams::default();
        assert_eq!(
            (idm.v0, idm.t_headway, idm.a, idm.b, idm.delta, idm.s0, idm.noise_std),
            (45.0, 1.0, 1.3, 2.0, 4.0, 2.0, 0.3)
        );

        let c = ControllerParams::default();
        assert_eq!(
            (c.kp, c.kd, c.h_des, c.w, c.s_min, c.h_min, c.tau_s),
            (2.0, 0.5, 2.0, 3000.0, 5.0, 0.5, 5.0)
        );

        let e = EnergyParams::default();
        assert_eq!(e.c0, 0.14631965);
        assert_eq!(e.c1, 0.01217904);
        assert_eq!(e.c2, 0.0);
        assert_eq!(e.c3, 0.00002743);
        assert_eq!(e.p0, 0.04553801);
        assert_eq!(e.p1, 0.04743683);
        assert_eq!(e.p2, 0.00180224);
        assert_eq!(e.q0, 0.0);
        assert_eq!(e.q1, 0.02609037);
        assert_eq!(e.beta, 0.01311175);
        assert_eq!(e.grade, 0.0);
    }

    #[test]
    fn default_config_is_runnable() {
        let report = validate_config(&SimConfig::default());
        assert!(report.is_runnable(), "{:?}", report.violations);
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn zero_dt_is_a_violation() {
        let cfg = SimConfig {
            dt: 0.0,
            ..SimConfig::default()
        };
        let report = validate_config(&cfg);
        assert!(report.violations.iter().any(|v| v.contains("dt must be positive")));
    }

    #[test]
    fn non_integral_penetration_warns_and_rounds() {
        let cfg = SimConfig {
            penetration: 3.0,
            ..SimConfig::default()
        };
        let report = validate_config(&cfg);
        assert!(report.is_runnable());
        assert_eq!(cfg.av_spacing(), Some(33));
        assert!(report
            .warnings
            .iter()
            .any(|w| w.contains("AV spacing rounded to 33")));
    }

    #[test]
    fn toml_round_trip_is_identity() {
        let cfg = SimConfig {
            seed: 123456789,
            lane_change: Some(LaneChangeParams::default()),
            ..SimConfig::default()
        };
        let text = cfg.to_toml_string();
        let back = SimConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn av_spacing_for_paper_penetration() {
        let cfg = SimConfig::default();
        assert_eq!(cfg.av_spacing(), Some(25));
        let p0 = SimConfig {
            penetration: 0.0,
            ..SimConfig::default()
        };
        assert_eq!(p0.av_spacing(), None);
    }
}
