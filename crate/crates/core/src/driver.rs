//! Per-step driving logic: the IDM human model and the two-layer AV
//! controller (speed synchronization, gap regulation, safety filter).
//!
//! Everything here is a pure function of its arguments; the simulation
//! engine supplies observations and integrates the results.

use crate::config::{ControllerParams, IdmParams};
use crate::error::Result;
use crate::field::SpeedField;

/// Speed floor used when converting a space gap to a time gap, m/s.
pub const TIME_GAP_SPEED_FLOOR: f64 = 0.1;
/// Cap on reported time gaps, s. A stopped vehicle with open road ahead
/// reads the macroscopic field rather than an infinite headway.
pub const TIME_GAP_CAP: f64 = 100.0;

/// What a vehicle can see about itself and its immediate leader.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MicroObservation {
    /// Ego speed, m/s.
    pub v: f64,
    /// Leader speed, m/s.
    pub v_lead: f64,
    /// Leader acceleration, m/s^2 (backward difference of leader speed).
    pub a_lead: f64,
    /// Bumper-to-bumper space gap, m.
    pub gap: f64,
}

impl MicroObservation {
    /// Time gap `gap / v`, with the low-speed floor and the cap applied.
    pub fn time_gap(&self) -> f64 {
        (self.gap / self.v.max(TIME_GAP_SPEED_FLOOR)).clamp(0.0, TIME_GAP_CAP)
    }
}

/// IDM desired space gap `s* = s0 + max(0, v T + v dv / (2 sqrt(a b)))`.
///
/// `dv` is the approach rate `v - v_lead` (positive when closing in).
pub fn idm_desired_gap(v: f64, dv: f64, p: &IdmParams) -> f64 {
    p.s0 + (v * p.t_headway + v * dv / (2.0 * (p.a * p.b).sqrt())).max(0.0)
}

/// IDM acceleration with an externally sampled noise term.
///
/// Panics on a non-positive gap: that is a collision state the engine must
/// have caught already.
pub fn idm_accel(obs: &MicroObservation, p: &IdmParams, eps: f64) -> f64 {
    assert!(
        obs.gap > 0.0,
        "IDM evaluated at non-positive gap {} (collision state)",
        obs.gap
    );
    let dv = obs.v - obs.v_lead;
    let s_star = idm_desired_gap(obs.v, dv, p);
    p.a * (1.0 - (obs.v / p.v0).powf(p.delta) - (s_star / obs.gap).powi(2)) + eps
}

/// Windowed mean of the interpolated field over `[x, x + w]`: the
/// macroscopic speed target of the upper layer.
pub fn kernel_average_speed(field: &SpeedField, x: f64, t: f64, w: f64) -> Result<f64> {
    field.kernel_average(x, t, w)
}

/// Blend ego speed and the macroscopic average by time gap: ego speed below
/// 1 s, the field average above 2 s, linear in between.
pub fn blend_desired_speed(v: f64, time_gap: f64, v_avg: f64) -> f64 {
    if time_gap < 1.0 {
        v
    } else if time_gap <= 2.0 {
        (2.0 - time_gap) * v + (time_gap - 1.0) * v_avg
    } else {
        v_avg
    }
}

/// Safety filter: the largest speed that keeps at least `s_min` of space and
/// `h_min` of time gap over the decision horizon, assuming the leader holds
/// its current acceleration. Clamped below at zero.
pub fn safety_speed(obs: &MicroObservation, p: &ControllerParams) -> f64 {
    let numerator = obs.gap - p.s_min
        + obs.v_lead * p.tau_s
        + 0.5 * obs.a_lead * p.tau_s * p.tau_s
        - 0.5 * obs.v * p.tau_s;
    (numerator / (p.h_min + 0.5 * p.tau_s)).max(0.0)
}

/// Full commanded speed: blended desired speed plus PD gap regulation,
/// bounded by the safety filter and clamped at zero.
pub fn command_speed(obs: &MicroObservation, v_avg: f64, p: &ControllerParams) -> f64 {
    let h = obs.time_gap();
    let v_des = blend_desired_speed(obs.v, h, v_avg);
    let regulated = v_des + p.kp * (h - p.h_des) + p.kd * (obs.v_lead - obs.v);
    regulated.min(safety_speed(obs, p)).max(0.0)
}

/// Acceleration that tracks a commanded speed within one step, clipped to
/// the vehicle's envelope.
pub fn track_speed(v_current: f64, v_command: f64, dt: f64, bounds: [f64; 2]) -> f64 {
    assert!(dt > 0.0);
    ((v_command - v_current) / dt).clamp(bounds[0], bounds[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn table_idm() -> IdmParams {
        IdmParams::default()
    }

    fn table_controller() -> ControllerParams {
        ControllerParams::default()
    }

    // independent recomputation of the desired-gap formula
    fn desired_gap_oracle(v: f64, dv: f64, p: &IdmParams) -> f64 {
        p.s0 + f64::max(0.0, v * p.t_headway + v * dv / (2.0 * (p.a * p.b).sqrt()))
    }

    #[test]
    fn desired_gap_at_standstill_is_jam_gap() {
        assert_relative_eq!(idm_desired_gap(0.0, 0.0, &table_idm()), 2.0);
    }

    #[test]
    fn desired_gap_at_steady_speed() {
        assert_relative_eq!(idm_desired_gap(30.0, 0.0, &table_idm()), 32.0);
    }

    #[test]
    fn desired_gap_with_opening_leader_matches_oracle() {
        // dv = v - v_lead = -10: leader pulling away
        let p = table_idm();
        let got = idm_desired_gap(30.0, -10.0, &p);
        assert_relative_eq!(got, desired_gap_oracle(30.0, -10.0, &p), epsilon = 1e-12);
        assert!(got >= p.s0);
    }

    #[test]
    fn idm_standstill_equilibrium() {
        let obs = MicroObservation {
            v: 0.0,
            v_lead: 0.0,
            a_lead: 0.0,
            gap: 2.0,
        };
        let a = idm_accel(&obs, &table_idm(), 0.0);
        assert_relative_eq!(a, -1.3 * 0.0_f64.max(0.0), epsilon = 1e-12);
        assert_relative_eq!(a, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn idm_accel_matches_hand_value() {
        let obs = MicroObservation {
            v: 30.0,
            v_lead: 30.0,
            a_lead: 0.0,
            gap: 60.0,
        };
        // 1.3 * (1 - (30/45)^4 - (32/60)^2)
        let expect = 1.3 * (1.0 - (30.0_f64 / 45.0).powi(4) - (32.0_f64 / 60.0).powi(2));
        assert_relative_eq!(idm_accel(&obs, &table_idm(), 0.0), expect, epsilon = 1e-12);
        assert!((expect - 0.673).abs() < 1e-2);
    }

    #[test]
    fn idm_equilibrium_gap_found_by_bisection() {
        // bisection oracle on the zero of the acceleration in the gap
        let p = table_idm();
        let accel_at = |s: f64| {
            idm_accel(
                &MicroObservation {
                    v: 30.0,
                    v_lead: 30.0,
                    a_lead: 0.0,
                    gap: s,
                },
                &p,
                0.0,
            )
        };
        let (mut lo, mut hi) = (10.0, 200.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if accel_at(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s_eq = 0.5 * (lo + hi);
        // closed form: s* / sqrt(1 - (v/v0)^delta)
        let expect = 32.0 / (1.0 - (30.0_f64 / 45.0).powi(4)).sqrt();
        assert_relative_eq!(s_eq, expect, epsilon = 1e-6);
        assert!((s_eq - 35.72).abs() < 0.01);
        assert!(accel_at(s_eq).abs() < 1e-6);
    }

    #[test]
    #[should_panic(expected = "collision state")]
    fn idm_panics_on_non_positive_gap() {
        let obs = MicroObservation {
            v: 10.0,
            v_lead: 10.0,
            a_lead: 0.0,
            gap: 0.0,
        };
        idm_accel(&obs, &table_idm(), 0.0);
    }

    #[test]
    fn blend_branches() {
        assert_relative_eq!(blend_desired_speed(20.0, 0.5, 30.0), 20.0);
        assert_relative_eq!(blend_desired_speed(20.0, 1.5, 30.0), 25.0);
        assert_relative_eq!(blend_desired_speed(20.0, 3.0, 30.0), 30.0);
    }

    #[test]
    fn blend_is_continuous_at_the_seams() {
        for h in [1.0, 2.0] {
            let lo = blend_desired_speed(20.0, h - 1e-9, 30.0);
            let hi = blend_desired_speed(20.0, h + 1e-9, 30.0);
            let at = blend_desired_speed(20.0, h, 30.0);
            assert!((lo - at).abs() < 1e-6);
            assert!((hi - at).abs() < 1e-6);
        }
    }

    #[test]
    fn safety_speed_examples() {
        let p = table_controller();
        let at = |gap, v_lead, a_lead, v| {
            safety_speed(
                &MicroObservation {
                    v,
                    v_lead,
                    a_lead,
                    gap,
                },
                &p,
            )
        };
        // standstill at minimum gap permits no speed
        assert_relative_eq!(at(5.0, 0.0, 0.0, 0.0), 0.0);
        // (50 - 5 + 100 - 50) / 3
        assert_relative_eq!(at(50.0, 20.0, 0.0, 20.0), 95.0 / 3.0, epsilon = 1e-12);
        // decelerating leader slashes the allowed speed
        assert_relative_eq!(at(20.0, 10.0, -2.0, 15.0), 2.5 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn command_speed_composes_the_layers() {
        let p = table_controller();
        let obs = MicroObservation {
            v: 20.0,
            v_lead: 22.0,
            a_lead: 0.0,
            gap: 50.0,
        };
        // h = 50/20 = 2.5 > 2 so v_des = v_avg = 27; pd adds 2*(2.5-2) + 0.5*2 = 2
        let v_fs = safety_speed(&obs, &p);
        let expect = f64::min(29.0, v_fs).max(0.0);
        assert_relative_eq!(command_speed(&obs, 27.0, &p), expect, epsilon = 1e-12);
    }

    #[test]
    fn command_speed_clamps_at_zero() {
        let p = table_controller();
        // leader far and slow, huge negative speed correction
        let obs = MicroObservation {
            v: 30.0,
            v_lead: 0.0,
            a_lead: 0.0,
            gap: 31.0,
        };
        // v_des small via blend, kd * (0 - 30) = -15 drives it negative
        let v = command_speed(&obs, 0.1, &p);
        assert!(v >= 0.0);
    }

    #[test]
    fn command_speed_zero_when_safety_forbids_motion() {
        let p = table_controller();
        let obs = MicroObservation {
            v: 0.0,
            v_lead: 0.0,
            a_lead: 0.0,
            gap: 5.0,
        };
        assert_relative_eq!(command_speed(&obs, 30.0, &p), 0.0);
    }

    #[test]
    fn track_speed_examples() {
        assert_relative_eq!(track_speed(20.0, 20.0, 0.1, [-3.0, 1.5]), 0.0);
        assert_relative_eq!(track_speed(20.0, 30.0, 0.1, [-3.0, 1.5]), 1.5);
        assert_relative_eq!(track_speed(20.0, 0.0, 0.1, [-3.0, 1.5]), -3.0);
    }

    #[test]
    fn time_gap_floor_and_cap() {
        let slow = MicroObservation {
            v: 0.0,
            v_lead: 0.0,
            a_lead: 0.0,
            gap: 5.0,
        };
        assert_relative_eq!(slow.time_gap(), 50.0);
        let open = MicroObservation {
            v: 0.01,
            v_lead: 0.0,
            a_lead: 0.0,
            gap: 1e5,
        };
        assert_relative_eq!(open.time_gap(), TIME_GAP_CAP);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn command_speed_within_safety_bound(
            v in 0.0..40.0f64,
            v_lead in 0.0..40.0f64,
            a_lead in -5.0..3.0f64,
            gap in 0.1..300.0f64,
            v_avg in 0.0..40.0f64,
        ) {
            let p = ControllerParams::default();
            let obs = MicroObservation { v, v_lead, a_lead, gap };
            let vc = command_speed(&obs, v_avg, &p);
            let vfs = safety_speed(&obs, &p);
            prop_assert!(vc >= 0.0);
            prop_assert!(vc <= vfs.max(0.0) + 1e-12);
        }

        #[test]
        fn safety_speed_monotonicity(
            v in 0.0..40.0f64,
            v_lead in 0.0..40.0f64,
            a_lead in -5.0..3.0f64,
            gap in 0.1..300.0f64,
            bump in 0.01..50.0f64,
        ) {
            let p = ControllerParams::default();
            let base = safety_speed(&MicroObservation { v, v_lead, a_lead, gap }, &p);
            let wider = safety_speed(&MicroObservation { v, v_lead, a_lead, gap: gap + bump }, &p);
            let faster_lead = safety_speed(
                &MicroObservation { v, v_lead: v_lead + bump, a_lead, gap }, &p);
            let faster_ego = safety_speed(
                &MicroObservation { v: v + bump, v_lead, a_lead, gap }, &p);
            prop_assert!(wider >= base - 1e-12);
            prop_assert!(faster_lead >= base - 1e-12);
            prop_assert!(faster_ego <= base + 1e-12);
        }

        #[test]
        fn blend_is_homogeneous(
            v in 0.0..40.0f64,
            h in 0.0..5.0f64,
            v_avg in 0.0..40.0f64,
            c in 0.01..10.0f64,
        ) {
            let a = blend_desired_speed(c * v, h, c * v_avg);
            let b = c * blend_desired_speed(v, h, v_avg);
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()));
        }

        #[test]
        fn idm_matches_analytic_formula(
            v in 0.0..45.0f64,
            v_lead in 0.0..45.0f64,
            gap in 0.5..300.0f64,
        ) {
            let p = IdmParams::default();
            let obs = MicroObservation { v, v_lead, a_lead: 0.0, gap };
            let got = idm_accel(&obs, &p, 0.0);
            let dv = v - v_lead;
            let s_star = desired_gap_oracle(v, dv, &p);
            let expect = p.a * (1.0 - (v / p.v0).powi(4) - (s_star / gap).powi(2));
            prop_assert!((got - expect).abs() < 1e-12 * (1.0 + expect.abs()));
        }
    }
}
