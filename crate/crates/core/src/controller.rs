//! Tracking errors, the sliding-mode voltage law, region gating and the
//! desired cadence trajectory.

use serde::{Deserialize, Serialize};

use crate::dynamics::CrankState;
use crate::kinematics::{Region, RegionMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    /// 1/s.
    pub alpha: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    /// Stimulation threshold on `-B_k`.
    pub epsilon: f64,
    /// Replaces `sgn(e2)` with `tanh(e2 / phi)` when set. Not covered by the
    /// certificate.
    #[serde(default)]
    pub boundary_layer: Option<f64>,
}

impl ControllerGains {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("k1", self.k1),
            ("k2", self.k2),
            ("k3", self.k3),
            ("k4", self.k4),
            ("epsilon", self.epsilon),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("gain {name} must be finite and >= 0, got {v}"));
            }
        }
        if self.alpha <= 0.0 {
            return Err(format!("alpha must be > 0, got {}", self.alpha));
        }
        if let Some(phi) = self.boundary_layer {
            if !(phi.is_finite() && phi > 0.0) {
                return Err(format!("boundary layer width must be > 0, got {phi}"));
            }
        }
        Ok(())
    }

    /// Robust gain `k2 + k3 |z| + k4 |z|^2`.
    pub fn robust_gain(&self, z_norm: f64) -> f64 {
        self.k2 + self.k3 * z_norm + self.k4 * z_norm * z_norm
    }
}

/// Exponential approach from rest to a constant cadence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    /// rad/s.
    pub cadence_target: f64,
    /// 1/s.
    pub ramp_rate: f64,
    pub t_start: f64,
    pub q_start: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            cadence_target: 3.665,
            ramp_rate: 1.0,
            t_start: 0.0,
            q_start: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesiredState {
    pub q: f64,
    pub q_dot: f64,
    pub q_ddot: f64,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.cadence_target.is_finite() && self.cadence_target > 0.0) {
            return Err(format!("cadence_target must be > 0, got {}", self.cadence_target));
        }
        if !(self.ramp_rate.is_finite() && self.ramp_rate > 0.0) {
            return Err(format!("ramp_rate must be > 0, got {}", self.ramp_rate));
        }
        if !(self.t_start.is_finite() && self.q_start.is_finite()) {
            return Err("t_start and q_start must be finite".into());
        }
        Ok(())
    }

    /// `q_d`, `q_d'`, `q_d''` at `t` (clamped to `t_start` from below).
    pub fn desired(&self, t: f64) -> DesiredState {
        let w = self.cadence_target;
        let r = self.ramp_rate;
        let tau = (t - self.t_start).max(0.0);
        let em1 = (-r * tau).exp_m1();
        DesiredState {
            q: self.q_start + w * (r * tau + em1) / r,
            q_dot: -w * em1,
            q_ddot: w * r * (-r * tau).exp(),
        }
    }

    /// `sup_t q_d'`.
    pub fn max_velocity(&self) -> f64 {
        self.cadence_target
    }

    /// `sup_t |q_d''|`.
    pub fn max_acceleration(&self) -> f64 {
        self.cadence_target * self.ramp_rate
    }
}

/// Tracking errors `e1 = q_d - q`, `e2 = e1' + alpha e1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorState {
    pub e1: f64,
    pub e2: f64,
    pub z_norm: f64,
}

impl ErrorState {
    pub fn new(e1: f64, e2: f64) -> Self {
        ErrorState { e1, e2, z_norm: e1.hypot(e2) }
    }

    /// `e1' = e2 - alpha e1`.
    pub fn e1_dot(&self, alpha: f64) -> f64 {
        self.e2 - alpha * self.e1
    }
}

pub fn tracking_errors(state: &CrankState, desired: &DesiredState, alpha: f64) -> ErrorState {
    let e1 = desired.q - state.q;
    let e2 = (desired.q_dot - state.q_dot) + alpha * e1;
    ErrorState::new(e1, e2)
}

/// `sgn` with `sgn(0) = 0`.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `v = -k1 e2 - (k2 + k3 |z| + k4 |z|^2) sgn(e2)`.
pub fn control_voltage(gains: &ControllerGains, errors: &ErrorState) -> f64 {
    let s = match gains.boundary_layer {
        Some(phi) => (errors.e2 / phi).tanh(),
        None => sgn(errors.e2),
    };
    control_voltage_with_sign(gains, errors, s)
}

/// Voltage law with an explicit selection `s` from the sign set of `e2`.
pub fn control_voltage_with_sign(gains: &ControllerGains, errors: &ErrorState, s: f64) -> f64 {
    -gains.k1 * errors.e2 - gains.robust_gain(errors.z_norm) * s
}

/// Routes `v` to the side whose region contains `q`.
pub fn switched_input(regions: &RegionMap, q: f64, v: f64) -> (f64, f64) {
    gate(regions.region_at(q), v)
}

/// Routes `v` according to an already-classified region.
pub fn gate(region: Region, v: f64) -> (f64, f64) {
    match region {
        Region::Right => (v, 0.0),
        Region::Left => (0.0, v),
        Region::Uncontrolled => (0.0, 0.0),
    }
}

/// Stimulator output range. Unbounded by default; `v_min = 0` models a
/// stimulator that cannot deliver negative voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorLimits {
    pub v_min: f64,
    pub v_max: f64,
}

impl Default for ActuatorLimits {
    fn default() -> Self {
        ActuatorLimits {
            v_min: f64::NEG_INFINITY,
            v_max: f64::INFINITY,
        }
    }
}

impl ActuatorLimits {
    pub fn validate(&self) -> Result<(), String> {
        if self.v_min.is_nan() || self.v_max.is_nan() || self.v_min > self.v_max {
            return Err(format!(
                "actuator limits must satisfy v_min <= v_max, got [{}, {}]",
                self.v_min, self.v_max
            ));
        }
        Ok(())
    }

    pub fn is_unbounded(&self) -> bool {
        self.v_min == f64::NEG_INFINITY && self.v_max == f64::INFINITY
    }

    /// Clamped voltage and whether clamping occurred.
    pub fn apply(&self, v: f64) -> (f64, bool) {
        let c = v.clamp(self.v_min, self.v_max);
        (c, c != v)
    }
}

/// Affine voltage-to-pulse-width map, saturating at `max_width_us`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseWidthMap {
    pub us_per_volt: f64,
    pub offset_us: f64,
    pub max_width_us: f64,
}

impl Default for PulseWidthMap {
    fn default() -> Self {
        PulseWidthMap {
            us_per_volt: 1.0,
            offset_us: 0.0,
            max_width_us: 400.0,
        }
    }
}

impl PulseWidthMap {
    /// Pulse width for a stimulation magnitude `|v|`.
    pub fn width(&self, v: f64) -> f64 {
        if v == 0.0 {
            return 0.0;
        }
        (self.offset_us + self.us_per_volt * v.abs()).clamp(0.0, self.max_width_us)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::RiderGeometry;
    use proptest::prelude::*;

    fn low_gains(eps: f64) -> ControllerGains {
        ControllerGains {
            alpha: 7.0,
            k1: 10.0,
            k2: 0.1,
            k3: 0.1,
            k4: 0.1,
            epsilon: eps,
            boundary_layer: None,
        }
    }

    #[test]
    fn trajectory_starts_at_rest() {
        let spec = TrajectorySpec { q_start: 0.7, t_start: 2.0, ..TrajectorySpec::default() };
        let d = spec.desired(2.0);
        assert_eq!(d.q_dot, 0.0);
        assert_eq!(d.q, 0.7);
        assert!((d.q_ddot - 3.665).abs() < 1e-15);
    }

    #[test]
    fn trajectory_approaches_35_rpm() {
        let spec = TrajectorySpec::default();
        let d = spec.desired(60.0);
        assert!((d.q_dot - 3.665).abs() < 1e-12);
        assert!((d.q_dot * 60.0 / std::f64::consts::TAU - 35.0).abs() < 0.01);
    }

    #[test]
    fn trajectory_derivatives_consistent() {
        let spec = TrajectorySpec { ramp_rate: 1.7, ..TrajectorySpec::default() };
        let h = 1e-6;
        for i in 0..200 {
            let t = 0.01 + i as f64 * 0.05;
            let d = spec.desired(t);
            let fd_q = (spec.desired(t + h).q - spec.desired(t - h).q) / (2.0 * h);
            let fd_v = (spec.desired(t + h).q_dot - spec.desired(t - h).q_dot) / (2.0 * h);
            assert!((fd_q - d.q_dot).abs() < 1e-8, "{t}");
            assert!((fd_v - d.q_ddot).abs() < 1e-7, "{t}");
        }
    }

    #[test]
    fn error_examples() {
        let s = CrankState { q: 1.0, q_dot: 2.0, t: 0.0 };
        let d = DesiredState { q: 1.0, q_dot: 2.0, q_ddot: 0.0 };
        let e = tracking_errors(&s, &d, 7.0);
        assert_eq!((e.e1, e.e2, e.z_norm), (0.0, 0.0, 0.0));
        // e1 = 1, e1' = -alpha gives e2 = 0.
        let d = DesiredState { q: 2.0, q_dot: 2.0 - 7.0, q_ddot: 0.0 };
        let e = tracking_errors(&s, &d, 7.0);
        assert_eq!(e.e1, 1.0);
        assert_eq!(e.e2, 0.0);
    }

    #[test]
    fn voltage_examples() {
        let g = low_gains(0.27);
        assert_eq!(control_voltage(&g, &ErrorState::new(0.0, 0.0)), 0.0);
        let v = control_voltage(&g, &ErrorState::new(0.0, -0.5));
        assert!((v - 5.175).abs() < 1e-12);
        assert!(control_voltage(&g, &ErrorState::new(0.3, 0.2)) < 0.0);
        assert!(control_voltage(&g, &ErrorState::new(0.3, -0.2)) > 0.0);
    }

    #[test]
    fn boundary_layer_is_continuous() {
        let g = ControllerGains { boundary_layer: Some(0.01), ..low_gains(0.27) };
        let a = control_voltage(&g, &ErrorState::new(0.0, 1e-9));
        let b = control_voltage(&g, &ErrorState::new(0.0, -1e-9));
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn gating_examples() {
        let geom = RiderGeometry::new(0.40, 0.43, 0.17, 0.60, 0.12).unwrap();
        let eps = 0.5 * geom.max_abs_torque_ratio();
        let m = geom.stimulation_regions(eps).unwrap();
        let q_r = m.right[0].start + 0.5 * m.right[0].len;
        assert_eq!(switched_input(&m, q_r, 3.0), (3.0, 0.0));
        let q_u = m.dead_points[0];
        assert_eq!(switched_input(&m, q_u, 3.0), (0.0, 0.0));
    }

    #[test]
    fn saturation() {
        let lim = ActuatorLimits { v_min: 0.0, v_max: 10.0 };
        assert_eq!(lim.apply(-2.0), (0.0, true));
        assert_eq!(lim.apply(4.0), (4.0, false));
        assert_eq!(lim.apply(11.0), (10.0, true));
        assert_eq!(ActuatorLimits::default().apply(-1e9), (-1e9, false));
    }

    #[test]
    fn pulse_width_saturates() {
        let m = PulseWidthMap { us_per_volt: 20.0, offset_us: 50.0, max_width_us: 400.0 };
        assert_eq!(m.width(0.0), 0.0);
        assert_eq!(m.width(5.0), 150.0);
        assert_eq!(m.width(-5.0), 150.0);
        assert_eq!(m.width(100.0), 400.0);
    }

    proptest! {
        #[test]
        fn voltage_bounded(e1 in -10.0f64..10.0, e2 in -10.0f64..10.0,
                           k1 in 0.0f64..50.0, k2 in 0.0f64..5.0, k3 in 0.0f64..5.0, k4 in 0.0f64..5.0) {
            let g = ControllerGains { alpha: 1.0, k1, k2, k3, k4, epsilon: 0.1, boundary_layer: None };
            let e = ErrorState::new(e1, e2);
            let v = control_voltage(&g, &e);
            let bound = k1 * e2.abs() + k2 + k3 * e.z_norm + k4 * e.z_norm * e.z_norm;
            prop_assert!(v.abs() <= bound * (1.0 + 1e-12) + 1e-300);
            if e2 != 0.0 {
                prop_assert!(v * e2 <= 0.0);
            }
        }

        #[test]
        fn z_norm_definition(e1 in -1e3f64..1e3, e2 in -1e3f64..1e3) {
            let e = ErrorState::new(e1, e2);
            let rel = (e.z_norm * e.z_norm - (e1 * e1 + e2 * e2)).abs() / (1.0 + e1 * e1 + e2 * e2);
            prop_assert!(rel < 1e-14);
        }

        #[test]
        fn trajectory_monotone(t in 0.0f64..100.0, dt in 1e-6f64..10.0, r in 0.1f64..5.0, w in 0.1f64..10.0) {
            let spec = TrajectorySpec { cadence_target: w, ramp_rate: r, t_start: 0.0, q_start: 0.0 };
            let a = spec.desired(t);
            let b = spec.desired(t + dt);
            prop_assert!(a.q_dot >= 0.0);
            prop_assert!(b.q_dot >= a.q_dot);
            prop_assert!(b.q > a.q);
        }
    }
}
