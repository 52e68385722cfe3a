//! Single-degree-of-freedom cycle-rider model
//! `M q'' + V q' + G + tau_d - tau_b - P = sum_s B_s Omega_s u_s`
//! and extraction of its bounding constants.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{KinematicsError, RiderGeometry, Side};
use crate::numeric::periodic_max;

const EXTREMUM_GRID: usize = 4096;
const VERIFY_SAMPLES: usize = 100_000;
/// Relative inflation applied to extremized constants so that they bound
/// every floating-point evaluation.
const CERT_INFLATION: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("invalid dynamics parameter: {0}")]
    Config(String),
    #[error("property verification failed: {0}")]
    VerificationFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MuscleModel {
    /// `Omega = Omega_0`.
    #[default]
    Constant,
    /// `Omega = clamp(Omega_0 (0.5 + 0.5 sin q_k), c_Omega1, c_Omega2)`.
    TorqueAngle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    /// kg per side.
    pub thigh_mass: f64,
    pub shank_mass: f64,
    /// COM position along the segment from its proximal joint, fraction.
    pub thigh_com_ratio: f64,
    pub shank_com_ratio: f64,
    /// kg m^2 about the segment COM.
    pub thigh_inertia: f64,
    pub shank_inertia: f64,
    /// kg m^2 about the crank axis.
    pub flywheel_inertia: f64,
    /// N m s/rad.
    pub crank_damping: f64,
    /// `p1`, N m.
    pub visco_static: f64,
    /// `p2`, N m s/rad.
    pub visco_viscous: f64,
    pub muscle_model: MuscleModel,
    /// N m/V.
    pub omega_const: f64,
    pub omega_bounds: (f64, f64),
    /// N m.
    pub disturbance_amplitude: f64,
    /// rad/s.
    pub disturbance_frequency: f64,
    pub gravity: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        DynamicsParams {
            thigh_mass: 8.0,
            shank_mass: 4.5,
            thigh_com_ratio: 0.43,
            shank_com_ratio: 0.43,
            thigh_inertia: 0.12,
            shank_inertia: 0.06,
            flywheel_inertia: 0.8,
            crank_damping: 0.3,
            visco_static: 1.0,
            visco_viscous: 0.15,
            muscle_model: MuscleModel::Constant,
            omega_const: 1.0,
            omega_bounds: (0.5, 2.0),
            disturbance_amplitude: 0.5,
            disturbance_frequency: 1.0,
            gravity: 9.81,
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        let nonneg = [
            ("thigh_mass", self.thigh_mass),
            ("shank_mass", self.shank_mass),
            ("thigh_inertia", self.thigh_inertia),
            ("shank_inertia", self.shank_inertia),
            ("visco_static", self.visco_static),
            ("visco_viscous", self.visco_viscous),
            ("disturbance_amplitude", self.disturbance_amplitude),
            ("gravity", self.gravity),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return err(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [("flywheel_inertia", self.flywheel_inertia), ("crank_damping", self.crank_damping)] {
            if !(v.is_finite() && v > 0.0) {
                return err(format!("{name} must be > 0, got {v}"));
            }
        }
        for (name, v) in [("thigh_com_ratio", self.thigh_com_ratio), ("shank_com_ratio", self.shank_com_ratio)] {
            if !(v > 0.0 && v < 1.0) {
                return err(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !self.disturbance_frequency.is_finite() {
            return err("disturbance_frequency must be finite".into());
        }
        let (lo, hi) = self.omega_bounds;
        if !(lo > 0.0 && lo <= self.omega_const && self.omega_const <= hi && hi.is_finite()) {
            return err(format!(
                "muscle gain bounds must satisfy 0 < c_Omega1 <= Omega_0 <= c_Omega2, got ({lo}, {}, {hi})",
                self.omega_const
            ));
        }
        Ok(())
    }
}

/// Crank state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrankState {
    pub q: f64,
    pub q_dot: f64,
    pub t: f64,
}

/// Passive joint and crank torques at a given speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassiveTorque {
    /// Viscoelastic joint torque `P`.
    pub p: f64,
    /// Crank damping `tau_b`.
    pub tau_b: f64,
}

/// Position-dependent inertial and gravitational terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassTerms {
    pub inertia: f64,
    pub inertia_slope: f64,
    pub gravity_torque: f64,
    pub potential: f64,
}

/// Bounding constants of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyConstants {
    pub c_m: f64,
    pub c_big_m: f64,
    pub c_v: f64,
    pub c_g: f64,
    pub c_d: f64,
    pub c_b: f64,
    pub c_p1: f64,
    pub c_p2: f64,
    pub c_omega1: f64,
    pub c_omega2: f64,
}

/// Validated geometry plus dynamics parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rider {
    geometry: RiderGeometry,
    params: DynamicsParams,
}

impl Rider {
    pub fn new(geometry: RiderGeometry, params: DynamicsParams) -> Result<Self, ModelError> {
        geometry.validate()?;
        params.validate()?;
        Ok(Rider { geometry, params })
    }

    pub fn geometry(&self) -> &RiderGeometry {
        &self.geometry
    }

    pub fn params(&self) -> &DynamicsParams {
        &self.params
    }

    /// `M`, `dM/dq`, `G` and the potential in one pass over both legs.
    pub fn mass_terms(&self, q: f64) -> MassTerms {
        let p = &self.params;
        let g = &self.geometry;
        let (lt, ll) = (g.thigh_length, g.shank_length);
        let (rt, rl) = (p.thigh_com_ratio * lt, p.shank_com_ratio * ll);
        let mut m = p.flywheel_inertia;
        let mut dm = 0.0;
        let mut grav = 0.0;
        let mut pot = 0.0;
        for side in Side::BOTH {
            // Closure holds everywhere for a validated geometry.
            let Ok(leg) = g.leg(q, side) else { continue };
            let (st, ct) = leg.thigh_angle.sin_cos();
            let (ss, cs) = leg.shank_angle.sin_cos();
            let (w_t, a_t) = (leg.thigh_rate, leg.thigh_accel);
            let (w_s, a_s) = (leg.shank_rate, leg.shank_accel);

            // Thigh COM velocity and acceleration per unit crank rotation.
            let vt = [-rt * st * w_t, rt * ct * w_t];
            let at = [rt * (-st * a_t - ct * w_t * w_t), rt * (ct * a_t - st * w_t * w_t)];
            // Shank COM: knee motion plus rotation about the knee.
            let vs = [-lt * st * w_t - rl * ss * w_s, lt * ct * w_t + rl * cs * w_s];
            let as_ = [
                lt * (-st * a_t - ct * w_t * w_t) + rl * (-ss * a_s - cs * w_s * w_s),
                lt * (ct * a_t - st * w_t * w_t) + rl * (cs * a_s - ss * w_s * w_s),
            ];

            m += p.thigh_mass * (vt[0] * vt[0] + vt[1] * vt[1])
                + p.thigh_inertia * w_t * w_t
                + p.shank_mass * (vs[0] * vs[0] + vs[1] * vs[1])
                + p.shank_inertia * w_s * w_s;
            dm += 2.0
                * (p.thigh_mass * (vt[0] * at[0] + vt[1] * at[1])
                    + p.thigh_inertia * w_t * a_t
                    + p.shank_mass * (vs[0] * as_[0] + vs[1] * as_[1])
                    + p.shank_inertia * w_s * a_s);
            grav += p.gravity * (p.thigh_mass * vt[1] + p.shank_mass * vs[1]);
            let yt = leg.hip[1] + rt * st;
            let ys = leg.knee[1] + rl * ss;
            pot += p.gravity * (p.thigh_mass * yt + p.shank_mass * ys);
        }
        MassTerms {
            inertia: m,
            inertia_slope: dm,
            gravity_torque: grav,
            potential: pot,
        }
    }

    pub fn inertia(&self, q: f64) -> f64 {
        self.mass_terms(q).inertia
    }

    pub fn inertia_slope(&self, q: f64) -> f64 {
        self.mass_terms(q).inertia_slope
    }

    /// `V(q, q') = 0.5 M'(q) q'`.
    pub fn coriolis(&self, q: f64, q_dot: f64) -> f64 {
        0.5 * self.inertia_slope(q) * q_dot
    }

    pub fn gravity_torque(&self, q: f64) -> f64 {
        self.mass_terms(q).gravity_torque
    }

    pub fn potential(&self, q: f64) -> f64 {
        self.mass_terms(q).potential
    }

    /// `0.5 M q'^2 + U(q)`.
    pub fn energy(&self, q: f64, q_dot: f64) -> f64 {
        let mt = self.mass_terms(q);
        0.5 * mt.inertia * q_dot * q_dot + mt.potential
    }

    pub fn passive_torque(&self, q_dot: f64) -> PassiveTorque {
        let p = &self.params;
        PassiveTorque {
            p: -p.visco_static * (4.0 * q_dot).tanh() - p.visco_viscous * q_dot,
            tau_b: -p.crank_damping * q_dot,
        }
    }

    pub fn muscle_gain(&self, q: f64, side: Side) -> f64 {
        let p = &self.params;
        match p.muscle_model {
            MuscleModel::Constant => p.omega_const,
            MuscleModel::TorqueAngle => {
                let qk = self.geometry.knee_angle(q, side).unwrap_or(0.0);
                (p.omega_const * (0.5 + 0.5 * qk.sin())).clamp(p.omega_bounds.0, p.omega_bounds.1)
            }
        }
    }

    pub fn disturbance(&self, t: f64) -> f64 {
        self.disturbance_with_phase(t, 0.0)
    }

    pub fn disturbance_with_phase(&self, t: f64, phase: f64) -> f64 {
        let p = &self.params;
        p.disturbance_amplitude * (p.disturbance_frequency * t + phase).sin()
    }

    /// Crank torque delivered by the muscle inputs, `sum_s B_s Omega_s u_s`.
    pub fn muscle_torque(&self, q: f64, u_r: f64, u_l: f64) -> f64 {
        let mut tau = 0.0;
        for (side, u) in [(Side::Right, u_r), (Side::Left, u_l)] {
            if u != 0.0 {
                let b = self.geometry.torque_transfer_ratio(q, side).unwrap_or(0.0);
                tau += b * self.muscle_gain(q, side) * u;
            }
        }
        tau
    }

    /// Everything except the muscle term and the inertial acceleration:
    /// `V q' + G + tau_d - tau_b - P`.
    pub fn drift_torque(&self, mt: &MassTerms, q_dot: f64, tau_d: f64) -> f64 {
        let pt = self.passive_torque(q_dot);
        0.5 * mt.inertia_slope * q_dot * q_dot + mt.gravity_torque + tau_d - pt.tau_b - pt.p
    }

    /// `q''` for the given state and (already gated) inputs.
    pub fn forward_dynamics(&self, state: &CrankState, u_r: f64, u_l: f64) -> f64 {
        let mt = self.mass_terms(state.q);
        let drift = self.drift_torque(&mt, state.q_dot, self.disturbance(state.t));
        (self.muscle_torque(state.q, u_r, u_l) - drift) / mt.inertia
    }

    /// Extremizes every bounded quantity over the crank cycle and re-checks
    /// the result on random samples with `|q'| <= q_dot_max`.
    pub fn property_constants(&self, q_dot_max: f64) -> Result<PropertyConstants, ModelError> {
        if !(q_dot_max > 0.0 && q_dot_max.is_finite()) {
            return Err(ModelError::Config(format!("q_dot_max must be > 0, got {q_dot_max}")));
        }
        let p = &self.params;
        let up = 1.0 + CERT_INFLATION;
        let (_, m_max) = periodic_max(TAU, EXTREMUM_GRID, 1e-10, |q| self.inertia(q));
        let (_, neg_m_min) = periodic_max(TAU, EXTREMUM_GRID, 1e-10, |q| -self.inertia(q));
        let (_, dm_max) = periodic_max(TAU, EXTREMUM_GRID, 1e-10, |q| self.inertia_slope(q).abs());
        let (_, g_max) = periodic_max(TAU, EXTREMUM_GRID, 1e-10, |q| self.gravity_torque(q).abs());
        let pc = PropertyConstants {
            c_m: -neg_m_min * (1.0 - CERT_INFLATION),
            c_big_m: m_max * up,
            c_v: 0.5 * dm_max * up,
            c_g: g_max * up,
            c_d: p.disturbance_amplitude,
            c_b: self.geometry.max_abs_torque_ratio() * up,
            c_p1: p.visco_static,
            c_p2: p.visco_viscous,
            c_omega1: p.omega_bounds.0,
            c_omega2: p.omega_bounds.1,
        };
        self.verify_properties(&pc, q_dot_max, VERIFY_SAMPLES, 0x5eed)?;
        Ok(pc)
    }

    /// Random-sample check of every property inequality.
    pub fn verify_properties(
        &self,
        pc: &PropertyConstants,
        q_dot_max: f64,
        samples: usize,
        seed: u64,
    ) -> Result<(), ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fail = |what: &str, q: f64, qd: f64| {
            Err(ModelError::VerificationFailure(format!("{what} at q = {q}, q_dot = {qd}")))
        };
        if pc.c_m > pc.c_big_m {
            return fail("c_m > c_M", 0.0, 0.0);
        }
        for _ in 0..samples {
            let q = rng.gen_range(0.0..TAU);
            let qd = rng.gen_range(-q_dot_max..=q_dot_max);
            let t = rng.gen_range(0.0..1000.0);
            let mt = self.mass_terms(q);
            if mt.inertia < pc.c_m || mt.inertia > pc.c_big_m {
                return fail("inertia bound", q, qd);
            }
            if (0.5 * mt.inertia_slope * qd).abs() > pc.c_v * qd.abs() {
                return fail("Coriolis bound", q, qd);
            }
            if mt.gravity_torque.abs() > pc.c_g {
                return fail("gravity bound", q, qd);
            }
            if self.disturbance(t).abs() > pc.c_d {
                return fail("disturbance bound", q, qd);
            }
            let pt = self.passive_torque(qd);
            if pt.p.abs() > pc.c_p1 + pc.c_p2 * qd.abs() {
                return fail("viscoelastic bound", q, qd);
            }
            for side in Side::BOTH {
                let b = self.geometry.torque_transfer_ratio(q, side)?;
                if b.abs() > pc.c_b {
                    return fail("torque transfer ratio bound", q, qd);
                }
                let om = self.muscle_gain(q, side);
                if om < pc.c_omega1 || om > pc.c_omega2 {
                    return fail("muscle gain bound", q, qd);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::f64::consts::PI;

    pub(crate) fn default_rider() -> Rider {
        let g = RiderGeometry::new(0.40, 0.43, 0.17, 0.60, 0.12).unwrap();
        Rider::new(g, DynamicsParams::default()).unwrap()
    }

    fn com_positions(r: &Rider, q: f64) -> Vec<[f64; 2]> {
        let g = r.geometry();
        let p = r.params();
        let mut out = Vec::new();
        for side in Side::BOTH {
            let l = g.leg(q, side).unwrap();
            let rt = p.thigh_com_ratio;
            let rl = p.shank_com_ratio;
            out.push([
                l.hip[0] + rt * (l.knee[0] - l.hip[0]),
                l.hip[1] + rt * (l.knee[1] - l.hip[1]),
            ]);
            out.push([
                l.knee[0] + rl * (l.pedal[0] - l.knee[0]),
                l.knee[1] + rl * (l.pedal[1] - l.knee[1]),
            ]);
        }
        out
    }

    #[test]
    fn inertia_matches_finite_difference_of_com_positions() {
        let r = default_rider();
        let p = *r.params();
        let h = 1e-6;
        for i in 0..256 {
            let q = i as f64 * TAU / 256.0;
            let a = com_positions(&r, q + h);
            let b = com_positions(&r, q - h);
            let mut m = p.flywheel_inertia;
            for (k, (pa, pb)) in a.iter().zip(&b).enumerate() {
                let vx = (pa[0] - pb[0]) / (2.0 * h);
                let vy = (pa[1] - pb[1]) / (2.0 * h);
                let mass = if k % 2 == 0 { p.thigh_mass } else { p.shank_mass };
                m += mass * (vx * vx + vy * vy);
            }
            for side in Side::BOTH {
                let la = r.geometry().leg(q + h, side).unwrap();
                let lb = r.geometry().leg(q - h, side).unwrap();
                let wt = (la.thigh_angle - lb.thigh_angle) / (2.0 * h);
                let ws = (la.shank_angle - lb.shank_angle) / (2.0 * h);
                m += p.thigh_inertia * wt * wt + p.shank_inertia * ws * ws;
            }
            let closed = r.inertia(q);
            assert!(((closed - m) / closed).abs() < 1e-6, "q={q}: {closed} vs {m}");
        }
    }

    #[test]
    fn slope_and_gravity_match_finite_differences() {
        let r = default_rider();
        let h = 1e-6;
        for i in 0..256 {
            let q = i as f64 * TAU / 256.0;
            let fd_m = (r.inertia(q + h) - r.inertia(q - h)) / (2.0 * h);
            let dm = r.inertia_slope(q);
            assert!((fd_m - dm).abs() < 1e-6 * dm.abs().max(1e-2), "q={q}: {dm} vs {fd_m}");
            let fd_u = (r.potential(q + h) - r.potential(q - h)) / (2.0 * h);
            let gq = r.gravity_torque(q);
            assert!((fd_u - gq).abs() < 1e-6 * gq.abs().max(1e-2), "q={q}: {gq} vs {fd_u}");
        }
    }

    #[test]
    fn massless_legs_leave_flywheel() {
        let g = RiderGeometry::new(0.40, 0.43, 0.17, 0.60, 0.12).unwrap();
        let p = DynamicsParams {
            thigh_mass: 0.0,
            shank_mass: 0.0,
            thigh_inertia: 0.0,
            shank_inertia: 0.0,
            ..DynamicsParams::default()
        };
        let r = Rider::new(g, p).unwrap();
        for i in 0..64 {
            let q = i as f64 * 0.1;
            assert_eq!(r.inertia(q), p.flywheel_inertia);
            assert_eq!(r.gravity_torque(q), 0.0);
        }
        let pc = r.property_constants(10.0).unwrap();
        assert!((pc.c_m - p.flywheel_inertia).abs() < 1e-11);
        assert!((pc.c_big_m - p.flywheel_inertia).abs() < 1e-11);
        assert_eq!(pc.c_v, 0.0);
        assert_eq!(pc.c_g, 0.0);
    }

    #[test]
    fn zero_gravity_zero_torque() {
        let g = RiderGeometry::new(0.40, 0.43, 0.17, 0.60, 0.12).unwrap();
        let p = DynamicsParams { gravity: 0.0, ..DynamicsParams::default() };
        let r = Rider::new(g, p).unwrap();
        for i in 0..64 {
            assert_eq!(r.gravity_torque(i as f64 * 0.1), 0.0);
        }
    }

    #[test]
    fn gravity_integrates_to_zero_over_cycle() {
        let r = default_rider();
        // Trapezoid on a periodic integrand is spectrally accurate.
        let n = 4096;
        let s: f64 = (0..n).map(|i| r.gravity_torque(i as f64 * TAU / n as f64)).sum::<f64>() * TAU
            / n as f64;
        assert!(s.abs() < 1e-9, "{s}");
    }

    #[test]
    fn passive_torque_examples() {
        let r = default_rider();
        let pt = r.passive_torque(0.0);
        assert_eq!(pt.p, 0.0);
        assert_eq!(pt.tau_b, 0.0);
        for qd in [-3.0, -0.1, 0.2, 5.0] {
            let pt = r.passive_torque(qd);
            assert_eq!(pt.p.signum(), -f64::signum(qd));
            assert_eq!(pt.tau_b.signum(), -f64::signum(qd));
        }
    }

    #[test]
    fn muscle_gain_models() {
        let g = RiderGeometry::new(0.40, 0.43, 0.17, 0.60, 0.12).unwrap();
        let r = default_rider();
        assert_eq!(r.muscle_gain(1.0, Side::Left), 1.0);
        let p = DynamicsParams {
            muscle_model: MuscleModel::TorqueAngle,
            omega_const: 1.0,
            omega_bounds: (0.7, 1.0),
            ..DynamicsParams::default()
        };
        let r = Rider::new(g, p).unwrap();
        for i in 0..100 {
            let om = r.muscle_gain(i as f64 * 0.0628, Side::Right);
            assert!((0.7..=1.0).contains(&om));
        }
        // At a right-angle knee sin(q_k) = 1, so the clamp picks min(Omega_0, c_Omega2).
        let q = crate::numeric::bisect(0.3, 3.3, 1e-14, |q| {
            g.knee_angle(q, Side::Right).unwrap() - PI / 2.0
        });
        if let Some(q) = q {
            assert!((r.muscle_gain(q, Side::Right) - 1.0).abs() < 1e-12);
        }
        let bad = DynamicsParams { omega_bounds: (1.1, 2.0), ..DynamicsParams::default() };
        assert!(matches!(Rider::new(g, bad), Err(ModelError::Config(_))));
    }

    #[test]
    fn disturbance_examples() {
        let r = default_rider();
        let w = r.params().disturbance_frequency;
        for i in 0..50 {
            let t = i as f64 * 0.37;
            assert!(r.disturbance(t).abs() <= 0.5);
            assert!((r.disturbance(t) - r.disturbance(t + TAU / w)).abs() < 1e-12);
        }
        let g = RiderGeometry::new(0.40, 0.43, 0.17, 0.60, 0.12).unwrap();
        let quiet = Rider::new(g, DynamicsParams { disturbance_amplitude: 0.0, ..DynamicsParams::default() })
            .unwrap();
        assert_eq!(quiet.disturbance(1.3), 0.0);
    }

    #[test]
    fn forward_dynamics_is_linear_in_input() {
        let r = default_rider();
        let s = CrankState { q: 4.0, q_dot: 2.0, t: 0.3 };
        let base = r.forward_dynamics(&s, 0.0, 0.0);
        let one = r.forward_dynamics(&s, 1.5, 0.0) - base;
        let two = r.forward_dynamics(&s, 3.0, 0.0) - base;
        assert!((two - 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn static_equilibrium() {
        let g = RiderGeometry::new(0.40, 0.43, 0.17, 0.60, 0.12).unwrap();
        let p = DynamicsParams { disturbance_amplitude: 0.0, ..DynamicsParams::default() };
        let r = Rider::new(g, p).unwrap();
        // Find a zero of G by bisection over a sign change.
        let n = 512;
        let mut q_eq = None;
        for i in 0..n {
            let a = i as f64 * TAU / n as f64;
            let b = a + TAU / n as f64;
            if r.gravity_torque(a) * r.gravity_torque(b) < 0.0 {
                q_eq = crate::numeric::bisect(a, b, 1e-15, |q| r.gravity_torque(q));
                break;
            }
        }
        let q = q_eq.unwrap();
        let acc = r.forward_dynamics(&CrankState { q, q_dot: 0.0, t: 0.0 }, 0.0, 0.0);
        assert!(acc.abs() < 1e-10, "{acc}");
    }

    #[test]
    fn property_constants_bound_samples() {
        let r = default_rider();
        let pc = r.property_constants(8.0).unwrap();
        assert!(pc.c_m > 0.0 && pc.c_m <= pc.c_big_m);
        assert!(pc.c_v > 0.0 && pc.c_g > 0.0);
        // Dense-grid oracle.
        let n = 1_000_000;
        let mut m_min = f64::INFINITY;
        let mut m_max: f64 = 0.0;
        let mut g_max: f64 = 0.0;
        let mut dm_max: f64 = 0.0;
        for i in 0..n {
            let mt = r.mass_terms(i as f64 * TAU / n as f64);
            m_min = m_min.min(mt.inertia);
            m_max = m_max.max(mt.inertia);
            g_max = g_max.max(mt.gravity_torque.abs());
            dm_max = dm_max.max(mt.inertia_slope.abs());
        }
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(pc.c_m, m_min) < 1e-6 && pc.c_m <= m_min);
        assert!(rel(pc.c_big_m, m_max) < 1e-6 && pc.c_big_m >= m_max);
        assert!(rel(pc.c_g, g_max) < 1e-6 && pc.c_g >= g_max);
        assert!(rel(pc.c_v, 0.5 * dm_max) < 1e-6 && pc.c_v >= 0.5 * dm_max);
    }
}
