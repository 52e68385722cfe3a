//! Stability certificate: bounding constants, decay and growth envelopes,
//! the reverse dwell-time limit, the critical crank velocity and the
//! ultimate bound on the tracking error.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::controller::{ControllerGains, TrajectorySpec};
use crate::dynamics::{CrankState, ModelError, PropertyConstants, Rider};
use crate::kinematics::{AngleArc, RegionMap};

/// Distance below `pi/2` at which the tangent argument counts as escaped.
pub const ESCAPE_GUARD: f64 = 1e-9;
/// Disturbance phases probed by the critical-velocity search.
pub const PHASE_GRID: usize = 16;
pub const CRIT_SPEED_RANGE: (f64, f64) = (1e-3, 50.0);
pub const CRIT_SPEED_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("chi bound validation failed: {0}")]
    ValidationFailure(String),
    #[error("gain condition violated: {condition} ({detail})")]
    GainConditionViolated { condition: String, detail: String },
    #[error("a3 = {a3} is not positive; the tangent-form growth bound does not apply")]
    NegativeA3 { a3: f64 },
    #[error("interval {dt} s reaches the finite escape time {limit} s of the growth bound")]
    EscapeTimeExceeded { dt: f64, limit: f64 },
    #[error("infeasible trajectory: {0}")]
    InfeasibleTrajectory(String),
    #[error("no ballistic crossing of the uncontrolled arc at {arc_start} rad even at {speed} rad/s")]
    NoCrossing { arc_start: f64, speed: f64 },
    #[error("coefficient {name} = {value} is degenerate")]
    DegenerateCoefficient { name: &'static str, value: f64 },
    #[error("bound equation has complex roots (discriminant {discriminant})")]
    ComplexRoot { discriminant: f64 },
    #[error("bound equation has no positive root (b2 = {b2})")]
    NonPositiveRoot { b2: f64 },
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Coefficients of `|chi| <= c1 + c2 |z| + c3 |z|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// Bound on the lumped uncertainty `chi` of the open-loop error system.
///
/// With `s = sqrt(1 + alpha^2)`, `Qd = sup q_d'`, `Qdd = sup |q_d''|` and
/// `|q'| <= Qd + s|z|`, `|e1' | <= s|z|`, `|q_d' + alpha e1| <= Qd + alpha|z|`:
///
/// * `c1 = c_M Qdd + c_V Qd^2 + c_G + c_d + c_P1 + (c + c_P2) Qd`
/// * `c2 = c_M alpha s + c_V (s + alpha) Qd + (c + c_P2) s`
/// * `c3 = c_V alpha s`
pub fn chi_bound_constants(
    pc: &PropertyConstants,
    crank_damping: f64,
    traj: &TrajectorySpec,
    alpha: f64,
) -> ChiConstants {
    let s = (1.0 + alpha * alpha).sqrt();
    let qd = traj.max_velocity();
    let qdd = traj.max_acceleration();
    let damp = crank_damping + pc.c_p2;
    ChiConstants {
        c1: pc.c_big_m * qdd + pc.c_v * qd * qd + pc.c_g + pc.c_d + pc.c_p1 + damp * qd,
        c2: pc.c_big_m * alpha * s + pc.c_v * (s + alpha) * qd + damp * s,
        c3: pc.c_v * alpha * s,
    }
}

/// Exact `chi` at a sampled state.
pub fn chi_value(rider: &Rider, traj: &TrajectorySpec, alpha: f64, q: f64, e1: f64, e2: f64, t: f64) -> f64 {
    let d = traj.desired(t);
    let q_dot = d.q_dot + alpha * e1 - e2;
    let e1_dot = e2 - alpha * e1;
    let mt = rider.mass_terms(q);
    let pt = rider.passive_torque(q_dot);
    mt.inertia * (d.q_ddot + alpha * e1_dot)
        + 0.5 * mt.inertia_slope * q_dot * (d.q_dot + alpha * e1)
        + mt.gravity_torque
        + rider.disturbance(t)
        - pt.tau_b
        - pt.p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiValidation {
    pub samples: usize,
    pub z_max: f64,
    /// Largest observed `|chi| / (c1 + c2|z| + c3|z|^2)`.
    pub max_ratio: f64,
}

/// Checks the chi bound on random `(q, z, t)` with `|z| <= z_max`.
#[allow(clippy::too_many_arguments)]
pub fn validate_chi_bound(
    rider: &Rider,
    traj: &TrajectorySpec,
    alpha: f64,
    chi: &ChiConstants,
    z_max: f64,
    horizon: f64,
    samples: usize,
    seed: u64,
) -> Result<ChiValidation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio: f64 = 0.0;
    for _ in 0..samples {
        let q = rng.gen_range(0.0..TAU);
        let r = z_max * rng.gen::<f64>().sqrt();
        let th = rng.gen_range(0.0..TAU);
        let (e1, e2) = (r * th.cos(), r * th.sin());
        let t = traj.t_start + rng.gen_range(0.0..horizon);
        let x = chi_value(rider, traj, alpha, q, e1, e2, t).abs();
        let bound = chi.c1 + chi.c2 * r + chi.c3 * r * r;
        if x > bound {
            return Err(AnalysisError::ValidationFailure(format!(
                "|chi| = {x} exceeds {bound} at q = {q}, e1 = {e1}, e2 = {e2}, t = {t}"
            )));
        }
        max_ratio = max_ratio.max(x / bound);
    }
    Ok(ChiValidation { samples, z_max, max_ratio })
}

/// `(lambda1, lambda2)` sandwiching `V_L` between `lambda |z|^2`.
pub fn lyapunov_constants(c_m: f64, c_big_m: f64) -> (f64, f64) {
    ((0.5f64).min(0.5 * c_m), (0.5f64).max(0.5 * c_big_m))
}

/// `V_L = (e1^2 + M e2^2) / 2`.
pub fn lyapunov_value(e1: f64, e2: f64, inertia: f64) -> f64 {
    0.5 * (e1 * e1 + inertia * e2 * e2)
}

/// `gamma1 = min(alpha - 1/2, eps c_Omega1 k1 - 1/2)`.
pub fn decay_rate(gains: &ControllerGains, c_omega1: f64) -> Result<f64> {
    if gains.alpha <= 0.5 {
        return Err(AnalysisError::GainConditionViolated {
            condition: "alpha > 1/2".into(),
            detail: format!("alpha = {}", gains.alpha),
        });
    }
    let k1_min = 1.0 / (2.0 * gains.epsilon * c_omega1);
    if gains.k1 <= k1_min {
        return Err(AnalysisError::GainConditionViolated {
            condition: "k1 > 1/(2 eps c_Omega1)".into(),
            detail: format!("k1 = {} but the threshold is {k1_min}", gains.k1),
        });
    }
    Ok((gains.alpha - 0.5).min(gains.epsilon * c_omega1 * gains.k1 - 0.5))
}

/// One inequality of the certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs - rhs` (or `rhs - lhs` for upper limits): nonnegative when met.
    pub margin: f64,
    pub strict: bool,
    pub pass: bool,
}

impl Condition {
    /// `lhs >= rhs` (or `>` when strict).
    pub fn at_least(name: impl Into<String>, lhs: f64, rhs: f64, strict: bool) -> Self {
        let margin = lhs - rhs;
        let pass = if strict { margin > 0.0 } else { margin >= 0.0 };
        Condition { name: name.into(), lhs, rhs, margin, strict, pass: pass && margin.is_finite() }
    }

    /// `lhs <= rhs` (or `<` when strict).
    pub fn at_most(name: impl Into<String>, lhs: f64, rhs: f64, strict: bool) -> Self {
        let margin = rhs - lhs;
        let pass = if strict { margin > 0.0 } else { margin >= 0.0 };
        Condition { name: name.into(), lhs, rhs, margin, strict, pass: pass && margin.is_finite() }
    }

    pub fn failed(name: impl Into<String>, reason: &str) -> Self {
        Condition {
            name: format!("{} ({reason})", name.into()),
            lhs: f64::NAN,
            rhs: f64::NAN,
            margin: f64::NAN,
            strict: false,
            pass: false,
        }
    }
}

/// The five controller gain inequalities.
pub fn verify_gain_conditions(gains: &ControllerGains, c_omega1: f64, chi: &ChiConstants) -> Vec<Condition> {
    let ec = gains.epsilon * c_omega1;
    vec![
        Condition::at_least("alpha > 1/2", gains.alpha, 0.5, true),
        Condition::at_least("k1 > 1/(2 eps c_Omega1)", gains.k1, 1.0 / (2.0 * ec), true),
        Condition::at_least("k2 >= c1/(eps c_Omega1)", gains.k2, chi.c1 / ec, false),
        Condition::at_least("k3 >= c2/(eps c_Omega1)", gains.k3, chi.c2 / ec, false),
        Condition::at_least("k4 >= c3/(eps c_Omega1)", gains.k4, chi.c3 / ec, false),
    ]
}

/// `sqrt(lambda2/lambda1) z_on exp(-gamma1 dt / (2 lambda2))`.
pub fn decay_envelope(z_on: f64, gamma1: f64, lambda1: f64, lambda2: f64, dt: f64) -> f64 {
    (lambda2 / lambda1).sqrt() * z_on * (-gamma1 * dt / (2.0 * lambda2)).exp()
}

/// `V_on exp(-gamma1 dt / lambda2)`.
pub fn decay_envelope_v(v_on: f64, gamma1: f64, lambda2: f64, dt: f64) -> f64 {
    v_on * (-gamma1 * dt / lambda2).exp()
}

/// Constants of the comparison system
/// `V' <= (c1/sqrt(l1)) V^(1/2) + a2 V + a1 V^(3/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthConstants {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl GrowthConstants {
    /// Angular rate of the tangent solution, `sqrt(a3)`.
    pub fn omega(&self) -> f64 {
        self.a3.sqrt()
    }

    /// Coefficient of `V^(1/2)` in the comparison system.
    pub fn sqrt_coeff(&self) -> f64 {
        (self.a3 + self.a2 * self.a2) / (4.0 * self.a1)
    }

    /// Right-hand side of the comparison system.
    pub fn comparison_rate(&self, v: f64) -> f64 {
        let y = v.max(0.0).sqrt();
        self.sqrt_coeff() * y + self.a2 * v + self.a1 * v * y
    }
}

/// `a1 = c3 / l1^(3/2)`, `a2 = (c2 + 1/2) / l1`, `a3 = 4 a1 c1 / sqrt(l1) - a2^2`.
pub fn growth_constants(chi: &ChiConstants, lambda1: f64) -> Result<GrowthConstants> {
    let a1 = chi.c3 / lambda1.powf(1.5);
    let a2 = (chi.c2 + 0.5) / lambda1;
    let a3 = 4.0 * a1 * chi.c1 / lambda1.sqrt() - a2 * a2;
    if !(a3 > 0.0) {
        return Err(AnalysisError::NegativeA3 { a3 });
    }
    Ok(GrowthConstants { a1, a2, a3 })
}

/// Smallest `c3` giving `a3 = ratio * a2^2`; growth bounds built from a
/// larger `c3` remain valid since `chi` is bounded by any larger coefficient.
pub fn c3_floor_for_a3(chi: &ChiConstants, lambda1: f64, ratio: f64) -> f64 {
    // a3 = (4 c1 c3 - (c2 + 1/2)^2) / l1^2  =>  c3 = (1 + ratio)(c2 + 1/2)^2 / (4 c1)
    let _ = lambda1;
    (1.0 + ratio) * (chi.c2 + 0.5).powi(2) / (4.0 * chi.c1)
}

/// Tangent argument of the growth solution after `dt` from `V_off`.
fn growth_argument(v_off: f64, g: &GrowthConstants, dt: f64) -> f64 {
    let w = g.omega();
    w * dt / 4.0 + ((2.0 * g.a1 * v_off.max(0.0).sqrt() + g.a2) / w).atan()
}

/// Bound on `V_L` a time `dt` after entering the uncontrolled region with
/// `V_L = v_off`:
/// `V <= ((w tan(w dt/4 + atan((2 a1 sqrt(V_off) + a2)/w)) - a2) / (2 a1))^2`
/// with `w = sqrt(a3)`.
pub fn growth_envelope_v(v_off: f64, g: &GrowthConstants, dt: f64) -> Result<f64> {
    let arg = growth_argument(v_off, g, dt);
    if arg >= FRAC_PI_2 - ESCAPE_GUARD {
        return Err(AnalysisError::EscapeTimeExceeded { dt, limit: rdt_max_offtime_v(v_off, g) });
    }
    let y = (g.omega() * arg.tan() - g.a2) / (2.0 * g.a1);
    Ok(y * y)
}

/// `|z|` form: `(w tan(w dt/4 + atan((2 a1 sqrt(l2) z_off + a2)/w)) - a2) / (2 a1 sqrt(l1))`.
pub fn growth_envelope(z_off: f64, g: &GrowthConstants, lambda1: f64, lambda2: f64, dt: f64) -> Result<f64> {
    let v = lambda2 * z_off * z_off;
    let arg = growth_argument(v, g, dt);
    if arg >= FRAC_PI_2 - ESCAPE_GUARD {
        return Err(AnalysisError::EscapeTimeExceeded { dt, limit: rdt_max_offtime(z_off, g, lambda2) });
    }
    Ok((g.omega() * arg.tan() - g.a2) / (2.0 * g.a1 * lambda1.sqrt()))
}

/// Reverse dwell-time limit `(2 pi - 4 atan((2 a1 sqrt(V_off) + a2)/w)) / w`.
pub fn rdt_max_offtime_v(v_off: f64, g: &GrowthConstants) -> f64 {
    let w = g.omega();
    (2.0 * PI - 4.0 * ((2.0 * g.a1 * v_off.max(0.0).sqrt() + g.a2) / w).atan()) / w
}

/// Reverse dwell-time limit for an error norm `z_off` at switch-off.
pub fn rdt_max_offtime(z_off: f64, g: &GrowthConstants, lambda2: f64) -> f64 {
    rdt_max_offtime_v(lambda2 * z_off * z_off, g)
}

/// `dq_on / (max q_d' + (1 + alpha) sqrt(l2/l1) z_on)`.
pub fn min_ontime_bound(
    arc_len: f64,
    max_qd: f64,
    alpha: f64,
    lambda1: f64,
    lambda2: f64,
    z_on: f64,
) -> Result<f64> {
    let speed = max_qd + (1.0 + alpha) * (lambda2 / lambda1).sqrt() * z_on;
    if !(speed > 0.0 && arc_len > 0.0) {
        return Err(AnalysisError::InfeasibleTrajectory(format!(
            "speed bound {speed} or arc length {arc_len} not positive"
        )));
    }
    Ok(arc_len / speed)
}

/// Largest `max q_d'` that still guarantees on-times of at least `dt_min_on`.
pub fn max_desired_velocity(
    arc_len: f64,
    dt_min_on: f64,
    alpha: f64,
    lambda1: f64,
    lambda2: f64,
    z_on: f64,
) -> Result<f64> {
    let v = arc_len / dt_min_on - (1.0 + alpha) * (lambda2 / lambda1).sqrt() * z_on;
    if !(v > 0.0) {
        return Err(AnalysisError::InfeasibleTrajectory(format!(
            "required max desired velocity {v} is not positive"
        )));
    }
    Ok(v)
}

/// `q_crit + (1 + alpha) sqrt(l2/l1) z_on exp(-gamma1 dt_min_on / (2 l2))`.
#[allow(clippy::too_many_arguments)]
pub fn offtime_trajectory_conditions(
    q_dot_crit: f64,
    alpha: f64,
    lambda1: f64,
    lambda2: f64,
    gamma1: f64,
    z_on: f64,
    dt_min_on: f64,
) -> f64 {
    q_dot_crit + (1.0 + alpha) * decay_envelope(z_on, gamma1, lambda1, lambda2, dt_min_on)
}

/// `q_crit + (1 + alpha) z_off`.
pub fn min_desired_velocity_at_off(q_dot_crit: f64, alpha: f64, z_off: f64) -> f64 {
    q_dot_crit + (1.0 + alpha) * z_off
}

/// Time for the unforced crank to traverse `arc` from its entry angle with
/// initial speed `w`, with the disturbance started at `phase`. `None` if it
/// does not get across within `limit` seconds.
pub fn ballistic_crossing_time(rider: &Rider, arc: &AngleArc, w: f64, phase: f64, limit: f64) -> Option<f64> {
    let h = (limit / 200.0).min(1e-4);
    let accel = |q: f64, qd: f64, t: f64| {
        let mt = rider.mass_terms(q);
        let tau_d = rider.disturbance_with_phase(t, phase);
        -rider.drift_torque(&mt, qd, tau_d) / mt.inertia
    };
    let end = arc.len;
    let (mut x, mut v, mut t) = (0.0, w, 0.0);
    let mut a = accel(arc.start, v, t);
    while t < limit {
        let k1q = v;
        let k1v = a;
        let k2q = v + 0.5 * h * k1v;
        let k2v = accel(arc.start + x + 0.5 * h * k1q, k2q, t + 0.5 * h);
        let k3q = v + 0.5 * h * k2v;
        let k3v = accel(arc.start + x + 0.5 * h * k2q, k3q, t + 0.5 * h);
        let k4q = v + h * k3v;
        let k4v = accel(arc.start + x + h * k3q, k4q, t + h);
        let xn = x + h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
        let vn = v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        let an = accel(arc.start + xn, vn, t + h);
        if xn >= end {
            // Cubic Hermite interpolation of x over the step.
            let herm = |s: f64| {
                let s2 = s * s;
                let s3 = s2 * s;
                (2.0 * s3 - 3.0 * s2 + 1.0) * x
                    + (s3 - 2.0 * s2 + s) * h * v
                    + (-2.0 * s3 + 3.0 * s2) * xn
                    + (s3 - s2) * h * vn
                    - end
            };
            let s = crate::numeric::bisect(0.0, 1.0, 1e-13, herm).unwrap_or(1.0);
            let tc = t + s * h;
            return (tc <= limit).then_some(tc);
        }
        if vn <= 0.0 {
            return None;
        }
        x = xn;
        v = vn;
        a = an;
        t += h;
    }
    None
}

/// Worst crossing time over every uncontrolled arc and disturbance phase.
pub fn worst_crossing_time(rider: &Rider, regions: &RegionMap, w: f64, limit: f64) -> Option<f64> {
    let cases: Vec<(AngleArc, f64)> = regions
        .uncontrolled
        .iter()
        .flat_map(|a| (0..PHASE_GRID).map(move |k| (*a, TAU * k as f64 / PHASE_GRID as f64)))
        .collect();
    let times: Vec<Option<f64>> = cases
        .par_iter()
        .map(|(arc, ph)| ballistic_crossing_time(rider, arc, w, *ph, limit))
        .collect();
    times.into_iter().try_fold(0.0f64, |acc, t| t.map(|t| acc.max(t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalVelocity {
    pub q_dot_crit: f64,
    pub worst_arc_start: f64,
    pub worst_phase: f64,
    /// False when the probe grid showed non-monotone crossing and the
    /// search fell back to a grid scan.
    pub monotone: bool,
}

/// Least entry speed for which the unforced crank crosses an uncontrolled
/// arc within `dt_max_off`, maximized over arcs and disturbance phases.
pub fn critical_velocity(rider: &Rider, regions: &RegionMap, dt_max_off: f64) -> Result<CriticalVelocity> {
    if !(dt_max_off > 0.0) {
        return Err(AnalysisError::InfeasibleTrajectory(format!("dt_max_off = {dt_max_off} must be > 0")));
    }
    let cases: Vec<(AngleArc, f64)> = regions
        .uncontrolled
        .iter()
        .flat_map(|a| (0..PHASE_GRID).map(move |k| (*a, TAU * k as f64 / PHASE_GRID as f64)))
        .collect();
    let results: Vec<Result<(f64, bool)>> = cases
        .par_iter()
        .map(|(arc, ph)| critical_speed_single(rider, arc, *ph, dt_max_off))
        .collect();
    let mut best = CriticalVelocity {
        q_dot_crit: 0.0,
        worst_arc_start: f64::NAN,
        worst_phase: f64::NAN,
        monotone: true,
    };
    // Sequential reduction in case order keeps the result schedule-independent.
    for ((arc, ph), r) in cases.iter().zip(results) {
        let (w, mono) = r?;
        best.monotone &= mono;
        if w > best.q_dot_crit {
            best.q_dot_crit = w;
            best.worst_arc_start = arc.start;
            best.worst_phase = *ph;
        }
    }
    Ok(best)
}

fn critical_speed_single(rider: &Rider, arc: &AngleArc, phase: f64, limit: f64) -> Result<(f64, bool)> {
    let (lo, hi) = CRIT_SPEED_RANGE;
    let crosses = |w: f64| ballistic_crossing_time(rider, arc, w, phase, limit).is_some();
    if !crosses(hi) {
        return Err(AnalysisError::NoCrossing { arc_start: arc.start, speed: hi });
    }
    // Probe grid, log-spaced.
    let n = 48;
    let grid: Vec<f64> = (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect();
    let flags: Vec<bool> = grid.iter().map(|&w| crosses(w)).collect();
    let monotone = flags.windows(2).all(|p| !p[0] || p[1]);
    // Highest grid point that fails; everything above it crosses.
    let last_fail = flags.iter().rposition(|&f| !f);
    let (mut a, mut b) = match last_fail {
        None => return Ok((lo, monotone)),
        Some(i) => (grid[i], grid[i + 1]),
    };
    while b - a > CRIT_SPEED_TOL {
        let m = 0.5 * (a + b);
        if crosses(m) {
            b = m;
        } else {
            a = m;
        }
    }
    Ok((b, monotone))
}

/// Ultimate bound on `V_L` at switch-on times and the matching error radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UltimateBound {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub d_bar: f64,
    /// Larger root: the sequence bound is invariant on `[0, d_bar_upper]`.
    pub d_bar_upper: f64,
    pub d_lower: f64,
    pub d_radius: f64,
}

/// Solves the decay-then-growth fixed point `b1 d + b2 sqrt(d) + b3 = 0`
/// with `T = tan(w dt_off / 4)`, `E = exp(-gamma1 dt_on / (2 l2))`:
/// `b1 = -4 a1^2 T E`, `b2 = 2 a1 w (1 - E) - 2 a1 a2 T (1 + E)`,
/// `b3 = -(a2^2 + a3) T`.
pub fn ultimate_bound(
    gamma1: f64,
    lambda1: f64,
    lambda2: f64,
    g: &GrowthConstants,
    dt_min_on: f64,
    dt_max_off: f64,
) -> Result<UltimateBound> {
    let w = g.omega();
    let arg = w * dt_max_off / 4.0;
    if arg >= FRAC_PI_2 - ESCAPE_GUARD {
        return Err(AnalysisError::EscapeTimeExceeded { dt: dt_max_off, limit: 2.0 * PI / w });
    }
    let tn = arg.tan();
    let e = (-gamma1 * dt_min_on / (2.0 * lambda2)).exp();
    let b1 = -4.0 * g.a1 * g.a1 * tn * e;
    let b2 = 2.0 * g.a1 * w * (1.0 - e) - 2.0 * g.a1 * g.a2 * tn * (1.0 + e);
    let b3 = -(g.a2 * g.a2 + g.a3) * tn;
    for (name, value) in [("b1", b1), ("b2", b2), ("b3", b3)] {
        if value.abs() < 1e-14 {
            return Err(AnalysisError::DegenerateCoefficient { name, value });
        }
    }
    let disc = b2 * b2 - 4.0 * b1 * b3;
    if disc < 0.0 {
        return Err(AnalysisError::ComplexRoot { discriminant: disc });
    }
    if b2 <= 0.0 {
        return Err(AnalysisError::NonPositiveRoot { b2 });
    }
    let sq = disc.sqrt();
    // Stable (smaller) root, written to avoid cancellation.
    let root = 2.0 * b3 / (-b2 - sq);
    let upper = (-b2 - sq) / (2.0 * b1);
    let d_bar = root * root;
    Ok(UltimateBound {
        b1,
        b2,
        b3,
        d_bar,
        d_bar_upper: upper * upper,
        d_lower: d_bar * (-gamma1 * dt_min_on / lambda2).exp(),
        d_radius: (d_bar / lambda1).sqrt(),
    })
}

/// One decay phase of length `dt_on` followed by one growth phase of length
/// `dt_off`, in `V_L` terms.
pub fn cycle_map(v_on: f64, gamma1: f64, lambda2: f64, g: &GrowthConstants, dt_on: f64, dt_off: f64) -> Result<f64> {
    growth_envelope_v(decay_envelope_v(v_on, gamma1, lambda2, dt_on), g, dt_off)
}

/// Certification options that are not part of the scenario itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertifyOptions {
    /// Speed range for sampling the model properties.
    pub q_dot_max: f64,
    /// Assumed bound on `|z|` at every switch-on time; checked against the
    /// ultimate bound and the ramp-up sequence.
    pub z_bound: f64,
    /// Off-time budget. Defaults to half the reverse dwell-time at `z_bound`.
    pub dt_max_off: Option<f64>,
    /// When `a3` falls below `ratio * a2^2`, `c3` is raised so that equality
    /// holds. Negative disables.
    pub a3_floor_ratio: f64,
    /// Sampling radius for the chi-bound check; defaults to
    /// `max(2 sqrt(l2/l1) |z(0)| + 1, 2 z_bound)`.
    pub z_max: Option<f64>,
    pub chi_samples: usize,
    pub max_ramp_cycles: usize,
    pub seed: u64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            q_dot_max: 50.0,
            z_bound: 0.5,
            dt_max_off: None,
            a3_floor_ratio: -1.0,
            z_max: None,
            chi_samples: 100_000,
            max_ramp_cycles: 1000,
            seed: 0x00c0_ffee,
        }
    }
}

/// One half-cycle of the ramp-up certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RampCycle {
    pub n: usize,
    /// Bound on `V_L` at the switch-on time.
    pub v_on: f64,
    /// Lower bound on the switch-off time.
    pub t_off_lower: f64,
    pub min_ontime: f64,
    /// Lower bound on the crank speed at switch-off.
    pub entry_speed: f64,
    /// Upper bound on the time spent uncontrolled.
    pub offtime_bound: f64,
    pub rdt_limit: f64,
}

/// Full certificate. Quantities after the first failure are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Certificate {
    pub properties: Option<PropertyConstants>,
    pub chi_raw: Option<ChiConstants>,
    pub chi: Option<ChiConstants>,
    pub c3_raised: bool,
    pub chi_validation: Option<ChiValidation>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub gamma1: Option<f64>,
    pub growth: Option<GrowthConstants>,
    pub z_bound: f64,
    pub dt_min_on: Option<f64>,
    pub dt_max_off: Option<f64>,
    pub rdt_at_bound: Option<f64>,
    pub critical: Option<CriticalVelocity>,
    pub required_q_dot_d: Option<f64>,
    pub ultimate: Option<UltimateBound>,
    pub ramp: Vec<RampCycle>,
    pub handover_time: Option<f64>,
    pub conditions: Vec<Condition>,
    pub certified: bool,
    pub first_failure: Option<String>,
}

/// Constants consumed by the trace audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalysisConstants {
    pub gamma1: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub growth: GrowthConstants,
    /// Ultimate bound radius `d`.
    pub d_radius: f64,
}

impl Certificate {
    /// Audit constants, available once the certificate reached the
    /// ultimate bound.
    pub fn constants(&self) -> Option<AnalysisConstants> {
        Some(AnalysisConstants {
            gamma1: self.gamma1?,
            lambda1: self.lambda1?,
            lambda2: self.lambda2?,
            growth: self.growth?,
            d_radius: self.ultimate?.d_radius,
        })
    }
}

/// Inputs to [`certify`].
#[derive(Debug, Clone, Copy)]
pub struct CertificationInput<'a> {
    pub rider: &'a Rider,
    pub regions: &'a RegionMap,
    pub gains: &'a ControllerGains,
    pub trajectory: &'a TrajectorySpec,
    pub initial: &'a CrankState,
}

impl Certificate {
    fn push(&mut self, c: Condition) -> bool {
        let ok = c.pass;
        if !ok && self.first_failure.is_none() {
            self.first_failure = Some(c.name.clone());
        }
        self.conditions.push(c);
        ok
    }

    fn fail(&mut self, name: &str, err: &AnalysisError) {
        self.push(Condition::failed(name, &err.to_string()));
    }

    /// Plain-text report, one item per line.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let f = |x: f64| format!("{x:.10e}");
        let _ = writeln!(s, "certificate: {}", if self.certified { "CERTIFIED" } else { "NOT CERTIFIED" });
        if let Some(p) = &self.properties {
            let _ = writeln!(
                s,
                "properties: c_m={} c_M={} c_V={} c_G={} c_d={} c_B={} c_P1={} c_P2={} c_Omega1={} c_Omega2={}",
                f(p.c_m), f(p.c_big_m), f(p.c_v), f(p.c_g), f(p.c_d), f(p.c_b), f(p.c_p1), f(p.c_p2),
                f(p.c_omega1), f(p.c_omega2)
            );
        }
        if let Some(c) = &self.chi_raw {
            let _ = writeln!(s, "chi bound (collected): c1={} c2={} c3={}", f(c.c1), f(c.c2), f(c.c3));
        }
        if let Some(c) = &self.chi {
            let _ = writeln!(
                s,
                "chi bound (used): c1={} c2={} c3={}{}",
                f(c.c1),
                f(c.c2),
                f(c.c3),
                if self.c3_raised { " [c3 raised for a3 > 0]" } else { "" }
            );
        }
        if let Some(v) = &self.chi_validation {
            let _ = writeln!(s, "chi validation: {} samples, |z| <= {}, max ratio {}", v.samples, f(v.z_max), f(v.max_ratio));
        }
        if let (Some(l1), Some(l2)) = (self.lambda1, self.lambda2) {
            let _ = writeln!(s, "lambda1={} lambda2={}", f(l1), f(l2));
        }
        if let Some(g) = self.gamma1 {
            let _ = writeln!(s, "gamma1={}", f(g));
        }
        if let Some(g) = &self.growth {
            let _ = writeln!(s, "growth: a1={} a2={} a3={}", f(g.a1), f(g.a2), f(g.a3));
        }
        let _ = writeln!(s, "z_bound={}", f(self.z_bound));
        for (name, v) in [
            ("dt_min_on", self.dt_min_on),
            ("dt_max_off", self.dt_max_off),
            ("rdt_at_z_bound", self.rdt_at_bound),
            ("required_q_dot_d", self.required_q_dot_d),
            ("handover_time", self.handover_time),
        ] {
            if let Some(v) = v {
                let _ = writeln!(s, "{name}={}", f(v));
            }
        }
        if let Some(c) = &self.critical {
            let _ = writeln!(
                s,
                "q_dot_crit={} (arc at {}, phase {}, monotone {})",
                f(c.q_dot_crit),
                f(c.worst_arc_start),
                f(c.worst_phase),
                c.monotone
            );
        }
        if let Some(u) = &self.ultimate {
            let _ = writeln!(
                s,
                "ultimate bound: b1={} b2={} b3={} d_bar={} d_lower={} d={} d_bar_upper={}",
                f(u.b1), f(u.b2), f(u.b3), f(u.d_bar), f(u.d_lower), f(u.d_radius), f(u.d_bar_upper)
            );
        }
        for r in &self.ramp {
            let _ = writeln!(
                s,
                "ramp n={} V_on<={} t_off>={} dt_on>={} q_dot_off>={} dt_off<={} rdt={}",
                r.n,
                f(r.v_on),
                f(r.t_off_lower),
                f(r.min_ontime),
                f(r.entry_speed),
                f(r.offtime_bound),
                f(r.rdt_limit)
            );
        }
        for c in &self.conditions {
            let _ = writeln!(
                s,
                "[{}] {}: lhs={} rhs={} margin={}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                f(c.lhs),
                f(c.rhs),
                f(c.margin)
            );
        }
        if let Some(ff) = &self.first_failure {
            let _ = writeln!(s, "first failed condition: {ff}");
        }
        s
    }
}

/// Runs the full certification chain: model properties, chi bound, gain
/// conditions, decay and growth constants, dwell-time limits, critical
/// velocity, trajectory conditions and the ultimate bound. Failures are
/// recorded in the returned certificate.
pub fn certify(input: &CertificationInput<'_>, opts: &CertifyOptions) -> Certificate {
    let mut cert = Certificate { z_bound: opts.z_bound, ..Certificate::default() };
    certify_inner(input, opts, &mut cert);
    cert.certified = cert.first_failure.is_none() && !cert.conditions.is_empty();
    cert
}

fn certify_inner(input: &CertificationInput<'_>, opts: &CertifyOptions, cert: &mut Certificate) {
    let CertificationInput { rider, regions, gains, trajectory, initial } = *input;
    let alpha = gains.alpha;
    let z_bound = opts.z_bound;

    let pc = match rider.property_constants(opts.q_dot_max) {
        Ok(p) => p,
        Err(e) => return cert.fail("model properties", &e.into()),
    };
    cert.properties = Some(pc);
    let (l1, l2) = lyapunov_constants(pc.c_m, pc.c_big_m);
    cert.lambda1 = Some(l1);
    cert.lambda2 = Some(l2);

    let raw = chi_bound_constants(&pc, rider.params().crank_damping, trajectory, alpha);
    cert.chi_raw = Some(raw);
    let mut chi = raw;
    if opts.a3_floor_ratio >= 0.0 {
        let floor = c3_floor_for_a3(&raw, l1, opts.a3_floor_ratio);
        if floor > chi.c3 {
            chi.c3 = floor;
            cert.c3_raised = true;
        }
    }
    cert.chi = Some(chi);

    let d0 = trajectory.desired(initial.t);
    let e0 = crate::controller::tracking_errors(initial, &d0, alpha);
    let z_max = opts
        .z_max
        .unwrap_or_else(|| (2.0 * (l2 / l1).sqrt() * e0.z_norm + 1.0).max(2.0 * z_bound));
    let horizon = 20.0 / trajectory.ramp_rate + 2.0 * PI / rider.params().disturbance_frequency.abs().max(1e-3);
    match validate_chi_bound(rider, trajectory, alpha, &chi, z_max, horizon, opts.chi_samples, opts.seed) {
        Ok(v) => cert.chi_validation = Some(v),
        Err(e) => return cert.fail("chi bound sampling", &e),
    }

    let mut gains_ok = true;
    for c in verify_gain_conditions(gains, pc.c_omega1, &chi) {
        gains_ok &= cert.push(c);
    }
    if !gains_ok {
        return;
    }
    let gamma1 = match decay_rate(gains, pc.c_omega1) {
        Ok(g) => g,
        Err(e) => return cert.fail("decay rate", &e),
    };
    cert.gamma1 = Some(gamma1);

    let growth = match growth_constants(&chi, l1) {
        Ok(g) => g,
        Err(e) => return cert.fail("a3 > 0", &e),
    };
    cert.growth = Some(growth);

    // Uniform regime with |z(t_on)| <= z_bound.
    let max_qd = trajectory.max_velocity();
    let arc_on = regions.min_controlled_len();
    let dt_min_on = match min_ontime_bound(arc_on, max_qd, alpha, l1, l2, z_bound) {
        Ok(t) => t,
        Err(e) => return cert.fail("minimum on-time", &e),
    };
    cert.dt_min_on = Some(dt_min_on);
    let z_off_bound = decay_envelope(z_bound, gamma1, l1, l2, dt_min_on);
    let rdt = rdt_max_offtime(z_off_bound, &growth, l2);
    cert.rdt_at_bound = Some(rdt);
    let dt_max_off = opts.dt_max_off.unwrap_or(0.5 * rdt);
    cert.dt_max_off = Some(dt_max_off);
    if !cert.push(Condition::at_most("dt_max_off < reverse dwell-time at z_bound", dt_max_off, rdt, true)) {
        return;
    }
    let crit = match critical_velocity(rider, regions, dt_max_off) {
        Ok(c) => c,
        Err(e) => return cert.fail("critical velocity", &e),
    };
    cert.critical = Some(crit);
    let required = offtime_trajectory_conditions(crit.q_dot_crit, alpha, l1, l2, gamma1, z_bound, dt_min_on);
    cert.required_q_dot_d = Some(required);

    let ub = match ultimate_bound(gamma1, l1, l2, &growth, dt_min_on, dt_max_off) {
        Ok(u) => u,
        Err(e) => return cert.fail("ultimate bound", &e),
    };
    cert.ultimate = Some(ub);
    let v_bound = l1 * z_bound * z_bound;
    cert.push(Condition::at_most("ultimate radius d <= z_bound", ub.d_radius, z_bound, false));
    cert.push(Condition::at_most("lambda1 z_bound^2 <= larger fixed point", v_bound, ub.d_bar_upper, false));
    cert.push(Condition::at_most(
        "required q_d' below the cadence target",
        required,
        max_qd,
        true,
    ));
    if cert.first_failure.is_some() {
        return;
    }

    // Ramp-up: propagate the V_L bound cycle by cycle until the uniform
    // conditions take over.
    let mut v_on = l2 * e0.z_norm * e0.z_norm;
    let (_, first_arc) = regions.arc_at(initial.q);
    if !regions.region_at(initial.q).is_controlled() {
        cert.push(Condition::failed("initial crank angle in a controlled region", "starts uncontrolled"));
        return;
    }
    let mut arc_len = (first_arc.end() - initial.q).rem_euclid(TAU);
    if arc_len == 0.0 {
        arc_len = first_arc.len;
    }
    let mut t_on = initial.t;
    for n in 0..opts.max_ramp_cycles {
        let z_on = (v_on / l1).sqrt();
        let dt_on = match min_ontime_bound(arc_len, max_qd, alpha, l1, l2, z_on) {
            Ok(t) => t,
            Err(e) => return cert.fail("ramp on-time", &e),
        };
        let t_off = t_on + dt_on;
        let qd_off = trajectory.desired(t_off).q_dot;
        if v_on <= v_bound && qd_off >= required {
            cert.handover_time = Some(t_off);
            cert.push(Condition::at_least(
                format!("ramp hands over to the uniform bound at cycle {n}"),
                qd_off,
                required,
                false,
            ));
            return;
        }
        let z_off = decay_envelope(z_on, gamma1, l1, l2, dt_on);
        let entry = qd_off - (1.0 + alpha) * z_off;
        let limit = rdt_max_offtime(z_off, &growth, l2);
        let mut record = RampCycle {
            n,
            v_on,
            t_off_lower: t_off,
            min_ontime: dt_on,
            entry_speed: entry,
            offtime_bound: f64::INFINITY,
            rdt_limit: limit,
        };
        let crossing = if entry > 0.0 { worst_crossing_time(rider, regions, entry, limit) } else { None };
        let Some(dt_off) = crossing else {
            cert.ramp.push(record);
            cert.push(Condition::failed(
                format!("ramp cycle {n}: uncontrolled crossing within the reverse dwell-time"),
                &format!("entry speed bound {entry} rad/s, limit {limit} s"),
            ));
            return;
        };
        record.offtime_bound = dt_off;
        cert.ramp.push(record);
        let v_next = match cycle_map(v_on, gamma1, l2, &growth, dt_on, dt_off) {
            Ok(v) => v,
            Err(e) => return cert.fail(&format!("ramp cycle {n} growth"), &e),
        };
        v_on = v_next;
        t_on = t_off;
        arc_len = arc_on;
    }
    cert.push(Condition::failed("ramp-up certificate", "cycle limit reached before handover"));
}
