//! Cycle-rider linkage geometry.
//!
//! Frame: crank axis at the origin, `+x` in the rider's facing direction,
//! hip centre at `(-l_x, l_y)`. The right pedal axis sits at
//! `l_c (cos q, -sin q)`, so `q` grows clockwise from the forward horizontal;
//! the left pedal lags by `pi`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{bisect, periodic_max};

/// Knee angles closer than this to `0` or `pi` are rejected at construction.
pub const CLOSURE_MARGIN: f64 = 1e-3;
/// Tolerance used when locating switching angles.
pub const SWITCH_ANGLE_TOL: f64 = 1e-10;
const SCAN_POINTS: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("linkage cannot close at q = {q} on the {side:?} side")]
    ClosureViolation { q: f64, side: Side },
    #[error("singular leg configuration at q = {q} on the {side:?} side")]
    SingularConfiguration { q: f64, side: Side },
    #[error("epsilon {epsilon} must lie in (0, {max})")]
    EpsilonTooLarge { epsilon: f64, max: f64 },
    #[error("irregular stimulation pattern at epsilon {epsilon}: {reason}")]
    IrregularPattern { epsilon: f64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Right,
    Left,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Right, Side::Left];

    /// Crank angle of this side's pedal given the right-crank angle `q`.
    #[inline]
    pub fn pedal_angle(self, q: f64) -> f64 {
        match self {
            Side::Right => q,
            Side::Left => q + PI,
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::Right => Side::Left,
            Side::Left => Side::Right,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiderGeometry {
    /// Hip to knee, m.
    pub thigh_length: f64,
    /// Knee to pedal axis, m.
    pub shank_length: f64,
    /// Crank axis to pedal axis, m.
    pub crank_length: f64,
    /// Horizontal crank-to-hip offset, m.
    pub hip_horizontal: f64,
    /// Vertical crank-to-hip offset, m.
    pub hip_vertical: f64,
}

impl RiderGeometry {
    pub fn new(
        thigh_length: f64,
        shank_length: f64,
        crank_length: f64,
        hip_horizontal: f64,
        hip_vertical: f64,
    ) -> Result<Self, KinematicsError> {
        let g = RiderGeometry {
            thigh_length,
            shank_length,
            crank_length,
            hip_horizontal,
            hip_vertical,
        };
        g.validate()?;
        Ok(g)
    }

    /// Checks positivity, hip placement and linkage closure (with the knee
    /// margin) over the whole crank cycle.
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let lens = [
            ("thigh_length", self.thigh_length),
            ("shank_length", self.shank_length),
            ("crank_length", self.crank_length),
        ];
        for (name, v) in lens {
            if !(v.is_finite() && v > 0.0) {
                return Err(KinematicsError::InvalidGeometry(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("hip_horizontal", self.hip_horizontal), ("hip_vertical", self.hip_vertical)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(KinematicsError::InvalidGeometry(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.hip_horizontal + self.hip_vertical <= 0.0 {
            return Err(KinematicsError::InvalidGeometry(
                "hip cannot coincide with the crank axis".into(),
            ));
        }
        let (lt, ll) = (self.thigh_length, self.shank_length);
        let (d_min, d_max) = self.distance_range();
        if !((lt - ll).abs() < d_min && lt + ll > d_max) {
            return Err(KinematicsError::InvalidGeometry(format!(
                "linkage does not close: hip-pedal distance spans [{d_min}, {d_max}] but the leg reaches [{}, {}]",
                (lt - ll).abs(),
                lt + ll
            )));
        }
        // Dense scan in addition to the analytic extremes.
        for i in 0..SCAN_POINTS {
            let q = i as f64 * TAU / SCAN_POINTS as f64;
            for side in Side::BOTH {
                let qk = self.knee_angle(q, side)?;
                if qk < CLOSURE_MARGIN || qk > PI - CLOSURE_MARGIN {
                    return Err(KinematicsError::InvalidGeometry(format!(
                        "knee angle {qk} at q = {q} is within {CLOSURE_MARGIN} rad of full extension or folding"
                    )));
                }
            }
        }
        for d in [d_min, d_max] {
            let c = self.cos_knee(d * d);
            if c.abs() >= (CLOSURE_MARGIN).cos() {
                return Err(KinematicsError::InvalidGeometry(format!(
                    "hip-pedal distance {d} leaves less than {CLOSURE_MARGIN} rad of knee margin"
                )));
            }
        }
        Ok(())
    }

    pub fn hip(&self) -> [f64; 2] {
        [-self.hip_horizontal, self.hip_vertical]
    }

    fn hip_offset(&self) -> f64 {
        self.hip_horizontal.hypot(self.hip_vertical)
    }

    /// Exact extremes of the hip-to-pedal distance over the cycle.
    pub fn distance_range(&self) -> (f64, f64) {
        let h = self.hip_offset();
        ((h - self.crank_length).abs(), h + self.crank_length)
    }

    pub fn pedal(&self, q: f64, side: Side) -> [f64; 2] {
        let a = side.pedal_angle(q);
        [self.crank_length * a.cos(), -self.crank_length * a.sin()]
    }

    /// Squared hip-to-pedal distance `D^2`.
    pub fn hip_pedal_distance_sq(&self, q: f64, side: Side) -> f64 {
        let a = side.pedal_angle(q);
        let (lc, lx, ly) = (self.crank_length, self.hip_horizontal, self.hip_vertical);
        lc * lc + lx * lx + ly * ly + 2.0 * lc * (lx * a.cos() + ly * a.sin())
    }

    /// `d(D^2)/dq`.
    pub fn hip_pedal_distance_sq_slope(&self, q: f64, side: Side) -> f64 {
        let a = side.pedal_angle(q);
        let (lc, lx, ly) = (self.crank_length, self.hip_horizontal, self.hip_vertical);
        2.0 * lc * (-lx * a.sin() + ly * a.cos())
    }

    fn cos_knee(&self, d2: f64) -> f64 {
        let (lt, ll) = (self.thigh_length, self.shank_length);
        (lt * lt + ll * ll - d2) / (2.0 * lt * ll)
    }

    /// Interior knee angle in `(0, pi)`.
    pub fn knee_angle(&self, q: f64, side: Side) -> Result<f64, KinematicsError> {
        let c = self.cos_knee(self.hip_pedal_distance_sq(q, side));
        if !(c > -1.0 && c < 1.0) {
            return Err(KinematicsError::ClosureViolation { q, side });
        }
        Ok(c.acos())
    }

    /// Torque transfer ratio `B_k^s(q)`: the rate of knee flexion per unit
    /// crank rotation. Negative while the knee extends as the crank advances.
    pub fn torque_transfer_ratio(&self, q: f64, side: Side) -> Result<f64, KinematicsError> {
        let qk = self.knee_angle(q, side)?;
        let s = qk.sin();
        if s < 1e-12 {
            return Err(KinematicsError::SingularConfiguration { q, side });
        }
        let slope = self.hip_pedal_distance_sq_slope(q, side);
        Ok(-slope / (2.0 * self.thigh_length * self.shank_length * s))
    }

    /// The two crank angles where hip, crank axis and pedal are collinear.
    pub fn dead_points(&self) -> [f64; 2] {
        let a = self.hip_vertical.atan2(self.hip_horizontal).rem_euclid(TAU);
        [a, (a + PI).rem_euclid(TAU)]
    }

    /// `max_q |B_k^R(q)|`.
    pub fn max_abs_torque_ratio(&self) -> f64 {
        periodic_max(TAU, SCAN_POINTS, 1e-10, |q| self.ratio_unchecked(q, Side::Right).abs()).1
    }

    /// `max_q (-B_k^R(q))`, the upper limit for `epsilon`.
    pub fn max_negative_torque_ratio(&self) -> f64 {
        periodic_max(TAU, SCAN_POINTS, 1e-10, |q| -self.ratio_unchecked(q, Side::Right)).1
    }

    // Valid geometry guarantees closure everywhere.
    fn ratio_unchecked(&self, q: f64, side: Side) -> f64 {
        self.torque_transfer_ratio(q, side).unwrap_or(0.0)
    }

    /// Closed-form pose and crank-angle derivatives of one leg.
    pub fn leg(&self, q: f64, side: Side) -> Result<LegKinematics, KinematicsError> {
        let (lt, ll) = (self.thigh_length, self.shank_length);
        let h = self.hip();
        let p = self.pedal(q, side);
        let dx = p[0] - h[0];
        let dy = p[1] - h[1];
        let d2 = dx * dx + dy * dy;
        let d = d2.sqrt();
        let cb = (lt * lt + d2 - ll * ll) / (2.0 * lt * d);
        if !(cb > -1.0 && cb < 1.0) {
            return Err(KinematicsError::ClosureViolation { q, side });
        }
        // Knee above the hip-pedal line.
        let thigh = dy.atan2(dx) + cb.acos();
        let knee = [h[0] + lt * thigh.cos(), h[1] + lt * thigh.sin()];
        let shank = (p[1] - knee[1]).atan2(p[0] - knee[0]);

        let (st, ct) = thigh.sin_cos();
        let (ss, cs) = shank.sin_cos();
        let det = lt * ll * (shank - thigh).sin();
        if det.abs() < 1e-12 {
            return Err(KinematicsError::SingularConfiguration { q, side });
        }
        // Solve [lt u'(th), ll u'(sh)] x = b with u'(a) = (-sin a, cos a).
        let solve = |b: [f64; 2]| -> (f64, f64) {
            (
                ll * (b[0] * cs + b[1] * ss) / det,
                -lt * (b[0] * ct + b[1] * st) / det,
            )
        };
        let a = side.pedal_angle(q);
        let lc = self.crank_length;
        let dp = [-lc * a.sin(), -lc * a.cos()];
        let (thigh_rate, shank_rate) = solve(dp);
        let ddp = [-p[0], -p[1]];
        let rhs = [
            ddp[0] + lt * ct * thigh_rate * thigh_rate + ll * cs * shank_rate * shank_rate,
            ddp[1] + lt * st * thigh_rate * thigh_rate + ll * ss * shank_rate * shank_rate,
        ];
        let (thigh_accel, shank_accel) = solve(rhs);
        Ok(LegKinematics {
            hip: h,
            knee,
            pedal: p,
            thigh_angle: thigh,
            shank_angle: shank,
            thigh_rate,
            shank_rate,
            thigh_accel,
            shank_accel,
        })
    }

    /// Partitions the crank cycle into right, left and uncontrolled arcs for
    /// the given `epsilon`.
    pub fn stimulation_regions(&self, epsilon: f64) -> Result<RegionMap, KinematicsError> {
        let max = self.max_negative_torque_ratio();
        if !(epsilon > 0.0 && epsilon < max) {
            return Err(KinematicsError::EpsilonTooLarge { epsilon, max });
        }
        let irregular = |reason: String| KinematicsError::IrregularPattern { epsilon, reason };
        let mut sides = Vec::with_capacity(2);
        for side in Side::BOTH {
            let f = |q: f64| -self.ratio_unchecked(q, side) - epsilon;
            let arcs = positive_arcs(f, SCAN_POINTS);
            if arcs.is_empty() {
                return Err(irregular(format!("no {side:?} arc found")));
            }
            sides.push(arcs);
        }
        let left = sides.pop().unwrap_or_default();
        let right = sides.pop().unwrap_or_default();

        let mut controlled: Vec<AngleArc> = right.iter().chain(left.iter()).copied().collect();
        controlled.sort_by(|a, b| a.start.total_cmp(&b.start));
        let mut uncontrolled = Vec::new();
        for (i, arc) in controlled.iter().enumerate() {
            let next = controlled[(i + 1) % controlled.len()];
            let gap = (next.start - arc.end()).rem_euclid(TAU);
            if gap > 0.0 && gap < TAU - 1e-12 {
                uncontrolled.push(AngleArc::new(arc.end(), gap));
            }
        }
        uncontrolled.sort_by(|a, b| a.start.total_cmp(&b.start));
        let dead = self.dead_points();
        for u in &uncontrolled {
            let n = dead.iter().filter(|&&d| u.contains(d)).count();
            if n != 1 {
                return Err(irregular(format!(
                    "uncontrolled arc starting at {} contains {n} dead points",
                    u.start
                )));
            }
        }
        if uncontrolled.len() != 2 {
            return Err(irregular(format!("expected 2 uncontrolled arcs, found {}", uncontrolled.len())));
        }
        Ok(RegionMap {
            epsilon,
            right,
            left,
            uncontrolled,
            dead_points: dead,
        })
    }
}

/// Arcs on the circle where a `2 pi`-periodic function is positive, with
/// endpoints refined by bisection.
fn positive_arcs<F: Fn(f64) -> f64>(f: F, n: usize) -> Vec<AngleArc> {
    let step = TAU / n as f64;
    let vals: Vec<f64> = (0..n).map(|i| f(i as f64 * step)).collect();
    let mut rises = Vec::new();
    let mut falls = Vec::new();
    for i in 0..n {
        let a = vals[i];
        let b = vals[(i + 1) % n];
        let lo = i as f64 * step;
        let hi = lo + step;
        if a <= 0.0 && b > 0.0 {
            rises.push(bisect(lo, hi, SWITCH_ANGLE_TOL, &f).unwrap_or(lo).rem_euclid(TAU));
        } else if a > 0.0 && b <= 0.0 {
            falls.push(bisect(lo, hi, SWITCH_ANGLE_TOL, &f).unwrap_or(hi).rem_euclid(TAU));
        }
    }
    if rises.is_empty() {
        return Vec::new();
    }
    let mut arcs = Vec::with_capacity(rises.len());
    for &r in &rises {
        // The first fall strictly after this rise, going round the circle.
        let end = falls
            .iter()
            .map(|&fa| (fa - r).rem_euclid(TAU))
            .filter(|&len| len > 0.0)
            .fold(f64::INFINITY, f64::min);
        if end.is_finite() {
            arcs.push(AngleArc::new(r, end));
        }
    }
    arcs.sort_by(|a, b| a.start.total_cmp(&b.start));
    arcs
}

/// Pose of one leg and its derivatives with respect to the crank angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegKinematics {
    pub hip: [f64; 2],
    pub knee: [f64; 2],
    pub pedal: [f64; 2],
    /// Absolute thigh direction (hip to knee), rad.
    pub thigh_angle: f64,
    /// Absolute shank direction (knee to pedal), rad.
    pub shank_angle: f64,
    pub thigh_rate: f64,
    pub shank_rate: f64,
    pub thigh_accel: f64,
    pub shank_accel: f64,
}

/// Half-open arc `[start, start + len)` on the circle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleArc {
    /// In `[0, 2 pi)`.
    pub start: f64,
    pub len: f64,
}

impl AngleArc {
    pub fn new(start: f64, len: f64) -> Self {
        AngleArc {
            start: start.rem_euclid(TAU),
            len,
        }
    }

    /// End angle, possibly beyond `2 pi` for wrapped arcs.
    pub fn end(&self) -> f64 {
        self.start + self.len
    }

    pub fn contains(&self, q: f64) -> bool {
        (q - self.start).rem_euclid(TAU) < self.len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Right,
    Left,
    Uncontrolled,
}

impl Region {
    pub fn side(self) -> Option<Side> {
        match self {
            Region::Right => Some(Side::Right),
            Region::Left => Some(Side::Left),
            Region::Uncontrolled => None,
        }
    }

    pub fn is_controlled(self) -> bool {
        self != Region::Uncontrolled
    }

    pub fn tag(self) -> &'static str {
        match self {
            Region::Right => "R",
            Region::Left => "L",
            Region::Uncontrolled => "U",
        }
    }
}

/// Crank-angle partition into stimulation regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    pub epsilon: f64,
    pub right: Vec<AngleArc>,
    pub left: Vec<AngleArc>,
    pub uncontrolled: Vec<AngleArc>,
    pub dead_points: [f64; 2],
}

impl RegionMap {
    pub fn region_at(&self, q: f64) -> Region {
        if self.right.iter().any(|a| a.contains(q)) {
            Region::Right
        } else if self.left.iter().any(|a| a.contains(q)) {
            Region::Left
        } else {
            Region::Uncontrolled
        }
    }

    pub fn controlled_arcs(&self) -> impl Iterator<Item = (Side, &AngleArc)> {
        self.right
            .iter()
            .map(|a| (Side::Right, a))
            .chain(self.left.iter().map(|a| (Side::Left, a)))
    }

    pub fn controlled_measure(&self) -> f64 {
        self.controlled_arcs().map(|(_, a)| a.len).sum()
    }

    pub fn uncontrolled_measure(&self) -> f64 {
        self.uncontrolled.iter().map(|a| a.len).sum()
    }

    /// All switching angles in `[0, 2 pi)`, ascending.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .uncontrolled
            .iter()
            .flat_map(|a| [a.start, a.end().rem_euclid(TAU)])
            .collect();
        b.sort_by(f64::total_cmp);
        b.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        b
    }

    /// The arc containing `q`, tagged with its region.
    pub fn arc_at(&self, q: f64) -> (Region, AngleArc) {
        let region = self.region_at(q);
        let list = match region {
            Region::Right => &self.right,
            Region::Left => &self.left,
            Region::Uncontrolled => &self.uncontrolled,
        };
        let arc = list
            .iter()
            .copied()
            .find(|a| a.contains(q))
            .unwrap_or(AngleArc { start: 0.0, len: TAU });
        (region, arc)
    }

    /// Length of the shortest controlled arc.
    pub fn min_controlled_len(&self) -> f64 {
        self.controlled_arcs().map(|(_, a)| a.len).fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn default_geometry() -> RiderGeometry {
        RiderGeometry::new(0.40, 0.43, 0.17, 0.60, 0.12).unwrap()
    }

    #[test]
    fn dead_point_examples() {
        let g = RiderGeometry::new(0.5, 0.5, 0.15, 0.4, 0.4).unwrap();
        let d = g.dead_points();
        assert!((d[0] - PI / 4.0).abs() < 1e-15);
        assert!((d[1] - 5.0 * PI / 4.0).abs() < 1e-15);
        let g = RiderGeometry::new(0.4, 0.43, 0.17, 0.6, 0.0).unwrap();
        assert_eq!(g.dead_points(), [0.0, PI]);
        let d = default_geometry().dead_points();
        assert!((d[0] - 0.19740).abs() < 5e-6);
        assert!((d[1] - 3.33899).abs() < 5e-6);
    }

    #[test]
    fn vertical_hip_dead_points() {
        let g = RiderGeometry::new(0.45, 0.45, 0.15, 0.0, 0.6).unwrap();
        let d = g.dead_points();
        assert!((d[0] - PI / 2.0).abs() < 1e-15);
        assert!((d[1] - 1.5 * PI).abs() < 1e-15);
    }

    #[test]
    fn equilateral_knee() {
        // Choose q so that D = l_t = l_l.
        let g = RiderGeometry::new(0.5, 0.5, 0.15, 0.45, 0.1).unwrap();
        let q = crate::numeric::bisect(PI, TAU, 1e-14, |q| {
            g.hip_pedal_distance_sq(q, Side::Right) - 0.25
        })
        .unwrap();
        let qk = g.knee_angle(q, Side::Right).unwrap();
        assert!((qk - PI / 3.0).abs() < 1e-9);
    }

    #[test]
    fn knee_most_open_at_max_distance() {
        let g = default_geometry();
        let [q_star, _] = g.dead_points();
        let at_star = g.knee_angle(q_star, Side::Right).unwrap();
        for i in 0..1000 {
            let q = i as f64 * TAU / 1000.0;
            assert!(g.knee_angle(q, Side::Right).unwrap() <= at_star + 1e-15);
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(RiderGeometry::new(0.0, 0.4, 0.17, 0.6, 0.1).is_err());
        assert!(RiderGeometry::new(0.4, 0.4, 0.17, 0.0, 0.0).is_err());
        // Legs too short to reach the pedal.
        assert!(RiderGeometry::new(0.3, 0.3, 0.17, 0.6, 0.12).is_err());
        // Nearly straight at full reach.
        assert!(RiderGeometry::new(0.385, 0.385, 0.17, 0.6, 0.0).is_err());
    }

    #[test]
    fn ratio_sign_structure() {
        let g = default_geometry();
        let [q0, q1] = g.dead_points();
        for i in 1..999 {
            // Between the dead points the left leg pushes, then the right.
            let q = q0 + (q1 - q0) * i as f64 / 1000.0;
            assert!(g.torque_transfer_ratio(q, Side::Left).unwrap() < 0.0);
            assert!(g.torque_transfer_ratio(q, Side::Right).unwrap() > 0.0);
            let q = q1 + PI * i as f64 / 1000.0;
            assert!(g.torque_transfer_ratio(q, Side::Right).unwrap() < 0.0);
            assert!(g.torque_transfer_ratio(q, Side::Left).unwrap() > 0.0);
        }
    }

    #[test]
    fn leg_chain_closes() {
        let g = default_geometry();
        for i in 0..64 {
            let q = i as f64 * TAU / 64.0;
            for side in Side::BOTH {
                let leg = g.leg(q, side).unwrap();
                let dx = leg.knee[0] - leg.hip[0];
                let dy = leg.knee[1] - leg.hip[1];
                assert!((dx.hypot(dy) - g.thigh_length).abs() < 1e-12);
                let dx = leg.pedal[0] - leg.knee[0];
                let dy = leg.pedal[1] - leg.knee[1];
                assert!((dx.hypot(dy) - g.shank_length).abs() < 1e-12);
                // Knee sits above the hip-pedal line.
                let cross = (leg.pedal[0] - leg.hip[0]) * (leg.knee[1] - leg.hip[1])
                    - (leg.pedal[1] - leg.hip[1]) * (leg.knee[0] - leg.hip[0]);
                assert!(cross > 0.0);
            }
        }
    }

    #[test]
    fn segment_rates_match_finite_difference() {
        let g = default_geometry();
        let h = 1e-6;
        for i in 0..256 {
            let q = i as f64 * TAU / 256.0;
            for side in Side::BOTH {
                let l = g.leg(q, side).unwrap();
                let lp = g.leg(q + h, side).unwrap();
                let lm = g.leg(q - h, side).unwrap();
                let fd_t = (lp.thigh_angle - lm.thigh_angle) / (2.0 * h);
                let fd_s = (lp.shank_angle - lm.shank_angle) / (2.0 * h);
                assert!((fd_t - l.thigh_rate).abs() < 1e-7 * (1.0 + l.thigh_rate.abs()));
                assert!((fd_s - l.shank_rate).abs() < 1e-7 * (1.0 + l.shank_rate.abs()));
                let fd_ta = (lp.thigh_rate - lm.thigh_rate) / (2.0 * h);
                let fd_sa = (lp.shank_rate - lm.shank_rate) / (2.0 * h);
                assert!((fd_ta - l.thigh_accel).abs() < 1e-6 * (1.0 + l.thigh_accel.abs()));
                assert!((fd_sa - l.shank_accel).abs() < 1e-6 * (1.0 + l.shank_accel.abs()));
            }
        }
    }

    #[test]
    fn ratio_is_relative_segment_rotation() {
        let g = default_geometry();
        for i in 0..128 {
            let q = i as f64 * TAU / 128.0;
            for side in Side::BOTH {
                let l = g.leg(q, side).unwrap();
                let b = g.torque_transfer_ratio(q, side).unwrap();
                assert!((b - (l.thigh_rate - l.shank_rate)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn regions_partition_circle() {
        let g = default_geometry();
        let eps = 0.5 * g.max_abs_torque_ratio();
        let m = g.stimulation_regions(eps).unwrap();
        assert_eq!(m.right.len(), 1);
        assert_eq!(m.left.len(), 1);
        assert_eq!(m.uncontrolled.len(), 2);
        let total = m.controlled_measure() + m.uncontrolled_measure();
        assert!((total - TAU).abs() < 1e-9);
        for b in m.boundaries() {
            let side_b = [Side::Right, Side::Left]
                .iter()
                .map(|&s| (-g.torque_transfer_ratio(b, s).unwrap() - eps).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(side_b < 1e-8);
        }
    }

    #[test]
    fn epsilon_bounds_enforced() {
        let g = default_geometry();
        let max = g.max_negative_torque_ratio();
        assert!(matches!(g.stimulation_regions(0.0), Err(KinematicsError::EpsilonTooLarge { .. })));
        assert!(matches!(g.stimulation_regions(max), Err(KinematicsError::EpsilonTooLarge { .. })));
        assert!(g.stimulation_regions(0.999 * max).is_ok());
    }

    #[test]
    fn arc_contains_wraps() {
        let a = AngleArc::new(6.0, 1.0);
        assert!(a.contains(6.1));
        assert!(a.contains(0.5));
        assert!(!a.contains(0.8));
        assert!(a.contains(6.0));
        assert!(!a.contains(6.0 + 1.0 - TAU));
    }
}
