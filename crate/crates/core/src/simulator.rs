//! Hybrid closed-loop integration with event localization, trace export and
//! envelope audits.

use std::f64::consts::TAU;
use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{growth_envelope_v, rdt_max_offtime, AnalysisConstants};
use crate::controller::{
    control_voltage, control_voltage_with_sign, gate, tracking_errors, ActuatorLimits, ControllerGains,
    ErrorState, PulseWidthMap, TrajectorySpec,
};
use crate::dynamics::{CrankState, DynamicsParams, ModelError, Rider};
use crate::kinematics::{Region, RegionMap, RiderGeometry, Side};

pub const ESCAPE_NORM: f64 = 1e6;
pub const STALL_TIME: f64 = 10.0;
/// Time resolution of event localization.
pub const EVENT_TIME_TOL: f64 = 1e-13;
/// `|e2|` below which a state counts as on the switching surface.
pub const SURFACE_TOL: f64 = 1e-9;
pub const STEP_RANGE: (f64, f64) = (1e-6, 1e-2);
/// Relative tolerance of the decay and growth envelope audit.
pub const ENVELOPE_TOL: f64 = 1e-9;
/// Absolute slack for envelopes that are numerically zero.
pub const ENVELOPE_FLOOR: f64 = 1e-18;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("tracking error escaped: |z| = {z_norm} at t = {t} s")]
    EscapeDetected { t: f64, z_norm: f64 },
    #[error("crank stalled in the uncontrolled region (no forward progress for more than {STALL_TIME} s, t = {t} s, q = {q} rad)")]
    NonForwardProgress { t: f64, q: f64 },
    #[error("time limit of {limit} s reached after {revolutions} revolutions")]
    TimeLimit { limit: f64, revolutions: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Duration {
    Revolutions(f64),
    Seconds(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub geometry: RiderGeometry,
    pub dynamics: DynamicsParams,
    pub gains: ControllerGains,
    pub trajectory: TrajectorySpec,
    pub limits: ActuatorLimits,
    pub initial: CrankState,
    pub step_size: f64,
    pub duration: Duration,
    /// Abort when simulated time exceeds this many seconds.
    pub max_time: f64,
    /// Record every n-th regular step; event steps are always recorded.
    pub sample_every: usize,
    pub name: String,
}

impl Scenario {
    pub fn new(
        geometry: RiderGeometry,
        dynamics: DynamicsParams,
        gains: ControllerGains,
        trajectory: TrajectorySpec,
    ) -> Self {
        Scenario {
            geometry,
            dynamics,
            gains,
            trajectory,
            limits: ActuatorLimits::default(),
            initial: CrankState { q: trajectory.q_start, q_dot: 0.0, t: trajectory.t_start },
            step_size: 1e-4,
            duration: Duration::Revolutions(90.0),
            max_time: 3600.0,
            sample_every: 1,
            name: String::new(),
        }
    }

    /// Builds the rider and region map and checks every scenario invariant.
    pub fn build(&self) -> Result<(Rider, RegionMap), SimulationError> {
        let rider = Rider::new(self.geometry, self.dynamics)?;
        self.gains.validate().map_err(SimulationError::InvalidScenario)?;
        self.trajectory.validate().map_err(SimulationError::InvalidScenario)?;
        self.limits.validate().map_err(SimulationError::InvalidScenario)?;
        let regions = self
            .geometry
            .stimulation_regions(self.gains.epsilon)
            .map_err(|e| SimulationError::Model(e.into()))?;
        let (lo, hi) = STEP_RANGE;
        if !(self.step_size >= lo && self.step_size <= hi) {
            return Err(SimulationError::InvalidScenario(format!(
                "step_size {} outside [{lo}, {hi}]",
                self.step_size
            )));
        }
        let s = &self.initial;
        if !(s.q.is_finite() && s.q_dot.is_finite() && s.t.is_finite()) {
            return Err(SimulationError::InvalidScenario("initial state must be finite".into()));
        }
        if !regions.region_at(s.q).is_controlled() {
            return Err(SimulationError::InvalidScenario(format!(
                "initial crank angle {} rad lies in the uncontrolled region; it must start in a controlled region",
                s.q
            )));
        }
        match self.duration {
            Duration::Revolutions(n) | Duration::Seconds(n) if !(n > 0.0 && n.is_finite()) => {
                return Err(SimulationError::InvalidScenario(format!("duration must be > 0, got {n}")));
            }
            _ => {}
        }
        if !(self.max_time > 0.0) || self.sample_every == 0 {
            return Err(SimulationError::InvalidScenario("max_time and sample_every must be positive".into()));
        }
        Ok((rider, regions))
    }
}

/// Per-step recorded channels, struct-of-arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceChannels {
    pub t: Vec<f64>,
    pub q: Vec<f64>,
    pub q_dot: Vec<f64>,
    pub q_d: Vec<f64>,
    pub q_d_dot: Vec<f64>,
    pub e1: Vec<f64>,
    pub e1_dot: Vec<f64>,
    pub e2: Vec<f64>,
    pub v_l: Vec<f64>,
    pub u_r: Vec<f64>,
    pub u_l: Vec<f64>,
    pub region: Vec<Region>,
    /// True while the state slides on `e2 = 0`.
    pub sliding: Vec<bool>,
}

impl TraceChannels {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn z_norm(&self, i: usize) -> f64 {
        self.e1[i].hypot(self.e2[i])
    }
}

/// One controlled stretch: switched on at `t_on`, off at `t_off`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchingRecord {
    pub n: usize,
    pub side: Side,
    pub t_on: f64,
    pub q_on: f64,
    /// False for the initial stretch, which starts inside the region.
    pub on_at_boundary: bool,
    pub t_off: Option<f64>,
    pub q_off: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaturationEvent {
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub channels: TraceChannels,
    pub schedule: Vec<SwitchingRecord>,
    pub saturation_events: Vec<SaturationEvent>,
    pub sliding_intervals: Vec<(f64, f64)>,
    pub final_state: CrankState,
    pub revolutions: f64,
    pub steps: usize,
    pub regions: RegionMap,
    /// Set by callers that certified the gains.
    pub certified: Option<bool>,
}

impl SimulationTrace {
    /// Mean crank speed over the final `window` seconds (rad/s).
    pub fn mean_cadence(&self, window: f64) -> f64 {
        let c = &self.channels;
        let t_end = self.final_state.t;
        let i0 = c.t.partition_point(|&t| t < t_end - window).min(c.len().saturating_sub(1));
        let dt = t_end - c.t[i0];
        if dt > 0.0 {
            (self.final_state.q - c.q[i0]) / dt
        } else {
            self.final_state.q_dot
        }
    }

    /// Range of `q_d' - q'` over the final `window` seconds.
    pub fn cadence_error_band(&self, window: f64) -> (f64, f64) {
        let c = &self.channels;
        let t_end = self.final_state.t;
        let i0 = c.t.partition_point(|&t| t < t_end - window);
        (i0..c.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
            let e = c.q_d_dot[i] - c.q_dot[i];
            (lo.min(e), hi.max(e))
        })
    }

    /// Writes the per-step channels as CSV.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "t,q,q_dot,q_d,q_d_dot,e1,e1_dot,e2,V_L,u_R,u_L,active_region")?;
        let c = &self.channels;
        for i in 0..c.len() {
            let row = [
                c.t[i], c.q[i], c.q_dot[i], c.q_d[i], c.q_d_dot[i], c.e1[i], c.e1_dot[i], c.e2[i], c.v_l[i],
                c.u_r[i], c.u_l[i],
            ];
            for x in row {
                write!(w, "{},", fmt17(x))?;
            }
            writeln!(w, "{}", c.region[i].tag())?;
        }
        Ok(())
    }

    /// Writes the switching schedule as CSV.
    pub fn write_schedule_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "n,side,t_on,q_on,t_off,q_off")?;
        for r in &self.schedule {
            let side = match r.side {
                Side::Right => "R",
                Side::Left => "L",
            };
            let opt = |x: Option<f64>| x.map(fmt17).unwrap_or_default();
            writeln!(w, "{},{side},{},{},{},{}", r.n, fmt17(r.t_on), fmt17(r.q_on), opt(r.t_off), opt(r.q_off))?;
        }
        Ok(())
    }

    /// Pulse widths for the recorded inputs.
    pub fn pulse_widths(&self, map: &PulseWidthMap) -> Vec<(f64, f64)> {
        let c = &self.channels;
        c.u_r.iter().zip(&c.u_l).map(|(&r, &l)| (map.width(r), map.width(l))).collect()
    }
}

/// 17 significant digits, locale independent.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    Uncontrolled,
    Switched { side: Side, sigma: f64 },
    Sliding { side: Side },
    Smooth { side: Side },
}

impl Mode {
    fn region(self) -> Region {
        match self {
            Mode::Uncontrolled => Region::Uncontrolled,
            Mode::Switched { side, .. } | Mode::Sliding { side } | Mode::Smooth { side } => match side {
                Side::Right => Region::Right,
                Side::Left => Region::Left,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct State {
    t: f64,
    q: f64,
    qd: f64,
}

impl State {
    fn crank(self) -> CrankState {
        CrankState { q: self.q, q_dot: self.qd, t: self.t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Stop,
    Region,
    Sign,
    SlideExit,
}

struct Engine<'a> {
    rider: &'a Rider,
    regions: &'a RegionMap,
    gains: &'a ControllerGains,
    traj: &'a TrajectorySpec,
    limits: &'a ActuatorLimits,
}

impl Engine<'_> {
    fn errors(&self, s: State) -> ErrorState {
        tracking_errors(&s.crank(), &self.traj.desired(s.t), self.gains.alpha)
    }

    /// Applied voltage in a controlled mode and whether it saturated.
    fn voltage(&self, mode: Mode, s: State) -> (f64, bool) {
        let err = self.errors(s);
        let raw = match mode {
            Mode::Uncontrolled => return (0.0, false),
            Mode::Switched { sigma, .. } => control_voltage_with_sign(self.gains, &err, sigma),
            Mode::Smooth { .. } => control_voltage(self.gains, &err),
            Mode::Sliding { side } => return (self.equivalent_voltage(side, s), false),
        };
        self.limits.apply(raw)
    }

    fn accel_with(&self, region: Region, s: State, v: f64) -> f64 {
        let (ur, ul) = gate(region, v);
        self.rider.forward_dynamics(&s.crank(), ur, ul)
    }

    fn accel(&self, mode: Mode, s: State) -> f64 {
        let (v, _) = self.voltage(mode, s);
        self.accel_with(mode.region(), s, v)
    }

    /// `e2'` under the selection `sigma` at state `s`.
    fn e2_rate(&self, side: Side, sigma: f64, s: State) -> f64 {
        let mode = Mode::Switched { side, sigma };
        let d = self.traj.desired(s.t);
        (d.q_ddot - self.accel(mode, s)) + self.gains.alpha * (d.q_dot - s.qd)
    }

    fn sliding_holds(&self, side: Side, s: State) -> bool {
        self.e2_rate(side, 1.0, s) < 0.0 && self.e2_rate(side, -1.0, s) > 0.0
    }

    /// Voltage keeping the state on `e2 = 0`.
    fn equivalent_voltage(&self, side: Side, s: State) -> f64 {
        let region = Mode::Sliding { side }.region();
        let d = self.traj.desired(s.t);
        let e1 = d.q - s.q;
        let target = d.q_ddot - self.gains.alpha * self.gains.alpha * e1;
        let a0 = self.accel_with(region, s, 0.0);
        let a1 = self.accel_with(region, s, 1.0);
        (target - a0) / (a1 - a0)
    }

    /// Puts a sliding state exactly on the surface.
    fn project(&self, s: State) -> State {
        let d = self.traj.desired(s.t);
        State { qd: d.q_dot + self.gains.alpha * (d.q - s.q), ..s }
    }

    fn select_mode(&self, s: State, on_surface: bool) -> (Mode, State) {
        let region = self.regions.region_at(s.q);
        let Some(side) = region.side() else {
            return (Mode::Uncontrolled, s);
        };
        if self.gains.boundary_layer.is_some() {
            return (Mode::Smooth { side }, s);
        }
        let e2 = self.errors(s).e2;
        if !(on_surface || e2.abs() <= SURFACE_TOL) {
            return (Mode::Switched { side, sigma: e2.signum() }, s);
        }
        let up = self.e2_rate(side, 1.0, s);
        let down = self.e2_rate(side, -1.0, s);
        if up < 0.0 && down > 0.0 {
            (Mode::Sliding { side }, self.project(s))
        } else if up >= 0.0 {
            (Mode::Switched { side, sigma: 1.0 }, s)
        } else {
            (Mode::Switched { side, sigma: -1.0 }, s)
        }
    }

    fn step(&self, mode: Mode, s: State, h: f64) -> State {
        if let Mode::Sliding { .. } = mode {
            let alpha = self.gains.alpha;
            let f = |t: f64, q: f64| {
                let d = self.traj.desired(t);
                d.q_dot + alpha * (d.q - q)
            };
            let k1 = f(s.t, s.q);
            let k2 = f(s.t + 0.5 * h, s.q + 0.5 * h * k1);
            let k3 = f(s.t + 0.5 * h, s.q + 0.5 * h * k2);
            let k4 = f(s.t + h, s.q + h * k3);
            let q = s.q + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            return self.project(State { t: s.t + h, q, qd: 0.0 });
        }
        let acc = |t: f64, q: f64, qd: f64| self.accel(mode, State { t, q, qd });
        let k1q = s.qd;
        let k1v = acc(s.t, s.q, s.qd);
        let k2q = s.qd + 0.5 * h * k1v;
        let k2v = acc(s.t + 0.5 * h, s.q + 0.5 * h * k1q, k2q);
        let k3q = s.qd + 0.5 * h * k2v;
        let k3v = acc(s.t + 0.5 * h, s.q + 0.5 * h * k2q, k3q);
        let k4q = s.qd + h * k3v;
        let k4v = acc(s.t + h, s.q + h * k3q, k4q);
        State {
            t: s.t + h,
            q: s.q + h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q),
            qd: s.qd + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
        }
    }

    fn event(&self, mode: Mode, start: State, end: State, stop: &Stop, check_sign: bool) -> Option<Event> {
        if stop.reached(end) {
            return Some(Event::Stop);
        }
        if self.regions.region_at(end.q) != mode.region() {
            return Some(Event::Region);
        }
        match mode {
            Mode::Switched { sigma, .. } if check_sign => {
                let before = sigma * self.errors(start).e2;
                let after = sigma * self.errors(end).e2;
                (after < before.min(0.0)).then_some(Event::Sign)
            }
            Mode::Sliding { side } => (!self.sliding_holds(side, end)).then_some(Event::SlideExit),
            _ => None,
        }
    }
}

struct Stop {
    q_end: f64,
    t_end: f64,
}

impl Stop {
    fn reached(&self, s: State) -> bool {
        s.q >= self.q_end || s.t >= self.t_end
    }
}

struct Recorder {
    trace: TraceChannels,
    sat_open: Option<f64>,
    saturation: Vec<SaturationEvent>,
    slide_open: Option<f64>,
    sliding: Vec<(f64, f64)>,
}

/// Integrates the switched closed loop until the configured duration.
pub fn simulate(scenario: &Scenario) -> Result<SimulationTrace, SimulationError> {
    let (rider, regions) = scenario.build()?;
    let eng = Engine {
        rider: &rider,
        regions: &regions,
        gains: &scenario.gains,
        traj: &scenario.trajectory,
        limits: &scenario.limits,
    };
    let s0 = scenario.initial;
    let stop = match scenario.duration {
        Duration::Revolutions(n) => Stop { q_end: s0.q + n * TAU, t_end: f64::INFINITY },
        Duration::Seconds(d) => Stop { q_end: f64::INFINITY, t_end: s0.t + d },
    };
    let h = scenario.step_size;
    let mut s = State { t: s0.t, q: s0.q, qd: s0.q_dot };
    let (mut mode, s_init) = eng.select_mode(s, false);
    s = s_init;
    let mut rec = Recorder {
        trace: TraceChannels::default(),
        sat_open: None,
        saturation: Vec::new(),
        slide_open: None,
        sliding: Vec::new(),
    };
    let mut schedule = vec![SwitchingRecord {
        n: 0,
        side: mode.region().side().expect("initial region is controlled"),
        t_on: s.t,
        q_on: s.q,
        on_at_boundary: false,
        t_off: None,
        q_off: None,
    }];
    record(&eng, &mut rec, mode, s);
    let mut steps = 0usize;
    let mut q_reach = s.q;
    let mut last_advance = s.t;
    let mut tiny_events = 0usize;

    loop {
        let mut hs = h;
        if stop.t_end.is_finite() {
            hs = hs.min(stop.t_end - s.t);
        }
        let check_sign = tiny_events < 50;
        let trial = eng.step(mode, s, hs);
        let (next, ev) = match eng.event(mode, s, trial, &stop, check_sign) {
            None => (trial, None),
            Some(_) => {
                let (mut lo, mut hi) = (0.0, hs);
                while hi - lo > EVENT_TIME_TOL {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if eng.event(mode, s, eng.step(mode, s, mid), &stop, check_sign).is_some() {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let st = if stop.t_end.is_finite() && hi == hs { trial } else { eng.step(mode, s, hi) };
                let ev = eng.event(mode, s, st, &stop, check_sign);
                tiny_events = if hi <= 1e-12 { tiny_events + 1 } else { 0 };
                (st, ev)
            }
        };
        steps += 1;
        if ev.is_none() {
            tiny_events = 0;
        }
        s = next;
        let prev_region = mode.region();
        match ev {
            Some(Event::Stop) | None => {}
            Some(Event::Region) => {
                let (m, st) = eng.select_mode(s, false);
                mode = m;
                s = st;
            }
            Some(Event::Sign) | Some(Event::SlideExit) => {
                let (m, st) = eng.select_mode(s, true);
                mode = m;
                s = st;
            }
        }
        let new_region = mode.region();
        if new_region != prev_region {
            if prev_region.is_controlled() {
                if let Some(last) = schedule.last_mut() {
                    if last.t_off.is_none() {
                        last.t_off = Some(s.t);
                        last.q_off = Some(s.q);
                    }
                }
            }
            if let Some(side) = new_region.side() {
                let n = schedule.len();
                schedule.push(SwitchingRecord {
                    n,
                    side,
                    t_on: s.t,
                    q_on: s.q,
                    on_at_boundary: true,
                    t_off: None,
                    q_off: None,
                });
            }
        }
        let is_stop = matches!(ev, Some(Event::Stop)) || stop.reached(s);
        if ev.is_some() || steps % scenario.sample_every == 0 || is_stop {
            record(&eng, &mut rec, mode, s);
        } else {
            track_flags(&eng, &mut rec, mode, s);
        }

        let err = eng.errors(s);
        if !(err.z_norm <= ESCAPE_NORM) {
            return Err(SimulationError::EscapeDetected { t: s.t, z_norm: err.z_norm });
        }
        // Stalled: no new forward extent of q for STALL_TIME while uncontrolled.
        if s.q > q_reach {
            q_reach = s.q;
            last_advance = s.t;
        } else if mode == Mode::Uncontrolled && s.t - last_advance > STALL_TIME {
            return Err(SimulationError::NonForwardProgress { t: s.t, q: s.q });
        }
        if is_stop {
            break;
        }
        if s.t - s0.t > scenario.max_time {
            return Err(SimulationError::TimeLimit {
                limit: scenario.max_time,
                revolutions: (s.q - s0.q) / TAU,
            });
        }
    }
    if let Some(t0) = rec.sat_open.take() {
        rec.saturation.push(SaturationEvent { t_start: t0, t_end: s.t });
    }
    if let Some(t0) = rec.slide_open.take() {
        rec.sliding.push((t0, s.t));
    }
    Ok(SimulationTrace {
        channels: rec.trace,
        schedule,
        saturation_events: rec.saturation,
        sliding_intervals: rec.sliding,
        final_state: s.crank(),
        revolutions: (s.q - s0.q) / TAU,
        steps,
        regions,
        certified: None,
    })
}

fn track_flags(eng: &Engine<'_>, rec: &mut Recorder, mode: Mode, s: State) -> f64 {
    let (v, sat) = eng.voltage(mode, s);
    match (sat, rec.sat_open) {
        (true, None) => rec.sat_open = Some(s.t),
        (false, Some(t0)) => {
            rec.saturation.push(SaturationEvent { t_start: t0, t_end: s.t });
            rec.sat_open = None;
        }
        _ => {}
    }
    let sliding = matches!(mode, Mode::Sliding { .. });
    match (sliding, rec.slide_open) {
        (true, None) => rec.slide_open = Some(s.t),
        (false, Some(t0)) => {
            rec.sliding.push((t0, s.t));
            rec.slide_open = None;
        }
        _ => {}
    }
    v
}

fn record(eng: &Engine<'_>, rec: &mut Recorder, mode: Mode, s: State) {
    let v = track_flags(eng, rec, mode, s);
    let d = eng.traj.desired(s.t);
    let err = eng.errors(s);
    let (ur, ul) = gate(mode.region(), v);
    let tr = &mut rec.trace;
    tr.t.push(s.t);
    tr.q.push(s.q);
    tr.q_dot.push(s.qd);
    tr.q_d.push(d.q);
    tr.q_d_dot.push(d.q_dot);
    tr.e1.push(err.e1);
    tr.e1_dot.push(err.e1_dot(eng.gains.alpha));
    tr.e2.push(err.e2);
    tr.v_l.push(0.5 * (err.e1 * err.e1 + eng.rider.inertia(s.q) * err.e2 * err.e2));
    tr.u_r.push(ur);
    tr.u_l.push(ul);
    tr.region.push(mode.region());
    tr.sliding.push(matches!(mode, Mode::Sliding { .. }));
}

/// One audited inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub kind: &'static str,
    pub segment: usize,
    pub t_start: f64,
    /// Worst observed value over the segment.
    pub value: f64,
    pub limit: f64,
    pub margin: f64,
    pub sliding: bool,
    pub pass: bool,
}

/// Result of comparing a trace with the certified envelopes.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct BoundReport {
    pub checks: Vec<BoundCheck>,
    /// Worst `V_L / (envelope (1 + tol) + floor)` on controlled segments
    /// without sliding; the audit passes when every ratio is at most one.
    pub decay_ratio: f64,
    /// Same ratio on controlled segments with sliding.
    pub decay_ratio_sliding: f64,
    pub growth_ratio: f64,
    /// Smallest `rdt - dt_off` over completed off-intervals.
    pub rdt_margin: f64,
    /// Switch-on norms `|z(t_on)|` in order.
    pub z_on: Vec<f64>,
    /// First index from which every `|z(t_on)| <= d`.
    pub equilibration_index: Option<usize>,
    pub d_radius: f64,
    pub pass: bool,
}

impl BoundReport {
    pub fn failures(&self) -> impl Iterator<Item = &BoundCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

fn within(v: f64, env: f64) -> bool {
    v <= env * (1.0 + ENVELOPE_TOL) + ENVELOPE_FLOOR
}

/// `V_L` over its allowance; at most one exactly when [`within`] holds.
fn ratio(v: f64, env: f64) -> f64 {
    v / (env * (1.0 + ENVELOPE_TOL) + ENVELOPE_FLOOR)
}

/// Audits a trace against the decay, growth, dwell-time and ultimate-bound
/// certificates. Segments are maximal runs of samples with the same
/// controlled/uncontrolled status.
pub fn audit_bounds(trace: &TraceChannels, k: &AnalysisConstants) -> BoundReport {
    let mut rep = BoundReport { d_radius: k.d_radius, rdt_margin: f64::INFINITY, ..BoundReport::default() };
    let n = trace.len();
    let mut i = 0;
    let mut seg = 0;
    while i < n {
        let ctrl = trace.region[i].is_controlled();
        let mut j = i;
        while j + 1 < n && trace.region[j + 1].is_controlled() == ctrl {
            j += 1;
        }
        let t0 = trace.t[i];
        let v0 = trace.v_l[i];
        let closed = j + 1 < n;
        if ctrl {
            rep.z_on.push(trace.z_norm(i));
            let mut worst = 0.0f64;
            let mut pass = true;
            let mut excess = f64::NEG_INFINITY;
            let mut slid = false;
            for m in i..=j {
                let env = v0 * (-k.gamma1 * (trace.t[m] - t0) / k.lambda2).exp();
                slid |= trace.sliding[m];
                pass &= within(trace.v_l[m], env);
                excess = excess.max(trace.v_l[m] - env);
                worst = worst.max(ratio(trace.v_l[m], env));
            }
            if slid {
                rep.decay_ratio_sliding = rep.decay_ratio_sliding.max(worst);
            } else {
                rep.decay_ratio = rep.decay_ratio.max(worst);
            }
            rep.checks.push(BoundCheck {
                kind: "decay",
                segment: seg,
                t_start: t0,
                value: worst,
                limit: 1.0,
                margin: -excess,
                sliding: slid,
                pass,
            });
        } else {
            let mut worst = 0.0f64;
            let mut pass = true;
            let mut excess = f64::NEG_INFINITY;
            for m in i..=j {
                match growth_envelope_v(v0, &k.growth, trace.t[m] - t0) {
                    Ok(env) => {
                        pass &= within(trace.v_l[m], env);
                        excess = excess.max(trace.v_l[m] - env);
                        worst = worst.max(ratio(trace.v_l[m], env));
                    }
                    Err(_) => {
                        pass = false;
                        worst = f64::INFINITY;
                        excess = f64::INFINITY;
                    }
                }
            }
            rep.growth_ratio = rep.growth_ratio.max(worst);
            rep.checks.push(BoundCheck {
                kind: "growth",
                segment: seg,
                t_start: t0,
                value: worst,
                limit: 1.0,
                margin: -excess,
                sliding: false,
                pass,
            });
            if closed {
                let dt = trace.t[j + 1] - t0;
                let rdt = rdt_max_offtime(trace.z_norm(i), &k.growth, k.lambda2);
                rep.rdt_margin = rep.rdt_margin.min(rdt - dt);
                rep.checks.push(BoundCheck {
                    kind: "reverse dwell-time",
                    segment: seg,
                    t_start: t0,
                    value: dt,
                    limit: rdt,
                    margin: rdt - dt,
                    sliding: false,
                    pass: dt < rdt,
                });
            }
        }
        seg += 1;
        i = j + 1;
    }
    let z_on = &rep.z_on;
    let mut idx = z_on.len();
    while idx > 0 && z_on[idx - 1] <= k.d_radius {
        idx -= 1;
    }
    rep.equilibration_index = (idx < z_on.len()).then_some(idx);
    let tail_pass = rep.equilibration_index.is_some();
    rep.checks.push(BoundCheck {
        kind: "ultimate bound tail",
        segment: rep.equilibration_index.unwrap_or(z_on.len()),
        t_start: f64::NAN,
        value: z_on.last().copied().unwrap_or(f64::NAN),
        limit: k.d_radius,
        margin: k.d_radius - z_on.last().copied().unwrap_or(f64::NAN),
        sliding: false,
        pass: tail_pass,
    });
    rep.pass = rep.checks.iter().all(|c| c.pass);
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::GrowthConstants;

    fn geometry() -> RiderGeometry {
        RiderGeometry::new(0.40, 0.43, 0.17, 0.60, 0.12).unwrap()
    }

    fn low_gains(eps: f64) -> ControllerGains {
        ControllerGains { alpha: 7.0, k1: 10.0, k2: 0.1, k3: 0.1, k4: 0.1, epsilon: eps, boundary_layer: None }
    }

    fn scenario(dur: Duration) -> Scenario {
        let g = geometry();
        let mut sc = Scenario::new(
            g,
            DynamicsParams::default(),
            low_gains(0.5 * g.max_abs_torque_ratio()),
            TrajectorySpec::default(),
        );
        let regions = g.stimulation_regions(sc.gains.epsilon).unwrap();
        let arc = regions.right[0];
        sc.initial.q = arc.start + 0.1;
        sc.trajectory.q_start = sc.initial.q;
        sc.duration = dur;
        sc
    }

    #[test]
    fn rejects_start_in_uncontrolled_region() {
        let mut sc = scenario(Duration::Seconds(1.0));
        let regions = sc.geometry.stimulation_regions(sc.gains.epsilon).unwrap();
        sc.initial.q = regions.dead_points[0];
        let err = sc.build().unwrap_err();
        assert!(matches!(err, SimulationError::InvalidScenario(ref m) if m.contains("uncontrolled")));
        let mut sc = scenario(Duration::Seconds(1.0));
        sc.step_size = 0.1;
        assert!(sc.build().is_err());
    }

    #[test]
    fn ballistic_energy_is_conserved() {
        // Damping must stay positive; 1e-300 is numerically frictionless.
        let p = DynamicsParams {
            crank_damping: 1e-300,
            visco_static: 0.0,
            visco_viscous: 0.0,
            disturbance_amplitude: 0.0,
            ..DynamicsParams::default()
        };
        let mut sc = scenario(Duration::Seconds(10.0));
        sc.dynamics = p;
        sc.gains = ControllerGains { alpha: 1.0, k1: 0.0, k2: 0.0, k3: 0.0, k4: 0.0, ..sc.gains };
        sc.initial.q_dot = 6.0;
        let tr = simulate(&sc).unwrap();
        let rider = Rider::new(sc.geometry, p).unwrap();
        let e0 = rider.energy(sc.initial.q, sc.initial.q_dot);
        let c = &tr.channels;
        let drift = (0..c.len())
            .map(|i| (rider.energy(c.q[i], c.q_dot[i]) - e0).abs() / e0.abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-6, "drift {drift}");
        assert!(c.u_r.iter().chain(&c.u_l).all(|&u| u == 0.0));
    }

    #[test]
    fn schedule_events_sit_on_boundaries() {
        let sc = scenario(Duration::Revolutions(3.0));
        let tr = simulate(&sc).unwrap();
        let g = sc.geometry;
        let eps = sc.gains.epsilon;
        assert!(tr.schedule.len() >= 6);
        let mut last = f64::NEG_INFINITY;
        for r in &tr.schedule {
            let mut pts = vec![];
            if r.on_at_boundary {
                pts.push((r.t_on, r.q_on));
            }
            if let (Some(t), Some(q)) = (r.t_off, r.q_off) {
                pts.push((t, q));
            }
            for (t, q) in pts {
                assert!(t > last);
                last = t;
                let b = g.torque_transfer_ratio(q, r.side).unwrap();
                assert!(((-b) - eps).abs() < 1e-7, "|-B - eps| = {}", ((-b) - eps).abs());
            }
        }
        let c = &tr.channels;
        for i in 0..c.len() {
            assert_eq!(c.u_r[i] * c.u_l[i], 0.0);
            assert_eq!(c.region[i], tr.regions.region_at(c.q[i]));
            if c.region[i] == Region::Uncontrolled {
                assert_eq!((c.u_r[i], c.u_l[i]), (0.0, 0.0));
            }
        }
        assert!((tr.revolutions - 3.0).abs() < 1e-9);
    }

    #[test]
    fn unpowered_crank_stalls_uncontrolled() {
        let mut sc = scenario(Duration::Revolutions(5.0));
        sc.gains = ControllerGains {
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            k4: 0.0,
            epsilon: 0.9 * sc.geometry.max_abs_torque_ratio(),
            ..sc.gains
        };
        let regions = sc.geometry.stimulation_regions(sc.gains.epsilon).unwrap();
        sc.initial.q = regions.right[0].start + 0.5 * regions.right[0].len;
        sc.trajectory.q_start = sc.initial.q;
        sc.max_time = 60.0;
        let err = simulate(&sc).unwrap_err();
        assert!(matches!(err, SimulationError::NonForwardProgress { .. }), "{err}");
    }

    #[test]
    fn deterministic() {
        let sc = scenario(Duration::Seconds(2.0));
        let a = simulate(&sc).unwrap();
        let b = simulate(&sc).unwrap();
        assert_eq!(a.channels, b.channels);
        assert_eq!(a.schedule, b.schedule);
    }

    #[test]
    fn seconds_duration_ends_exactly() {
        let sc = scenario(Duration::Seconds(1.25));
        let tr = simulate(&sc).unwrap();
        assert!((tr.final_state.t - 1.25).abs() < 1e-12);
    }

    #[test]
    fn sampling_keeps_events() {
        let mut sc = scenario(Duration::Seconds(3.0));
        let full = simulate(&sc).unwrap();
        sc.sample_every = 100;
        let thin = simulate(&sc).unwrap();
        assert_eq!(full.schedule, thin.schedule);
        assert_eq!(full.final_state, thin.final_state);
        assert!(thin.channels.len() < full.channels.len() / 10);
    }

    #[test]
    fn saturation_is_reported() {
        let mut sc = scenario(Duration::Seconds(2.0));
        sc.limits = ActuatorLimits { v_min: -0.5, v_max: 0.5 };
        let tr = simulate(&sc).unwrap();
        assert!(!tr.saturation_events.is_empty());
        assert!(tr.channels.u_r.iter().chain(&tr.channels.u_l).all(|u| u.abs() <= 0.5 + 1e-12));
    }

    #[test]
    fn csv_layout() {
        let sc = scenario(Duration::Seconds(0.2));
        let tr = simulate(&sc).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,q,q_dot,q_d,q_d_dot,e1,e1_dot,e2,V_L,u_R,u_L,active_region");
        for l in lines {
            assert_eq!(l.split(',').count(), 12);
        }
        assert_eq!(fmt17(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(fmt17(1.0 / 3.0).parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn perfect_tracking_trace_passes_audit() {
        let n = 200;
        let t: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
        let region: Vec<Region> = (0..n)
            .map(|i| if (i / 25) % 2 == 0 { Region::Right } else { Region::Uncontrolled })
            .collect();
        let zeros = vec![0.0; n];
        let tr = TraceChannels {
            t,
            q: zeros.clone(),
            q_dot: zeros.clone(),
            q_d: zeros.clone(),
            q_d_dot: zeros.clone(),
            e1: zeros.clone(),
            e1_dot: zeros.clone(),
            e2: zeros.clone(),
            v_l: zeros.clone(),
            u_r: zeros.clone(),
            u_l: zeros,
            region,
            sliding: vec![false; n],
        };
        let k = AnalysisConstants {
            gamma1: 1.0,
            lambda1: 0.4,
            lambda2: 0.6,
            growth: GrowthConstants { a1: 1.0, a2: 2.0, a3: 0.5 },
            d_radius: 0.1,
        };
        let rep = audit_bounds(&tr, &k);
        assert!(rep.pass);
        assert_eq!(rep.equilibration_index, Some(0));
        assert!(rep.rdt_margin > 0.0);
    }

    #[test]
    fn low_gains_complete_ninety_revolutions() {
        let sc = scenario(Duration::Revolutions(90.0));
        let tr = simulate(&sc).unwrap();
        assert!((tr.revolutions - 90.0).abs() < 1e-9);
        let c = &tr.channels;
        assert!((0..c.len()).all(|i| c.u_r[i] * c.u_l[i] == 0.0));
        // Cadence error stays in a bounded band once the ramp has settled.
        let (lo, hi) = tr.cadence_error_band(60.0);
        assert!(lo > -1.0 && hi < 1.0, "band [{lo}, {hi}]");
    }
}
