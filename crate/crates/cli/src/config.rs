//! TOML scenario files.

use serde::Deserialize;

use fescycle::analysis::CertifyOptions;
use fescycle::controller::{ActuatorLimits, ControllerGains, PulseWidthMap, TrajectorySpec};
use fescycle::dynamics::{CrankState, DynamicsParams, MuscleModel};
use fescycle::kinematics::RiderGeometry;
use fescycle::simulator::{Duration, Scenario, SimulationError};

use crate::CliError;

/// Shipped default scenario.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub name: String,
    pub geometry: GeometrySection,
    #[serde(default)]
    pub dynamics: DynamicsSection,
    pub controller: ControllerSection,
    #[serde(default)]
    pub trajectory: TrajectorySection,
    pub initial: InitialSection,
    #[serde(default)]
    pub actuator: ActuatorSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

/// Lengths in m.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub thigh_length: f64,
    pub shank_length: f64,
    pub crank_length: f64,
    pub hip_horizontal: f64,
    pub hip_vertical: f64,
}

impl GeometrySection {
    fn geometry(&self) -> RiderGeometry {
        RiderGeometry {
            thigh_length: self.thigh_length,
            shank_length: self.shank_length,
            crank_length: self.crank_length,
            hip_horizontal: self.hip_horizontal,
            hip_vertical: self.hip_vertical,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSection {
    pub thigh_mass: f64,
    pub shank_mass: f64,
    pub thigh_com_ratio: f64,
    pub shank_com_ratio: f64,
    pub thigh_inertia: f64,
    pub shank_inertia: f64,
    pub flywheel_inertia: f64,
    pub crank_damping: f64,
    pub visco_static: f64,
    pub visco_viscous: f64,
    pub muscle_model: MuscleModel,
    pub omega_const: f64,
    pub omega_bounds: [f64; 2],
    pub disturbance_amplitude: f64,
    pub disturbance_frequency: f64,
    pub gravity: f64,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        let d = DynamicsParams::default();
        DynamicsSection {
            thigh_mass: d.thigh_mass,
            shank_mass: d.shank_mass,
            thigh_com_ratio: d.thigh_com_ratio,
            shank_com_ratio: d.shank_com_ratio,
            thigh_inertia: d.thigh_inertia,
            shank_inertia: d.shank_inertia,
            flywheel_inertia: d.flywheel_inertia,
            crank_damping: d.crank_damping,
            visco_static: d.visco_static,
            visco_viscous: d.visco_viscous,
            muscle_model: d.muscle_model,
            omega_const: d.omega_const,
            omega_bounds: [d.omega_bounds.0, d.omega_bounds.1],
            disturbance_amplitude: d.disturbance_amplitude,
            disturbance_frequency: d.disturbance_frequency,
            gravity: d.gravity,
        }
    }
}

impl DynamicsSection {
    fn params(&self) -> DynamicsParams {
        DynamicsParams {
            thigh_mass: self.thigh_mass,
            shank_mass: self.shank_mass,
            thigh_com_ratio: self.thigh_com_ratio,
            shank_com_ratio: self.shank_com_ratio,
            thigh_inertia: self.thigh_inertia,
            shank_inertia: self.shank_inertia,
            flywheel_inertia: self.flywheel_inertia,
            crank_damping: self.crank_damping,
            visco_static: self.visco_static,
            visco_viscous: self.visco_viscous,
            muscle_model: self.muscle_model,
            omega_const: self.omega_const,
            omega_bounds: (self.omega_bounds[0], self.omega_bounds[1]),
            disturbance_amplitude: self.disturbance_amplitude,
            disturbance_frequency: self.disturbance_frequency,
            gravity: self.gravity,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub alpha: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    /// Absolute threshold on `-B`.
    pub epsilon: Option<f64>,
    /// Threshold as a fraction of `max |B|`.
    pub epsilon_fraction: Option<f64>,
    pub boundary_layer: Option<f64>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySection {
    pub cadence_target: f64,
    pub ramp_rate: f64,
    pub t_start: f64,
    /// Defaults to the initial crank angle.
    pub q_start: Option<f64>,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        let t = TrajectorySpec::default();
        TrajectorySection { cadence_target: t.cadence_target, ramp_rate: t.ramp_rate, t_start: t.t_start, q_start: None }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub q: f64,
    #[serde(default)]
    pub q_dot: f64,
    #[serde(default)]
    pub t: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActuatorSection {
    pub v_min: Option<f64>,
    pub v_max: Option<f64>,
    pub us_per_volt: f64,
    pub offset_us: f64,
    pub max_width_us: f64,
    /// mA, recorded as metadata.
    pub current_amplitude_ma: f64,
}

impl Default for ActuatorSection {
    fn default() -> Self {
        let p = PulseWidthMap::default();
        ActuatorSection {
            v_min: None,
            v_max: None,
            us_per_volt: p.us_per_volt,
            offset_us: p.offset_us,
            max_width_us: p.max_width_us,
            current_amplitude_ma: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub step_size: f64,
    pub revolutions: Option<f64>,
    pub seconds: Option<f64>,
    pub max_time: f64,
    pub sample_every: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection { step_size: 1e-4, revolutions: None, seconds: None, max_time: 3600.0, sample_every: 1 }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub q_dot_max: f64,
    pub z_bound: f64,
    pub dt_max_off: Option<f64>,
    pub a3_floor_ratio: Option<f64>,
    pub z_max: Option<f64>,
    pub chi_samples: usize,
    pub max_ramp_cycles: usize,
    pub seed: u64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let o = CertifyOptions::default();
        AnalysisSection {
            q_dot_max: o.q_dot_max,
            z_bound: o.z_bound,
            dt_max_off: o.dt_max_off,
            a3_floor_ratio: None,
            z_max: o.z_max,
            chi_samples: o.chi_samples,
            max_ramp_cycles: o.max_ramp_cycles,
            seed: o.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Length of the short simulation per grid point, s.
    pub seconds: f64,
    /// Trailing fraction of that run used for the steady-state error.
    pub steady_fraction: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { seconds: 20.0, steady_fraction: 0.25 }
    }
}

/// A parsed and validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub file: ConfigFile,
    pub scenario: Scenario,
    pub certify: CertifyOptions,
    pub pulse: PulseWidthMap,
    pub origin: String,
    text: String,
}

/// Line (1-based) holding `key` inside `[section]`.
pub fn key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        if let Some(h) = l.strip_prefix('[').and_then(|h| h.strip_suffix(']')) {
            current = h.trim().to_string();
            continue;
        }
        if current == section {
            if let Some(rest) = l.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl RunConfig {
    pub fn load(path: &str) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
        Self::parse(&text, path)
    }

    pub fn default_config() -> Self {
        Self::parse(DEFAULT_CONFIG, "<built-in default>").expect("shipped default config parses")
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            let msg = e.message().trim().to_string();
            match line {
                Some(l) => CliError::Config(format!("{origin}:{l}: {msg}")),
                None => CliError::Config(format!("{origin}: {msg}")),
            }
        })?;
        Self::from_file(file, text, origin)
    }

    fn err(&self, section: &str, key: &str, msg: impl std::fmt::Display) -> CliError {
        located(&self.text, &self.origin, section, key, msg)
    }

    pub fn from_file(file: ConfigFile, text: &str, origin: &str) -> Result<Self, CliError> {
        let loc = |section: &str, key: &str, msg: String| located(text, origin, section, key, msg);
        let geometry = file.geometry.geometry();
        geometry.validate().map_err(|e| loc("geometry", "thigh_length", e.to_string()))?;
        let c = file.controller;
        let epsilon = match (c.epsilon, c.epsilon_fraction) {
            (Some(_), Some(_)) => {
                return Err(loc("controller", "epsilon_fraction", "set either epsilon or epsilon_fraction, not both".into()))
            }
            (Some(e), None) => e,
            (None, f) => {
                let f = f.unwrap_or(0.5);
                if !(f > 0.0 && f < 1.0) {
                    return Err(loc("controller", "epsilon_fraction", format!("epsilon_fraction must lie in (0, 1), got {f}")));
                }
                f * geometry.max_abs_torque_ratio()
            }
        };
        let gains = ControllerGains {
            alpha: c.alpha,
            k1: c.k1,
            k2: c.k2,
            k3: c.k3,
            k4: c.k4,
            epsilon,
            boundary_layer: c.boundary_layer,
        };
        let tr = file.trajectory;
        let trajectory = TrajectorySpec {
            cadence_target: tr.cadence_target,
            ramp_rate: tr.ramp_rate,
            t_start: tr.t_start,
            q_start: tr.q_start.unwrap_or(file.initial.q),
        };
        let mut scenario = Scenario::new(geometry, file.dynamics.params(), gains, trajectory);
        scenario.name = file.name.clone();
        scenario.initial = CrankState { q: file.initial.q, q_dot: file.initial.q_dot, t: file.initial.t };
        let a = file.actuator;
        scenario.limits = ActuatorLimits {
            v_min: a.v_min.unwrap_or(f64::NEG_INFINITY),
            v_max: a.v_max.unwrap_or(f64::INFINITY),
        };
        let s = file.simulation;
        scenario.step_size = s.step_size;
        scenario.duration = match (s.revolutions, s.seconds) {
            (Some(_), Some(_)) => {
                return Err(loc("simulation", "seconds", "set either revolutions or seconds, not both".into()))
            }
            (None, Some(t)) => Duration::Seconds(t),
            (r, None) => Duration::Revolutions(r.unwrap_or(90.0)),
        };
        scenario.max_time = s.max_time;
        scenario.sample_every = s.sample_every;
        let an = file.analysis;
        let certify = CertifyOptions {
            q_dot_max: an.q_dot_max,
            z_bound: an.z_bound,
            dt_max_off: an.dt_max_off,
            a3_floor_ratio: an.a3_floor_ratio.unwrap_or(-1.0),
            z_max: an.z_max,
            chi_samples: an.chi_samples,
            max_ramp_cycles: an.max_ramp_cycles,
            seed: an.seed,
        };
        let pulse = PulseWidthMap { us_per_volt: a.us_per_volt, offset_us: a.offset_us, max_width_us: a.max_width_us };
        let cfg = RunConfig { file, scenario, certify, pulse, origin: origin.to_string(), text: text.to_string() };
        cfg.check()?;
        Ok(cfg)
    }

    /// Re-validates the scenario, anchoring failures to the offending key.
    pub fn check(&self) -> Result<(), CliError> {
        if !(self.certify.z_bound > 0.0) {
            return Err(self.err("analysis", "z_bound", "z_bound must be > 0"));
        }
        if !(self.file.sweep.seconds > 0.0 && self.file.sweep.steady_fraction > 0.0 && self.file.sweep.steady_fraction <= 1.0) {
            return Err(self.err("sweep", "seconds", "sweep seconds must be > 0 and steady_fraction in (0, 1]"));
        }
        match self.scenario.build() {
            Ok(_) => Ok(()),
            Err(SimulationError::InvalidScenario(msg)) => {
                let (sec, key) = if msg.contains("initial crank angle") {
                    ("initial", "q")
                } else if msg.contains("step_size") {
                    ("simulation", "step_size")
                } else if msg.contains("cadence") || msg.contains("ramp") {
                    ("trajectory", "cadence_target")
                } else if msg.contains("gain") || msg.contains("alpha") || msg.contains("boundary layer") {
                    ("controller", "alpha")
                } else if msg.contains("actuator") {
                    ("actuator", "v_min")
                } else {
                    ("simulation", "revolutions")
                };
                Err(self.err(sec, key, msg))
            }
            Err(e) => Err(self.err("dynamics", "thigh_mass", e)),
        }
    }
}

fn located(text: &str, origin: &str, section: &str, key: &str, msg: impl std::fmt::Display) -> CliError {
    let line = key_line(text, section, key).or_else(|| key_line(text, "", section));
    match line {
        Some(l) => CliError::Config(format!("{origin}:{l}: [{section}] {key}: {msg}")),
        None => CliError::Config(format!("{origin}: [{section}] {key}: {msg}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_lines() {
        let t = "name = \"x\"\n[a]\nq = 1\n[b]\nq=2\nqq = 3\n";
        assert_eq!(key_line(t, "a", "q"), Some(3));
        assert_eq!(key_line(t, "b", "q"), Some(5));
        assert_eq!(key_line(t, "b", "qq"), Some(6));
        assert_eq!(key_line(t, "", "name"), Some(1));
        assert_eq!(key_line(t, "c", "q"), None);
    }

    #[test]
    fn shipped_default_parses() {
        let c = RunConfig::default_config();
        assert!(matches!(c.scenario.duration, Duration::Revolutions(n) if n == 90.0));
        assert_eq!(c.scenario.initial.q, c.scenario.trajectory.q_start);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = DEFAULT_CONFIG.replace("[initial]\n", "[initial]\nbogus = 1\n");
        let err = RunConfig::parse(&text, "cfg").unwrap_err().to_string();
        let line = key_line(&text, "initial", "bogus").unwrap();
        assert!(err.contains(&format!("cfg:{line}:")), "{err}");
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn both_epsilon_forms_rejected() {
        let text = DEFAULT_CONFIG.replace("[controller]\n", "[controller]\nepsilon = 0.01\n");
        let err = RunConfig::parse(&text, "cfg").unwrap_err().to_string();
        assert!(err.contains("either epsilon"), "{err}");
    }
}
