use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use fescycle::analysis::{certify, CertificationInput, Certificate};
use fescycle::dynamics::Rider;
use fescycle::kinematics::{Region, Side};
use fescycle::simulator::{fmt17, simulate, Duration, Scenario, SimulationTrace};

use crate::{CliError, RunConfig};

/// Certifies the configured scenario. Certification failures are reported
/// inside the certificate, not as errors.
pub fn certify_config(cfg: &RunConfig) -> Result<Certificate, CliError> {
    certify_scenario(&cfg.scenario, cfg)
}

fn certify_scenario(sc: &Scenario, cfg: &RunConfig) -> Result<Certificate, CliError> {
    let (rider, regions) = sc.build().map_err(CliError::Simulation)?;
    let input = CertificationInput {
        rider: &rider,
        regions: &regions,
        gains: &sc.gains,
        trajectory: &sc.trajectory,
        initial: &sc.initial,
    };
    Ok(certify(&input, &cfg.certify))
}

/// Caps the run at `n` integration steps.
pub fn apply_steps(cfg: &mut RunConfig, n: u64) {
    cfg.scenario.duration = Duration::Seconds(n as f64 * cfg.scenario.step_size);
}

pub struct SimulationOutcome {
    pub trace: SimulationTrace,
    pub certificate: Certificate,
    pub summary: String,
}

/// Runs the scenario and, when `out_dir` is given, writes `trace.csv`,
/// `schedule.csv` and `summary.txt` there.
pub fn run_simulation(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<SimulationOutcome, CliError> {
    let certificate = certify_config(cfg)?;
    let mut trace = simulate(&cfg.scenario).map_err(CliError::Simulation)?;
    trace.certified = Some(certificate.certified);
    let summary = summary_text(cfg, &trace, &certificate);
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let mut w = std::io::BufWriter::new(fs::File::create(dir.join("trace.csv"))?);
        trace.write_csv(&mut w)?;
        let mut w = std::io::BufWriter::new(fs::File::create(dir.join("schedule.csv"))?);
        trace.write_schedule_csv(&mut w)?;
        fs::write(dir.join("summary.txt"), &summary)?;
    }
    Ok(SimulationOutcome { trace, certificate, summary })
}

pub fn summary_text(cfg: &RunConfig, trace: &SimulationTrace, cert: &Certificate) -> String {
    let mut s = String::new();
    let window = 10.0f64.min(trace.final_state.t - cfg.scenario.initial.t);
    let (lo, hi) = trace.cadence_error_band(window);
    let _ = writeln!(s, "scenario: {}", cfg.scenario.name);
    let _ = writeln!(s, "revolutions: {:.6}", trace.revolutions);
    let _ = writeln!(s, "final_time_s: {:.6}", trace.final_state.t);
    let _ = writeln!(s, "steps: {}", trace.steps);
    let _ = writeln!(s, "mean_cadence_rpm_last_{window:.0}s: {:.6}", trace.mean_cadence(window) * 60.0 / TAU);
    let _ = writeln!(s, "final_cadence_error_band_rad_s: [{lo:.6e}, {hi:.6e}]");
    let _ = writeln!(s, "switching_events: {}", trace.schedule.len());
    let _ = writeln!(s, "sliding_intervals: {}", trace.sliding_intervals.len());
    let _ = writeln!(s, "saturation_count: {}", trace.saturation_events.len());
    let _ = writeln!(s, "stimulation_current_ma: {}", cfg.file.actuator.current_amplitude_ma);
    let _ = writeln!(s, "gains_certified: {}", cert.certified);
    if let Some(f) = &cert.first_failure {
        let _ = writeln!(s, "first_failed_condition: {f}");
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Absolute stimulation threshold.
    Epsilon,
    /// Threshold as a fraction of `max |B|`.
    EpsilonFraction,
    Cadence,
    /// Common multiplier on `k1..k4`.
    Gain,
    Alpha,
    K1,
    K2,
    K3,
    K4,
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "epsilon" => SweepParam::Epsilon,
            "epsilon_fraction" => SweepParam::EpsilonFraction,
            "cadence" => SweepParam::Cadence,
            "gain" => SweepParam::Gain,
            "alpha" => SweepParam::Alpha,
            "k1" => SweepParam::K1,
            "k2" => SweepParam::K2,
            "k3" => SweepParam::K3,
            "k4" => SweepParam::K4,
            _ => {
                return Err(format!(
                    "unknown sweep parameter '{s}' (expected epsilon, epsilon_fraction, cadence, gain, alpha, k1, k2, k3 or k4)"
                ))
            }
        })
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Epsilon => "epsilon",
            SweepParam::EpsilonFraction => "epsilon_fraction",
            SweepParam::Cadence => "cadence",
            SweepParam::Gain => "gain",
            SweepParam::Alpha => "alpha",
            SweepParam::K1 => "k1",
            SweepParam::K2 => "k2",
            SweepParam::K3 => "k3",
            SweepParam::K4 => "k4",
        }
    }

    pub fn apply(self, sc: &mut Scenario, v: f64) {
        let g = &mut sc.gains;
        match self {
            SweepParam::Epsilon => g.epsilon = v,
            SweepParam::EpsilonFraction => g.epsilon = v * sc.geometry.max_abs_torque_ratio(),
            SweepParam::Cadence => sc.trajectory.cadence_target = v,
            SweepParam::Gain => {
                g.k1 *= v;
                g.k2 *= v;
                g.k3 *= v;
                g.k4 *= v;
            }
            SweepParam::Alpha => g.alpha = v,
            SweepParam::K1 => g.k1 = v,
            SweepParam::K2 => g.k2 = v,
            SweepParam::K3 => g.k3 = v,
            SweepParam::K4 => g.k4 = v,
        }
    }
}

pub fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let grid: Result<Vec<f64>, _> = s.split(',').map(|x| x.trim().parse::<f64>()).collect();
    match grid {
        Ok(g) if !g.is_empty() && g.iter().all(|x| x.is_finite()) => Ok(g),
        _ => Err(CliError::Config(format!("--grid: expected a comma-separated list of numbers, got '{s}'"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub certified: bool,
    pub first_failure: Option<String>,
    pub d: Option<f64>,
    pub q_dot_crit: Option<f64>,
    pub controlled_measure: Option<f64>,
    pub steady_max_z: Option<f64>,
    pub error: Option<String>,
}

/// Certifies and briefly simulates each grid point. Rows follow grid order.
pub fn sweep(cfg: &RunConfig, param: SweepParam, grid: &[f64]) -> Vec<SweepRow> {
    grid.par_iter().map(|&v| sweep_point(cfg, param, v)).collect()
}

fn sweep_point(cfg: &RunConfig, param: SweepParam, value: f64) -> SweepRow {
    let mut row = SweepRow {
        value,
        certified: false,
        first_failure: None,
        d: None,
        q_dot_crit: None,
        controlled_measure: None,
        steady_max_z: None,
        error: None,
    };
    let mut sc = cfg.scenario.clone();
    param.apply(&mut sc, value);
    sc.duration = Duration::Seconds(cfg.file.sweep.seconds);
    row.controlled_measure = sc.geometry.stimulation_regions(sc.gains.epsilon).ok().map(|r| r.controlled_measure());
    if let Err(e) = sc.build() {
        row.error = Some(e.to_string());
        return row;
    }
    match certify_scenario(&sc, cfg) {
        Ok(cert) => {
            row.certified = cert.certified;
            row.first_failure = cert.first_failure.clone();
            row.d = cert.ultimate.map(|u| u.d_radius);
            row.q_dot_crit = cert.critical.map(|c| c.q_dot_crit);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    match simulate(&sc) {
        Ok(tr) => row.steady_max_z = Some(steady_max_z(&tr, cfg.file.sweep.steady_fraction)),
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Largest `|z|` over the trailing `fraction` of the run.
pub fn steady_max_z(tr: &SimulationTrace, fraction: f64) -> f64 {
    let c = &tr.channels;
    let t0 = c.t[0];
    let t_cut = tr.final_state.t - fraction * (tr.final_state.t - t0);
    let i0 = c.t.partition_point(|&t| t < t_cut);
    (i0..c.len()).map(|i| c.z_norm(i)).fold(0.0, f64::max)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{},certified,first_failure,d,q_dot_crit,controlled_measure,steady_max_z,error",
        param.name()
    );
    let opt = |x: Option<f64>| x.map(fmt17).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            fmt17(r.value),
            r.certified,
            csv_field(r.first_failure.as_deref().unwrap_or("")),
            opt(r.d),
            opt(r.q_dot_crit),
            opt(r.controlled_measure),
            opt(r.steady_max_z),
            csv_field(r.error.as_deref().unwrap_or("")),
        );
    }
    s
}

pub const PATTERN_POINTS: usize = 2048;

/// Torque transfer ratios and region tags on a uniform crank-angle grid,
/// plus one row per dead point.
pub fn pattern_csv(cfg: &RunConfig) -> Result<String, CliError> {
    let sc = &cfg.scenario;
    let rider = Rider::new(sc.geometry, sc.dynamics).map_err(|e| CliError::Config(e.to_string()))?;
    let geom = rider.geometry();
    let regions = geom
        .stimulation_regions(sc.gains.epsilon)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut rows: Vec<(f64, &str)> = (0..PATTERN_POINTS).map(|i| (TAU * i as f64 / PATTERN_POINTS as f64, "grid")).collect();
    rows.extend(regions.dead_points.iter().map(|&q| (q, "dead_point")));
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut s = String::from("q,B_R,B_L,region,kind\n");
    for (q, kind) in rows {
        let br = geom.torque_transfer_ratio(q, Side::Right).map_err(|e| CliError::Config(e.to_string()))?;
        let bl = geom.torque_transfer_ratio(q, Side::Left).map_err(|e| CliError::Config(e.to_string()))?;
        let tag = Region::tag(regions.region_at(q));
        let _ = writeln!(s, "{},{},{},{tag},{kind}", fmt17(q), fmt17(br), fmt17(bl));
    }
    Ok(s)
}
