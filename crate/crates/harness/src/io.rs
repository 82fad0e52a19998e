//! Scenario files, per-tick traces and QP dumps.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use wallbrace_core::controller::{ControlOutput, ControllerConfig, Telemetry, Variant};
use wallbrace_core::mpc::Command;
use wallbrace_core::plant::{PlantState, PushEvent};
use wallbrace_core::qp::{decode_dump, encode_dump, QpProblem};
use wallbrace_core::sim::{run_scenario_with, CommandProfile, Scenario, ScenarioResult};
use wallbrace_core::supervisor::Mode;

use crate::config::WallSpec;

/// Single-scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub variant: Variant,
    #[serde(default = "crate::config::default_walls")]
    pub walls: Vec<WallSpec>,
    #[serde(default)]
    pub pushes: Vec<PushEvent>,
    /// `(start time, command)` pairs.
    #[serde(default)]
    pub commands: Vec<(f64, Command)>,
    pub duration: f64,
}

impl ScenarioSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_scenario(&self) -> Scenario {
        let segments = if self.commands.is_empty() { vec![(0.0, Command::default())] } else { self.commands.clone() };
        Scenario {
            variant: self.variant,
            walls: self.walls.iter().map(WallSpec::to_wall).collect(),
            pushes: self.pushes.clone(),
            commands: CommandProfile { segments },
            duration: self.duration,
        }
    }
}

/// One CSV row per controller tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub plant: PlantState,
    pub telemetry: Telemetry,
}

pub const TRACE_HEADER: [&str; 24] = [
    "time_s", "px", "py", "pz", "vx", "vy", "vz", "roll", "pitch", "yaw", "wx", "wy", "wz", "mode", "frequency_hz",
    "stance", "hand_contact", "fl_z", "fr_z", "fh_n", "qp_iterations", "fallback", "vdev", "wdev",
];

fn mode_str(m: &Mode) -> String {
    match m {
        Mode::Normal => "normal".into(),
        Mode::Recovery { side, hand } => format!("recovery_{side:?}_{hand:?}").to_lowercase(),
    }
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        let p = &r.plant;
        let e = p.euler();
        let t = &r.telemetry;
        let f = |v: f64| format!("{v:.6}");
        let hand_n = if let Some((_, _)) = p.hand_contact { t.wrench[0].hypot(t.wrench[1]) } else { 0.0 };
        w.write_record([
            format!("{:.3}", p.time),
            f(p.position.x),
            f(p.position.y),
            f(p.position.z),
            f(p.velocity.x),
            f(p.velocity.y),
            f(p.velocity.z),
            f(e.x),
            f(e.y),
            f(e.z),
            f(p.omega.x),
            f(p.omega.y),
            f(p.omega.z),
            mode_str(&t.mode),
            format!("{:.1}", t.frequency),
            format!("{:?}", t.stance).to_lowercase(),
            (p.hand_contact.is_some() as u8).to_string(),
            f(t.wrench[5]),
            f(t.wrench[8]),
            f(hand_n),
            t.iterations.to_string(),
            (t.fallback as u8).to_string(),
            f(t.velocity_deviation),
            f(t.angular_deviation),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// JSON-lines telemetry. Solve times are wall-clock and therefore left out
/// so that repeated runs write identical files.
pub fn write_telemetry_jsonl<W: Write>(rows: &[TraceRow], mut out: W) -> Result<()> {
    for r in rows {
        let mut t = r.telemetry.clone();
        t.solve_time = 0.0;
        serde_json::to_writer(&mut out, &t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Mode transitions with their tick times.
pub fn mode_transitions(rows: &[TraceRow]) -> Vec<(f64, Mode)> {
    let mut out: Vec<(f64, Mode)> = Vec::new();
    for r in rows {
        if out.last().map(|(_, m)| *m) != Some(r.telemetry.mode) {
            out.push((r.telemetry.time, r.telemetry.mode));
        }
    }
    out
}

/// Run a scenario while recording every tick.
pub fn run_traced(scenario: &Scenario, config: &ControllerConfig) -> Result<(ScenarioResult, Vec<TraceRow>)> {
    let mut rows = Vec::new();
    let result = run_scenario_with(scenario, config, |p: &PlantState, o: &ControlOutput| {
        rows.push(TraceRow { plant: *p, telemetry: o.telemetry.clone() });
    })?;
    Ok((result, rows))
}

pub fn save_qp_dump(problem: &QpProblem, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dump(problem)).with_context(|| format!("writing {}", path.display()))
}

pub fn load_qp_dump(path: &Path) -> Result<QpProblem> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_dump(&bytes).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}
