//! Closed-loop scenario runner: plant at 1 kHz, controller at its own rate.

use alloc::vec::Vec;

use nalgebra::Vector3;

use crate::controller::{ControlOutput, Controller, ControllerConfig, Variant};
use crate::geometry::Wall;
use crate::hlip::{nominal_p1_orbit, p2_orbit};
use crate::mpc::Command;
use crate::plant::{nominal_hand, step_limbs, step_plant, FailureCode, FailureMonitor, PlantState, PushEvent};
use crate::srb::Stance;
use crate::supervisor::Mode;
use crate::{Error, Result};

/// Piecewise-constant command: each entry holds from its start time on.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandProfile {
    pub segments: Vec<(f64, Command)>,
}

impl CommandProfile {
    pub fn constant(command: Command) -> Self {
        Self { segments: alloc::vec![(0.0, command)] }
    }

    pub fn at(&self, t: f64) -> Command {
        self.segments.iter().rev().find(|(s, _)| t >= *s).map(|(_, c)| *c).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub variant: Variant,
    pub walls: Vec<Wall>,
    pub pushes: Vec<PushEvent>,
    pub commands: CommandProfile,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub failure: FailureCode,
    pub failure_time: Option<f64>,
    pub end_time: f64,
    pub final_mode: Mode,
    pub entered_recovery: bool,
    pub hand_contact_made: bool,
    /// From the first push until the last tick spent in recovery mode or at
    /// the raised stepping frequency.
    pub recovery_time: f64,
    pub peak_velocity_deviation: f64,
    pub peak_angular_deviation: f64,
    pub max_constraint_violation: f64,
    pub fallbacks: usize,
    pub ticks: usize,
    pub max_solve_time: f64,
    /// Controller error that ended the run early, if any.
    pub error: Option<Error>,
}

impl ScenarioResult {
    pub fn recovered(&self) -> bool {
        self.failure == FailureCode::None && self.error.is_none()
    }
}

/// Walking state at the start of a left stance step on the nominal orbit
/// for `command`, CoM above the origin.
pub fn initial_state(config: &ControllerConfig, command: &Command) -> Result<PlantState> {
    let hlip = &config.hlip;
    let timing = hlip.timing(hlip.normal_frequency);
    let vx = command.vx.clamp(-hlip.max_speed, hlip.max_speed);
    let vy = command.vy.clamp(-hlip.max_speed, hlip.max_speed);
    let (sag, u_x) = nominal_p1_orbit(vx, &timing)?;
    let drift = vy * timing.period();
    let after_right = drift + hlip.step_width;
    let after_left = drift - hlip.step_width;
    let (_, x_right) = p2_orbit(after_left, after_right, &timing)?;
    // Post-impact: the new stance foot is one step ahead of the old one.
    let (px, vx0) = (sag.p - u_x, sag.v);
    let (py, vy0) = (x_right.p - after_right, x_right.v);

    let mut s = PlantState::standing(&config.robot, &config.plant.geometry);
    s.velocity = Vector3::new(vx0, vy0, 0.0);
    s.left_foot = Vector3::new(-px, -py, 0.0);
    s.right_foot = s.left_foot - Vector3::new(u_x, after_right, 0.0);
    s.stance = Stance::Left;
    for side in [crate::geometry::Side::Left, crate::geometry::Side::Right] {
        let i = if side == crate::geometry::Side::Left { 0 } else { 1 };
        s.hand[i] = nominal_hand(&s, &config.plant.geometry, side);
    }
    Ok(s)
}

/// Run one scenario. `observer` sees every control tick.
pub fn run_scenario_with(
    scenario: &Scenario,
    config: &ControllerConfig,
    mut observer: impl FnMut(&PlantState, &ControlOutput),
) -> Result<ScenarioResult> {
    config.validate()?;
    let plant_dt = config.plant.dt;
    let control_dt = config.control_dt();
    let substeps = libm::round(control_dt / plant_dt) as usize;
    if substeps == 0 || (substeps as f64 * plant_dt - control_dt).abs() > 1e-9 {
        return Err(Error::InvalidParameter("control period must be a multiple of the plant step"));
    }
    let params = &config.robot;
    let mut plant = initial_state(config, &scenario.commands.at(0.0))?;
    let mut ctrl = Controller::new(scenario.variant, config.clone(), &plant)?;
    let mut monitor = FailureMonitor::new(config.plant);
    monitor.observe(&plant, &scenario.walls, params);

    let first_push = scenario.pushes.iter().map(|p| p.start).fold(f64::INFINITY, f64::min);
    let total = libm::round(scenario.duration / plant_dt) as usize;
    let mut result = ScenarioResult {
        failure: FailureCode::None,
        failure_time: None,
        end_time: 0.0,
        final_mode: Mode::Normal,
        entered_recovery: false,
        hand_contact_made: false,
        recovery_time: 0.0,
        peak_velocity_deviation: 0.0,
        peak_angular_deviation: 0.0,
        max_constraint_violation: 0.0,
        fallbacks: 0,
        ticks: 0,
        max_solve_time: 0.0,
        error: None,
    };
    let sup = &config.supervisor;
    let mut i = 0;
    'outer: while i < total {
        let command = scenario.commands.at(plant.time);
        let out = match ctrl.tick(&plant, &command, &scenario.walls) {
            Ok(o) => o,
            Err(e) => {
                result.error = Some(e);
                break;
            }
        };
        observer(&plant, &out);
        result.ticks += 1;
        result.entered_recovery |= out.mode.is_recovery();
        result.fallbacks += out.telemetry.fallback as usize;
        result.max_solve_time = result.max_solve_time.max(out.telemetry.solve_time);
        result.max_constraint_violation = result.max_constraint_violation.max(out.telemetry.constraint_violation);
        if plant.time >= first_push {
            let d = &out.detection;
            result.peak_velocity_deviation = result.peak_velocity_deviation.max(d.velocity_deviation);
            result.peak_angular_deviation = result.peak_angular_deviation.max(d.angular_deviation);
            if out.mode.is_recovery() || out.telemetry.frequency != sup.normal_frequency {
                result.recovery_time = plant.time - first_push;
            }
        }

        let mut limbs = out.limbs;
        for _ in 0..substeps {
            step_limbs(&mut plant, &limbs, &scenario.walls, params, &config.plant, sup.contact_tolerance, plant_dt);
            limbs.touchdown = false;
            result.hand_contact_made |= plant.hand_contact.is_some();
            let contacts = plant.contact_set(&scenario.walls);
            let push = scenario.pushes.iter().find(|p| p.active(plant.time));
            plant = match step_plant(&plant, &out.wrench, &contacts, push, params, plant_dt) {
                Ok(p) => p,
                Err(e) => {
                    result.error = Some(e);
                    break 'outer;
                }
            };
            i += 1;
            plant.time = i as f64 * plant_dt;
            if monitor.observe(&plant, &scenario.walls, params) != FailureCode::None {
                break 'outer;
            }
            if i >= total {
                break;
            }
        }
    }
    result.failure = monitor.failure;
    result.failure_time = monitor.failure_time;
    result.end_time = plant.time;
    result.final_mode = ctrl.mode();
    Ok(result)
}

pub fn run_scenario(scenario: &Scenario, config: &ControllerConfig) -> Result<ScenarioResult> {
    run_scenario_with(scenario, config, |_, _| {})
}
