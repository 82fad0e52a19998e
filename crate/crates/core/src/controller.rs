//! Closed-loop controllers: the stepping-only baseline and the full
//! MPC + stepping + bracing stack.
//!
//! Both share the step planner and the supervisor. They differ in how the
//! stance wrench is chosen and in whether the arms may brace on a wall.

use alloc::vec::Vec;

use nalgebra::{DMatrix, Vector3};

use crate::geometry::{Side, Wall};
use crate::hlip::{HlipConfig, HlipPlanner};
use crate::mpc::{
    build_reference, horizon_model, rollout, Command, ContactSchedule, MpcConfig, ScheduledContact, SrbMpc,
};
use crate::plant::{nominal_hand, LimbCommand, PlantConfig, PlantState};
use crate::qp::QpStatus;
use crate::srb::{idx, rotation_z, ContactSet, InputWrench, RobotParams, Site, SrbState, Stance, StateVector, INPUT_DIM};
use crate::supervisor::{
    contact_limits, detect_push, hand_target, limit_step_location, wall_reachable, Detection, HandPhase, Mode,
    Supervisor, SupervisorConfig,
};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Variant {
    HlipOnly,
    SrbMpcHlip,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::HlipOnly => "HlipOnly",
            Variant::SrbMpcHlip => "SrbMpcHlip",
        }
    }
}

/// Stance gains for the baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BaselineGains {
    pub kp_height: f64,
    pub kd_height: f64,
    pub kp_tilt: f64,
    pub kd_tilt: f64,
    pub kp_yaw: f64,
    pub kd_yaw: f64,
}

impl Default for BaselineGains {
    fn default() -> Self {
        Self { kp_height: 400.0, kd_height: 40.0, kp_tilt: 300.0, kd_tilt: 30.0, kp_yaw: 50.0, kd_yaw: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ControllerConfig {
    pub robot: RobotParams,
    pub mpc: MpcConfig,
    pub hlip: HlipConfig,
    pub supervisor: SupervisorConfig,
    pub plant: PlantConfig,
    pub baseline: BaselineGains,
    /// The hand aims this far past the wall plane so the lagged arm
    /// arrives instead of creeping toward it.
    pub hand_overshoot: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            robot: RobotParams::default(),
            mpc: MpcConfig::default(),
            hlip: HlipConfig::default(),
            supervisor: SupervisorConfig::default(),
            plant: PlantConfig::default(),
            baseline: BaselineGains::default(),
            hand_overshoot: 0.03,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        self.robot.validate()?;
        self.mpc.validate()?;
        self.hlip.validate()?;
        self.supervisor.validate()
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.mpc.control_rate
    }
}

/// One controller tick worth of diagnostics.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Telemetry {
    pub time: f64,
    pub state: [f64; 13],
    pub wrench: [f64; INPUT_DIM],
    pub mode: Mode,
    pub frequency: f64,
    pub stance: Stance,
    pub qp_status: Option<QpStatus>,
    pub iterations: usize,
    pub fallback: bool,
    pub solve_time: f64,
    pub velocity_deviation: f64,
    pub angular_deviation: f64,
    /// Largest contact-row violation of the applied wrench.
    pub constraint_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub wrench: InputWrench,
    pub limbs: LimbCommand,
    pub mode: Mode,
    pub detection: Detection,
    pub telemetry: Telemetry,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Retract {
    side: Side,
    from: Vector3<f64>,
    elapsed: f64,
}

pub struct Controller {
    pub variant: Variant,
    pub config: ControllerConfig,
    pub planner: HlipPlanner,
    pub supervisor: Supervisor,
    mpc: SrbMpc,
    retract: Option<Retract>,
    last_brace: Option<Side>,
    yaw_ref: f64,
}

impl Controller {
    /// Planner state is taken from the plant's current stance.
    pub fn new(variant: Variant, config: ControllerConfig, plant: &PlantState) -> Result<Self> {
        config.validate()?;
        let (stance, stance_foot, swing_foot) = match plant.stance {
            Stance::Right => (Side::Right, plant.right_foot, plant.left_foot),
            _ => (Side::Left, plant.left_foot, plant.right_foot),
        };
        let planner = HlipPlanner::new(config.hlip, stance, stance_foot, swing_foot)?;
        Ok(Self {
            variant,
            planner,
            supervisor: Supervisor::new(config.supervisor),
            mpc: SrbMpc::new(config.mpc.clone())?,
            config,
            retract: None,
            last_brace: None,
            yaw_ref: plant.euler().z,
        })
    }

    pub fn mode(&self) -> Mode {
        self.supervisor.mode
    }

    /// Compute wrench and limb commands from the plant state.
    pub fn tick(&mut self, plant: &PlantState, command: &Command, walls: &[Wall]) -> Result<ControlOutput> {
        let cfg = self.config.clone();
        let params = &cfg.robot;
        let dt = cfg.control_dt();
        let x = plant.to_srb_state(params);
        self.yaw_ref += command.yaw_rate * dt;

        self.planner.set_frequency(self.supervisor.frequency());
        let margin = cfg.supervisor.step_margin;
        let target = self.planner.plan(&x.position, &x.velocity, x.theta.z, [command.vx, command.vy], |p| {
            limit_step_location(p, walls, margin)
        })?;
        let plan = self.planner.advance(dt, target);

        let (left, right) = match plan.stance {
            Side::Left => (plan.stance_foot, plant.right_foot),
            Side::Right => (plant.left_foot, plan.stance_foot),
        };
        let stance = match plan.stance {
            Side::Left => Stance::Left,
            Side::Right => Stance::Right,
        };
        let mut contacts = ContactSet::feet(stance, left, right);
        if let Some((_, hc)) = plant.hand_contact {
            contacts = contacts.with_hand(hc.point, walls[hc.wall].horizontal_normal());
        }
        let limits = contact_limits(&self.supervisor.mode, params);
        let schedule = self.schedule(&contacts, limits, command);

        let (wrench, predicted, reference, status, iterations, fallback, solve_time) = match self.variant {
            Variant::SrbMpcHlip => {
                let out = self.mpc.solve(&x, command, &schedule, params)?;
                (out.wrench, out.predicted, out.reference, Some(out.status), out.iterations, out.fallback, out.solve_time)
            }
            Variant::HlipOnly => {
                let w = baseline_wrench(&x, &contacts, command, self.yaw_ref, params, &cfg.baseline);
                let (pred, reference) =
                    baseline_prediction(&x, command, self.yaw_ref, &cfg.baseline, &schedule, &cfg.mpc, params)?;
                (w, pred, reference, None, 0, false, 0.0)
            }
        };
        let gait = self.gait_reference(&reference, command)?;
        let mut detection = detect_push(&predicted, &gait, &cfg.supervisor);
        let off_gait = self.gait_deviation(&x, command)?;
        if off_gait.norm() > 1e-6 {
            detection.direction = off_gait;
        }

        let rot = plant.rotation();
        let reach = match self.variant {
            Variant::SrbMpcHlip => {
                wall_reachable(&x.position, &rot, walls, &cfg.plant.geometry, params, &detection.direction)
            }
            Variant::HlipOnly => None,
        };
        let touching = plant.hand_contact.is_some();
        let mode = self.supervisor.update(&detection, reach, touching, dt);

        let limbs = self.limb_command(plant, &plan, mode, walls, dt);
        let violation = crate::mpc::first_step_violation(&wrench, &schedule.steps[0], params);

        let mut state = [0.0; 13];
        state.copy_from_slice(x.to_vector().as_slice());
        let mut u = [0.0; INPUT_DIM];
        u.copy_from_slice(wrench.to_vector().as_slice());
        let telemetry = Telemetry {
            time: plant.time,
            state,
            wrench: u,
            mode,
            frequency: self.planner.frequency,
            stance,
            qp_status: status,
            iterations,
            fallback,
            solve_time,
            velocity_deviation: detection.velocity_deviation,
            angular_deviation: detection.angular_deviation,
            constraint_violation: violation,
        };
        Ok(ControlOutput { wrench, limbs, mode, detection, telemetry })
    }

    /// Measured CoM velocity minus the nominal orbit velocity at the current
    /// phase, in the world frame.
    fn gait_deviation(&self, x: &SrbState, command: &Command) -> Result<Vector3<f64>> {
        let v = self.planner.orbit_velocity([command.vx, command.vy], 0.0)?;
        let nominal = rotation_z(x.theta.z) * Vector3::new(v[0], v[1], 0.0);
        let mut d = x.velocity - nominal;
        d.z = 0.0;
        Ok(d)
    }

    /// The MPC reference with the planar velocity replaced by the nominal
    /// gait velocity, so the lateral sway does not count as a deviation.
    fn gait_reference(&self, reference: &[StateVector], command: &Command) -> Result<Vec<StateVector>> {
        let dt = self.config.mpc.dt;
        let mut out = Vec::with_capacity(reference.len());
        for (k, r) in reference.iter().enumerate() {
            let v = self.planner.orbit_velocity([command.vx, command.vy], (k + 1) as f64 * dt)?;
            let w = rotation_z(r[idx::THETA + 2]) * Vector3::new(v[0], v[1], 0.0);
            let mut g = *r;
            g[idx::VEL] = w.x;
            g[idx::VEL + 1] = w.y;
            out.push(g);
        }
        Ok(out)
    }

    /// Current stance until the predicted touchdown, then the planned
    /// foothold, then a mirrored nominal step.
    fn schedule(&self, contacts: &ContactSet, limits: crate::mpc::ForceLimits, command: &Command) -> ContactSchedule {
        let n = self.config.mpc.horizon;
        let dt = self.config.mpc.dt;
        let t_step = self.planner.config.t_ssp(self.planner.frequency);
        let mut stance = self.planner.stance;
        let (mut left, mut right) = (contacts.left, contacts.right);
        let mut next_touchdown = self.planner.remaining();
        let mut next_target = self.planner.last_target();
        let mut steps = Vec::with_capacity(n);
        for k in 0..n {
            let t = k as f64 * dt;
            while t >= next_touchdown - 1e-9 {
                match stance {
                    Side::Left => right = next_target,
                    Side::Right => left = next_target,
                }
                let from = next_target;
                stance = stance.opposite();
                let lateral = -stance.sign() * self.planner.config.step_width;
                next_target = from + Vector3::new(command.vx * t_step, lateral + command.vy * t_step, 0.0);
                next_touchdown += t_step;
            }
            let st = match stance {
                Side::Left => Stance::Left,
                Side::Right => Stance::Right,
            };
            let mut c = ContactSet::feet(st, left, right);
            if contacts.hand_in_contact {
                c = c.with_hand(contacts.hand, contacts.hand_normal);
            }
            steps.push(ScheduledContact { contacts: c, limits });
        }
        ContactSchedule { steps }
    }

    fn limb_command(
        &mut self,
        plant: &PlantState,
        plan: &crate::hlip::StepPlan,
        mode: Mode,
        walls: &[Wall],
        dt: f64,
    ) -> LimbCommand {
        let cfg = &self.config;
        let geometry = &cfg.plant.geometry;
        let mut hand_targets = [Side::Left, Side::Right].map(|s| nominal_hand(plant, geometry, s));
        let mut brace = None;
        if let (Mode::Recovery { side, hand }, Some(w)) = (mode, self.supervisor.wall) {
            let wall = &walls[w];
            let shoulder = geometry.shoulder_world(side, &plant.position, &plant.rotation());
            let t = hand_target(wall, &shoulder, cfg.robot.arm_reach);
            hand_targets[side_index(side)] = match hand {
                HandPhase::Reaching => t - wall.normal * cfg.hand_overshoot,
                HandPhase::InContact => t,
            };
            brace = Some(side);
            self.retract = None;
        } else if let Some(side) = self.last_brace {
            self.retract = Some(Retract { side, from: plant.hand(side), elapsed: 0.0 });
        }
        self.last_brace = brace;
        if let Some(r) = &mut self.retract {
            r.elapsed += dt;
            let s = (r.elapsed / cfg.supervisor.retract_time).min(1.0);
            let i = side_index(r.side);
            hand_targets[i] = r.from + (hand_targets[i] - r.from) * s;
            if s >= 1.0 {
                self.retract = None;
            }
        }
        LimbCommand {
            swing_target: if plan.touchdown { plan.stance_foot } else { plan.swing_position },
            touchdown: plan.touchdown,
            hand_targets,
            brace,
        }
    }
}

fn side_index(side: Side) -> usize {
    match side {
        Side::Left => 0,
        Side::Right => 1,
    }
}

/// Pendulum stance force with height, tilt and yaw regulation, clipped to
/// the friction pyramid.
pub fn baseline_wrench(
    x: &SrbState,
    contacts: &ContactSet,
    command: &Command,
    yaw_ref: f64,
    params: &RobotParams,
    gains: &BaselineGains,
) -> InputWrench {
    let mut w = InputWrench::default();
    let feet: Vec<Site> = [Site::Left, Site::Right].into_iter().filter(|s| contacts.is_active(*s)).collect();
    if feet.is_empty() {
        return w;
    }
    let share = 1.0 / feet.len() as f64;
    let fz_total = params.mass
        * (params.gravity_magnitude() + gains.kp_height * (params.z0 - x.position.z) - gains.kd_height * x.velocity.z);
    let tau_x = -gains.kp_tilt * x.theta.x - gains.kd_tilt * x.omega.x;
    let tau_y = -gains.kp_tilt * x.theta.y - gains.kd_tilt * x.omega.y;
    let tau_z = -gains.kp_yaw * (x.theta.z - yaw_ref) - gains.kd_yaw * (x.omega.z - command.yaw_rate);
    let lim = params.mu / core::f64::consts::SQRT_2;
    for s in feet {
        let r = x.position - contacts.site_position(s);
        let fz = (fz_total * share).clamp(0.0, params.f_foot_max);
        let rz = r.z.max(0.1);
        let mut fx = fz * r.x / rz;
        let mut fy = fz * r.y / rz + share * tau_x / rz;
        fx = fx.clamp(-lim * fz, lim * fz);
        fy = fy.clamp(-lim * fz, lim * fz);
        w.forces[s.index()] = Vector3::new(fx, fy, fz);
        w.moments[s.index()] = Vector3::new(0.0, share * tau_y, share * tau_z);
    }
    w
}

/// Linear-model rollout with the baseline law re-evaluated on the
/// predicted state, for push detection.
fn baseline_prediction(
    x0: &SrbState,
    command: &Command,
    yaw_ref: f64,
    gains: &BaselineGains,
    schedule: &ContactSchedule,
    config: &MpcConfig,
    params: &RobotParams,
) -> Result<(Vec<crate::srb::StateVector>, Vec<crate::srb::StateVector>)> {
    let reference = build_reference(x0, command, config, params);
    let model = horizon_model(x0, &reference, schedule, config, params)?;
    let mut x = x0.to_vector();
    let mut out = Vec::with_capacity(config.horizon);
    for (k, step) in schedule.steps.iter().enumerate() {
        let s = SrbState::from_vector(&x);
        let w = baseline_wrench(&s, &step.contacts, command, yaw_ref, params, gains);
        let u = DMatrix::from_column_slice(INPUT_DIM, 1, w.to_vector().as_slice());
        let single = crate::mpc::HorizonModel { a_d: model.a_d, b_d: alloc::vec![model.b_d[k]] };
        x = rollout(&single, &x, u.rows(0, INPUT_DIM))[0];
        out.push(x);
    }
    Ok((out, reference))
}
