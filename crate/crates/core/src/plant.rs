//! Ground-truth rigid-body plant.
//!
//! Unlike the control model this keeps the full rotation (unit quaternion),
//! the world-frame inertia and the gyroscopic term. Limbs are kinematic: the
//! swing foot and the hand chase their targets through a first-order lag and
//! only touch the torso through the contact wrenches.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::geometry::{wall_distance, BodyGeometry, Side, Wall};
use crate::srb::{ContactSet, InputWrench, RobotParams, Site, SrbState, Stance};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PlantConfig {
    /// Integration step (s).
    pub dt: f64,
    /// Time constant of the swing foot and hand tracking (s).
    pub limb_lag: f64,
    pub geometry: BodyGeometry,
    /// |roll| or |pitch| beyond this is a failure (rad).
    pub tilt_limit: f64,
    /// Allowed CoM drop below the nominal height (m).
    pub height_drop: f64,
    /// Shoulder-wall contact longer than this is a failure (s).
    pub shoulder_contact_time: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            limb_lag: 0.05,
            geometry: BodyGeometry::default(),
            tilt_limit: 0.3,
            height_drop: 0.1,
            shoulder_contact_time: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandContact {
    pub wall: usize,
    pub point: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Body to world.
    pub orientation: UnitQuaternion<f64>,
    /// World frame.
    pub omega: Vector3<f64>,
    pub left_foot: Vector3<f64>,
    pub right_foot: Vector3<f64>,
    pub stance: Stance,
    pub hand: [Vector3<f64>; 2],
    pub hand_contact: Option<(Side, HandContact)>,
    pub time: f64,
}

impl PlantState {
    /// Upright, at rest, in double support under the hips.
    pub fn standing(params: &RobotParams, geometry: &BodyGeometry) -> Self {
        let mut s = Self {
            position: Vector3::new(0.0, 0.0, params.z0),
            velocity: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
            omega: Vector3::zeros(),
            left_foot: Vector3::new(0.0, geometry.hip_offset, 0.0),
            right_foot: Vector3::new(0.0, -geometry.hip_offset, 0.0),
            stance: Stance::Both,
            hand: [Vector3::zeros(); 2],
            hand_contact: None,
            time: 0.0,
        };
        s.hand = [Side::Left, Side::Right].map(|side| nominal_hand(&s, geometry, side));
        s
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.orientation.to_rotation_matrix().into_inner()
    }

    /// (roll, pitch, yaw) with `R = R_z(yaw) R_y(pitch) R_x(roll)`.
    pub fn euler(&self) -> Vector3<f64> {
        let (r, p, y) = self.orientation.euler_angles();
        Vector3::new(r, p, y)
    }

    pub fn to_srb_state(&self, params: &RobotParams) -> SrbState {
        SrbState::new(self.euler(), self.position, self.omega, self.velocity, params)
    }

    pub fn foot(&self, side: Side) -> Vector3<f64> {
        match side {
            Side::Left => self.left_foot,
            Side::Right => self.right_foot,
        }
    }

    pub fn hand(&self, side: Side) -> Vector3<f64> {
        self.hand[side_index(side)]
    }

    /// Contact sites as seen by the controller.
    pub fn contact_set(&self, walls: &[Wall]) -> ContactSet {
        let mut c = ContactSet::feet(self.stance, self.left_foot, self.right_foot);
        if let Some((_, hc)) = self.hand_contact {
            c = c.with_hand(hc.point, walls[hc.wall].horizontal_normal());
        }
        c
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).chain(self.omega.iter()).all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }
}

fn side_index(side: Side) -> usize {
    match side {
        Side::Left => 0,
        Side::Right => 1,
    }
}

/// Hand resting below the shoulder.
pub fn nominal_hand(state: &PlantState, geometry: &BodyGeometry, side: Side) -> Vector3<f64> {
    let offset = geometry.shoulder_offset(side) + Vector3::new(0.0, side.sign() * 0.05, -0.35);
    state.position + state.rotation() * offset
}

/// A horizontal push applied at a point above the CoM.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PushEvent {
    /// World-frame force (N).
    pub force: [f64; 3],
    /// Application point above the CoM along the torso axis (m).
    pub height: f64,
    pub start: f64,
    #[cfg_attr(feature = "serde", serde(default = "default_push_duration"))]
    pub duration: f64,
}

#[cfg(feature = "serde")]
fn default_push_duration() -> f64 {
    0.2
}

impl PushEvent {
    pub fn new(force: Vector3<f64>, height: f64, start: f64, duration: f64) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::InvalidParameter("push duration must be positive"));
        }
        Ok(Self { force: [force.x, force.y, force.z], height, start, duration })
    }

    /// Lateral push: from the left pushes toward −y, from the right toward +y.
    pub fn lateral(magnitude: f64, from: Side, height: f64, start: f64) -> Self {
        Self { force: [0.0, -from.sign() * magnitude, 0.0], height, start, duration: 0.2 }
    }

    pub fn force_vector(&self) -> Vector3<f64> {
        Vector3::from(self.force)
    }

    pub fn active(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }
}

/// Torso-contact and balance failures, in checking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum FailureCode {
    None,
    TorsoGroundContact,
    TorsoWallContact,
    RollPitchExceeded,
    ComHeightDrop,
    ShoulderWallContact,
}

impl FailureCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureCode::None => "none",
            FailureCode::TorsoGroundContact => "torso_ground_contact",
            FailureCode::TorsoWallContact => "torso_wall_contact",
            FailureCode::RollPitchExceeded => "roll_pitch_exceeded",
            FailureCode::ComHeightDrop => "com_height_drop",
            FailureCode::ShoulderWallContact => "shoulder_wall_contact",
        }
    }
}

/// Wrench sources that stay fixed over one integration step.
struct Loads {
    force: Vector3<f64>,
    /// Sites with their forces; lever arms are taken from the stage CoM.
    site_forces: [(Vector3<f64>, Vector3<f64>); 4],
    moment: Vector3<f64>,
    push_offset: Vector3<f64>,
}

#[derive(Clone, Copy)]
struct Rigid {
    p: Vector3<f64>,
    v: Vector3<f64>,
    q: Quaternion<f64>,
    w: Vector3<f64>,
}

impl Rigid {
    fn add(&self, d: &Rigid, h: f64) -> Rigid {
        Rigid { p: self.p + d.p * h, v: self.v + d.v * h, q: self.q + d.q * h, w: self.w + d.w * h }
    }
}

fn derivative(s: &Rigid, loads: &Loads, inertia: &Matrix3<f64>, params: &RobotParams) -> Rigid {
    let unit = UnitQuaternion::from_quaternion(s.q);
    let r = unit.to_rotation_matrix().into_inner();
    let acc = loads.force / params.mass - params.gravity_vector();
    let mut tau = loads.moment;
    for (point, f) in &loads.site_forces {
        tau += (point - s.p).cross(f);
    }
    // Push point rides with the torso.
    let push = &loads.site_forces[3];
    tau -= (push.0 - s.p).cross(&push.1);
    tau += (r * loads.push_offset).cross(&push.1);

    let i_w = r * inertia * r.transpose();
    let gyro = s.w.cross(&(i_w * s.w));
    let w_dot = i_w.lu().solve(&(tau - gyro)).unwrap_or_else(Vector3::zeros);
    let wq = Quaternion::new(0.0, s.w.x, s.w.y, s.w.z);
    let q_dot = (wq * s.q) * 0.5;
    Rigid { p: s.v, v: acc, q: q_dot, w: w_dot }
}

/// Integrate the torso over `dt` with RK4 under constant contact wrenches.
/// Only sites active in `contacts` transmit force.
pub fn step_plant(
    state: &PlantState,
    wrench: &InputWrench,
    contacts: &ContactSet,
    push: Option<&PushEvent>,
    params: &RobotParams,
    dt: f64,
) -> Result<PlantState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter("dt must be positive"));
    }
    let w = wrench.masked(contacts);
    if w.forces.iter().chain(w.moments.iter()).any(|v| !v.iter().all(|x| x.is_finite())) {
        return Err(Error::NonFinite("plant input wrench"));
    }
    let mut site_forces = [(Vector3::zeros(), Vector3::zeros()); 4];
    let mut force = Vector3::zeros();
    let mut moment = Vector3::zeros();
    for site in Site::ALL {
        let i = site.index();
        site_forces[i] = (contacts.site_position(site), w.forces[i]);
        force += w.forces[i];
        moment += w.moments[i];
    }
    let mut push_offset = Vector3::zeros();
    if let Some(p) = push {
        let f = p.force_vector();
        force += f;
        push_offset = Vector3::new(0.0, 0.0, p.height);
        site_forces[3] = (state.position, f);
    }
    let loads = Loads { force, site_forces, moment, push_offset };
    let inertia = params.inertia_matrix();

    let s0 = Rigid { p: state.position, v: state.velocity, q: *state.orientation.quaternion(), w: state.omega };
    let k1 = derivative(&s0, &loads, &inertia, params);
    let k2 = derivative(&s0.add(&k1, dt / 2.0), &loads, &inertia, params);
    let k3 = derivative(&s0.add(&k2, dt / 2.0), &loads, &inertia, params);
    let k4 = derivative(&s0.add(&k3, dt), &loads, &inertia, params);
    let mix = |a: &Rigid, b: &Rigid, c: &Rigid, d: &Rigid| Rigid {
        p: (a.p + b.p * 2.0 + c.p * 2.0 + d.p) * (dt / 6.0),
        v: (a.v + b.v * 2.0 + c.v * 2.0 + d.v) * (dt / 6.0),
        q: (a.q + b.q * 2.0 + c.q * 2.0 + d.q) * (dt / 6.0),
        w: (a.w + b.w * 2.0 + c.w * 2.0 + d.w) * (dt / 6.0),
    };
    let delta = mix(&k1, &k2, &k3, &k4);
    let mut next = *state;
    next.position += delta.p;
    next.velocity += delta.v;
    next.orientation = UnitQuaternion::from_quaternion(s0.q + delta.q);
    next.omega += delta.w;
    next.time += dt;
    if !next.is_finite() {
        return Err(Error::NonFinite("plant state"));
    }
    Ok(next)
}

/// Point-plane contact test against every wall.
pub fn check_hand_contact(hand: &Vector3<f64>, walls: &[Wall], tolerance: f64) -> Option<HandContact> {
    walls
        .iter()
        .enumerate()
        .map(|(i, w)| (i, wall_distance(hand, w)))
        .filter(|(_, d)| *d <= tolerance)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| HandContact { wall: i, point: *hand })
}

/// Limb commands for one plant step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimbCommand {
    pub swing_target: Vector3<f64>,
    /// Land the swing foot at `swing_target` now.
    pub touchdown: bool,
    pub hand_targets: [Vector3<f64>; 2],
    /// Which hand may make or keep wall contact.
    pub brace: Option<Side>,
}

/// Move the kinematic limbs: lagged tracking, exact touchdown, hand contact
/// making and breaking.
pub fn step_limbs(
    state: &mut PlantState,
    cmd: &LimbCommand,
    walls: &[Wall],
    params: &RobotParams,
    config: &PlantConfig,
    contact_tolerance: f64,
    dt: f64,
) {
    let alpha = 1.0 - libm::exp(-dt / config.limb_lag);
    let swing = match state.stance {
        Stance::Left => Some(Side::Right),
        Stance::Right => Some(Side::Left),
        _ => None,
    };
    if let Some(side) = swing {
        let foot = match side {
            Side::Left => &mut state.left_foot,
            Side::Right => &mut state.right_foot,
        };
        if cmd.touchdown {
            *foot = Vector3::new(cmd.swing_target.x, cmd.swing_target.y, 0.0);
            state.stance = match side {
                Side::Left => Stance::Left,
                Side::Right => Stance::Right,
            };
        } else {
            *foot += (cmd.swing_target - *foot) * alpha;
            foot.z = foot.z.max(0.0);
        }
    } else if cmd.touchdown {
        state.stance = Stance::Left;
    }

    let rot = state.rotation();
    let geometry = &config.geometry;
    if let Some((side, hc)) = state.hand_contact {
        let shoulder = geometry.shoulder_world(side, &state.position, &rot);
        if cmd.brace != Some(side) || (hc.point - shoulder).norm() > params.arm_reach {
            state.hand_contact = None;
        }
    }
    for side in [Side::Left, Side::Right] {
        let i = side_index(side);
        if let Some((s, hc)) = state.hand_contact {
            if s == side {
                state.hand[i] = hc.point;
                continue;
            }
        }
        let mut h = state.hand[i] + (cmd.hand_targets[i] - state.hand[i]) * alpha;
        let shoulder = geometry.shoulder_world(side, &state.position, &rot);
        let arm = h - shoulder;
        if arm.norm() > params.arm_reach {
            h = shoulder + arm * (params.arm_reach / arm.norm());
        }
        for w in walls {
            let d = wall_distance(&h, w);
            if d < 0.0 {
                h -= w.normal * d;
            }
        }
        state.hand[i] = h;
        if cmd.brace == Some(side) && state.hand_contact.is_none() {
            if let Some(hc) = check_hand_contact(&h, walls, contact_tolerance) {
                state.hand_contact = Some((side, hc));
            }
        }
    }
}

/// Failure classifier fed one state at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureMonitor {
    pub config: PlantConfig,
    shoulder_time: f64,
    last_time: Option<f64>,
    pub failure: FailureCode,
    pub failure_time: Option<f64>,
}

impl FailureMonitor {
    pub fn new(config: PlantConfig) -> Self {
        Self { config, shoulder_time: 0.0, last_time: None, failure: FailureCode::None, failure_time: None }
    }

    /// Returns the first failure seen so far.
    pub fn observe(&mut self, state: &PlantState, walls: &[Wall], params: &RobotParams) -> FailureCode {
        if self.failure != FailureCode::None {
            return self.failure;
        }
        let dt = self.last_time.map_or(0.0, |t| state.time - t);
        self.last_time = Some(state.time);
        let code = self.check(state, walls, params, dt);
        if code != FailureCode::None {
            self.failure = code;
            self.failure_time = Some(state.time);
        }
        code
    }

    fn check(&mut self, state: &PlantState, walls: &[Wall], params: &RobotParams, dt: f64) -> FailureCode {
        let g = &self.config.geometry;
        let rot = state.rotation();
        let corners = g.torso_corners(&state.position, &rot);
        if corners.iter().any(|c| c.z <= 0.0) {
            return FailureCode::TorsoGroundContact;
        }
        if corners.iter().any(|c| walls.iter().any(|w| wall_distance(c, w) <= 0.0)) {
            return FailureCode::TorsoWallContact;
        }
        let e = state.euler();
        if e.x.abs() > self.config.tilt_limit || e.y.abs() > self.config.tilt_limit {
            return FailureCode::RollPitchExceeded;
        }
        if state.position.z < params.z0 - self.config.height_drop {
            return FailureCode::ComHeightDrop;
        }
        let touching = [Side::Left, Side::Right].iter().any(|&s| {
            let p = g.shoulder_world(s, &state.position, &rot);
            walls.iter().any(|w| wall_distance(&p, w) <= g.shoulder_radius)
        });
        self.shoulder_time = if touching { self.shoulder_time + dt } else { 0.0 };
        if self.shoulder_time > self.config.shoulder_contact_time {
            return FailureCode::ShoulderWallContact;
        }
        FailureCode::None
    }
}

/// First failure over a recorded trajectory.
pub fn classify_failure(history: &[PlantState], walls: &[Wall], params: &RobotParams, config: &PlantConfig) -> FailureCode {
    let mut m = FailureMonitor::new(*config);
    for s in history {
        let c = m.observe(s, walls, params);
        if c != FailureCode::None {
            return c;
        }
    }
    FailureCode::None
}

/// Kinetic plus potential energy.
pub fn energy(state: &PlantState, params: &RobotParams) -> f64 {
    let r = state.rotation();
    let i_w = r * params.inertia_matrix() * r.transpose();
    0.5 * params.mass * state.velocity.norm_squared()
        + 0.5 * state.omega.dot(&(i_w * state.omega))
        + params.mass * params.gravity_magnitude() * state.position.z
}

/// Convenience: trajectory of `steps` plant steps under constant inputs.
pub fn simulate_constant(
    start: &PlantState,
    wrench: &InputWrench,
    contacts: &ContactSet,
    params: &RobotParams,
    dt: f64,
    steps: usize,
) -> Result<Vec<PlantState>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(*start);
    let mut s = *start;
    for _ in 0..steps {
        s = step_plant(&s, wrench, contacts, None, params, dt)?;
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn airborne(s: &PlantState) -> ContactSet {
        ContactSet::feet(Stance::Airborne, s.left_foot, s.right_foot)
    }

    #[test]
    fn free_fall() {
        let p = RobotParams::default();
        let s = PlantState::standing(&p, &BodyGeometry::default());
        let n = step_plant(&s, &InputWrench::default(), &airborne(&s), None, &p, 1e-3).unwrap();
        assert!((n.velocity.z + 9.81e-3).abs() < 1e-15);
        assert!((n.position.z - (0.7 - 0.5 * 9.81e-6)).abs() < 1e-15);
    }

    #[test]
    fn static_balance() {
        let p = RobotParams::default();
        let s = PlantState::standing(&p, &BodyGeometry::default());
        let mut w = InputWrench::default();
        w.forces[Site::Left.index()].z = p.weight() / 2.0;
        w.forces[Site::Right.index()].z = p.weight() / 2.0;
        let c = s.contact_set(&[]);
        let n = step_plant(&s, &w, &c, None, &p, 1e-3).unwrap();
        assert!(n.velocity.norm() < 1e-14);
        assert!(n.omega.norm() < 1e-14);
    }

    #[test]
    fn momentum_in_free_flight() {
        let p = RobotParams::default();
        let mut s = PlantState::standing(&p, &BodyGeometry::default());
        s.velocity = Vector3::new(0.3, -0.2, 1.0);
        s.omega = Vector3::new(0.5, -1.0, 2.0);
        let traj = simulate_constant(&s, &InputWrench::default(), &airborne(&s), &p, 1e-3, 500).unwrap();
        let last = traj.last().unwrap();
        let dp = p.mass * (last.velocity - s.velocity);
        let expected = Vector3::new(0.0, 0.0, -p.mass * 9.81 * 0.5);
        assert!((dp - expected).norm() < 1e-9);
    }

    #[test]
    fn spherical_inertia_keeps_omega() {
        let p = RobotParams { inertia: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], ..RobotParams::default() };
        let mut s = PlantState::standing(&p, &BodyGeometry::default());
        s.omega = Vector3::new(0.4, 1.5, -0.7);
        let traj = simulate_constant(&s, &InputWrench::default(), &airborne(&s), &p, 1e-3, 1000).unwrap();
        assert!((traj.last().unwrap().omega - s.omega).norm() < 1e-12);
    }

    #[test]
    fn quaternion_norm_drift() {
        let p = RobotParams::default();
        let mut s = PlantState::standing(&p, &BodyGeometry::default());
        s.omega = Vector3::new(1.0, -2.0, 3.0);
        let c = airborne(&s);
        let mut worst: f64 = 0.0;
        for _ in 0..100_000 {
            s = step_plant(&s, &InputWrench::default(), &c, None, &p, 1e-3).unwrap();
            worst = worst.max((s.orientation.coords.norm() - 1.0).abs());
        }
        assert!(worst < 1e-9, "{worst}");
    }

    #[test]
    fn step_halving_convergence() {
        let p = RobotParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut coarse = PlantState::standing(&p, &BodyGeometry::default());
        coarse.stance = Stance::Left;
        let mut fine = coarse;
        let c = coarse.contact_set(&[]);
        for _ in 0..50 {
            let mut w = InputWrench::default();
            w.forces[Site::Left.index()] = Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(150.0..250.0));
            w.moments[Site::Left.index()] = Vector3::new(0.0, rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            for _ in 0..4 {
                coarse = step_plant(&coarse, &w, &c, None, &p, 1e-3).unwrap();
                for _ in 0..10 {
                    fine = step_plant(&fine, &w, &c, None, &p, 1e-4).unwrap();
                }
            }
        }
        assert!((coarse.position - fine.position).norm() < 1e-6);
        assert!((coarse.velocity - fine.velocity).norm() < 1e-6);
        assert!((coarse.omega - fine.omega).norm() < 1e-6);
        assert!(coarse.orientation.angle_to(&fine.orientation) < 1e-6);
    }

    #[test]
    fn push_work_matches_energy() {
        let p = RobotParams::default();
        let mut s = PlantState::standing(&p, &BodyGeometry::default());
        s.velocity = Vector3::new(0.1, 0.0, 0.5);
        let push = PushEvent::new(Vector3::new(20.0, -60.0, 0.0), 0.3, 0.0, 0.2).unwrap();
        let c = airborne(&s);
        let e0 = energy(&s, &p);
        let dt = 1e-4;
        let mut work = 0.0;
        let power = |s: &PlantState| {
            let r = s.rotation() * Vector3::new(0.0, 0.0, push.height);
            push.force_vector().dot(&(s.velocity + s.omega.cross(&r)))
        };
        for _ in 0..2000 {
            let before = power(&s);
            s = step_plant(&s, &InputWrench::default(), &c, Some(&push), &p, dt).unwrap();
            work += 0.5 * (before + power(&s)) * dt;
        }
        let de = energy(&s, &p) - e0;
        assert!((de - work).abs() < 1e-6 * work.abs().max(1.0), "{de} vs {work}");
    }

    #[test]
    fn plant_differs_from_linear_model_at_high_rates() {
        use crate::discretize::zoh_series;
        use crate::srb::build_continuous_dynamics;
        let p = RobotParams::default();
        let mut s = PlantState::standing(&p, &BodyGeometry::default());
        s.omega = Vector3::new(3.0, 2.0, 4.0);
        let c = airborne(&s);
        let (a, _) = build_continuous_dynamics(&s.to_srb_state(&p), &c, &p).unwrap();
        let (a_d, _) = zoh_series(&a, 0.1).unwrap();
        let predicted = a_d * s.to_srb_state(&p).to_vector();
        let traj = simulate_constant(&s, &InputWrench::default(), &c, &p, 1e-3, 100).unwrap();
        let actual = traj.last().unwrap().to_srb_state(&p).to_vector();
        assert!((predicted - actual).amax() > 1e-3);
    }

    #[test]
    fn hand_contact_detection() {
        let walls = vec![Wall::lateral(0.8, 0.0)];
        assert!(check_hand_contact(&Vector3::new(0.0, 0.798, 0.9), &walls, 0.005).is_some());
        assert!(check_hand_contact(&Vector3::new(0.0, 0.78, 0.9), &walls, 0.005).is_none());
        let tilt = 5f64.to_radians();
        let slanted = vec![Wall::lateral(0.8, tilt)];
        // 3 mm from the tilted plane measured along its normal.
        let on_plane = Vector3::new(0.0, 0.8 - 0.9 * tilt.tan(), 0.9);
        let near = on_plane + slanted[0].normal * 0.003;
        assert!(check_hand_contact(&near, &slanted, 0.005).is_some());
        let off = on_plane + slanted[0].normal * 0.02;
        assert!(check_hand_contact(&off, &slanted, 0.005).is_none());
    }

    #[test]
    fn failure_codes() {
        let p = RobotParams::default();
        let cfg = PlantConfig::default();
        let walls = vec![Wall::lateral(0.8, 0.0)];
        let base = PlantState::standing(&p, &cfg.geometry);
        let mut hist = vec![base];
        for i in 1..=10 {
            let mut s = base;
            s.time = i as f64 * 0.01;
            s.orientation = UnitQuaternion::from_euler_angles(0.035 * i as f64, 0.0, 0.0);
            hist.push(s);
        }
        assert_eq!(classify_failure(&hist, &walls, &p, &cfg), FailureCode::RollPitchExceeded);

        let mut low = base;
        low.position.z = p.z0 - 0.12;
        assert_eq!(classify_failure(&[base, low], &walls, &p, &cfg), FailureCode::ComHeightDrop);
        assert_eq!(classify_failure(&[base; 5], &walls, &p, &cfg), FailureCode::None);

        let mut leaning = base;
        leaning.position.y = 0.8 - 0.18 - 0.04;
        let hist: Vec<_> = (0..700)
            .map(|i| {
                let mut s = leaning;
                s.time = i as f64 * 1e-3;
                s
            })
            .collect();
        assert_eq!(classify_failure(&hist[..400], &walls, &p, &cfg), FailureCode::None);
        assert_eq!(classify_failure(&hist, &walls, &p, &cfg), FailureCode::ShoulderWallContact);

        let mut fallen = base;
        fallen.position.z = 0.15;
        assert_eq!(classify_failure(&[fallen], &walls, &p, &cfg), FailureCode::TorsoGroundContact);
        let mut crushed = base;
        crushed.position.y = 0.7;
        assert_eq!(classify_failure(&[crushed], &walls, &p, &cfg), FailureCode::TorsoWallContact);
    }

    #[test]
    fn limbs_track_and_land() {
        let p = RobotParams::default();
        let cfg = PlantConfig::default();
        let walls = vec![Wall::lateral(0.6, 0.0)];
        let mut s = PlantState::standing(&p, &cfg.geometry);
        s.stance = Stance::Left;
        let target = Vector3::new(0.2, -0.1, 0.05);
        let hand_target = Vector3::new(0.0, 0.6, 0.92);
        let cmd = LimbCommand {
            swing_target: target,
            touchdown: false,
            hand_targets: [hand_target, nominal_hand(&s, &cfg.geometry, Side::Right)],
            brace: Some(Side::Left),
        };
        for _ in 0..400 {
            step_limbs(&mut s, &cmd, &walls, &p, &cfg, 0.005, 1e-3);
        }
        assert!((s.right_foot - target).norm() < 1e-3);
        let (side, hc) = s.hand_contact.expect("hand reached the wall");
        assert_eq!(side, Side::Left);
        assert!(wall_distance(&hc.point, &walls[0]).abs() <= 0.005);
        step_limbs(&mut s, &LimbCommand { touchdown: true, ..cmd }, &walls, &p, &cfg, 0.005, 1e-3);
        assert_eq!(s.stance, Stance::Right);
        assert_eq!(s.right_foot, Vector3::new(0.2, -0.1, 0.0));
        step_limbs(&mut s, &LimbCommand { brace: None, ..cmd }, &walls, &p, &cfg, 0.005, 1e-3);
        assert!(s.hand_contact.is_none());
    }
}
