//! Locomotion/recovery mode switching.

use nalgebra::{Matrix3, Vector3};

use crate::geometry::{wall_distance, BodyGeometry, Side, Wall};
use crate::mpc::ForceLimits;
use crate::srb::{idx, RobotParams, StateVector};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SupervisorConfig {
    /// Linear velocity deviation that counts as a push (m/s).
    pub velocity_threshold: f64,
    /// Angular velocity deviation that counts as a push (rad/s).
    pub angular_threshold: f64,
    pub normal_frequency: f64,
    pub recovery_frequency: f64,
    /// Deviations must stay below this fraction of the thresholds...
    pub exit_factor: f64,
    /// ...for this long before leaving recovery.
    pub dwell_time: f64,
    /// Minimum distance between a planned foothold and any wall.
    pub step_margin: f64,
    /// Duration of the hand's return to its nominal pose.
    pub retract_time: f64,
    /// Point-plane distance at which the hand counts as touching.
    pub contact_tolerance: f64,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self {
            velocity_threshold: 0.4,
            angular_threshold: 0.2,
            normal_frequency: 3.0,
            recovery_frequency: 5.0,
            exit_factor: 0.5,
            dwell_time: 0.5,
            step_margin: 0.1,
            retract_time: 0.3,
            contact_tolerance: 0.005,
        }
    }
}

impl SupervisorConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.velocity_threshold > 0.0 && self.angular_threshold > 0.0) {
            return Err(crate::Error::InvalidParameter("detection thresholds must be positive"));
        }
        if !(self.recovery_frequency > self.normal_frequency && self.normal_frequency > 0.0) {
            return Err(crate::Error::InvalidParameter("recovery frequency must exceed the normal one"));
        }
        if !(0.0 < self.exit_factor && self.exit_factor <= 1.0 && self.dwell_time >= 0.0) {
            return Err(crate::Error::InvalidParameter("exit hysteresis"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum HandPhase {
    Reaching,
    InContact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Mode {
    #[default]
    Normal,
    Recovery { side: Side, hand: HandPhase },
}

impl Mode {
    pub fn hand_in_contact(&self) -> bool {
        matches!(self, Mode::Recovery { hand: HandPhase::InContact, .. })
    }

    pub fn is_recovery(&self) -> bool {
        matches!(self, Mode::Recovery { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Detection {
    pub detected: bool,
    pub velocity_deviation: f64,
    pub angular_deviation: f64,
    /// Velocity deviation at the horizon step where it peaks.
    pub direction: Vector3<f64>,
}

/// Compare predicted and reference trajectories over the whole horizon.
pub fn detect_push(predicted: &[StateVector], reference: &[StateVector], config: &SupervisorConfig) -> Detection {
    let mut d = Detection::default();
    for (p, r) in predicted.iter().zip(reference) {
        let dv = p.fixed_rows::<3>(idx::VEL) - r.fixed_rows::<3>(idx::VEL);
        let dw = p.fixed_rows::<3>(idx::OMEGA) - r.fixed_rows::<3>(idx::OMEGA);
        let (nv, nw) = (dv.norm(), dw.norm());
        if nv > d.velocity_deviation {
            d.velocity_deviation = nv;
            d.direction = dv.into_owned();
        }
        d.angular_deviation = d.angular_deviation.max(nw);
    }
    d.detected = d.velocity_deviation > config.velocity_threshold || d.angular_deviation > config.angular_threshold;
    d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reach {
    pub wall: usize,
    pub side: Side,
    /// Shoulder-to-plane distance.
    pub distance: f64,
}

const TIE: f64 = 1e-9;

/// Wall within arm reach of the shoulder facing it. The hand can only push,
/// so with a nonzero push direction only walls the robot is driven toward
/// qualify. The nearest wins; exact ties go to the push direction.
pub fn wall_reachable(
    com: &Vector3<f64>,
    rotation: &Matrix3<f64>,
    walls: &[Wall],
    geometry: &BodyGeometry,
    params: &RobotParams,
    push_direction: &Vector3<f64>,
) -> Option<Reach> {
    let mut best: Option<(Reach, f64)> = None;
    for (i, wall) in walls.iter().enumerate() {
        let side = wall.facing_side();
        let shoulder = geometry.shoulder_world(side, com, rotation);
        let d = wall_distance(&shoulder, wall);
        if !(0.0..=params.arm_reach).contains(&d) {
            continue;
        }
        let toward = -wall.normal.dot(push_direction);
        if push_direction.norm() > TIE && toward <= TIE {
            continue;
        }
        let cand = Reach { wall: i, side, distance: d };
        best = match best {
            None => Some((cand, toward)),
            Some((b, bt)) => {
                let better = d < b.distance - TIE || ((d - b.distance).abs() <= TIE && toward > bt);
                if better {
                    Some((cand, toward))
                } else {
                    Some((b, bt))
                }
            }
        };
    }
    best.map(|(r, _)| r)
}

/// Contact point for the hand: the shoulder projected along the wall
/// normal, stopping at the reach radius.
pub fn hand_target(wall: &Wall, shoulder: &Vector3<f64>, reach: f64) -> Vector3<f64> {
    let d = wall_distance(shoulder, wall);
    shoulder - wall.normal * d.clamp(0.0, reach)
}

/// Force bounds for the current mode. The hand can only push while in
/// contact.
pub fn contact_limits(mode: &Mode, params: &RobotParams) -> ForceLimits {
    if mode.hand_in_contact() {
        ForceLimits::from_params(params)
    } else {
        ForceLimits { f_foot_max: params.f_foot_max, f_hand_min: 0.0, f_hand_max: 0.0 }
    }
}

/// Push a planned foothold back along each wall's horizontal normal until
/// it clears the wall by `margin`.
pub fn limit_step_location(candidate: Vector3<f64>, walls: &[Wall], margin: f64) -> Vector3<f64> {
    let mut p = candidate;
    for wall in walls {
        let d = wall_distance(&p, wall);
        if d < margin {
            let nh = wall.horizontal_normal();
            let along = wall.normal.dot(&nh);
            if along > 1e-9 {
                p += nh * ((margin - d) / along);
            }
        }
    }
    p
}

/// Timers carried between supervisor ticks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timers {
    /// Time the deviations have stayed under the exit thresholds.
    pub calm: f64,
    /// Faster stepping requested after a detection without a reachable wall.
    pub boosted: bool,
}

/// Mode transition for one tick of length `dt`.
pub fn update_mode(
    mode: Mode,
    detection: &Detection,
    reach: Option<Reach>,
    hand_touching: bool,
    timers: &mut Timers,
    dt: f64,
    config: &SupervisorConfig,
) -> Mode {
    let calm = detection.velocity_deviation < config.exit_factor * config.velocity_threshold
        && detection.angular_deviation < config.exit_factor * config.angular_threshold;
    timers.calm = if calm { timers.calm + dt } else { 0.0 };
    let settled = timers.calm >= config.dwell_time;

    match mode {
        Mode::Normal => {
            if detection.detected {
                if let Some(r) = reach {
                    timers.boosted = false;
                    return Mode::Recovery { side: r.side, hand: if hand_touching { HandPhase::InContact } else { HandPhase::Reaching } };
                }
                timers.boosted = true;
            } else if settled {
                timers.boosted = false;
            }
            Mode::Normal
        }
        Mode::Recovery { side, hand } => {
            if settled {
                return Mode::Normal;
            }
            let hand = match hand {
                HandPhase::Reaching if hand_touching => HandPhase::InContact,
                HandPhase::InContact if !hand_touching => HandPhase::Reaching,
                h => h,
            };
            Mode::Recovery { side, hand }
        }
    }
}

pub fn stepping_frequency(mode: &Mode, timers: &Timers, config: &SupervisorConfig) -> f64 {
    if mode.is_recovery() || timers.boosted {
        config.recovery_frequency
    } else {
        config.normal_frequency
    }
}

/// Stateful wrapper around [`update_mode`].
#[derive(Debug, Clone, PartialEq)]
pub struct Supervisor {
    pub config: SupervisorConfig,
    pub mode: Mode,
    pub timers: Timers,
    /// Wall selected at activation.
    pub wall: Option<usize>,
}

impl Supervisor {
    pub fn new(config: SupervisorConfig) -> Self {
        Self { config, mode: Mode::Normal, timers: Timers::default(), wall: None }
    }

    /// Returns the new mode; `reach` is only consulted on activation.
    pub fn update(&mut self, detection: &Detection, reach: Option<Reach>, hand_touching: bool, dt: f64) -> Mode {
        let before = self.mode;
        self.mode = update_mode(self.mode, detection, reach, hand_touching, &mut self.timers, dt, &self.config);
        match (before, self.mode) {
            (Mode::Normal, Mode::Recovery { .. }) => self.wall = reach.map(|r| r.wall),
            (_, Mode::Normal) => self.wall = None,
            _ => {}
        }
        self.mode
    }

    pub fn frequency(&self) -> f64 {
        stepping_frequency(&self.mode, &self.timers, &self.config)
    }
}
