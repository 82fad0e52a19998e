//! Hybrid linear inverted pendulum step planning.
//!
//! Per plane the pendulum state is `(p, ṗ)`: CoM position relative to the
//! stance foot and its velocity. The step-to-step (S2S) map advances the
//! pre-impact state by one step of length `u`:
//!
//! ```text
//!     x⁻[k+1] = A x⁻[k] + B u[k],    B = A (−1, 0)ᵀ
//! ```

use nalgebra::{Matrix2, RowVector2, Vector2, Vector3};

use crate::geometry::Side;
use crate::srb::rotation_z;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct HlipConfig {
    pub z0: f64,
    pub gravity: f64,
    pub t_dsp: f64,
    pub z_sw_min: f64,
    pub z_sw_max: f64,
    pub normal_frequency: f64,
    pub recovery_frequency: f64,
    /// Nominal lateral distance between the feet.
    pub step_width: f64,
    pub min_step_width: f64,
    pub max_step_width: f64,
    /// Bound on the sagittal step length.
    pub max_step_length: f64,
    pub max_speed: f64,
}

impl Default for HlipConfig {
    fn default() -> Self {
        Self {
            z0: 0.7,
            gravity: 9.81,
            t_dsp: 0.0,
            z_sw_min: 0.0,
            z_sw_max: 0.08,
            normal_frequency: 3.0,
            recovery_frequency: 5.0,
            step_width: 0.2,
            min_step_width: 0.08,
            max_step_width: 0.6,
            max_step_length: 0.4,
            max_speed: 1.0,
        }
    }
}

impl HlipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.z0 > 0.0 && self.gravity > 0.0) {
            return Err(Error::InvalidParameter("z0 and gravity must be positive"));
        }
        if !(self.t_dsp >= 0.0) {
            return Err(Error::InvalidParameter("t_dsp must be non-negative"));
        }
        if !(self.z_sw_max > self.z_sw_min && self.z_sw_min >= 0.0) {
            return Err(Error::InvalidParameter("swing height bounds"));
        }
        if !(self.normal_frequency > 0.0 && self.recovery_frequency > 0.0) {
            return Err(Error::InvalidParameter("stepping frequencies must be positive"));
        }
        if self.t_ssp(self.normal_frequency) <= 0.0 || self.t_ssp(self.recovery_frequency) <= 0.0 {
            return Err(Error::InvalidParameter("t_dsp must be shorter than the stepping period"));
        }
        if !(0.0 < self.min_step_width && self.min_step_width <= self.max_step_width) {
            return Err(Error::InvalidParameter("step width bounds"));
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        libm::sqrt(self.gravity / self.z0)
    }

    /// Single-support duration at a stepping frequency.
    pub fn t_ssp(&self, frequency: f64) -> f64 {
        1.0 / frequency - self.t_dsp
    }

    pub fn timing(&self, frequency: f64) -> StepTiming {
        StepTiming { lambda: self.lambda(), t_ssp: self.t_ssp(frequency), t_dsp: self.t_dsp }
    }
}

/// Pendulum constant and phase durations for one stepping frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTiming {
    pub lambda: f64,
    pub t_ssp: f64,
    pub t_dsp: f64,
}

impl StepTiming {
    pub fn period(&self) -> f64 {
        self.t_ssp + self.t_dsp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HlipState {
    pub p: f64,
    pub v: f64,
}

impl HlipState {
    pub fn new(p: f64, v: f64) -> Self {
        Self { p, v }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.p, self.v)
    }

    pub fn from_vector(x: &Vector2<f64>) -> Self {
        Self { p: x[0], v: x[1] }
    }
}

/// Closed-form single-support flow over `t` seconds.
pub fn ssp_flow(x: HlipState, t: f64, lambda: f64) -> HlipState {
    let (c, s) = (libm::cosh(lambda * t), libm::sinh(lambda * t));
    HlipState { p: x.p * c + x.v / lambda * s, v: x.p * lambda * s + x.v * c }
}

/// S2S matrices for one step: SSP flow after the double-support drift.
pub fn s2s_matrices(timing: &StepTiming) -> (Matrix2<f64>, Vector2<f64>) {
    let l = timing.lambda;
    let (c, s) = (libm::cosh(l * timing.t_ssp), libm::sinh(l * timing.t_ssp));
    let ssp = Matrix2::new(c, s / l, l * s, c);
    let dsp = Matrix2::new(1.0, timing.t_dsp, 0.0, 1.0);
    let a = ssp * dsp;
    let b = a * Vector2::new(-1.0, 0.0);
    (a, b)
}

/// Period-1 orbit for a constant velocity: `(x*, u*)` with `A x* + B u* = x*`.
pub fn nominal_p1_orbit(v_desired: f64, timing: &StepTiming) -> Result<(HlipState, f64)> {
    let (a, b) = s2s_matrices(timing);
    let u = v_desired * timing.period();
    let lhs = Matrix2::identity() - a;
    let x = lhs
        .lu()
        .solve(&(b * u))
        .ok_or(Error::Singular("I - A is singular"))?;
    Ok((HlipState::from_vector(&x), u))
}

/// Alternating orbit for the frontal plane. `step_after_left` is the step
/// taken at the end of a left-stance phase (toward the right foot) and vice
/// versa. Returns the pre-impact states at the end of left and right stance.
pub fn p2_orbit(step_after_left: f64, step_after_right: f64, timing: &StepTiming) -> Result<(HlipState, HlipState)> {
    let (a, b) = s2s_matrices(timing);
    let lhs = Matrix2::identity() - a * a;
    let rhs = a * b * step_after_left + b * step_after_right;
    let x_left = lhs
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular("I - A² is singular"))?;
    let x_right = a * x_left + b * step_after_left;
    Ok((HlipState::from_vector(&x_left), HlipState::from_vector(&x_right)))
}

/// Gain placing both eigenvalues of `A − B K` at zero.
///
/// The characteristic polynomial of `A − BK` is
/// `s² − (tr A − K B) s + (det A − K adj(A) B)`; both coefficients vanish.
pub fn deadbeat_gain(a: &Matrix2<f64>, b: &Vector2<f64>) -> Result<RowVector2<f64>> {
    let adj = Matrix2::new(a[(1, 1)], -a[(0, 1)], -a[(1, 0)], a[(0, 0)]);
    let adj_b = adj * b;
    let m = Matrix2::new(b[0], b[1], adj_b[0], adj_b[1]);
    let det = m.determinant();
    let scale = b.norm() * adj_b.norm();
    if !(det.abs() > 1e-12 * scale.max(1e-300)) {
        return Err(Error::Singular("(A, B) is not controllable"));
    }
    let rhs = Vector2::new(a.trace(), a.determinant());
    let k = m.lu().solve(&rhs).ok_or(Error::Singular("(A, B) is not controllable"))?;
    Ok(RowVector2::new(k[0], k[1]))
}

/// Step length closing the loop on the pre-impact error: `u_nominal − K e`
/// so that the error obeys `e⁺ = (A − BK) e`.
pub fn step_feedback(x_robot: HlipState, x_hlip: HlipState, u_nominal: f64, k: &RowVector2<f64>) -> f64 {
    let e = x_robot.to_vector() - x_hlip.to_vector();
    u_nominal - (k * e)[0]
}

/// Quintic phase blend with zero slope and curvature at both ends.
pub fn bezier_phase(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    let s3 = s * s * s;
    s3 * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Degree-6 vertical arc peaking at `z_max` at mid-phase.
pub fn swing_height(s: f64, z_min: f64, z_max: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    let peak = z_min + (z_max - z_min) * 64.0 / 20.0;
    // Only the middle Bernstein term differs from z_min.
    let bern = 20.0 * s * s * s * (1.0 - s) * (1.0 - s) * (1.0 - s);
    z_min + (peak - z_min) * bern
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingTarget {
    /// Touchdown position in the horizontal plane.
    pub step: [f64; 2],
    /// Single-support duration of this step.
    pub touchdown_time: f64,
    /// Swing foot horizontal position at lift-off or at the last replan.
    pub start: [f64; 2],
}

/// Swing foot position at phase time `t` of the step.
pub fn swing_trajectory(t: f64, target: &SwingTarget, config: &HlipConfig) -> Vector3<f64> {
    let s = if target.touchdown_time > 0.0 { t / target.touchdown_time } else { 1.0 };
    let b = bezier_phase(s);
    Vector3::new(
        (1.0 - b) * target.start[0] + b * target.step[0],
        (1.0 - b) * target.start[1] + b * target.step[1],
        swing_height(s, config.z_sw_min, config.z_sw_max),
    )
}

/// Fraction of the remaining distance to cover when moving from phase `s0`
/// to `s1` with the start point replaced by the current position at `s0`.
pub fn replanned_blend(s0: f64, s1: f64) -> f64 {
    let b0 = bezier_phase(s0);
    if b0 >= 1.0 {
        return 1.0;
    }
    ((bezier_phase(s1) - b0) / (1.0 - b0)).clamp(0.0, 1.0)
}

/// Output of one planner tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPlan {
    pub stance: Side,
    pub stance_foot: Vector3<f64>,
    /// Planned touchdown position for the swing foot.
    pub step_target: Vector3<f64>,
    /// Commanded swing foot position for this tick.
    pub swing_position: Vector3<f64>,
    pub phase: f64,
    pub step_duration: f64,
    /// Set on the tick where the swing foot lands.
    pub touchdown: bool,
}

/// Per-robot stepping state: stance foot, phase clock and swing path.
#[derive(Debug, Clone, PartialEq)]
pub struct HlipPlanner {
    pub config: HlipConfig,
    pub stance: Side,
    pub stance_foot: Vector3<f64>,
    pub swing_foot: Vector3<f64>,
    pub phase: f64,
    pub step_duration: f64,
    pub frequency: f64,
    last_target: Vector3<f64>,
}

/// Shortest remaining swing time after a frequency change.
const MIN_REMAINING: f64 = 0.06;

impl HlipPlanner {
    pub fn new(config: HlipConfig, stance: Side, stance_foot: Vector3<f64>, swing_foot: Vector3<f64>) -> Result<Self> {
        config.validate()?;
        let step_duration = config.t_ssp(config.normal_frequency);
        Ok(Self {
            frequency: config.normal_frequency,
            config,
            stance,
            stance_foot,
            swing_foot,
            phase: 0.0,
            step_duration,
            last_target: swing_foot,
        })
    }

    pub fn timing(&self) -> StepTiming {
        self.config.timing(self.frequency)
    }

    /// Change the stepping frequency; the current step is shortened or
    /// stretched to the new duration without landing in the past.
    pub fn set_frequency(&mut self, frequency: f64) {
        if frequency == self.frequency {
            return;
        }
        self.frequency = frequency;
        let t = self.config.t_ssp(frequency);
        self.step_duration = t.max(self.phase + MIN_REMAINING.min(t));
    }

    /// Nominal pre-impact states and step lengths in the heading frame for
    /// the current stance: ((sagittal x*, u*), (frontal x*, u*)).
    pub fn nominal(&self, v_cmd: [f64; 2]) -> Result<((HlipState, f64), (HlipState, f64))> {
        let timing = self.timing();
        let v = [v_cmd[0].clamp(-self.config.max_speed, self.config.max_speed), v_cmd[1].clamp(-self.config.max_speed, self.config.max_speed)];
        let sag = nominal_p1_orbit(v[0], &timing)?;
        let drift = v[1] * timing.period();
        let w = self.config.step_width;
        let after_left = drift - w;
        let after_right = drift + w;
        let (x_left, x_right) = p2_orbit(after_left, after_right, &timing)?;
        let front = match self.stance {
            Side::Left => (x_left, after_left),
            Side::Right => (x_right, after_right),
        };
        Ok((sag, front))
    }

    /// Nominal heading-frame CoM velocity `t_ahead` seconds from now on the
    /// orbit for `v_cmd`, following the stance changes.
    pub fn orbit_velocity(&self, v_cmd: [f64; 2], t_ahead: f64) -> Result<[f64; 2]> {
        let timing = self.timing();
        let period = timing.t_ssp;
        let mut stance = self.stance;
        let mut t = self.phase + t_ahead - self.step_duration;
        while t > 0.0 {
            stance = stance.opposite();
            t -= period;
        }
        let probe = Self { stance, ..self.clone() };
        let ((sag, _), (front, _)) = probe.nominal(v_cmd)?;
        let lambda = timing.lambda;
        Ok([ssp_flow(sag, t, lambda).v, ssp_flow(front, t, lambda).v])
    }

    /// Compute the step target from the current CoM state. `clamp` adjusts
    /// the world-frame target (wall clearance); it runs before timing the
    /// swing so the trajectory heads to the clamped point.
    pub fn plan(
        &self,
        com: &Vector3<f64>,
        com_vel: &Vector3<f64>,
        yaw: f64,
        v_cmd: [f64; 2],
        clamp: impl Fn(Vector3<f64>) -> Vector3<f64>,
    ) -> Result<Vector3<f64>> {
        let timing = self.timing();
        let (a, b) = s2s_matrices(&timing);
        let k = deadbeat_gain(&a, &b)?;
        let rot = rotation_z(yaw);
        let rel = rot.transpose() * (com - self.stance_foot);
        let vel = rot.transpose() * com_vel;
        let remaining = (self.step_duration - self.phase).max(0.0);
        let lambda = timing.lambda;
        let pre_x = ssp_flow(HlipState::new(rel.x, vel.x), remaining, lambda);
        let pre_y = ssp_flow(HlipState::new(rel.y, vel.y), remaining, lambda);
        let ((sag_x, sag_u), (front_x, front_u)) = self.nominal(v_cmd)?;
        let cfg = &self.config;
        let ux = step_feedback(pre_x, sag_x, sag_u, &k).clamp(-cfg.max_step_length, cfg.max_step_length);
        let mut uy = step_feedback(pre_y, front_x, front_u, &k);
        // Keep the swing foot on its own side of the stance foot.
        uy = match self.stance {
            Side::Left => uy.clamp(-cfg.max_step_width, -cfg.min_step_width),
            Side::Right => uy.clamp(cfg.min_step_width, cfg.max_step_width),
        };
        let target = self.stance_foot + rot * Vector3::new(ux, uy, 0.0);
        Ok(clamp(Vector3::new(target.x, target.y, 0.0)))
    }

    /// Advance the phase clock by `dt` toward `target` and return the
    /// swing command. Lands and swaps stance when the step time elapses.
    pub fn advance(&mut self, dt: f64, target: Vector3<f64>) -> StepPlan {
        let s0 = self.phase / self.step_duration;
        self.phase += dt;
        self.last_target = target;
        if self.phase >= self.step_duration - 1e-9 {
            let landed = Vector3::new(target.x, target.y, 0.0);
            let plan = StepPlan {
                stance: self.stance.opposite(),
                stance_foot: landed,
                step_target: landed,
                swing_position: self.stance_foot,
                phase: 0.0,
                step_duration: self.config.t_ssp(self.frequency),
                touchdown: true,
            };
            self.swing_foot = self.stance_foot;
            self.stance_foot = landed;
            self.stance = self.stance.opposite();
            self.phase = 0.0;
            self.step_duration = self.config.t_ssp(self.frequency);
            return plan;
        }
        let s1 = self.phase / self.step_duration;
        let beta = replanned_blend(s0, s1);
        let x = self.swing_foot.x + beta * (target.x - self.swing_foot.x);
        let y = self.swing_foot.y + beta * (target.y - self.swing_foot.y);
        let z = swing_height(s1, self.config.z_sw_min, self.config.z_sw_max);
        self.swing_foot = Vector3::new(x, y, z);
        StepPlan {
            stance: self.stance,
            stance_foot: self.stance_foot,
            step_target: target,
            swing_position: self.swing_foot,
            phase: self.phase,
            step_duration: self.step_duration,
            touchdown: false,
        }
    }

    pub fn last_target(&self) -> Vector3<f64> {
        self.last_target
    }

    /// Time left until touchdown.
    pub fn remaining(&self) -> f64 {
        (self.step_duration - self.phase).max(0.0)
    }
}
