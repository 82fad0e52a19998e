//! Single-rigid-body (SRB) model.
//!
//! The robot is one rigid body driven by contact wrenches at three sites:
//! one bracing hand and the two feet. The controller-side state is
//!
//! ```text
//! x = [θ(3), p_c(3), ω(3), ṗ_c(3), g_slot(1)]
//! ```
//!
//! with θ the roll/pitch/yaw angles, ω the world-frame angular velocity and
//! `g_slot = -|g|` a constant entry that lets the affine gravity term ride
//! along inside the linear dynamics. The input is the 18-vector
//! `[F_h, F_l, F_r, M_h, M_l, M_r]` (world frame).
//!
//! Lever arms point from the CoM to the contact site, `r_i = p_i - p_c`, and
//! the moment of a force is `r_i × F_i` (right-handed).

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::{Error, Result};

pub const STATE_DIM: usize = 13;
pub const INPUT_DIM: usize = 18;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputVector = SVector<f64, INPUT_DIM>;
pub type InputMatrix = SMatrix<f64, STATE_DIM, INPUT_DIM>;

/// Offsets of the state blocks.
pub mod idx {
    pub const THETA: usize = 0;
    pub const POS: usize = 3;
    pub const OMEGA: usize = 6;
    pub const VEL: usize = 9;
    pub const GRAVITY: usize = 12;

    pub const F_HAND: usize = 0;
    pub const F_LEFT: usize = 3;
    pub const F_RIGHT: usize = 6;
    pub const M_HAND: usize = 9;
    pub const M_LEFT: usize = 12;
    pub const M_RIGHT: usize = 15;
}

/// Physical parameters of the reduced-order robot.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RobotParams {
    /// Total mass (kg).
    pub mass: f64,
    /// Centroidal inertia, row-major (kg·m²).
    pub inertia: [[f64; 3]; 3],
    /// Gravity vector; `p̈ = ΣF/m - gravity`, so the default points up.
    pub gravity: [f64; 3],
    /// Coulomb friction coefficient for feet and hand.
    pub mu: f64,
    /// Nominal CoM height (m).
    pub z0: f64,
    /// Reach radius of each arm, measured from the shoulder (m).
    pub arm_reach: f64,
    /// Upper bound on a foot's vertical force (N).
    pub f_foot_max: f64,
    /// Bounds on the hand's normal force while braced (N).
    pub f_hand_min: f64,
    pub f_hand_max: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            mass: 20.0,
            inertia: [[1.6, 0.0, 0.0], [0.0, 1.4, 0.0], [0.0, 0.0, 0.5]],
            gravity: [0.0, 0.0, 9.81],
            mu: 0.5,
            z0: 0.7,
            arm_reach: 0.6,
            f_foot_max: 500.0,
            f_hand_min: 0.0,
            f_hand_max: 150.0,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::InvalidParameter("mass must be positive"));
        }
        if !(self.mu > 0.0) {
            return Err(Error::InvalidParameter("mu must be positive"));
        }
        if !(self.z0 > 0.0) {
            return Err(Error::InvalidParameter("z0 must be positive"));
        }
        if !(self.f_hand_min <= self.f_hand_max) {
            return Err(Error::InvalidParameter("f_hand_min must not exceed f_hand_max"));
        }
        if !(self.gravity_magnitude() > 0.0) {
            return Err(Error::InvalidParameter("gravity must be non-zero"));
        }
        let inertia = self.inertia_matrix();
        if (inertia - inertia.transpose()).abs().max() > 1e-12 {
            return Err(Error::InvalidParameter("inertia must be symmetric"));
        }
        if inertia.cholesky().is_none() {
            return Err(Error::InvalidParameter("inertia must be positive definite"));
        }
        Ok(())
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        let i = &self.inertia;
        Matrix3::new(
            i[0][0], i[0][1], i[0][2], i[1][0], i[1][1], i[1][2], i[2][0], i[2][1], i[2][2],
        )
    }

    pub fn gravity_vector(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }

    pub fn gravity_magnitude(&self) -> f64 {
        self.gravity_vector().norm()
    }

    /// Weight `m·|g|` (N).
    pub fn weight(&self) -> f64 {
        self.mass * self.gravity_magnitude()
    }
}

/// Controller-side rigid-body state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrbState {
    pub theta: Vector3<f64>,
    pub position: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Always `-|g|`.
    pub gravity_slot: f64,
}

impl SrbState {
    pub fn new(
        theta: Vector3<f64>,
        position: Vector3<f64>,
        omega: Vector3<f64>,
        velocity: Vector3<f64>,
        params: &RobotParams,
    ) -> Self {
        Self { theta, position, omega, velocity, gravity_slot: -params.gravity_magnitude() }
    }

    /// Upright at rest at the nominal height above `(x, y)`.
    pub fn standing(x: f64, y: f64, params: &RobotParams) -> Self {
        Self::new(
            Vector3::zeros(),
            Vector3::new(x, y, params.z0),
            Vector3::zeros(),
            Vector3::zeros(),
            params,
        )
    }

    pub fn to_vector(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(idx::THETA).copy_from(&self.theta);
        x.fixed_rows_mut::<3>(idx::POS).copy_from(&self.position);
        x.fixed_rows_mut::<3>(idx::OMEGA).copy_from(&self.omega);
        x.fixed_rows_mut::<3>(idx::VEL).copy_from(&self.velocity);
        x[idx::GRAVITY] = self.gravity_slot;
        x
    }

    pub fn from_vector(x: &StateVector) -> Self {
        Self {
            theta: x.fixed_rows::<3>(idx::THETA).into_owned(),
            position: x.fixed_rows::<3>(idx::POS).into_owned(),
            omega: x.fixed_rows::<3>(idx::OMEGA).into_owned(),
            velocity: x.fixed_rows::<3>(idx::VEL).into_owned(),
            gravity_slot: x[idx::GRAVITY],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// The three contact sites of the model, in input order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Site {
    Hand,
    Left,
    Right,
}

impl Site {
    pub const ALL: [Site; 3] = [Site::Hand, Site::Left, Site::Right];

    pub fn index(self) -> usize {
        match self {
            Site::Hand => 0,
            Site::Left => 1,
            Site::Right => 2,
        }
    }
}

/// Contact forces and moments for every site, world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InputWrench {
    pub forces: [Vector3<f64>; 3],
    pub moments: [Vector3<f64>; 3],
}

impl InputWrench {
    pub fn force(&self, site: Site) -> Vector3<f64> {
        self.forces[site.index()]
    }

    pub fn moment(&self, site: Site) -> Vector3<f64> {
        self.moments[site.index()]
    }

    pub fn to_vector(&self) -> InputVector {
        let mut u = InputVector::zeros();
        for site in Site::ALL {
            let i = site.index();
            u.fixed_rows_mut::<3>(3 * i).copy_from(&self.forces[i]);
            u.fixed_rows_mut::<3>(idx::M_HAND + 3 * i).copy_from(&self.moments[i]);
        }
        u
    }

    pub fn from_slice(u: &[f64]) -> Self {
        debug_assert_eq!(u.len(), INPUT_DIM);
        let mut w = Self::default();
        for i in 0..3 {
            w.forces[i] = Vector3::new(u[3 * i], u[3 * i + 1], u[3 * i + 2]);
            let m = idx::M_HAND + 3 * i;
            w.moments[i] = Vector3::new(u[m], u[m + 1], u[m + 2]);
        }
        w
    }

    /// Zero every entry of a site that is not in contact.
    pub fn masked(mut self, contacts: &ContactSet) -> Self {
        for site in Site::ALL {
            if !contacts.is_active(site) {
                self.forces[site.index()] = Vector3::zeros();
                self.moments[site.index()] = Vector3::zeros();
            }
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Stance {
    Left,
    Right,
    Both,
    /// No foot on the ground.
    Airborne,
}

impl Stance {
    pub fn includes(self, site: Site) -> bool {
        matches!(
            (self, site),
            (Stance::Both, Site::Left | Site::Right)
                | (Stance::Left, Site::Left)
                | (Stance::Right, Site::Right)
        )
    }
}

/// Which sites touch the environment, and where.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSet {
    pub hand_in_contact: bool,
    pub stance: Stance,
    pub hand: Vector3<f64>,
    pub left: Vector3<f64>,
    pub right: Vector3<f64>,
    /// Horizontal unit normal of the braced surface, pointing from the wall
    /// towards the robot. Only meaningful while the hand is in contact.
    pub hand_normal: Vector3<f64>,
}

impl ContactSet {
    pub fn feet(stance: Stance, left: Vector3<f64>, right: Vector3<f64>) -> Self {
        Self {
            hand_in_contact: false,
            stance,
            hand: Vector3::zeros(),
            left,
            right,
            hand_normal: Vector3::y(),
        }
    }

    pub fn with_hand(mut self, point: Vector3<f64>, normal: Vector3<f64>) -> Self {
        self.hand_in_contact = true;
        self.hand = point;
        self.hand_normal = normal;
        self
    }

    pub fn is_active(&self, site: Site) -> bool {
        match site {
            Site::Hand => self.hand_in_contact,
            foot => self.stance.includes(foot),
        }
    }

    pub fn site_position(&self, site: Site) -> Vector3<f64> {
        match site {
            Site::Hand => self.hand,
            Site::Left => self.left,
            Site::Right => self.right,
        }
    }

    /// Vector from the CoM to each site, recomputed from `com`.
    pub fn lever_arms(&self, com: &Vector3<f64>) -> [Vector3<f64>; 3] {
        Site::ALL.map(|s| self.site_position(s) - com)
    }
}

/// `R_z(θ_z)`.
pub fn rotation_z(theta_z: f64) -> Matrix3<f64> {
    let (s, c) = (libm::sin(theta_z), libm::cos(theta_z));
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Maps world angular velocity to roll/pitch/yaw rates under small roll and
/// pitch angles.
pub fn rotation_z_inverse(theta_z: f64) -> Matrix3<f64> {
    let (s, c) = (libm::sin(theta_z), libm::cos(theta_z));
    Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `skew(v) * w == v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Input selection matrices: which force and moment axes each site can
/// actuate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub hand_force: Matrix3<f64>,
    pub hand_moment: Matrix3<f64>,
    pub foot_force: Matrix3<f64>,
    pub foot_moment: Matrix3<f64>,
}

pub fn selection_matrices(contacts: &ContactSet) -> Selection {
    let (hand_force, hand_moment) = if contacts.hand_in_contact {
        (
            Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)),
            Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 0.0)),
        )
    } else {
        (Matrix3::zeros(), Matrix3::zeros())
    };
    Selection {
        hand_force,
        hand_moment,
        foot_force: Matrix3::identity(),
        foot_moment: Matrix3::from_diagonal(&Vector3::new(0.0, 1.0, 1.0)),
    }
}

impl Selection {
    pub fn force(&self, site: Site) -> Matrix3<f64> {
        match site {
            Site::Hand => self.hand_force,
            _ => self.foot_force,
        }
    }

    pub fn moment(&self, site: Site) -> Matrix3<f64> {
        match site {
            Site::Hand => self.hand_moment,
            _ => self.foot_moment,
        }
    }
}

/// Continuous-time linear SRB dynamics `ẋ = A x + B u` at the given state.
///
/// The gyroscopic term is dropped and the inertia is taken as constant.
/// Columns of sites that are not in contact are zero.
pub fn build_continuous_dynamics(
    state: &SrbState,
    contacts: &ContactSet,
    params: &RobotParams,
) -> Result<(StateMatrix, InputMatrix)> {
    let inertia_inv = params
        .inertia_matrix()
        .try_inverse()
        .ok_or(Error::Singular("inertia"))?;
    let gravity = params.gravity_vector();
    let g_norm = gravity.norm();
    if !(g_norm > 0.0) {
        return Err(Error::InvalidParameter("gravity must be non-zero"));
    }

    let mut a = StateMatrix::zeros();
    a.fixed_view_mut::<3, 3>(idx::THETA, idx::OMEGA)
        .copy_from(&rotation_z_inverse(state.theta.z));
    a.fixed_view_mut::<3, 3>(idx::POS, idx::VEL).copy_from(&Matrix3::identity());
    a.fixed_view_mut::<3, 1>(idx::VEL, idx::GRAVITY).copy_from(&(gravity / g_norm));

    let mut b = InputMatrix::zeros();
    let sel = selection_matrices(contacts);
    let arms = contacts.lever_arms(&state.position);
    let inv_mass = 1.0 / params.mass;
    for site in Site::ALL {
        if !contacts.is_active(site) {
            continue;
        }
        let i = site.index();
        let t = sel.force(site);
        b.fixed_view_mut::<3, 3>(idx::OMEGA, 3 * i)
            .copy_from(&(inertia_inv * skew(&arms[i]) * t));
        b.fixed_view_mut::<3, 3>(idx::VEL, 3 * i).copy_from(&(t * inv_mass));
        b.fixed_view_mut::<3, 3>(idx::OMEGA, idx::M_HAND + 3 * i)
            .copy_from(&(inertia_inv * sel.moment(site)));
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn contacts_all() -> ContactSet {
        ContactSet::feet(Stance::Both, Vector3::new(0.05, 0.1, 0.0), Vector3::new(-0.05, -0.1, 0.0))
            .with_hand(Vector3::new(0.1, 0.8, 0.95), Vector3::new(0.0, -1.0, 0.0))
    }

    #[test]
    fn rotation_z_inverse_cases() {
        assert_eq!(rotation_z_inverse(0.0), Matrix3::identity());
        let r = rotation_z_inverse(PI / 2.0);
        let expected = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r - expected).abs().max() < 1e-15);
        let r = rotation_z_inverse(0.3);
        assert!((r * r.transpose() - Matrix3::identity()).abs().max() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_z_inverse_is_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let th = rng.random_range(-PI..PI);
            let p = rotation_z_inverse(th) * rotation_z(th);
            assert!((p - Matrix3::identity()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn selection_follows_hand_contact() {
        let feet = ContactSet::feet(Stance::Left, Vector3::zeros(), Vector3::zeros());
        let s = selection_matrices(&feet);
        assert_eq!(s.hand_force, Matrix3::zeros());
        assert_eq!(s.hand_moment, Matrix3::zeros());
        assert_eq!(s.foot_force, Matrix3::identity());
        assert_eq!(s.foot_moment, Matrix3::from_diagonal(&Vector3::new(0.0, 1.0, 1.0)));

        let s = selection_matrices(&contacts_all());
        assert_eq!(s.hand_force, Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)));
        assert_eq!(s.hand_moment, Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 0.0)));
        assert_eq!(s.foot_moment, Matrix3::from_diagonal(&Vector3::new(0.0, 1.0, 1.0)));
    }

    #[test]
    fn continuous_dynamics_blocks() {
        let params = RobotParams::default();
        let state = SrbState::standing(0.0, 0.0, &params);
        let (a, b) = build_continuous_dynamics(&state, &contacts_all(), &params).unwrap();
        assert_eq!(a.fixed_view::<3, 3>(idx::THETA, idx::OMEGA).into_owned(), Matrix3::identity());
        let foot = b.fixed_view::<3, 3>(idx::VEL, idx::F_LEFT).into_owned();
        assert!((foot - Matrix3::identity() / params.mass).abs().max() < 1e-15);
        let foot = b.fixed_view::<3, 3>(idx::VEL, idx::F_RIGHT).into_owned();
        assert!((foot - Matrix3::identity() / params.mass).abs().max() < 1e-15);
    }

    #[test]
    fn no_contacts_is_free_fall() {
        let params = RobotParams::default();
        let none = ContactSet::feet(Stance::Airborne, Vector3::zeros(), Vector3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rand3 = || {
            Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        };
        let state = SrbState::new(rand3(), rand3(), rand3(), rand3(), &params);
        let (a, b) = build_continuous_dynamics(&state, &none, &params).unwrap();
        assert_eq!(b, InputMatrix::zeros());

        let xdot = a * state.to_vector();
        let theta_dot = xdot.fixed_rows::<3>(idx::THETA).into_owned();
        assert!((theta_dot - rotation_z_inverse(state.theta.z) * state.omega).norm() < 1e-14);
        assert!((xdot.fixed_rows::<3>(idx::POS) - state.velocity).norm() < 1e-14);
        assert!(xdot.fixed_rows::<3>(idx::OMEGA).norm() == 0.0);
        let acc = xdot.fixed_rows::<3>(idx::VEL).into_owned();
        assert!((acc + params.gravity_vector()).norm() < 1e-12);
    }

    #[test]
    fn airborne_input_matrix_is_zero() {
        let params = RobotParams::default();
        let state = SrbState::standing(0.0, 0.0, &params);
        let contacts = ContactSet::feet(Stance::Left, Vector3::zeros(), Vector3::zeros());
        let (_, b) = build_continuous_dynamics(&state, &contacts, &params).unwrap();
        assert!(b.columns(idx::F_RIGHT, 3).iter().all(|v| *v == 0.0));
        assert!(b.columns(idx::M_RIGHT, 3).iter().all(|v| *v == 0.0));
        assert!(b.columns(idx::M_HAND, 3).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn moment_rows_match_cross_product() {
        let params = RobotParams::default();
        let inertia_inv = params.inertia_matrix().try_inverse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let com = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.7);
            let left = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0);
            let contacts = ContactSet::feet(Stance::Left, left, Vector3::zeros());
            let state = SrbState::new(Vector3::zeros(), com, Vector3::zeros(), Vector3::zeros(), &params);
            let (_, b) = build_continuous_dynamics(&state, &contacts, &params).unwrap();
            let f = Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), 200.0);
            let mut u = InputVector::zeros();
            u.fixed_rows_mut::<3>(idx::F_LEFT).copy_from(&f);
            let omega_dot = (b * u).fixed_rows::<3>(idx::OMEGA).into_owned();
            let arm = left - com;
            let direct = inertia_inv * arm.cross(&f);
            assert!((omega_dot - direct).norm() < 1e-12);
        }
    }

    #[test]
    fn singular_inertia_rejected() {
        let params = RobotParams { inertia: [[0.0; 3]; 3], ..RobotParams::default() };
        let state = SrbState::standing(0.0, 0.0, &params);
        let contacts = ContactSet::feet(Stance::Both, Vector3::zeros(), Vector3::zeros());
        assert!(build_continuous_dynamics(&state, &contacts, &params).is_err());
        assert!(params.validate().is_err());
    }

    #[test]
    fn param_validation() {
        assert!(RobotParams::default().validate().is_ok());
        let bad = RobotParams { f_hand_min: 10.0, f_hand_max: 5.0, ..RobotParams::default() };
        assert!(bad.validate().is_err());
        let bad = RobotParams { mass: 0.0, ..RobotParams::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn wrench_vector_order() {
        let mut w = InputWrench::default();
        w.forces[Site::Left.index()] = Vector3::new(1.0, 2.0, 3.0);
        w.moments[Site::Right.index()] = Vector3::new(4.0, 5.0, 6.0);
        let u = w.to_vector();
        assert_eq!(u[idx::F_LEFT + 2], 3.0);
        assert_eq!(u[idx::M_RIGHT + 1], 5.0);
        assert_eq!(InputWrench::from_slice(u.as_slice()), w);
    }
}
