//! Walls and torso geometry.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// +1 for left (positive body y), −1 for right.
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

/// A wall plane through `point` with unit `normal` pointing toward the robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wall {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl Wall {
    pub fn new(point: Vector3<f64>, normal: Vector3<f64>) -> Result<Self> {
        let len = normal.norm();
        if !(len > 1e-9) || !point.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("wall normal must be non-zero and finite"));
        }
        Ok(Self { point, normal: normal / len })
    }

    /// Wall parallel to the x axis at lateral offset `y`, with its top leaning
    /// toward the robot by `tilt` radians. The base line sits on the ground.
    pub fn lateral(y: f64, tilt: f64) -> Self {
        let inward = if y >= 0.0 { -1.0 } else { 1.0 };
        let normal = Vector3::new(0.0, inward * libm::cos(tilt), -libm::sin(tilt));
        Self { point: Vector3::new(0.0, y, 0.0), normal }
    }

    /// Unit normal projected onto the ground plane.
    pub fn horizontal_normal(&self) -> Vector3<f64> {
        let h = Vector3::new(self.normal.x, self.normal.y, 0.0);
        let n = h.norm();
        if n > 1e-12 {
            h / n
        } else {
            h
        }
    }

    /// Orthonormal frame `(t, n_h, z)` with `n_h` the horizontal normal.
    pub fn contact_frame(&self) -> Matrix3<f64> {
        let n = self.horizontal_normal();
        let z = Vector3::z();
        let t = n.cross(&z);
        Matrix3::from_columns(&[t, n, z])
    }

    /// The side of the robot that faces this wall.
    pub fn facing_side(&self) -> Side {
        if self.normal.y <= 0.0 {
            Side::Left
        } else {
            Side::Right
        }
    }
}

/// Signed point-plane distance, positive on the robot's side.
pub fn wall_distance(point: &Vector3<f64>, wall: &Wall) -> f64 {
    wall.normal.dot(&(point - wall.point))
}

pub type WallSet = Vec<Wall>;

/// Torso box and shoulder locations in the body frame, relative to the CoM.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BodyGeometry {
    /// Full box extents (x, y, z).
    pub torso_size: [f64; 3],
    /// Left shoulder; the right one is mirrored in y.
    pub shoulder: [f64; 3],
    /// Shoulder contact radius.
    pub shoulder_radius: f64,
    /// Hip joint lateral offset, used for the nominal stance width.
    pub hip_offset: f64,
}

impl Default for BodyGeometry {
    fn default() -> Self {
        Self {
            torso_size: [0.2, 0.3, 0.4],
            shoulder: [0.0, 0.18, 0.22],
            shoulder_radius: 0.05,
            hip_offset: 0.1,
        }
    }
}

impl BodyGeometry {
    pub fn shoulder_offset(&self, side: Side) -> Vector3<f64> {
        Vector3::new(self.shoulder[0], side.sign() * self.shoulder[1], self.shoulder[2])
    }

    pub fn shoulder_world(&self, side: Side, com: &Vector3<f64>, rotation: &Matrix3<f64>) -> Vector3<f64> {
        com + rotation * self.shoulder_offset(side)
    }

    pub fn torso_corners(&self, com: &Vector3<f64>, rotation: &Matrix3<f64>) -> [Vector3<f64>; 8] {
        let h = Vector3::new(self.torso_size[0], self.torso_size[1], self.torso_size[2]) * 0.5;
        let mut out = [Vector3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let s = Vector3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            *c = com + rotation * s.component_mul(&h);
        }
        out
    }
}
