//! Small, exact 3D math: points, unit quaternions and rigid poses.
//!
//! Rotations are active, frames right-handed, quaternions stored in
//! `(w, x, y, z)` order. Everything is `f64`.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A position or free vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(self, other: Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Point3) -> Point3 {
        Point3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(self, other: Point3) -> f64 {
        (self - other).norm()
    }

    pub fn distance_squared(self, other: Point3) -> f64 {
        (self - other).norm_squared()
    }

    /// Unit vector in the same direction, or `None` for a (near) zero vector.
    pub fn normalized(self) -> Option<Point3> {
        let n = self.norm();
        if n > f64::EPSILON && n.is_finite() {
            Some(self * (1.0 / n))
        } else {
            None
        }
    }

    /// Arithmetic mean of a non-empty slice of points.
    pub fn centroid(points: &[Point3]) -> Option<Point3> {
        if points.is_empty() {
            return None;
        }
        let sum = points.iter().fold(Point3::ORIGIN, |acc, &p| acc + p);
        Some(sum * (1.0 / points.len() as f64))
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

/// Rotation stored as a unit quaternion. Every constructor normalizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        UnitQuaternion::IDENTITY
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes `(w, x, y, z)`. Returns `None` for zero or non-finite input.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n <= f64::EPSILON {
            return None;
        }
        Some(UnitQuaternion {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Point3, angle: f64) -> Option<Self> {
        let axis = axis.normalized()?;
        let (s, c) = (0.5 * angle).sin_cos();
        UnitQuaternion::new(c, axis.x * s, axis.y * s, axis.z * s)
    }

    pub fn from_rotation_z(angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        UnitQuaternion::new(c, 0.0, 0.0, s).unwrap_or(Self::IDENTITY)
    }

    /// Rotation whose matrix has the given orthonormal columns.
    ///
    /// The columns are the images of the local x, y and z axes. Uses the
    /// largest-diagonal branch so the result is well conditioned.
    pub fn from_basis(x_axis: Point3, y_axis: Point3, z_axis: Point3) -> Option<Self> {
        let (m00, m10, m20) = (x_axis.x, x_axis.y, x_axis.z);
        let (m01, m11, m21) = (y_axis.x, y_axis.y, y_axis.z);
        let (m02, m12, m22) = (z_axis.x, z_axis.y, z_axis.z);
        let trace = m00 + m11 + m22;
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            UnitQuaternion::new(0.25 * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s)
        } else if m00 > m11 && m00 > m22 {
            let s = (1.0 + m00 - m11 - m22).sqrt() * 2.0;
            UnitQuaternion::new((m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s)
        } else if m11 > m22 {
            let s = (1.0 + m11 - m00 - m22).sqrt() * 2.0;
            UnitQuaternion::new((m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s)
        } else {
            let s = (1.0 + m22 - m00 - m11).sqrt() * 2.0;
            UnitQuaternion::new((m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s)
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    /// `[w, x, y, z]`, the wire ordering.
    pub fn to_wxyz(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn conjugate(self) -> Self {
        UnitQuaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn inverse(self) -> Self {
        self.conjugate()
    }

    /// Hamilton product `self * other`, renormalized.
    pub fn mul(self, o: UnitQuaternion) -> Self {
        let w = self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z;
        let x = self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y;
        let y = self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x;
        let z = self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w;
        UnitQuaternion::new(w, x, y, z).unwrap_or(Self::IDENTITY)
    }

    pub fn rotate(self, p: Point3) -> Point3 {
        // v' = v + 2w(u × v) + 2u × (u × v)
        let u = Point3::new(self.x, self.y, self.z);
        let t = u.cross(p) * 2.0;
        p + t * self.w + u.cross(t)
    }

    /// Images of the local x, y, z axes.
    pub fn axes(self) -> [Point3; 3] {
        [
            self.rotate(Point3::new(1.0, 0.0, 0.0)),
            self.rotate(Point3::new(0.0, 1.0, 0.0)),
            self.rotate(Point3::new(0.0, 0.0, 1.0)),
        ]
    }

    /// Rotation angle in `[0, π]` between two orientations.
    pub fn angle_to(self, other: UnitQuaternion) -> f64 {
        let d = (self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z).abs();
        2.0 * d.min(1.0).acos()
    }
}

/// Rigid transform: rotate, then translate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Point3,
    pub orientation: UnitQuaternion,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        position: Point3::ORIGIN,
        orientation: UnitQuaternion::IDENTITY,
    };

    pub fn new(position: Point3, orientation: UnitQuaternion) -> Self {
        Pose {
            position,
            orientation,
        }
    }

    pub fn from_translation(t: Point3) -> Self {
        Pose::new(t, UnitQuaternion::IDENTITY)
    }

    pub fn from_rotation(q: UnitQuaternion) -> Self {
        Pose::new(Point3::ORIGIN, q)
    }

    pub fn transform_point(&self, p: Point3) -> Point3 {
        self.orientation.rotate(p) + self.position
    }

    pub fn inverse_transform_point(&self, p: Point3) -> Point3 {
        self.orientation.inverse().rotate(p - self.position)
    }

    /// `self ∘ other`: applying the result equals applying `other` then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.transform_point(other.position),
            orientation: self.orientation.mul(other.orientation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let q = self.orientation.inverse();
        Pose {
            position: -q.rotate(self.position),
            orientation: q,
        }
    }
}

/// Free-function form of [`Pose::transform_point`].
pub fn transform_point(pose: &Pose, p: Point3) -> Point3 {
    pose.transform_point(p)
}

/// Free-function form of [`Pose::inverse_transform_point`].
pub fn inverse_transform_point(pose: &Pose, p: Point3) -> Point3 {
    pose.inverse_transform_point(p)
}

/// Free-function form of [`Pose::compose`].
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}
