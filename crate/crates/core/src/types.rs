use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A per-joint quantity for the three active joints (angle, velocity or torque).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointVector(pub [f64; 3]);

impl JointVector {
    pub const ZERO: JointVector = JointVector([0.0; 3]);

    pub fn new(a: f64, b: f64, c: f64) -> Self {
        JointVector([a, b, c])
    }

    pub fn splat(v: f64) -> Self {
        JointVector([v; 3])
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        JointVector(self.0.map(f))
    }

    pub fn zip(self, other: Self, f: impl Fn(f64, f64) -> f64) -> Self {
        JointVector([
            f(self.0[0], other.0[0]),
            f(self.0[1], other.0[1]),
            f(self.0[2], other.0[2]),
        ])
    }

    pub fn dot(self, other: Self) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Index<usize> for JointVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for JointVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for JointVector {
    type Output = JointVector;
    fn add(self, rhs: Self) -> Self {
        self.zip(rhs, |a, b| a + b)
    }
}

impl AddAssign for JointVector {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for JointVector {
    type Output = JointVector;
    fn sub(self, rhs: Self) -> Self {
        self.zip(rhs, |a, b| a - b)
    }
}

impl Neg for JointVector {
    type Output = JointVector;
    fn neg(self) -> Self {
        self.map(|a| -a)
    }
}

impl Mul<f64> for JointVector {
    type Output = JointVector;
    fn mul(self, k: f64) -> Self {
        self.map(|a| a * k)
    }
}

/// Elementwise product.
impl Mul<JointVector> for JointVector {
    type Output = JointVector;
    fn mul(self, rhs: JointVector) -> Self {
        self.zip(rhs, |a, b| a * b)
    }
}

/// Cartesian position or force in the robot base frame (m or N).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, r: Self) -> Self {
        Vec3::new(self.x + r.x, self.y + r.y, self.z + r.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, r: Self) -> Self {
        Vec3::new(self.x - r.x, self.y - r.y, self.z - r.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Self {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

/// The nine observable channels of one robot at one tick: angle, velocity, reaction torque.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotSample {
    pub theta: JointVector,
    pub dtheta: JointVector,
    pub tau: JointVector,
}

impl RobotSample {
    pub fn to_array(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        out[..3].copy_from_slice(&self.theta.0);
        out[3..6].copy_from_slice(&self.dtheta.0);
        out[6..].copy_from_slice(&self.tau.0);
        out
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert!(v.len() >= 9, "robot sample needs 9 values");
        RobotSample {
            theta: JointVector([v[0], v[1], v[2]]),
            dtheta: JointVector([v[3], v[4], v[5]]),
            tau: JointVector([v[6], v[7], v[8]]),
        }
    }
}

/// Channel names in file and wire order for one robot.
pub const ROBOT_CHANNELS: [&str; 9] = [
    "th1", "th2", "th3", "dth1", "dth2", "dth3", "tau1", "tau2", "tau3",
];
