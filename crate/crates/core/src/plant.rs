//! Rigid-body model of one three-joint haptic-class manipulator.
//!
//! Kinematics (base frame, z up, lengths in m):
//!
//! ```text
//! r = l1 cos(th2) + l2 sin(th3)            horizontal reach
//! x = r cos(th1)
//! y = r sin(th1)
//! z = l1 sin(th2) - l2 cos(th3) + base_height
//! ```
//!
//! Joint 1 is the base yaw, joints 2 and 3 move the arm in a vertical plane and
//! joint 3 is measured as an absolute angle (parallel linkage), which is why the
//! gravity load depends on `cos(th2)` and `sin(th3)` only.
//!
//! Per joint the plant integrates `J_i th_i'' = tau_cmd_i + tau_ext_i - w_i` where
//! the disturbance `w` is
//!
//! ```text
//! w1 = D th1'
//! w2 = gc1 cos(th2) + gc2 sin(th3)
//! w3 = gc3 sin(th3)
//! ```
//!
//! so a disturbance observer sees `w - tau_ext` and subtracting the modelled `w`
//! leaves the reaction torque `-tau_ext`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{JointVector, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    /// Joint inertias (Nm s^2/rad).
    pub inertia: JointVector,
    /// Viscous friction on joint 1 (Nm s/rad).
    pub friction: f64,
    pub gc1: f64,
    pub gc2: f64,
    pub gc3: f64,
    pub l1: f64,
    pub l2: f64,
    /// Height of the kinematic origin above the table (m).
    pub base_height: f64,
}

impl RobotParams {
    /// Identified master-side parameters.
    pub fn master() -> Self {
        RobotParams {
            inertia: JointVector::new(4.20e-3, 5.58e-3, 1.51e-3),
            friction: 12.1e-3,
            gc1: 135e-3,
            gc2: 98e-3,
            gc3: 123e-3,
            ..Self::geometry()
        }
    }

    /// Identified slave-side parameters.
    pub fn slave() -> Self {
        RobotParams {
            inertia: JointVector::new(4.45e-3, 5.26e-3, 1.63e-3),
            friction: 12.7e-3,
            gc1: 139e-3,
            gc2: 96e-3,
            gc3: 136e-3,
            ..Self::geometry()
        }
    }

    fn geometry() -> Self {
        RobotParams {
            inertia: JointVector::splat(1.0),
            friction: 0.0,
            gc1: 0.0,
            gc2: 0.0,
            gc3: 0.0,
            l1: 0.1335,
            l2: 0.1335,
            base_height: 0.165,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inertia.0.iter().any(|&j| !(j > 0.0)) {
            return Err(Error::Config("joint inertias must be > 0".into()));
        }
        if !(self.friction >= 0.0) {
            return Err(Error::Config("friction must be >= 0".into()));
        }
        if !(self.l1 > 0.0 && self.l2 > 0.0) {
            return Err(Error::Config("link lengths must be > 0".into()));
        }
        if ![self.gc1, self.gc2, self.gc3, self.base_height]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Config("non-finite robot parameter".into()));
        }
        Ok(())
    }

    /// Modelled friction and gravity load `w(th, th')`.
    pub fn disturbance(&self, theta: JointVector, dtheta: JointVector) -> JointVector {
        JointVector::new(
            self.friction * dtheta[0],
            self.gc1 * theta[1].cos() + self.gc2 * theta[2].sin(),
            self.gc3 * theta[2].sin(),
        )
    }
}

/// Pen-on-paper contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactParams {
    pub height_mm: f64,
    /// N/m
    pub stiffness: f64,
    /// N s/m
    pub damping: f64,
    pub extent_mm: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            height_mm: 40.0,
            stiffness: 2000.0,
            damping: 5.0,
            extent_mm: 90.0,
        }
    }
}

impl ContactParams {
    pub fn with_height(mut self, height_mm: f64) -> Self {
        self.height_mm = height_mm;
        self
    }

    pub fn height_m(&self) -> f64 {
        self.height_mm * 1e-3
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stiffness > 0.0) || !(self.damping >= 0.0) || !(self.height_mm >= 0.0) {
            return Err(Error::Config(
                "contact requires stiffness > 0, damping >= 0, height >= 0".into(),
            ));
        }
        if !(self.extent_mm > 0.0) {
            return Err(Error::Config("paper extent must be > 0".into()));
        }
        Ok(())
    }
}

/// Placement of the paper square on the table, in the base frame.
///
/// Paper coordinates `(u, v)` are in mm with the origin at the lower-left
/// corner as seen by the writer: `u` to the right (`-y`), `v` away from the
/// base (`+x`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PaperFrame {
    pub center_x: f64,
    pub center_y: f64,
    pub extent_mm: f64,
}

impl Default for PaperFrame {
    fn default() -> Self {
        PaperFrame {
            center_x: 0.13,
            center_y: 0.0,
            extent_mm: 90.0,
        }
    }
}

impl PaperFrame {
    /// Paper (u, v) in mm plus a height above the table in m to a base-frame point.
    pub fn to_base(&self, u_mm: f64, v_mm: f64, z_m: f64) -> Vec3 {
        let half = self.extent_mm / 2.0;
        Vec3::new(
            self.center_x + (v_mm - half) * 1e-3,
            self.center_y - (u_mm - half) * 1e-3,
            z_m,
        )
    }

    /// Base-frame point to paper (u, v) in mm.
    pub fn to_paper(&self, p: Vec3) -> (f64, f64) {
        let half = self.extent_mm / 2.0;
        (
            half - (p.y - self.center_y) * 1e3,
            half + (p.x - self.center_x) * 1e3,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    pub theta: JointVector,
    pub dtheta: JointVector,
    pub in_contact: bool,
}

impl PlantState {
    pub fn at_rest(theta: JointVector) -> Self {
        PlantState {
            theta,
            dtheta: JointVector::ZERO,
            in_contact: false,
        }
    }
}

/// Pen-tip position in the base frame (table at z = 0).
pub fn forward_kinematics(theta: JointVector, params: &RobotParams) -> Vec3 {
    let [t1, t2, t3] = theta.0;
    let reach = params.l1 * t2.cos() + params.l2 * t3.sin();
    Vec3::new(
        reach * t1.cos(),
        reach * t1.sin(),
        params.l1 * t2.sin() - params.l2 * t3.cos() + params.base_height,
    )
}

/// Analytic Jacobian of [`forward_kinematics`]; rows are x, y, z, columns joints.
pub fn jacobian(theta: JointVector, params: &RobotParams) -> [[f64; 3]; 3] {
    let [t1, t2, t3] = theta.0;
    let (s1, c1) = t1.sin_cos();
    let reach = params.l1 * t2.cos() + params.l2 * t3.sin();
    let dr2 = -params.l1 * t2.sin();
    let dr3 = params.l2 * t3.cos();
    [
        [-reach * s1, dr2 * c1, dr3 * c1],
        [reach * c1, dr2 * s1, dr3 * s1],
        [0.0, params.l1 * t2.cos(), params.l2 * t3.sin()],
    ]
}

/// `J^T f`: joint torques produced by a task-space force at the pen tip.
pub fn jacobian_transpose_force(theta: JointVector, params: &RobotParams, f: Vec3) -> JointVector {
    let j = jacobian(theta, params);
    let mut tau = JointVector::ZERO;
    for i in 0..3 {
        tau[i] = j[0][i] * f.x + j[1][i] * f.y + j[2][i] * f.z;
    }
    tau
}

/// Pen-tip velocity `J th'`.
pub fn tip_velocity(theta: JointVector, dtheta: JointVector, params: &RobotParams) -> Vec3 {
    let j = jacobian(theta, params);
    let row = |r: [f64; 3]| r[0] * dtheta[0] + r[1] * dtheta[1] + r[2] * dtheta[2];
    Vec3::new(row(j[0]), row(j[1]), row(j[2]))
}

/// Closed-form inverse kinematics (elbow branch with `th3` near the working pose).
pub fn inverse_kinematics(p: Vec3, params: &RobotParams) -> Result<JointVector> {
    let t1 = p.y.atan2(p.x);
    let reach = p.x.hypot(p.y);
    let height = p.z - params.base_height;
    // With b = th3 - pi/2 the arm is a planar two-link chain with absolute angles (th2, b).
    let d2 = reach * reach + height * height;
    let cos_q = (d2 - params.l1 * params.l1 - params.l2 * params.l2) / (2.0 * params.l1 * params.l2);
    if !(-1.0..=1.0).contains(&cos_q) {
        return Err(Error::InvalidArgument(format!(
            "point ({:.4}, {:.4}, {:.4}) outside workspace",
            p.x, p.y, p.z
        )));
    }
    let q = -cos_q.acos();
    let t2 = height.atan2(reach) - (params.l2 * q.sin()).atan2(params.l1 + params.l2 * q.cos());
    let b = t2 + q;
    Ok(JointVector::new(t1, t2, b + std::f64::consts::FRAC_PI_2))
}

/// Torque on the joints from the paper pushing back on the pen (unilateral spring-damper).
pub fn contact_wrench(state: &PlantState, contact: &ContactParams, params: &RobotParams) -> JointVector {
    contact_force(state, contact, params)
        .map(|f| jacobian_transpose_force(state.theta, params, Vec3::new(0.0, 0.0, f)))
        .unwrap_or(JointVector::ZERO)
}

/// Normal force on the pen, `None` when the tip is at or above the surface.
pub fn contact_force(state: &PlantState, contact: &ContactParams, params: &RobotParams) -> Option<f64> {
    let tip = forward_kinematics(state.theta, params);
    let surface = contact.height_m();
    if tip.z >= surface {
        return None;
    }
    let vz = tip_velocity(state.theta, state.dtheta, params).z;
    let f = contact.stiffness * (surface - tip.z) - contact.damping * vz;
    Some(f.max(0.0))
}

/// One semi-implicit Euler substep.
pub fn step_dynamics(
    state: &PlantState,
    tau_cmd: JointVector,
    tau_ext: JointVector,
    dt: f64,
    params: &RobotParams,
) -> Result<PlantState> {
    if !tau_cmd.is_finite() || !tau_ext.is_finite() {
        return Err(Error::NonFinite("plant torque input"));
    }
    if !state.theta.is_finite() || !state.dtheta.is_finite() {
        return Err(Error::NonFinite("plant state"));
    }
    if !(dt > 0.0 && dt <= 1e-3) {
        return Err(Error::InvalidArgument(format!("substep {dt} s outside (0, 1 ms]")));
    }
    let w = params.disturbance(state.theta, state.dtheta);
    let accel = JointVector(std::array::from_fn(|i| {
        (tau_cmd[i] + tau_ext[i] - w[i]) / params.inertia[i]
    }));
    let dtheta = state.dtheta + accel * dt;
    let theta = state.theta + dtheta * dt;
    Ok(PlantState {
        theta,
        dtheta,
        in_contact: state.in_contact,
    })
}
