//! The scripted letter "A" and the impedance operator that follows it.

use rand::Rng;

use crate::config::{OperatorParams, ScriptTiming};
use crate::error::{Error, Result};
use crate::plant::{
    forward_kinematics, inverse_kinematics, jacobian_transpose_force, tip_velocity, PaperFrame,
    PlantState, RobotParams,
};
use crate::types::{JointVector, Vec3};

/// Paper-plane point in mm.
pub type PaperPoint = (f64, f64);

/// Nominal stroke endpoints of the letter on the 90 mm square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LetterGeometry {
    pub top: PaperPoint,
    pub bottom_left: PaperPoint,
    pub bottom_right: PaperPoint,
    pub bar_left: PaperPoint,
    pub bar_right: PaperPoint,
}

impl Default for LetterGeometry {
    fn default() -> Self {
        LetterGeometry {
            top: (45.0, 80.0),
            bottom_left: (15.0, 10.0),
            bottom_right: (75.0, 10.0),
            bar_left: (27.0, 38.0),
            bar_right: (63.0, 38.0),
        }
    }
}

impl LetterGeometry {
    /// The three strokes in writing order.
    pub fn strokes(&self) -> [(PaperPoint, PaperPoint); 3] {
        [
            (self.top, self.bottom_left),
            (self.top, self.bottom_right),
            (self.bar_left, self.bar_right),
        ]
    }

    fn jitter<R: Rng>(&self, amp: f64, rng: &mut R) -> Self {
        let mut j = |p: PaperPoint| {
            if amp > 0.0 {
                (p.0 + rng.random_range(-amp..=amp), p.1 + rng.random_range(-amp..=amp))
            } else {
                p
            }
        };
        LetterGeometry {
            top: j(self.top),
            bottom_left: j(self.bottom_left),
            bottom_right: j(self.bottom_right),
            bar_left: j(self.bar_left),
            bar_right: j(self.bar_right),
        }
    }
}

/// A script waypoint: paper position and height above the table (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub u: f64,
    pub v: f64,
    pub z_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    t0: f64,
    t1: f64,
    from: Waypoint,
    to: Waypoint,
    pen_down: bool,
}

/// Time-parameterized pen path for one letter at a fixed paper height.
#[derive(Debug, Clone, PartialEq)]
pub struct LetterScript {
    pub height_mm: f64,
    pub geometry: LetterGeometry,
    segments: Vec<Segment>,
}

fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

impl LetterScript {
    pub fn new(height_mm: f64, geometry: LetterGeometry, op: &OperatorParams, timing: &ScriptTiming) -> Self {
        let up = |p: PaperPoint| Waypoint { u: p.0, v: p.1, z_mm: height_mm + op.hover_mm };
        let down = |p: PaperPoint| Waypoint { u: p.0, v: p.1, z_mm: height_mm - op.press_mm };
        let g = &geometry;
        let mut segs = Vec::new();
        let mut t = 0.0;
        let mut push = |dur: f64, from: Waypoint, to: Waypoint, pen_down: bool| {
            segs.push(Segment { t0: t, t1: t + dur, from, to, pen_down });
            t += dur;
        };
        push(timing.dwell_s, up(g.top), up(g.top), false);
        push(timing.descend_s, up(g.top), down(g.top), false);
        push(timing.stroke1_s, down(g.top), down(g.bottom_left), true);
        let tr = timing.transit1_s;
        push(0.2 * tr, down(g.bottom_left), up(g.bottom_left), false);
        push(0.6 * tr, up(g.bottom_left), up(g.top), false);
        push(0.2 * tr, up(g.top), down(g.top), false);
        push(timing.stroke2_s, down(g.top), down(g.bottom_right), true);
        let tr = timing.transit2_s;
        push(0.2 * tr, down(g.bottom_right), up(g.bottom_right), false);
        push(0.6 * tr, up(g.bottom_right), up(g.bar_left), false);
        push(0.2 * tr, up(g.bar_left), down(g.bar_left), false);
        push(timing.stroke3_s, down(g.bar_left), down(g.bar_right), true);
        let tr = timing.return_s;
        push(0.25 * tr, down(g.bar_right), up(g.bar_right), false);
        push(0.75 * tr, up(g.bar_right), up(g.top), false);
        LetterScript { height_mm, geometry, segments: segs }
    }

    /// Script with the default geometry, no jitter.
    pub fn nominal(height_mm: f64, op: &OperatorParams, timing: &ScriptTiming) -> Self {
        Self::new(height_mm, LetterGeometry::default(), op, timing)
    }

    /// Script with every stroke endpoint jittered by up to `op.jitter_mm`.
    pub fn jittered<R: Rng>(height_mm: f64, op: &OperatorParams, timing: &ScriptTiming, rng: &mut R) -> Self {
        Self::new(height_mm, LetterGeometry::default().jitter(op.jitter_mm, rng), op, timing)
    }

    pub fn duration(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t1)
    }

    fn segment(&self, t: f64) -> &Segment {
        self.segments
            .iter()
            .find(|s| t < s.t1)
            .unwrap_or_else(|| self.segments.last().expect("script has segments"))
    }

    /// Desired pen position at time `t` (clamped to the script span).
    pub fn waypoint(&self, t: f64) -> Waypoint {
        let s = self.segment(t);
        let a = if s.t1 > s.t0 { min_jerk((t - s.t0) / (s.t1 - s.t0)) } else { 1.0 };
        Waypoint {
            u: s.from.u + (s.to.u - s.from.u) * a,
            v: s.from.v + (s.to.v - s.from.v) * a,
            z_mm: s.from.z_mm + (s.to.z_mm - s.from.z_mm) * a,
        }
    }

    pub fn pen_down(&self, t: f64) -> bool {
        self.segment(t).pen_down
    }

    /// Every waypoint's z, in segment order.
    pub fn waypoint_heights(&self) -> Vec<f64> {
        self.segments.iter().flat_map(|s| [s.from.z_mm, s.to.z_mm]).collect()
    }

    /// `(t0, t1)` of each writing stroke.
    pub fn stroke_spans(&self) -> Vec<(f64, f64)> {
        self.segments.iter().filter(|s| s.pen_down).map(|s| (s.t0, s.t1)).collect()
    }

    pub fn target(&self, t: f64, frame: &PaperFrame) -> Vec3 {
        let w = self.waypoint(t);
        frame.to_base(w.u, w.v, w.z_mm * 1e-3)
    }

    /// Joint pose at the start of the script.
    pub fn start_pose(&self, frame: &PaperFrame, params: &RobotParams) -> Result<JointVector> {
        inverse_kinematics(self.target(0.0, frame), params).map_err(|e| match e {
            Error::InvalidArgument(msg) => {
                Error::InvalidArgument(format!("height {} mm unreachable: {msg}", self.height_mm))
            }
            other => other,
        })
    }

    /// Checks that every sampled target is reachable and on the paper.
    pub fn validate(&self, frame: &PaperFrame, params: &RobotParams) -> Result<()> {
        let n = (self.duration() * 100.0).round() as usize;
        for k in 0..=n {
            let t = k as f64 * 0.01;
            let w = self.waypoint(t);
            if !(0.0..=frame.extent_mm).contains(&w.u) || !(0.0..=frame.extent_mm).contains(&w.v) {
                return Err(Error::InvalidArgument(format!("script leaves the paper at t = {t} s")));
            }
            inverse_kinematics(self.target(t, frame), params).map_err(|_| {
                Error::InvalidArgument(format!(
                    "height {} mm unreachable at t = {t} s",
                    self.height_mm
                ))
            })?;
        }
        Ok(())
    }
}

/// Task-space impedance pull of the pen toward `target`, mapped to joint torques.
pub fn operator_torque(
    target: Vec3,
    state: &PlantState,
    params: &RobotParams,
    op: &OperatorParams,
) -> JointVector {
    let x = forward_kinematics(state.theta, params);
    let v = tip_velocity(state.theta, state.dtheta, params);
    let f = (target - x) * op.stiffness - v * op.damping;
    jacobian_transpose_force(state.theta, params, f).map(|t| t.clamp(-op.torque_clamp, op.torque_clamp))
}

/// The scripted operator at time `t`.
pub fn virtual_operator(
    script: &LetterScript,
    frame: &PaperFrame,
    state: &PlantState,
    t: f64,
    params: &RobotParams,
    op: &OperatorParams,
) -> JointVector {
    operator_torque(script.target(t, frame), state, params, op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::plant::jacobian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn script(h: f64) -> LetterScript {
        let c = Config::default();
        LetterScript::nominal(h, &c.operator, &c.timing)
    }

    #[test]
    fn stroke_one_runs_top_middle_to_bottom_left() {
        let g = LetterGeometry::default();
        let [s1, s2, s3] = g.strokes();
        assert_eq!(s1, ((45.0, 80.0), (15.0, 10.0)));
        assert_eq!(s2.0, s1.0);
        assert!(s2.1 .0 > 45.0 && s2.1 .1 < 45.0);
        assert!(s3.0 .0 < s3.1 .0 && (s3.0 .1 - s3.1 .1).abs() < 1e-12);
        let sc = script(40.0);
        let (t0, t1) = sc.stroke_spans()[0];
        let a = sc.waypoint(t0);
        let b = sc.waypoint(t1 - 1e-9);
        assert!((a.u - 45.0).abs() < 1e-9 && (a.v - 80.0).abs() < 1e-9);
        assert!((b.u - 15.0).abs() < 1e-6 && (b.v - 10.0).abs() < 1e-6);
    }

    #[test]
    fn duration_is_fifteen_seconds() {
        assert!((script(10.0).duration() - 15.0).abs() < 1e-12);
        let spans = script(10.0).stroke_spans();
        let writing: f64 = spans.iter().map(|(a, b)| b - a).sum();
        assert!((writing - 11.0).abs() < 1e-12);
    }

    #[test]
    fn heights_differ_only_in_z() {
        let a = script(10.0);
        let b = script(70.0);
        for k in 0..=1500 {
            let t = k as f64 * 0.01;
            let (wa, wb) = (a.waypoint(t), b.waypoint(t));
            assert_eq!((wa.u, wa.v), (wb.u, wb.v));
            assert!((wb.z_mm - wa.z_mm - 60.0).abs() < 1e-9);
        }
        for (za, zb) in a.waypoint_heights().iter().zip(b.waypoint_heights()) {
            assert!((zb - za - 60.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pen_down_targets_lie_below_the_surface() {
        let sc = script(40.0);
        for k in 0..1500 {
            let t = k as f64 * 0.01;
            if sc.pen_down(t) {
                assert!(sc.waypoint(t).z_mm < 40.0);
            }
        }
    }

    #[test]
    fn scripts_are_reachable_across_test_heights() {
        let c = Config::default();
        for h in [10.0, 25.0, 40.0, 55.0, 70.0, 85.0, 100.0] {
            script(h).validate(&c.paper, &c.slave).unwrap();
        }
        assert!(script(400.0).validate(&c.paper, &c.slave).is_err());
    }

    #[test]
    fn jitter_is_bounded_and_seeded() {
        let c = Config::default();
        let mk = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            LetterScript::jittered(40.0, &c.operator, &c.timing, &mut rng)
        };
        let a = mk(5);
        assert_eq!(a, mk(5));
        assert_ne!(a, mk(6));
        let d = (a.geometry.top.0 - 45.0).abs().max((a.geometry.top.1 - 80.0).abs());
        assert!(d <= c.operator.jitter_mm);
    }

    #[test]
    fn operator_on_path_at_rest_applies_no_torque() {
        let c = Config::default();
        let sc = script(40.0);
        let th = sc.start_pose(&c.paper, &c.master).unwrap();
        let tau = virtual_operator(&sc, &c.paper, &PlantState::at_rest(th), 0.0, &c.master, &c.operator);
        assert!(tau.norm() < 1e-9, "{tau:?}");
    }

    #[test]
    fn one_centimetre_offset_pulls_with_one_and_a_half_newtons() {
        let c = Config::default();
        let sc = script(40.0);
        let th = sc.start_pose(&c.paper, &c.master).unwrap();
        let target = sc.target(0.0, &c.paper) + Vec3::new(0.01, 0.0, 0.0);
        let tau = operator_torque(target, &PlantState::at_rest(th), &c.master, &c.operator);
        // Central-difference Jacobian, column-wise.
        let h = 1e-6;
        for i in 0..3 {
            let mut p = th;
            let mut m = th;
            p[i] += h;
            m[i] -= h;
            let dx = (forward_kinematics(p, &c.master).x - forward_kinematics(m, &c.master).x) / (2.0 * h);
            assert!((tau[i] - 1.5 * dx).abs() < 1e-7, "joint {i}: {} vs {}", tau[i], 1.5 * dx);
        }
        let j = jacobian(th, &c.master);
        assert!((tau[0] - 1.5 * j[0][0]).abs() < 1e-12);
    }

    #[test]
    fn operator_torque_respects_clamp() {
        let c = Config::default();
        let st = PlantState {
            theta: JointVector::new(0.3, 0.2, 0.9),
            dtheta: JointVector::new(5.0, -4.0, 3.0),
            in_contact: false,
        };
        let tau = operator_torque(Vec3::new(1.0, -1.0, -1.0), &st, &c.master, &c.operator);
        assert!(tau.0.iter().all(|t| t.abs() <= c.operator.torque_clamp));
    }
}
