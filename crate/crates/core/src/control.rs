//! 1 kHz joint-space control: pseudo derivative, disturbance observer, reaction
//! force observer, and the four-channel bilateral position/force law.
//!
//! All first-order filters are discretized with backward Euler.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::RobotParams;
use crate::types::{JointVector, RobotSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Gains {
    pub kp: f64,
    /// Velocity gain, used as `K_v` in the bilateral law.
    pub kd: f64,
    pub kf: f64,
    /// Pseudo-derivative cutoff (rad/s).
    pub g_pd: f64,
    pub g_dob: f64,
    pub g_rfob: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Gains {
            kp: 121.0,
            kd: 22.0,
            kf: 1.0,
            g_pd: 40.0,
            g_dob: 40.0,
            g_rfob: 40.0,
        }
    }
}

impl Gains {
    pub fn validate(&self) -> Result<()> {
        let all = [self.kp, self.kd, self.kf, self.g_pd, self.g_dob, self.g_rfob];
        if all.iter().all(|g| *g > 0.0 && g.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("all controller gains must be > 0".into()))
        }
    }
}

/// `g s / (s + g)` applied to a sampled angle.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PseudoDerivative {
    prev: Option<f64>,
    out: f64,
}

impl PseudoDerivative {
    pub fn update(&mut self, theta: f64, dt: f64, g: f64) -> f64 {
        let prev = self.prev.unwrap_or(theta);
        self.out = (self.out + g * (theta - prev)) / (1.0 + g * dt);
        self.prev = Some(theta);
        self.out
    }
}

/// First-order observer `g/(s+g) (tau + g J th') - g J th'`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DisturbanceFilter {
    lp: f64,
}

impl DisturbanceFilter {
    pub fn update(&mut self, tau_cmd: f64, dtheta: f64, inertia: f64, g: f64, dt: f64) -> f64 {
        let u = tau_cmd + g * inertia * dtheta;
        self.lp = (self.lp + g * dt * u) / (1.0 + g * dt);
        self.lp - g * inertia * dtheta
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ObserverState {
    pub pd: [PseudoDerivative; 3],
    pub dob: [DisturbanceFilter; 3],
    pub rfob: [DisturbanceFilter; 3],
}

/// One scalar pseudo-derivative update for joint `joint` of `obs`.
pub fn pseudo_derivative(theta: f64, obs: &mut ObserverState, joint: usize, dt: f64, g: f64) -> f64 {
    obs.pd[joint].update(theta, dt, g)
}

/// One scalar DOB update for joint `joint` of `obs`.
pub fn dob_estimate(
    tau_cmd: f64,
    dtheta: f64,
    obs: &mut ObserverState,
    joint: usize,
    inertia: f64,
    g_dob: f64,
    dt: f64,
) -> f64 {
    obs.dob[joint].update(tau_cmd, dtheta, inertia, g_dob, dt)
}

/// Reaction torque: estimated disturbance minus modelled friction and gravity.
pub fn rfob_reaction(
    dis: JointVector,
    theta: JointVector,
    dtheta: JointVector,
    params: &RobotParams,
) -> JointVector {
    JointVector::new(
        dis[0] - params.friction * dtheta[0],
        dis[1] - params.gc1 * theta[1].cos() - params.gc2 * theta[2].sin(),
        dis[2] - params.gc3 * theta[2].sin(),
    )
}

/// Four-channel bilateral references `(tau_ref_master, tau_ref_slave)`.
///
/// The position term of each side is scaled by that side's inertia; with
/// `j_master == j_slave` the two position terms are exact negatives.
pub fn bilateral_refs(
    master: &RobotSample,
    slave: &RobotSample,
    gains: &Gains,
    j_master: JointVector,
    j_slave: JointVector,
) -> (JointVector, JointVector) {
    let pos = (master.theta - slave.theta) * gains.kp + (master.dtheta - slave.dtheta) * gains.kd;
    let force = (master.tau + slave.tau) * (0.5 * gains.kf);
    let slave_ref = j_slave * pos * 0.5 - force;
    let master_ref = -(j_master * pos * 0.5) - force;
    (master_ref, slave_ref)
}

/// Per-robot sensing and disturbance compensation.
#[derive(Debug, Clone)]
pub struct JointController {
    pub params: RobotParams,
    pub gains: Gains,
    pub dt: f64,
    obs: ObserverState,
    last_cmd: JointVector,
    dis_hat: JointVector,
}

impl JointController {
    pub fn new(params: RobotParams, gains: Gains, dt: f64) -> Self {
        JointController {
            params,
            gains,
            dt,
            obs: ObserverState::default(),
            last_cmd: JointVector::ZERO,
            dis_hat: JointVector::ZERO,
        }
    }

    /// Update observers from a measured angle; returns `(th, th', tau_res)`.
    pub fn sense(&mut self, theta: JointVector) -> RobotSample {
        let g = self.gains;
        let mut dtheta = JointVector::ZERO;
        let mut dis = JointVector::ZERO;
        let mut dis_rf = JointVector::ZERO;
        for i in 0..3 {
            dtheta[i] = pseudo_derivative(theta[i], &mut self.obs, i, self.dt, g.g_pd);
            let j = self.params.inertia[i];
            dis[i] = dob_estimate(self.last_cmd[i], dtheta[i], &mut self.obs, i, j, g.g_dob, self.dt);
            dis_rf[i] = self.obs.rfob[i].update(self.last_cmd[i], dtheta[i], j, g.g_rfob, self.dt);
        }
        self.dis_hat = dis;
        RobotSample {
            theta,
            dtheta,
            tau: rfob_reaction(dis_rf, theta, dtheta, &self.params),
        }
    }

    /// Motor command for an acceleration-level reference, with DOB compensation.
    pub fn command(&mut self, tau_ref: JointVector) -> JointVector {
        let cmd = tau_ref + self.dis_hat;
        self.last_cmd = cmd;
        cmd
    }

    pub fn disturbance_estimate(&self) -> JointVector {
        self.dis_hat
    }

    pub fn observers(&self) -> &ObserverState {
        &self.obs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{step_dynamics, PlantState};

    const DT: f64 = 1e-3;

    #[test]
    fn pseudo_derivative_of_constant_vanishes() {
        let mut pd = PseudoDerivative::default();
        let mut out = 1.0;
        for _ in 0..500 {
            out = pd.update(0.7, DT, 40.0);
        }
        assert!(out.abs() < 1e-9);
    }

    #[test]
    fn pseudo_derivative_tracks_ramp() {
        let mut pd = PseudoDerivative::default();
        let v = 0.8;
        let mut out = 0.0;
        let n = (5.0 / 40.0 / DT) as usize + 1;
        for k in 0..=n {
            out = pd.update(v * k as f64 * DT, DT, 40.0);
        }
        assert!((out - v).abs() / v < 0.01, "{out}");
    }

    #[test]
    fn pseudo_derivative_gain_at_cutoff() {
        let g = 40.0;
        let mut pd = PseudoDerivative::default();
        let mut peak: f64 = 0.0;
        for k in 0..10_000 {
            let t = k as f64 * DT;
            let y = pd.update((g * t).sin(), DT, g);
            if t > 5.0 {
                peak = peak.max(y.abs());
            }
        }
        let expect = g / 2f64.sqrt();
        assert!((peak - expect).abs() / expect < 0.02, "{peak} vs {expect}");
    }

    #[test]
    fn dob_is_zero_without_excitation() {
        let mut f = DisturbanceFilter::default();
        for _ in 0..100 {
            assert_eq!(f.update(0.0, 0.0, 5e-3, 40.0, DT), 0.0);
        }
    }

    #[test]
    fn dob_recovers_static_external_torque() {
        // Plant held still by an external torque balancing the command.
        let mut f = DisturbanceFilter::default();
        let tau_cmd = 0.2;
        let tau_ext = -tau_cmd;
        let mut est = 0.0;
        for _ in 0..((5.0 / 40.0) / DT) as usize {
            est = f.update(tau_cmd, 0.0, 5e-3, 40.0, DT);
        }
        assert!((est + tau_ext).abs() < 0.01 * tau_ext.abs(), "{est}");
    }

    #[test]
    fn dob_estimates_friction_in_free_motion() {
        // Joint 1 driven by a constant command with friction as the only load;
        // once the velocity has settled the observer reports the friction torque.
        let mut p = RobotParams::master();
        p.gc1 = 0.0;
        p.gc2 = 0.0;
        p.gc3 = 0.0;
        let tau_cmd = JointVector::new(0.02, 0.0, 0.0);
        let mut state = PlantState::at_rest(JointVector::ZERO);
        let mut obs = ObserverState::default();
        let mut est = 0.0;
        for _ in 0..3000 {
            let dth = pseudo_derivative(state.theta[0], &mut obs, 0, DT, 40.0);
            est = dob_estimate(tau_cmd[0], dth, &mut obs, 0, p.inertia[0], 40.0, DT);
            for _ in 0..10 {
                state = step_dynamics(&state, tau_cmd, JointVector::ZERO, 1e-4, &p).unwrap();
            }
        }
        let expect = p.friction * state.dtheta[0];
        assert!((est - expect).abs() / expect < 0.05, "{est} vs {expect}");
    }

    #[test]
    fn rfob_zero_at_balanced_pose() {
        let p = RobotParams::master();
        let theta = JointVector::new(0.0, std::f64::consts::FRAC_PI_2, 0.0);
        let r = rfob_reaction(JointVector::ZERO, theta, JointVector::ZERO, &p);
        for i in 0..3 {
            assert!(r[i].abs() < 1e-15);
        }
    }

    #[test]
    fn rfob_subtracts_master_friction() {
        let p = RobotParams::master();
        let r = rfob_reaction(
            JointVector::ZERO,
            JointVector::new(0.0, std::f64::consts::FRAC_PI_2, 0.0),
            JointVector::new(1.0, 0.0, 0.0),
            &p,
        );
        assert!((r[0] + 0.0121).abs() < 1e-15);
    }

    #[test]
    fn rfob_subtracts_master_gravity() {
        let p = RobotParams::master();
        let dis = JointVector::new(0.0, 0.3, 0.2);
        let r = rfob_reaction(
            dis,
            JointVector::new(0.0, 0.0, std::f64::consts::FRAC_PI_2),
            JointVector::ZERO,
            &p,
        );
        assert!((r[1] - (0.3 - 0.135 - 0.098)).abs() < 1e-15);
        assert!((r[2] - (0.2 - 0.123)).abs() < 1e-15);
    }

    fn sample(theta: f64, dtheta: f64, tau: f64) -> RobotSample {
        RobotSample {
            theta: JointVector::splat(theta),
            dtheta: JointVector::splat(dtheta),
            tau: JointVector::splat(tau),
        }
    }

    #[test]
    fn synchronized_pair_needs_no_effort() {
        let g = Gains::default();
        let j = RobotParams::slave().inertia;
        let (m, s) = bilateral_refs(&sample(0.3, 0.1, 0.2), &sample(0.3, 0.1, -0.2), &g, j, j);
        assert_eq!(m, JointVector::ZERO);
        assert_eq!(s, JointVector::ZERO);
    }

    #[test]
    fn position_error_hand_value() {
        let g = Gains::default();
        let j = RobotParams::slave().inertia;
        let (m, s) = bilateral_refs(&sample(0.1, 0.0, 0.0), &sample(0.0, 0.0, 0.0), &g, j, j);
        assert!((s[0] - 0.026_922_5).abs() < 1e-12, "{}", s[0]);
        assert!((m[0] + 0.026_922_5).abs() < 1e-12);
    }

    #[test]
    fn force_channel_hand_value() {
        let g = Gains::default();
        let j = RobotParams::slave().inertia;
        let (m, s) = bilateral_refs(&sample(0.0, 0.0, 0.5), &sample(0.0, 0.0, 0.5), &g, j, j);
        for i in 0..3 {
            assert!((m[i] + 0.5).abs() < 1e-15);
            assert!((s[i] + 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn gains_default_to_table_values() {
        let g = Gains::default();
        assert_eq!((g.kp, g.kd, g.kf), (121.0, 22.0, 1.0));
        assert_eq!((g.g_pd, g.g_dob, g.g_rfob), (40.0, 40.0, 40.0));
        assert!(g.validate().is_ok());
        assert!(Gains { kf: 0.0, ..g }.validate().is_err());
    }

    #[test]
    fn filters_stay_bounded_at_coarse_period() {
        // g dt = 0.1
        let mut pd = PseudoDerivative::default();
        let mut f = DisturbanceFilter::default();
        for k in 0..2000 {
            let t = k as f64 * 2.5e-3;
            let d = pd.update((30.0 * t).sin(), 2.5e-3, 40.0);
            let e = f.update((50.0 * t).cos(), d, 5e-3, 40.0, 2.5e-3);
            assert!(d.abs() < 100.0 && e.abs() < 10.0);
        }
    }
}
