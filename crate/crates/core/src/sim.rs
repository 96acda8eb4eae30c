//! Closed-loop simulation of the master/slave pair at the control rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::Config;
use crate::control::{bilateral_refs, Gains, JointController};
use crate::error::{Error, Result};
use crate::plant::{
    contact_force, contact_wrench, forward_kinematics, step_dynamics, ContactParams, PlantState,
    RobotParams,
};
use crate::types::{JointVector, RobotSample, Vec3};

/// Angles beyond this are treated as a blown-up simulation.
const DIVERGENCE_RAD: f64 = 20.0;

/// One manipulator with its plant state and its 1 kHz controller.
#[derive(Debug, Clone)]
pub struct Robot {
    pub params: RobotParams,
    pub state: PlantState,
    pub ctrl: JointController,
}

impl Robot {
    pub fn new(params: RobotParams, gains: Gains, dt: f64, theta0: JointVector) -> Self {
        Robot {
            params,
            state: PlantState::at_rest(theta0),
            ctrl: JointController::new(params, gains, dt),
        }
    }

    pub fn tip(&self) -> Vec3 {
        forward_kinematics(self.state.theta, &self.params)
    }

    /// Integrate one control period with a constant motor command.
    pub fn advance<F>(&mut self, cmd: JointVector, substeps: usize, dt: f64, mut ext: F) -> Result<()>
    where
        F: FnMut(&PlantState, &RobotParams) -> JointVector,
    {
        for _ in 0..substeps {
            let tau_ext = ext(&self.state, &self.params);
            self.state = step_dynamics(&self.state, cmd, tau_ext, dt, &self.params)?;
        }
        Ok(())
    }
}

/// Seeded Gaussian encoder noise.
#[derive(Debug, Clone)]
pub struct Encoder {
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl Encoder {
    pub fn new(std: f64, seed: u64) -> Result<Self> {
        let noise = if std > 0.0 {
            Some(Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?)
        } else {
            None
        };
        Ok(Encoder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
        })
    }

    pub fn read(&mut self, theta: JointVector) -> JointVector {
        match &self.noise {
            Some(n) => JointVector(theta.0.map(|t| t + n.sample(&mut self.rng))),
            None => theta,
        }
    }
}

/// Per-tick record of the teleoperated pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeleopTick {
    pub t_ms: u64,
    pub master: RobotSample,
    pub slave: RobotSample,
    pub slave_tip: Vec3,
    pub contact: bool,
    /// Paper normal force at the start of the tick (N).
    pub contact_force: f64,
}

/// Master driven by an external (operator) torque, slave writing on the paper.
#[derive(Debug, Clone)]
pub struct BilateralSim {
    pub master: Robot,
    pub slave: Robot,
    pub contact: ContactParams,
    gains: Gains,
    substeps: usize,
    substep_dt: f64,
    enc_m: Encoder,
    enc_s: Encoder,
    t_ms: u64,
}

impl BilateralSim {
    /// Both robots start at rest at `theta0`.
    pub fn new(cfg: &Config, height_mm: f64, theta0: JointVector, seed: u64) -> Result<Self> {
        let dt = cfg.sim.control_dt();
        let contact = cfg.contact.with_height(height_mm);
        contact.validate()?;
        Ok(BilateralSim {
            master: Robot::new(cfg.master, cfg.gains, dt, theta0),
            slave: Robot::new(cfg.slave, cfg.gains, dt, theta0),
            contact,
            gains: cfg.gains,
            substeps: cfg.sim.substeps,
            substep_dt: cfg.sim.substep_dt(),
            enc_m: Encoder::new(cfg.sim.noise_std, seed.wrapping_mul(2).wrapping_add(1))?,
            enc_s: Encoder::new(cfg.sim.noise_std, seed.wrapping_mul(2).wrapping_add(2))?,
            t_ms: 0,
        })
    }

    pub fn t_ms(&self) -> u64 {
        self.t_ms
    }

    /// Change the paper height without resetting the robots.
    pub fn set_height(&mut self, height_mm: f64) -> Result<()> {
        let c = self.contact.with_height(height_mm);
        c.validate()?;
        self.contact = c;
        Ok(())
    }

    /// Sense, run the bilateral law, apply `operator` torque to the master for one tick.
    pub fn step(&mut self, operator: JointVector) -> Result<TeleopTick> {
        let m = self.master.ctrl.sense(self.enc_m.read(self.master.state.theta));
        let s = self.slave.ctrl.sense(self.enc_s.read(self.slave.state.theta));
        let force = contact_force(&self.slave.state, &self.contact, &self.slave.params);
        let tick = TeleopTick {
            t_ms: self.t_ms,
            master: m,
            slave: s,
            slave_tip: self.slave.tip(),
            contact: force.is_some(),
            contact_force: force.unwrap_or(0.0),
        };

        let (ref_m, ref_s) = bilateral_refs(&m, &s, &self.gains, self.master.params.inertia, self.slave.params.inertia);
        let cmd_m = self.master.ctrl.command(ref_m);
        let cmd_s = self.slave.ctrl.command(ref_s);
        let contact = self.contact;
        self.master.advance(cmd_m, self.substeps, self.substep_dt, |_, _| operator)?;
        self.slave
            .advance(cmd_s, self.substeps, self.substep_dt, |st, p| contact_wrench(st, &contact, p))?;
        self.t_ms += 1;
        check_state(&self.master.state, self.t_ms, "master")?;
        check_state(&self.slave.state, self.t_ms, "slave")?;
        Ok(tick)
    }
}

/// The slave alone, commanded by a stand-in for the master side.
#[derive(Debug, Clone)]
pub struct SlaveSim {
    pub slave: Robot,
    pub contact: ContactParams,
    gains: Gains,
    master_inertia: JointVector,
    substeps: usize,
    substep_dt: f64,
    enc: Encoder,
    t_ms: u64,
}

impl SlaveSim {
    pub fn new(cfg: &Config, height_mm: f64, theta0: JointVector, seed: u64) -> Result<Self> {
        let contact = cfg.contact.with_height(height_mm);
        contact.validate()?;
        Ok(SlaveSim {
            slave: Robot::new(cfg.slave, cfg.gains, cfg.sim.control_dt(), theta0),
            contact,
            gains: cfg.gains,
            master_inertia: cfg.master.inertia,
            substeps: cfg.sim.substeps,
            substep_dt: cfg.sim.substep_dt(),
            enc: Encoder::new(cfg.sim.noise_std, seed.wrapping_mul(2).wrapping_add(2))?,
            t_ms: 0,
        })
    }

    pub fn t_ms(&self) -> u64 {
        self.t_ms
    }

    pub fn set_height(&mut self, height_mm: f64) -> Result<()> {
        let c = self.contact.with_height(height_mm);
        c.validate()?;
        self.contact = c;
        Ok(())
    }

    /// Observer update from a fresh encoder reading.
    pub fn sense(&mut self) -> RobotSample {
        let th = self.enc.read(self.slave.state.theta);
        self.slave.ctrl.sense(th)
    }

    pub fn in_contact(&self) -> Option<f64> {
        contact_force(&self.slave.state, &self.contact, &self.slave.params)
    }

    /// Apply the slave law against `master` and integrate one tick.
    pub fn actuate(&mut self, master: &RobotSample, slave: &RobotSample) -> Result<()> {
        let (_, ref_s) = bilateral_refs(master, slave, &self.gains, self.master_inertia, self.slave.params.inertia);
        let cmd = self.slave.ctrl.command(ref_s);
        let contact = self.contact;
        self.slave
            .advance(cmd, self.substeps, self.substep_dt, |st, p| contact_wrench(st, &contact, p))?;
        self.t_ms += 1;
        check_state(&self.slave.state, self.t_ms, "slave")
    }
}

fn check_state(s: &PlantState, t_ms: u64, what: &'static str) -> Result<()> {
    let ok = s.theta.is_finite()
        && s.dtheta.is_finite()
        && s.theta.0.iter().all(|t| t.abs() < DIVERGENCE_RAD);
    if ok {
        Ok(())
    } else {
        Err(Error::Diverged { t_ms, what: what.into() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::operator_torque;
    use crate::plant::inverse_kinematics;

    fn home(cfg: &Config) -> JointVector {
        inverse_kinematics(cfg.paper.to_base(45.0, 45.0, 0.08), &cfg.master).unwrap()
    }

    fn quiet() -> Config {
        let mut c = Config::default();
        c.sim.noise_std = 0.0;
        c
    }

    #[test]
    fn pair_at_rest_stays_synchronized() {
        let cfg = quiet();
        let mut sim = BilateralSim::new(&cfg, 10.0, home(&cfg), 0).unwrap();
        for _ in 0..500 {
            sim.step(JointVector::ZERO).unwrap();
        }
        let d = sim.master.state.theta - sim.slave.state.theta;
        assert!(d.norm() < 1e-3, "drift {d:?}");
    }

    #[test]
    fn slow_operator_is_tracked() {
        let cfg = quiet();
        let mut sim = BilateralSim::new(&cfg, 0.0, home(&cfg), 0).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..4000u64 {
            let t = k as f64 * 1e-3;
            let w = 2.0 * std::f64::consts::PI * 0.5;
            let op = JointVector::new(0.03 * (w * t).sin(), 0.03 * (w * t).cos(), 0.0);
            let tick = sim.step(op).unwrap();
            if t >= 1.0 {
                for i in 0..3 {
                    worst = worst.max((tick.master.theta[i] - tick.slave.theta[i]).abs());
                }
            }
        }
        assert!(worst < 0.01, "max tracking error {worst}");
    }

    #[test]
    fn steady_contact_obeys_action_reaction_and_rfob_matches_truth() {
        let cfg = quiet();
        let theta0 = home(&cfg);
        let tip = forward_kinematics(theta0, &cfg.slave);
        let height_mm = tip.z * 1e3 - 3.0;
        let mut sim = BilateralSim::new(&cfg, height_mm, theta0, 0).unwrap();
        let target = tip - Vec3::new(0.0, 0.0, 0.008);
        let mut sum_ar = 0.0;
        let mut peak: f64 = 0.0;
        let mut worst_rfob: f64 = 0.0;
        for k in 0..4000 {
            let push = operator_torque(target, &sim.master.state, &cfg.master, &cfg.operator);
            let tick = sim.step(push).unwrap();
            if k >= 3000 {
                assert!(tick.contact);
                sum_ar += (tick.master.tau + tick.slave.tau).norm();
                peak = peak.max(tick.slave.tau.norm());
                let truth = contact_wrench(&sim.slave.state, &sim.contact, &sim.slave.params);
                let err = (tick.slave.tau + truth).norm() / truth.norm();
                worst_rfob = worst_rfob.max(err);
            }
        }
        let ar = sum_ar / 1000.0;
        assert!(ar < 0.05 * peak.max(0.01), "action-reaction {ar} vs peak {peak}");
        assert!(worst_rfob < 0.05, "rfob error {worst_rfob}");
    }

    #[test]
    fn same_seed_same_trajectory() {
        let cfg = Config::default();
        let run = |seed| {
            let mut sim = BilateralSim::new(&cfg, 10.0, home(&cfg), seed).unwrap();
            (0..200).map(|_| sim.step(JointVector::splat(0.01)).unwrap()).last().unwrap()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn runaway_torque_reports_divergence() {
        let cfg = quiet();
        let mut sim = BilateralSim::new(&cfg, 0.0, home(&cfg), 0).unwrap();
        let err = (0..100_000)
            .map(|_| sim.step(JointVector::splat(1e6)))
            .find_map(|r| r.err())
            .expect("diverges");
        assert!(matches!(err, Error::Diverged { .. }));
    }
}
