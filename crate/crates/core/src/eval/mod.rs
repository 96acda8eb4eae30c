//! Autonomous execution with a learned (or replayed) master, trace rendering,
//! letter scoring, and the height-step experiment.

mod render;

pub use render::{letter_score, letter_template, render_points, Grid};

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dataset::{LetterGeometry, LetterScript, PaperPoint, Trial};
use crate::error::{Error, Result};
use crate::models::{Model, ModelKind, Predictor, ROBOT_DIM};
use crate::plant::{forward_kinematics, PaperFrame, RobotParams};
use crate::signal::{design_lpf_cutoff, OnlineLowpass};
use crate::sim::SlaveSim;
use crate::types::RobotSample;

/// Paper grid size (mm).
pub const GRID_MM: usize = 90;
/// Master channel indices used by the height-step statistics.
pub const THETA2: usize = 1;
pub const TAU2: usize = 7;

/// Anything that can stand in for the master robot during autonomous runs.
pub trait MasterSource {
    /// Master `(th, th', tau)` to track from fast tick `k`, given the slave's.
    fn next(&mut self, k: u64, slave: &[f64; ROBOT_DIM]) -> Result<[f64; ROBOT_DIM]>;
}

impl MasterSource for Predictor<'_> {
    fn next(&mut self, _k: u64, slave: &[f64; ROBOT_DIM]) -> Result<[f64; ROBOT_DIM]> {
        Ok(self.step(slave)?.master)
    }
}

/// Perfect predictor: plays back a recorded master one fast step ahead.
#[derive(Debug, Clone)]
pub struct Replay<'a> {
    pub trial: &'a Trial,
}

impl MasterSource for Replay<'_> {
    fn next(&mut self, k: u64, _slave: &[f64; ROBOT_DIM]) -> Result<[f64; ROBOT_DIM]> {
        let i = (k as usize + 1).min(self.trial.len() - 1);
        Ok(std::array::from_fn(|c| self.trial.master(i)[c]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub height_mm: f64,
    pub duration_s: f64,
    pub seed: u64,
    /// Switch the paper to a new height `(at_s, height_mm)` mid-run.
    pub height_switch: Option<(f64, f64)>,
}

impl RunOptions {
    pub fn new(height_mm: f64, duration_s: f64, seed: u64) -> Self {
        RunOptions { height_mm, duration_s, seed, height_switch: None }
    }
}

/// Logs of one autonomous run.
#[derive(Debug, Clone)]
pub struct ExecutionResult {
    pub options: RunOptions,
    /// Slave `(th, th', tau)` every control tick.
    pub slave_1ms: Vec<[f64; ROBOT_DIM]>,
    /// Filtered slave sample handed to the predictor every fast tick.
    pub slave_fast: Vec<[f64; ROBOT_DIM]>,
    /// Predicted master at every fast tick.
    pub predicted: Vec<[f64; ROBOT_DIM]>,
    /// Pen position on the paper every control tick, `None` while lifted.
    pub pen: Vec<Option<PaperPoint>>,
    pub fast_period_ms: f64,
}

impl ExecutionResult {
    pub fn network_ticks(&self) -> usize {
        self.predicted.len()
    }

    pub fn contact_ticks(&self) -> usize {
        self.pen.iter().filter(|p| p.is_some()).count()
    }

    /// Mean of predicted master channel `ch` over fast ticks in `[t0, t1)` seconds.
    pub fn mean_predicted(&self, ch: usize, t0: f64, t1: f64) -> f64 {
        let dt = self.fast_period_ms * 1e-3;
        let picked: Vec<f64> = self
            .predicted
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let t = *k as f64 * dt;
                t >= t0 - 1e-9 && t < t1 - 1e-9
            })
            .map(|(_, r)| r[ch])
            .collect();
        picked.iter().sum::<f64>() / picked.len().max(1) as f64
    }

    /// Largest excursion of any predicted channel outside `range`, in units of its span.
    pub fn envelope_excess(&self, model: &Model) -> f64 {
        let r = &model.master_range;
        self.predicted
            .iter()
            .flat_map(|row| {
                (0..ROBOT_DIM).map(move |c| {
                    let lo = (r.min[c] - row[c]) / r.span(c);
                    let hi = (row[c] - r.max[c]) / r.span(c);
                    lo.max(hi).max(0.0)
                })
            })
            .fold(0.0, f64::max)
    }
}

/// Slave writing at `options.height_mm` while `source` plays the master.
///
/// Every fast tick the source sees the slave's causally low-passed state and
/// its output is held for the slave's 1 kHz bilateral law.
pub fn run_autonomous<S: MasterSource>(cfg: &Config, source: &mut S, options: RunOptions) -> Result<ExecutionResult> {
    let script = LetterScript::nominal(options.height_mm, &cfg.operator, &cfg.timing);
    let theta0 = script.start_pose(&cfg.paper, &cfg.slave)?;
    let mut sim = SlaveSim::new(cfg, options.height_mm, theta0, options.seed)?;
    let dt = cfg.sim.control_dt();
    let ticks = (options.duration_s / dt).round() as u64;
    let per = cfg.ticks_per_sample() as u64;
    let fast_period_ms = cfg.rates.base_ms as f64;
    let cutoff = design_lpf_cutoff(cfg.rates.base_s())?;
    let mut filters = [OnlineLowpass::new(cutoff, dt); ROBOT_DIM];
    let switch_tick = options.height_switch.map(|(t, h)| ((t / dt).round() as u64, h));

    let mut out = ExecutionResult {
        options,
        slave_1ms: Vec::with_capacity(ticks as usize),
        slave_fast: Vec::with_capacity((ticks / per) as usize + 1),
        predicted: Vec::with_capacity((ticks / per) as usize + 1),
        pen: Vec::with_capacity(ticks as usize),
        fast_period_ms,
    };
    let mut held = RobotSample::from_slice(&[0.0; ROBOT_DIM]);
    for tick in 0..ticks {
        if let Some((at, h)) = switch_tick {
            if tick == at {
                sim.set_height(h)?;
            }
        }
        let s = sim.sense();
        let raw = s.to_array();
        let mut filtered = [0.0; ROBOT_DIM];
        for i in 0..ROBOT_DIM {
            filtered[i] = filters[i].update(raw[i]);
        }
        if tick % per == 0 {
            let k = tick / per;
            let pred = source.next(k, &filtered).map_err(|e| match e {
                Error::NonFinite(what) => Error::Diverged {
                    t_ms: tick,
                    what: format!("non-finite {what} at network tick {k}"),
                },
                other => other,
            })?;
            held = RobotSample::from_slice(&pred);
            out.slave_fast.push(filtered);
            out.predicted.push(pred);
        }
        out.slave_1ms.push(raw);
        out.pen.push(sim.in_contact().map(|_| cfg.paper.to_paper(sim.slave.tip())));
        sim.actuate(&held, &s)?;
    }
    Ok(out)
}

/// The ideal letter on the paper grid.
pub fn template(cfg: &Config) -> Grid {
    letter_template(&LetterGeometry::default(), GRID_MM, cfg.eval.stroke_mm)
}

pub fn render_trace(result: &ExecutionResult, cfg: &Config) -> Grid {
    render_points(&result.pen, GRID_MM, cfg.eval.stroke_mm)
}

/// Letter score of a run against the ideal letter.
pub fn score_run(result: &ExecutionResult, cfg: &Config) -> Result<f64> {
    letter_score(&render_trace(result, cfg), &template(cfg), cfg.eval.shift_mm)
}

/// Slave pen contact points of a recorded trial, `None` while lifted.
pub fn trial_pen_points(trial: &Trial, frame: &PaperFrame, slave: &RobotParams) -> Vec<Option<PaperPoint>> {
    let surface = trial.meta.height_mm * 1e-3;
    (0..trial.len())
        .map(|k| {
            let s = trial.slave_sample(k);
            let tip = forward_kinematics(s.theta, slave);
            (tip.z < surface).then(|| frame.to_paper(tip))
        })
        .collect()
}

pub fn render_trial(trial: &Trial, cfg: &Config) -> Grid {
    render_points(&trial_pen_points(trial, &cfg.paper, &cfg.slave), GRID_MM, cfg.eval.stroke_mm)
}

/// Learned-model run at one height, scored.
pub fn evaluate_height(model: &Model, cfg: &Config, height_mm: f64, seed: u64) -> Result<(f64, ExecutionResult)> {
    let mut p = Predictor::new(model);
    let run = run_autonomous(cfg, &mut p, RunOptions::new(height_mm, cfg.eval.duration_s, seed))?;
    Ok((score_run(&run, cfg)?, run))
}

/// One model/seed/height entry of the experiment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCell {
    pub kind: ModelKind,
    pub seed: u64,
    pub height_mm: f64,
    pub score: f64,
    pub contact_ticks: usize,
    pub envelope_excess: f64,
}

/// Median of the scores of `kind` at `height_mm` across seeds.
pub fn median_score(cells: &[ScoreCell], kind: ModelKind, height_mm: f64) -> Option<f64> {
    median(cells.iter().filter(|c| c.kind == kind && c.height_mm == height_mm).map(|c| c.score).collect())
}

/// Median with the mean of the middle pair for even counts.
pub fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Score `model` at every height.
pub fn score_model(model: &Model, cfg: &Config, seed: u64, heights: &[f64]) -> Result<Vec<(ScoreCell, ExecutionResult)>> {
    heights
        .iter()
        .map(|&h| {
            let (score, run) = evaluate_height(model, cfg, h, seed)?;
            let cell = ScoreCell {
                kind: model.spec.kind,
                seed: model.train.seed,
                height_mm: h,
                score,
                contact_ticks: run.contact_ticks(),
                envelope_excess: run.envelope_excess(model),
            };
            Ok((cell, run))
        })
        .collect()
}

/// Paired height-step statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightStep {
    pub h_before: f64,
    pub h_after: f64,
    pub switch_s: f64,
    /// Change of mean predicted master `th_2` after the switch, over its training span.
    pub theta2_change: f64,
    /// Same for `tau_2`.
    pub tau2_change: f64,
}

/// Switch the paper from `h_before` to `h_after` at the end of the first stroke
/// and compare the rest of the letter with an unswitched run.
pub fn height_step_test(model: &Model, cfg: &Config, h_before: f64, h_after: f64, seed: u64) -> Result<HeightStep> {
    let switch_s = cfg.timing.stroke1_end();
    let end = cfg.timing.total();
    let base = RunOptions::new(h_before, end, seed);
    let stepped = RunOptions { height_switch: Some((switch_s, h_after)), ..base };
    let a = run_autonomous(cfg, &mut Predictor::new(model), base)?;
    let b = run_autonomous(cfg, &mut Predictor::new(model), stepped)?;
    let r = &model.master_range;
    let change = |ch: usize| (b.mean_predicted(ch, switch_s, end) - a.mean_predicted(ch, switch_s, end)) / r.span(ch);
    Ok(HeightStep {
        h_before,
        h_after,
        switch_s,
        theta2_change: change(THETA2),
        tau2_change: change(TAU2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{resample_trial, run_demonstration};

    struct Stuck([f64; ROBOT_DIM]);
    impl MasterSource for Stuck {
        fn next(&mut self, _k: u64, _s: &[f64; ROBOT_DIM]) -> Result<[f64; ROBOT_DIM]> {
            Ok(self.0)
        }
    }

    fn start(cfg: &Config, h: f64) -> [f64; ROBOT_DIM] {
        let sc = LetterScript::nominal(h, &cfg.operator, &cfg.timing);
        let th = sc.start_pose(&cfg.paper, &cfg.slave).unwrap();
        let mut x = [0.0; ROBOT_DIM];
        x[..3].copy_from_slice(&th.0);
        x
    }

    #[test]
    fn network_ticks_every_twenty_ms() {
        let cfg = Config::default();
        let mut src = Stuck(start(&cfg, 40.0));
        let r = run_autonomous(&cfg, &mut src, RunOptions::new(40.0, 2.0, 0)).unwrap();
        assert_eq!(r.network_ticks(), 100);
        assert_eq!(r.slave_1ms.len(), 2000);
        assert_eq!(r.contact_ticks(), 0);
        assert!(render_trace(&r, &cfg).is_empty());
    }

    #[test]
    fn replay_reproduces_the_demonstration() {
        let cfg = Config::default();
        let demo = run_demonstration(&cfg, 40.0, 11, "r").unwrap();
        let fast = resample_trial(&demo.trial, 20.0).unwrap();
        let mut src = Replay { trial: &fast };
        let r = run_autonomous(&cfg, &mut src, RunOptions::new(40.0, 15.0, 11)).unwrap();
        let reference = render_trial(&demo.trial, &cfg);
        let score = letter_score(&render_trace(&r, &cfg), &reference, cfg.eval.shift_mm).unwrap();
        assert!(score >= 0.9, "replay score {score}");
    }

    #[test]
    fn median_handles_odd_and_even_counts() {
        assert_eq!(median(vec![]), None);
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = Config::default();
        let go = || {
            let mut src = Stuck(start(&cfg, 10.0));
            run_autonomous(&cfg, &mut src, RunOptions::new(10.0, 1.0, 5)).unwrap().slave_1ms
        };
        assert_eq!(go(), go());
    }
}
