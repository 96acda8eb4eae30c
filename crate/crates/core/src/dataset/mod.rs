//! Demonstration generation, resampling, and the training set on disk.

mod script;
mod trial;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use script::{
    operator_torque, virtual_operator, LetterGeometry, LetterScript, PaperPoint, Waypoint,
};
pub use trial::{channel_names, Trial, TrialMeta, TrialRow, TRIAL_CHANNELS, TRIAL_FORMAT, TRIAL_VERSION};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::signal::{decimate, design_lpf_cutoff, lowpass, magnitude_spectrum};
use crate::sim::BilateralSim;

/// Tracking must stay below this (rad, time-averaged, after the first second).
pub const TRACKING_LIMIT: f64 = 0.01;
/// Mean `|tau_m + tau_s|` during contact relative to the peak slave torque.
pub const ACTION_REACTION_LIMIT: f64 = 0.05;

/// Bilateral-control quality of one demonstration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Fidelity {
    /// Mean over ticks of `max_i |th_m,i - th_s,i|` after the first second (rad).
    pub tracking_rad: f64,
    /// Mean `|tau_m + tau_s|` over contact ticks divided by peak `|tau_s|` in contact.
    pub action_reaction: f64,
    pub contact_ticks: usize,
    /// Mean slave `tau_2` while writing minus its mean elsewhere (Nm).
    pub pressure_tau2: f64,
}

impl Fidelity {
    pub fn check(&self, trial_id: &str) -> Result<()> {
        let fail = |msg: String| Err(Error::FidelityGate { trial: trial_id.into(), msg });
        if !(self.tracking_rad < TRACKING_LIMIT) {
            return fail(format!("tracking {:.4} rad >= {TRACKING_LIMIT}", self.tracking_rad));
        }
        if self.contact_ticks == 0 {
            return fail("pen never touched the paper".into());
        }
        if !(self.action_reaction < ACTION_REACTION_LIMIT) {
            return fail(format!(
                "action-reaction residual {:.4} >= {ACTION_REACTION_LIMIT}",
                self.action_reaction
            ));
        }
        Ok(())
    }
}

/// A 1 ms demonstration with its per-tick contact flags.
#[derive(Debug, Clone)]
pub struct Demonstration {
    pub trial: Trial,
    pub contact: Vec<bool>,
    pub fidelity: Fidelity,
    pub script: LetterScript,
}

pub fn trial_id(height_mm: f64, index: usize) -> String {
    format!("h{:03}_t{:02}", height_mm.round() as i64, index)
}

/// Simulate one teleoperated writing of the letter at `height_mm`.
pub fn run_demonstration(cfg: &Config, height_mm: f64, seed: u64, trial_id: &str) -> Result<Demonstration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
    let script = LetterScript::jittered(height_mm, &cfg.operator, &cfg.timing, &mut rng);
    script.validate(&cfg.paper, &cfg.master)?;
    let theta0 = script.start_pose(&cfg.paper, &cfg.master)?;
    let mut sim = BilateralSim::new(cfg, height_mm, theta0, seed)?;
    let dt = cfg.sim.control_dt();
    let n = (cfg.dataset.duration_s / dt).round() as usize;
    let mut rows = Vec::with_capacity(n);
    let mut contact = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * dt;
        let tau = virtual_operator(&script, &cfg.paper, &sim.master.state, t, &cfg.master, &cfg.operator);
        let tick = sim.step(tau)?;
        let mut row = [0.0; TRIAL_CHANNELS];
        row[..9].copy_from_slice(&tick.master.to_array());
        row[9..].copy_from_slice(&tick.slave.to_array());
        rows.push(row);
        contact.push(tick.contact);
    }
    let trial = Trial::new(
        TrialMeta {
            trial_id: trial_id.into(),
            height_mm,
            seed,
            period_ms: cfg.sim.control_period_ms,
            duration_s: cfg.dataset.duration_s,
        },
        rows,
    )?;
    let pen: Vec<bool> = (0..n).map(|k| script.pen_down(k as f64 * dt)).collect();
    let fidelity = measure_fidelity(&trial, &contact, &pen, 1.0);
    Ok(Demonstration { trial, contact, fidelity, script })
}

/// Fidelity statistics of a recorded pair; `settle_s` is skipped for tracking.
pub fn measure_fidelity(trial: &Trial, contact: &[bool], pen_down: &[bool], settle_s: f64) -> Fidelity {
    let skip = (settle_s * 1000.0 / trial.meta.period_ms).round() as usize;
    let mut track = 0.0;
    let mut nt = 0usize;
    for k in skip..trial.len() {
        let (m, s) = (trial.master(k), trial.slave(k));
        track += (0..3).map(|i| (m[i] - s[i]).abs()).fold(0.0, f64::max);
        nt += 1;
    }
    let norm3 = |a: &[f64]| a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut sum_ar = 0.0;
    let mut peak: f64 = 0.0;
    let mut nc = 0usize;
    let (mut down, mut nd, mut up, mut nu) = (0.0, 0usize, 0.0, 0usize);
    for k in 0..trial.len() {
        let (m, s) = (trial.master(k), trial.slave(k));
        if contact[k] {
            let sum: Vec<f64> = (6..9).map(|i| m[i] + s[i]).collect();
            sum_ar += norm3(&sum);
            peak = peak.max(norm3(&s[6..9]));
            nc += 1;
        }
        if pen_down[k] {
            down += s[7];
            nd += 1;
        } else {
            up += s[7];
            nu += 1;
        }
    }
    Fidelity {
        tracking_rad: if nt > 0 { track / nt as f64 } else { 0.0 },
        action_reaction: if nc > 0 { sum_ar / nc as f64 / peak.max(0.01) } else { 0.0 },
        contact_ticks: nc,
        pressure_tau2: down / nd.max(1) as f64 - up / nu.max(1) as f64,
    }
}

/// Anti-alias and decimate a trial to `period_ms`.
pub fn resample_trial(trial: &Trial, period_ms: f64) -> Result<Trial> {
    let ratio = period_ms / trial.meta.period_ms;
    let factor = ratio.round() as usize;
    if factor == 0 || (ratio - factor as f64).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "{period_ms} ms is not an integer multiple of {} ms",
            trial.meta.period_ms
        )));
    }
    let cutoff = design_lpf_cutoff(period_ms * 1e-3)?;
    let dt = trial.meta.period_ms * 1e-3;
    let mut cols = Vec::with_capacity(TRIAL_CHANNELS);
    for ch in 0..TRIAL_CHANNELS {
        let x = trial.channel(ch);
        let y = if factor > 1 { lowpass(&x, cutoff, dt)? } else { x };
        cols.push(decimate(&y, factor)?);
    }
    let n = cols[0].len();
    let rows = (0..n).map(|k| std::array::from_fn(|c| cols[c][k])).collect();
    Trial::new(TrialMeta { period_ms, duration_s: n as f64 * period_ms * 1e-3, ..trial.meta.clone() }, rows)
}

/// The resampled training set.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub trials: Vec<Trial>,
}

/// Per-trial generation summary.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CollectRecord {
    pub trial_id: String,
    pub height_mm: f64,
    pub seed: u64,
    pub fidelity: Fidelity,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for t in &self.trials {
            t.save(&dir.join(format!("{}.csv", t.meta.trial_id)))?;
        }
        Ok(())
    }

    /// All `*.csv` trials in `dir`, in file-name order.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::InvalidArgument(format!("no trial files in {}", dir.display())));
        }
        let trials = paths.iter().map(|p| Trial::load(p)).collect::<Result<Vec<_>>>()?;
        Ok(Dataset { trials })
    }

    /// Share of channel `ch`'s spectral energy below `omega` (rad/s), pooled over trials.
    pub fn energy_below(&self, ch: usize, omega: f64) -> Result<f64> {
        let (mut below, mut total) = (0.0, 0.0);
        for t in &self.trials {
            for (w, m) in magnitude_spectrum(&t.channel(ch), t.meta.period_ms * 1e-3)? {
                total += m * m;
                if w < omega {
                    below += m * m;
                }
            }
        }
        Ok(if total > 0.0 { below / total } else { 0.0 })
    }
}

/// Every (height, index, seed) the protocol asks for.
pub fn protocol(cfg: &Config) -> Vec<(f64, usize, u64)> {
    let per = cfg.dataset.trials_per_height;
    cfg.dataset
        .heights_mm
        .iter()
        .enumerate()
        .flat_map(|(hi, &h)| {
            (0..per).map(move |k| (h, k, cfg.dataset.seed * 1000 + (hi * per + k) as u64))
        })
        .collect()
}

/// Generate, gate, and resample every demonstration. `on_trial` sees each 1 ms original.
pub fn build_dataset<F>(cfg: &Config, mut on_trial: F) -> Result<(Dataset, Vec<CollectRecord>)>
where
    F: FnMut(&Demonstration) -> Result<()>,
{
    let mut trials = Vec::new();
    let mut records = Vec::new();
    for (h, k, seed) in protocol(cfg) {
        let id = trial_id(h, k);
        let demo = run_demonstration(cfg, h, seed, &id)?;
        demo.fidelity.check(&id)?;
        on_trial(&demo)?;
        trials.push(resample_trial(&demo.trial, cfg.rates.base_ms as f64)?);
        records.push(CollectRecord { trial_id: id, height_mm: h, seed, fidelity: demo.fidelity });
    }
    Ok((Dataset { trials }, records))
}
