//! Pipeline configuration. Defaults reproduce the published protocol; the
//! `desk` profile only shortens training.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::Gains;
use crate::error::{Error, Result};
use crate::plant::{ContactParams, PaperFrame, RobotParams};
use crate::signal::RateSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    pub control_period_ms: f64,
    pub substeps: usize,
    /// Standard deviation of encoder noise (rad).
    pub noise_std: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            control_period_ms: 1.0,
            substeps: 10,
            noise_std: 1e-4,
        }
    }
}

impl SimSettings {
    pub fn control_dt(&self) -> f64 {
        self.control_period_ms * 1e-3
    }

    pub fn substep_dt(&self) -> f64 {
        self.control_dt() / self.substeps as f64
    }
}

/// Scripted operator impedance and writing geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorParams {
    /// N/m
    pub stiffness: f64,
    /// N s/m
    pub damping: f64,
    /// Per-joint clamp on operator torque (Nm).
    pub torque_clamp: f64,
    /// Pen-up clearance above the paper (mm).
    pub hover_mm: f64,
    /// Commanded depth below the paper surface while writing (mm).
    pub press_mm: f64,
    /// Uniform per-trial jitter of stroke endpoints (mm).
    pub jitter_mm: f64,
}

impl Default for OperatorParams {
    fn default() -> Self {
        OperatorParams {
            stiffness: 150.0,
            damping: 10.0,
            torque_clamp: 0.5,
            hover_mm: 10.0,
            press_mm: 8.0,
            jitter_mm: 2.0,
        }
    }
}

/// Phase durations (s) of the 15 s letter; writing 4 + 4 + 3 s, the rest transits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptTiming {
    pub dwell_s: f64,
    pub descend_s: f64,
    pub stroke1_s: f64,
    pub transit1_s: f64,
    pub stroke2_s: f64,
    pub transit2_s: f64,
    pub stroke3_s: f64,
    pub return_s: f64,
}

impl Default for ScriptTiming {
    fn default() -> Self {
        ScriptTiming {
            dwell_s: 0.25,
            descend_s: 0.5,
            stroke1_s: 4.0,
            transit1_s: 1.25,
            stroke2_s: 4.0,
            transit2_s: 1.0,
            stroke3_s: 3.0,
            return_s: 1.0,
        }
    }
}

impl ScriptTiming {
    pub fn total(&self) -> f64 {
        self.dwell_s
            + self.descend_s
            + self.stroke1_s
            + self.transit1_s
            + self.stroke2_s
            + self.transit2_s
            + self.stroke3_s
            + self.return_s
    }

    /// End of the first stroke, the default height-switch instant.
    pub fn stroke1_end(&self) -> f64 {
        self.dwell_s + self.descend_s + self.stroke1_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetParams {
    pub heights_mm: Vec<f64>,
    pub trials_per_height: usize,
    pub duration_s: f64,
    pub resample_ms: u32,
    pub seed: u64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            heights_mm: vec![10.0, 40.0, 70.0],
            trials_per_height: 15,
            duration_s: 15.0,
            resample_ms: 20,
            seed: 0,
        }
    }
}

/// How the fast path of the band-split model sees its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighPath {
    /// Input minus its held low band.
    Residual,
    /// Unfiltered input.
    Raw,
}

/// What one training "epoch" means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochUnit {
    /// One mini-batch update per epoch.
    Minibatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub hidden: Vec<usize>,
    pub window: usize,
    pub batch: usize,
    pub epochs: usize,
    pub epoch_unit: EpochUnit,
    pub learning_rate: f64,
    pub seed: u64,
    pub high_path: HighPath,
    /// Hold joint velocities with angles in the position-long-term model.
    pub hold_velocity: bool,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            hidden: vec![50, 50],
            window: 300,
            batch: 100,
            epochs: 2000,
            epoch_unit: EpochUnit::Minibatch,
            learning_rate: 1e-3,
            seed: 1,
            high_path: HighPath::Residual,
            hold_velocity: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    pub heights_mm: Vec<f64>,
    pub duration_s: f64,
    pub seeds: Vec<u64>,
    pub shift_mm: i32,
    pub stroke_mm: f64,
    pub step_before_mm: f64,
    pub step_after_mm: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            heights_mm: vec![10.0, 25.0, 40.0, 55.0, 70.0, 85.0, 100.0],
            duration_s: 45.0,
            seeds: vec![1, 2, 3],
            shift_mm: 5,
            stroke_mm: 2.0,
            step_before_mm: 40.0,
            step_after_mm: 55.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub model_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: "run/data".into(),
            model_dir: "run/models".into(),
            out_dir: "run/out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub profile: String,
    pub sim: SimSettings,
    pub gains: Gains,
    pub master: RobotParams,
    pub slave: RobotParams,
    pub contact: ContactParams,
    pub paper: PaperFrame,
    pub operator: OperatorParams,
    pub timing: ScriptTiming,
    pub dataset: DatasetParams,
    pub rates: RateSpec,
    pub model: ModelParams,
    pub eval: EvalParams,
    pub paths: Paths,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            profile: "paper".into(),
            sim: SimSettings::default(),
            gains: Gains::default(),
            master: RobotParams::master(),
            slave: RobotParams::slave(),
            contact: ContactParams::default(),
            paper: PaperFrame::default(),
            operator: OperatorParams::default(),
            timing: ScriptTiming::default(),
            dataset: DatasetParams::default(),
            rates: RateSpec::default(),
            model: ModelParams::default(),
            eval: EvalParams::default(),
            paths: Paths::default(),
        }
    }
}

impl Config {
    pub fn paper() -> Self {
        Self::default()
    }

    /// CPU-sized training budget.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.profile = "desk".into();
        c.model.epochs = 600;
        c
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!("unknown profile '{other}'"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.gains.validate()?;
        self.master.validate()?;
        self.slave.validate()?;
        self.contact.validate()?;
        self.rates.validate()?;
        if !(self.sim.control_period_ms > 0.0) || self.sim.substeps == 0 {
            return Err(Error::Config("control period and substeps must be positive".into()));
        }
        if self.sim.substep_dt() > 1e-3 {
            return Err(Error::Config("plant substep must be <= 1 ms".into()));
        }
        if (self.timing.total() - self.dataset.duration_s).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "script phases sum to {} s but trials last {} s",
                self.timing.total(),
                self.dataset.duration_s
            )));
        }
        let period = self.rates.base_ms as f64;
        if (self.dataset.resample_ms as f64 - period).abs() > 0.0 {
            return Err(Error::Config("dataset resample period must equal the fast rate".into()));
        }
        if self.model.window == 0 || self.model.batch == 0 || self.model.hidden.is_empty() {
            return Err(Error::Config("window, batch and hidden sizes must be nonzero".into()));
        }
        if !(self.model.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.dataset.heights_mm.is_empty() || self.dataset.trials_per_height == 0 {
            return Err(Error::Config("dataset needs at least one height and trial".into()));
        }
        if self.eval.seeds.is_empty() {
            return Err(Error::Config("eval needs at least one seed".into()));
        }
        Ok(())
    }

    /// Samples per trial at the fast rate.
    pub fn samples_per_trial(&self) -> usize {
        (self.dataset.duration_s * 1000.0 / self.rates.base_ms as f64).round() as usize
    }

    /// Control ticks per fast-rate sample.
    pub fn ticks_per_sample(&self) -> usize {
        (self.rates.base_ms as f64 / self.sim.control_period_ms).round() as usize
    }
}
