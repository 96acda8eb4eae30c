//! CONV, MD and PLT predictors: training-set construction, training, and the
//! 20 ms inference loop.
//!
//! All three map the slave's `(th, th', tau)` at fast tick `t` to the master's
//! at `t + 1`. MD splits every channel into a 400 ms low band and a 20 ms
//! residual and sums two networks; PLT holds the slave's angles and
//! velocities for 400 ms while its torques refresh every tick.

mod file;

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use file::{MODEL_MAGIC, MODEL_VERSION};

use crate::config::{Config, HighPath, ModelParams};
use crate::dataset::{Dataset, Trial, TrialRow, TRIAL_CHANNELS};
use crate::error::{Error, Result};
use crate::nnet::{forward_step, train_network, HiddenState, NetworkParams, NetworkShape, Sequence, TrainSettings};
use crate::signal::{decimate, design_lpf_cutoff, hold_upsample, linear_upsample, lowpass, ChannelRange, OnlineLowpass, RateSpec};

/// Channels per robot.
pub const ROBOT_DIM: usize = 9;
/// Slave angle and velocity channels, the ones PLT holds.
pub const POSITION_CHANNELS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Conv,
    Md,
    Plt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Conv, ModelKind::Md, ModelKind::Plt];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Conv => "conv",
            ModelKind::Md => "md",
            ModelKind::Plt => "plt",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "conv" => Ok(ModelKind::Conv),
            "md" => Ok(ModelKind::Md),
            "plt" => Ok(ModelKind::Plt),
            other => Err(Error::InvalidArgument(format!("unknown model kind '{other}' (conv, md, plt)"))),
        }
    }
}

/// Which of a model's networks this is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetRole {
    /// The single 20 ms network of CONV and PLT.
    Fast,
    /// MD's 20 ms residual-band network.
    High,
    /// MD's 400 ms low-band network.
    Low,
}

/// Architecture and rate metadata stored with every model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub rates: RateSpec,
    /// Low-band cutoff (rad/s), `pi / st_d`.
    pub g_low: f64,
    pub high_path: HighPath,
    pub hold_velocity: bool,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, cfg: &Config) -> Result<Self> {
        cfg.rates.validate()?;
        let spec = ModelSpec {
            kind,
            rates: cfg.rates,
            g_low: design_lpf_cutoff(cfg.rates.slow_s())?,
            high_path: cfg.model.high_path,
            hold_velocity: cfg.model.hold_velocity,
        };
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.rates.validate()?;
        if self.kind == ModelKind::Md && self.g_low != design_lpf_cutoff(self.rates.slow_s())? {
            return Err(Error::Config(format!(
                "MD low-band cutoff {} must equal pi / {} s",
                self.g_low,
                self.rates.slow_s()
            )));
        }
        Ok(())
    }

    /// Input channels PLT holds between slow ticks.
    pub fn held_channels(&self) -> usize {
        if self.hold_velocity {
            POSITION_CHANNELS
        } else {
            3
        }
    }
}

/// One trained network with its normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedNet {
    pub role: NetRole,
    /// Update period in ms.
    pub period_ms: f64,
    pub params: NetworkParams,
    pub input_range: ChannelRange,
    pub output_range: ChannelRange,
}

impl TrainedNet {
    /// Normalize, advance `hidden` by one step, denormalize.
    pub fn step(&self, hidden: &mut HiddenState, raw: &[f64; ROBOT_DIM]) -> Result<[f64; ROBOT_DIM]> {
        let mut x = [0.0; ROBOT_DIM];
        self.input_range.normalize_row(raw, &mut x);
        let y = forward_step(&self.params, hidden, &x)?;
        let mut out = [0.0; ROBOT_DIM];
        self.output_range.denormalize_row(&y, &mut out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network prediction"));
        }
        Ok(out)
    }
}

/// A trained CONV, MD or PLT predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub nets: Vec<TrainedNet>,
    /// Master channel extrema over the training set.
    pub master_range: ChannelRange,
    /// Hyperparameters used for training.
    pub train: ModelParams,
}

impl Model {
    pub fn net(&self, role: NetRole) -> Result<&TrainedNet> {
        self.nets
            .iter()
            .find(|n| n.role == role)
            .ok_or_else(|| Error::Config(format!("{} model has no {role:?} network", self.spec.kind)))
    }

    pub fn num_params(&self) -> usize {
        self.nets.iter().map(|n| n.params.num_params()).sum()
    }
}

/// Low band at the slow rate and residual at the fast rate, all 18 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSplitTrial {
    pub factor: usize,
    pub low: Vec<TrialRow>,
    pub high: Vec<TrialRow>,
}

impl BandSplitTrial {
    fn reconstruct_with(&self, up: fn(&[f64], usize, usize) -> Vec<f64>) -> Vec<TrialRow> {
        let n = self.high.len();
        let cols: Vec<Vec<f64>> = (0..TRIAL_CHANNELS)
            .map(|c| {
                let low: Vec<f64> = self.low.iter().map(|r| r[c]).collect();
                up(&low, self.factor, n)
            })
            .collect();
        (0..n)
            .map(|k| std::array::from_fn(|c| cols[c][k] + self.high[k][c]))
            .collect()
    }

    /// Held low band plus residual (exactly the original).
    pub fn reconstruct(&self) -> Vec<TrialRow> {
        self.reconstruct_with(hold_upsample)
    }

    /// Linearly interpolated low band plus residual.
    pub fn reconstruct_linear(&self) -> Vec<TrialRow> {
        self.reconstruct_with(linear_upsample)
    }
}

/// Split a fast-rate trial into its held low band and the residual.
pub fn split_bands(trial: &Trial, g_low: f64, rates: &RateSpec) -> Result<BandSplitTrial> {
    rates.validate()?;
    let factor = rates.factor();
    if trial.len() < factor {
        return Err(Error::InvalidArgument(format!(
            "trial of {} samples is shorter than one slow period ({factor})",
            trial.len()
        )));
    }
    let dt = trial.meta.period_ms * 1e-3;
    let n = trial.len();
    let mut low_cols = Vec::with_capacity(TRIAL_CHANNELS);
    let mut high_cols = Vec::with_capacity(TRIAL_CHANNELS);
    for c in 0..TRIAL_CHANNELS {
        let x = trial.channel(c);
        let low = decimate(&lowpass(&x, g_low, dt)?, factor)?;
        let held = hold_upsample(&low, factor, n);
        high_cols.push(x.iter().zip(&held).map(|(a, b)| a - b).collect::<Vec<f64>>());
        low_cols.push(low);
    }
    let rows = |cols: &[Vec<f64>]| -> Vec<TrialRow> {
        (0..cols[0].len()).map(|k| std::array::from_fn(|c| cols[c][k])).collect()
    };
    Ok(BandSplitTrial { factor, low: rows(&low_cols), high: rows(&high_cols) })
}

fn to_array(rows: &[[f64; ROBOT_DIM]]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), ROBOT_DIM), |(t, c)| rows[t][c])
}

fn split(row: &TrialRow) -> ([f64; ROBOT_DIM], [f64; ROBOT_DIM]) {
    (
        std::array::from_fn(|i| row[i]),
        std::array::from_fn(|i| row[ROBOT_DIM + i]),
    )
}

/// Raw (unnormalized) input/target pairs for one network.
#[derive(Debug, Clone, Default)]
pub struct PairSet {
    pub inputs: Vec<Vec<[f64; ROBOT_DIM]>>,
    pub targets: Vec<Vec<[f64; ROBOT_DIM]>>,
}

impl PairSet {
    fn push(&mut self, input: Vec<[f64; ROBOT_DIM]>, target: Vec<[f64; ROBOT_DIM]>) {
        self.inputs.push(input);
        self.targets.push(target);
    }

    /// Min-max ranges of the raw inputs and targets.
    pub fn ranges(&self) -> Result<(ChannelRange, ChannelRange)> {
        let ranges = |seqs: &[Vec<[f64; ROBOT_DIM]>]| {
            ChannelRange::fit(seqs.iter().flat_map(|s| s.iter().map(|r| r.as_slice())))
        };
        Ok((ranges(&self.inputs)?, ranges(&self.targets)?))
    }

    pub fn normalized(&self, input: &ChannelRange, output: &ChannelRange) -> Vec<Sequence> {
        let norm = |rows: &[[f64; ROBOT_DIM]], r: &ChannelRange| {
            let out: Vec<[f64; ROBOT_DIM]> = rows
                .iter()
                .map(|row| {
                    let mut o = [0.0; ROBOT_DIM];
                    r.normalize_row(row, &mut o);
                    o
                })
                .collect();
            to_array(&out)
        };
        self.inputs
            .iter()
            .zip(&self.targets)
            .map(|(i, t)| Sequence { input: norm(i, input), target: norm(t, output) })
            .collect()
    }
}

/// PLT input at tick `t`: held position channels, live torques.
pub fn plt_input(held: &[f64; ROBOT_DIM], live: &[f64; ROBOT_DIM], held_channels: usize) -> [f64; ROBOT_DIM] {
    std::array::from_fn(|i| if i < held_channels { held[i] } else { live[i] })
}

/// Training pairs for each network of `kind`, keyed by role.
pub fn training_pairs(spec: &ModelSpec, data: &Dataset) -> Result<Vec<(NetRole, PairSet)>> {
    let m = spec.rates.factor();
    match spec.kind {
        ModelKind::Conv | ModelKind::Plt => {
            let mut set = PairSet::default();
            for trial in &data.trials {
                let rows: Vec<_> = trial.rows.iter().map(split).collect();
                let n = rows.len();
                let input = (0..n - 1)
                    .map(|t| match spec.kind {
                        ModelKind::Plt => plt_input(&rows[t - t % m].1, &rows[t].1, spec.held_channels()),
                        _ => rows[t].1,
                    })
                    .collect();
                let target = (1..n).map(|t| rows[t].0).collect();
                set.push(input, target);
            }
            Ok(vec![(NetRole::Fast, set)])
        }
        ModelKind::Md => {
            let mut high = PairSet::default();
            let mut low = PairSet::default();
            for trial in &data.trials {
                let bands = split_bands(trial, spec.g_low, &spec.rates)?;
                let rows: Vec<_> = trial.rows.iter().map(split).collect();
                let hi: Vec<_> = bands.high.iter().map(split).collect();
                let lo: Vec<_> = bands.low.iter().map(split).collect();
                let (n, k) = (rows.len(), lo.len());
                let input = (0..n - 1)
                    .map(|t| match spec.high_path {
                        HighPath::Residual => hi[t].1,
                        HighPath::Raw => rows[t].1,
                    })
                    .collect();
                // The fast path predicts what the held one-slow-step-ahead low output leaves over.
                let target = (0..n - 1)
                    .map(|t| {
                        let ahead = lo[(t / m + 1).min(k - 1)].0;
                        std::array::from_fn(|i| rows[t + 1].0[i] - ahead[i])
                    })
                    .collect();
                high.push(input, target);
                low.push(lo[..k - 1].iter().map(|r| r.1).collect(), lo[1..].iter().map(|r| r.0).collect());
            }
            Ok(vec![(NetRole::High, high), (NetRole::Low, low)])
        }
    }
}

/// Master channel extrema of a dataset.
pub fn master_range(data: &Dataset) -> Result<ChannelRange> {
    ChannelRange::fit(data.trials.iter().flat_map(|t| t.rows.iter().map(|r| &r[..ROBOT_DIM])))
}

/// Train every network of `kind`. `progress(role, epoch, loss)` sees each update.
pub fn train<F>(kind: ModelKind, data: &Dataset, cfg: &Config, mut progress: F) -> Result<Model>
where
    F: FnMut(NetRole, usize, f64),
{
    let spec = ModelSpec::new(kind, cfg)?;
    spec.validate()?;
    let p = &cfg.model;
    let shape = NetworkShape { input: ROBOT_DIM, hidden: p.hidden.clone(), output: ROBOT_DIM };
    let mut nets = Vec::new();
    for (i, (role, pairs)) in training_pairs(&spec, data)?.into_iter().enumerate() {
        let (input_range, output_range) = pairs.ranges()?;
        let seqs = pairs.normalized(&input_range, &output_range);
        let (window, period_ms) = match role {
            NetRole::Low => (seqs.iter().map(|s| s.len()).min().unwrap_or(0), spec.rates.slow_ms as f64),
            _ => (p.window, spec.rates.base_ms as f64),
        };
        let settings = TrainSettings {
            epochs: p.epochs,
            batch: p.batch,
            window,
            learning_rate: p.learning_rate,
            seed: p.seed.wrapping_mul(16).wrapping_add(i as u64),
        };
        let (params, _) = train_network(&shape, &seqs, &settings, |e, l| progress(role, e, l))?;
        if !params.is_finite() {
            return Err(Error::NonFinite("trained weights"));
        }
        nets.push(TrainedNet { role, period_ms, params, input_range, output_range });
    }
    Ok(Model { spec, nets, master_range: master_range(data)?, train: p.clone() })
}

/// One predictor output, with MD's two paths kept apart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub master: [f64; ROBOT_DIM],
    pub high: Option<[f64; ROBOT_DIM]>,
    pub low: Option<[f64; ROBOT_DIM]>,
}

/// Real-time inference state for one run.
#[derive(Debug, Clone)]
pub struct Predictor<'m> {
    model: Cow<'m, Model>,
    hidden: Vec<HiddenState>,
    tick: u64,
    factor: u64,
    low_filter: [OnlineLowpass; ROBOT_DIM],
    low_input: [f64; ROBOT_DIM],
    low_output: [f64; ROBOT_DIM],
    held: [f64; ROBOT_DIM],
    /// Hidden-state advances per network, in `model.nets` order.
    pub updates: Vec<u64>,
}

impl<'m> Predictor<'m> {
    pub fn new(model: &'m Model) -> Self {
        Self::from_cow(Cow::Borrowed(model))
    }

    /// Predictor that owns its model.
    pub fn owned(model: Model) -> Predictor<'static> {
        Predictor::from_cow(Cow::Owned(model))
    }

    fn from_cow(model: Cow<'m, Model>) -> Self {
        let dt = model.spec.rates.base_s();
        let hidden = model.nets.iter().map(|n| HiddenState::zeros(&n.params)).collect();
        let factor = model.spec.rates.factor() as u64;
        let low_filter = [OnlineLowpass::new(model.spec.g_low, dt); ROBOT_DIM];
        let updates = vec![0; model.nets.len()];
        Predictor {
            model,
            hidden,
            tick: 0,
            factor,
            low_filter,
            low_input: [0.0; ROBOT_DIM],
            low_output: [0.0; ROBOT_DIM],
            held: [0.0; ROBOT_DIM],
            updates,
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    fn run(&mut self, idx: usize, x: &[f64; ROBOT_DIM]) -> Result<[f64; ROBOT_DIM]> {
        self.updates[idx] += 1;
        self.model.nets[idx].step(&mut self.hidden[idx], x)
    }

    /// Consume the slave's raw `(th, th', tau)` at the current fast tick.
    pub fn step(&mut self, slave: &[f64; ROBOT_DIM]) -> Result<Prediction> {
        if slave.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("slave observation"));
        }
        let slow_tick = self.tick.is_multiple_of(self.factor);
        let out = match self.model.spec.kind {
            ModelKind::Conv => {
                let y = self.run(0, slave)?;
                Prediction { master: y, high: None, low: None }
            }
            ModelKind::Plt => {
                if slow_tick {
                    self.held = *slave;
                }
                let x = plt_input(&self.held, slave, self.model.spec.held_channels());
                let y = self.run(0, &x)?;
                Prediction { master: y, high: None, low: None }
            }
            ModelKind::Md => {
                let mut filtered = [0.0; ROBOT_DIM];
                for i in 0..ROBOT_DIM {
                    filtered[i] = self.low_filter[i].update(slave[i]);
                }
                let (hi_idx, lo_idx) = self.md_indices()?;
                if slow_tick {
                    self.low_input = filtered;
                    let x = self.low_input;
                    self.low_output = self.run(lo_idx, &x)?;
                }
                let x = match self.model.spec.high_path {
                    HighPath::Residual => std::array::from_fn(|i| slave[i] - self.low_input[i]),
                    HighPath::Raw => *slave,
                };
                let high = self.run(hi_idx, &x)?;
                let low = self.low_output;
                Prediction {
                    master: std::array::from_fn(|i| high[i] + low[i]),
                    high: Some(high),
                    low: Some(low),
                }
            }
        };
        self.tick += 1;
        Ok(out)
    }

    fn md_indices(&self) -> Result<(usize, usize)> {
        let find = |role| {
            self.model
                .nets
                .iter()
                .position(|n| n.role == role)
                .ok_or_else(|| Error::Config(format!("MD model missing {role:?} network")))
        };
        Ok((find(NetRole::High)?, find(NetRole::Low)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TrialMeta;
    use crate::signal::magnitude_spectrum;

    fn trial_from(f: impl Fn(usize, usize) -> f64, n: usize) -> Trial {
        Trial::new(
            TrialMeta {
                trial_id: "s".into(),
                height_mm: 40.0,
                seed: 0,
                period_ms: 20.0,
                duration_s: n as f64 * 0.02,
            },
            (0..n).map(|k| std::array::from_fn(|c| f(k, c))).collect(),
        )
        .unwrap()
    }

    fn synthetic_dataset(trials: usize) -> Dataset {
        Dataset {
            trials: (0..trials)
                .map(|j| {
                    trial_from(
                        |k, c| {
                            let t = k as f64 * 0.02;
                            (0.8 * t + c as f64 * 0.3 + j as f64).sin() + 0.05 * (9.0 * t + c as f64).cos()
                        },
                        750,
                    )
                })
                .collect(),
        }
    }

    fn spec(kind: ModelKind) -> ModelSpec {
        ModelSpec::new(kind, &Config::default()).unwrap()
    }

    fn band_energy(bands: &BandSplitTrial, ch: usize) -> (f64, f64) {
        let n = bands.high.len();
        let low: Vec<f64> = bands.low.iter().map(|r| r[ch]).collect();
        let held = hold_upsample(&low, bands.factor, n);
        let e = |v: &[f64]| magnitude_spectrum(v, 0.02).unwrap().iter().map(|(_, m)| m * m).sum::<f64>();
        let high: Vec<f64> = bands.high.iter().map(|r| r[ch]).collect();
        (e(&held), e(&high))
    }

    #[test]
    fn constant_trial_has_no_high_band() {
        let t = trial_from(|_, c| 0.25 * c as f64 - 1.0, 750);
        let b = split_bands(&t, spec(ModelKind::Md).g_low, &RateSpec::default()).unwrap();
        assert_eq!(b.low.len(), 38);
        for (k, r) in b.low.iter().enumerate() {
            for c in 0..TRIAL_CHANNELS {
                assert!((r[c] - (0.25 * c as f64 - 1.0)).abs() < 1e-12, "low {k} {c}");
            }
        }
        assert!(b.high.iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn slow_sinusoid_lands_in_the_low_band() {
        let t = trial_from(|k, _| (0.5 * k as f64 * 0.02).sin(), 3000);
        let b = split_bands(&t, spec(ModelKind::Md).g_low, &RateSpec::default()).unwrap();
        let (lo, hi) = band_energy(&b, 0);
        assert!(lo / (lo + hi) >= 0.95, "{}", lo / (lo + hi));
    }

    #[test]
    fn fast_sinusoid_lands_in_the_high_band() {
        let t = trial_from(|k, _| (50.0 * k as f64 * 0.02).sin(), 3000);
        let b = split_bands(&t, spec(ModelKind::Md).g_low, &RateSpec::default()).unwrap();
        let (lo, hi) = band_energy(&b, 0);
        assert!(hi / (lo + hi) >= 0.90, "{}", hi / (lo + hi));
    }

    #[test]
    fn bands_reconstruct_the_trial() {
        let d = synthetic_dataset(1);
        let b = split_bands(&d.trials[0], spec(ModelKind::Md).g_low, &RateSpec::default()).unwrap();
        for (r, o) in b.reconstruct().iter().zip(&d.trials[0].rows) {
            for c in 0..TRIAL_CHANNELS {
                assert!((r[c] - o[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn split_rejects_short_trials() {
        let t = trial_from(|_, _| 0.0, 10);
        assert!(split_bands(&t, 7.85, &RateSpec::default()).is_err());
    }

    #[test]
    fn conv_has_749_pairs_per_trial() {
        let d = synthetic_dataset(2);
        let pairs = training_pairs(&spec(ModelKind::Conv), &d).unwrap();
        assert_eq!(pairs.len(), 1);
        let set = &pairs[0].1;
        assert_eq!(set.inputs[0].len(), 749);
        assert_eq!(set.inputs[0][5], split(&d.trials[0].rows[5]).1);
        assert_eq!(set.targets[0][5], split(&d.trials[0].rows[6]).0);
    }

    #[test]
    fn plt_inputs_hold_positions_for_twenty_ticks() {
        let d = synthetic_dataset(1);
        let pairs = training_pairs(&spec(ModelKind::Plt), &d).unwrap();
        let input = &pairs[0].1.inputs[0];
        for t in 0..input.len() {
            let base = t - t % 20;
            for c in 0..POSITION_CHANNELS {
                assert_eq!(input[t][c], input[base][c]);
            }
            for c in POSITION_CHANNELS..ROBOT_DIM {
                assert_eq!(input[t][c], d.trials[0].rows[t][ROBOT_DIM + c]);
            }
        }
        let mut s = spec(ModelKind::Plt);
        s.hold_velocity = false;
        let live = &training_pairs(&s, &d).unwrap()[0].1.inputs[0];
        assert_ne!(live[1][3], live[0][3]);
    }

    #[test]
    fn md_low_band_has_38_samples_and_37_pairs() {
        let d = synthetic_dataset(2);
        let pairs = training_pairs(&spec(ModelKind::Md), &d).unwrap();
        let low = &pairs.iter().find(|p| p.0 == NetRole::Low).unwrap().1;
        assert_eq!(low.inputs[0].len(), 37);
        let b = split_bands(&d.trials[0], spec(ModelKind::Md).g_low, &RateSpec::default()).unwrap();
        assert_eq!(b.low.len(), 38);
        let high = &pairs.iter().find(|p| p.0 == NetRole::High).unwrap().1;
        assert_eq!(high.inputs[0].len(), 749);
    }

    #[test]
    fn md_targets_complement_the_held_low_prediction() {
        let d = synthetic_dataset(1);
        let s = spec(ModelKind::Md);
        let pairs = training_pairs(&s, &d).unwrap();
        let high = &pairs[0].1;
        let low = &pairs[1].1;
        // Low target k is the low band at k + 1; sum with the high target gives master[t + 1].
        for t in [0usize, 19, 20, 385, 700] {
            let k = t / 20;
            for i in 0..ROBOT_DIM {
                let sum = high.targets[0][t][i] + low.targets[0][k][i];
                assert!((sum - d.trials[0].rows[t + 1][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn md_cutoff_must_follow_the_slow_rate() {
        let mut s = spec(ModelKind::Md);
        assert!((s.g_low - 7.853981633974483).abs() < 1e-15);
        s.validate().unwrap();
        s.g_low = 8.0;
        assert!(s.validate().is_err());
    }

    fn tiny_model(kind: ModelKind) -> Model {
        let mut cfg = Config::default();
        cfg.model.hidden = vec![4];
        cfg.model.epochs = 3;
        cfg.model.batch = 2;
        cfg.model.window = 30;
        train(kind, &synthetic_dataset(2), &cfg, |_, _, _| {}).unwrap()
    }

    fn obs(t: u64) -> [f64; ROBOT_DIM] {
        std::array::from_fn(|i| ((t as f64) * 0.05 + i as f64).sin())
    }

    #[test]
    fn md_low_path_is_held_between_slow_ticks_and_sums_exactly() {
        let m = tiny_model(ModelKind::Md);
        let mut p = Predictor::new(&m);
        let mut prev_low = None;
        for t in 0..100u64 {
            let y = p.step(&obs(t)).unwrap();
            let (hi, lo) = (y.high.unwrap(), y.low.unwrap());
            for i in 0..ROBOT_DIM {
                assert_eq!(y.master[i], hi[i] + lo[i]);
            }
            if t % 20 != 0 {
                assert_eq!(Some(lo), prev_low);
            }
            prev_low = Some(lo);
        }
        let hi_idx = m.nets.iter().position(|n| n.role == NetRole::High).unwrap();
        assert_eq!(p.updates[hi_idx], 100);
        assert_eq!(p.updates[1 - hi_idx], 5);
    }

    #[test]
    fn plt_with_frozen_state_repeats_itself_within_a_hold_window() {
        let m = tiny_model(ModelKind::Plt);
        let mut p = Predictor::new(&m);
        p.step(&obs(0)).unwrap();
        let frozen = p.clone();
        let mut a = frozen.clone();
        let mut b = frozen;
        // Tick 1 and tick 2 from the same state, different angles, same torques.
        let mut x = obs(1);
        let ya = a.step(&x).unwrap();
        x[0] += 0.3;
        x[4] -= 0.2;
        let yb = b.step(&x).unwrap();
        assert_eq!(ya, yb);
        assert_eq!(p.updates, vec![1]);
    }

    #[test]
    fn conv_output_has_nine_channels_and_updates_every_tick() {
        let m = tiny_model(ModelKind::Conv);
        let mut p = Predictor::new(&m);
        for t in 0..40 {
            assert_eq!(p.step(&obs(t)).unwrap().master.len(), 9);
        }
        assert_eq!(p.updates, vec![40]);
        let mut bad = obs(0);
        bad[2] = f64::NAN;
        assert!(p.step(&bad).is_err());
    }
}
