//! Pre-processing: anti-alias / band-split low-pass filters, decimation,
//! min-max normalization and magnitude spectra.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Low-pass cutoff that satisfies the sampling theorem for a resampled period: `pi / st_d`.
pub fn design_lpf_cutoff(st_d: f64) -> Result<f64> {
    if !(st_d > 0.0) || !st_d.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "resampled period must be > 0, got {st_d}"
        )));
    }
    Ok(PI / st_d)
}

/// Fast/slow sampling periods for the multi-rate models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateSpec {
    /// Fast period in ms.
    pub base_ms: u32,
    /// Slow period in ms.
    pub slow_ms: u32,
}

impl Default for RateSpec {
    fn default() -> Self {
        RateSpec {
            base_ms: 20,
            slow_ms: 400,
        }
    }
}

impl RateSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_ms == 0 || self.slow_ms == 0 || !self.slow_ms.is_multiple_of(self.base_ms) {
            return Err(Error::Config(format!(
                "slow period {} ms must be a positive multiple of {} ms",
                self.slow_ms, self.base_ms
            )));
        }
        Ok(())
    }

    pub fn factor(&self) -> usize {
        (self.slow_ms / self.base_ms) as usize
    }

    pub fn base_s(&self) -> f64 {
        self.base_ms as f64 * 1e-3
    }

    pub fn slow_s(&self) -> f64 {
        self.slow_ms as f64 * 1e-3
    }
}

/// Coefficients of one bilinear first-order low-pass section.
#[derive(Debug, Clone, Copy)]
struct FirstOrder {
    b: f64,
    a: f64,
}

impl FirstOrder {
    /// Section whose forward-backward cascade is -3 dB at `cutoff`.
    fn for_zero_phase(cutoff: f64, dt: f64) -> Self {
        // Each pass contributes half the attenuation: |H1(wc)|^2 = 1/sqrt(2).
        let k = (cutoff * dt / 2.0).tan() / (2f64.sqrt() - 1.0).sqrt();
        FirstOrder {
            b: k / (1.0 + k),
            a: (k - 1.0) / (1.0 + k),
        }
    }

    fn run(&self, x: &mut [f64]) {
        let mut prev_x = x[0];
        let mut prev_y = x[0];
        for v in x.iter_mut() {
            let y = self.b * (*v + prev_x) - self.a * prev_y;
            prev_x = *v;
            prev_y = y;
            *v = y;
        }
    }
}

/// Zero-phase low-pass (first-order section run forward then backward).
pub fn lowpass(seq: &[f64], cutoff: f64, dt: f64) -> Result<Vec<f64>> {
    if seq.is_empty() {
        return Err(Error::InvalidArgument("lowpass of empty sequence".into()));
    }
    if !(cutoff > 0.0 && dt > 0.0 && cutoff * dt < PI) {
        return Err(Error::InvalidArgument(format!(
            "cutoff {cutoff} rad/s with dt {dt} s violates 0 < g dt < pi"
        )));
    }
    let section = FirstOrder::for_zero_phase(cutoff, dt);
    let mut out = seq.to_vec();
    section.run(&mut out);
    out.reverse();
    section.run(&mut out);
    out.reverse();
    Ok(out)
}

/// Causal first-order low-pass for online use (backward Euler, starts at the first sample).
#[derive(Debug, Clone, Copy)]
pub struct OnlineLowpass {
    alpha: f64,
    state: Option<f64>,
}

impl OnlineLowpass {
    pub fn new(cutoff: f64, dt: f64) -> Self {
        OnlineLowpass {
            alpha: cutoff * dt / (1.0 + cutoff * dt),
            state: None,
        }
    }

    pub fn update(&mut self, x: f64) -> f64 {
        let y = match self.state {
            None => x,
            Some(prev) => prev + self.alpha * (x - prev),
        };
        self.state = Some(y);
        y
    }
}

/// Keep every `factor`-th sample starting at index 0.
pub fn decimate<T: Copy>(seq: &[T], factor: usize) -> Result<Vec<T>> {
    if factor < 1 {
        return Err(Error::InvalidArgument("decimation factor must be >= 1".into()));
    }
    Ok(seq.iter().step_by(factor).copied().collect())
}

/// Zero-order-hold reconstruction of a decimated sequence onto `len` fine samples.
pub fn hold_upsample(coarse: &[f64], factor: usize, len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| coarse[(i / factor).min(coarse.len() - 1)])
        .collect()
}

/// Linear-interpolation reconstruction of a decimated sequence onto `len` fine samples.
pub fn linear_upsample(coarse: &[f64], factor: usize, len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let k = i / factor;
            if k + 1 >= coarse.len() {
                return coarse[coarse.len() - 1];
            }
            let frac = (i % factor) as f64 / factor as f64;
            coarse[k] + (coarse[k + 1] - coarse[k]) * frac
        })
        .collect()
}

/// Per-channel `[d_min, d_max]` taken from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ChannelRange {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        let r = ChannelRange { min, max };
        r.validate()?;
        Ok(r)
    }

    /// Extrema over rows of equal-width samples.
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut min: Vec<f64> = Vec::new();
        let mut max: Vec<f64> = Vec::new();
        for row in rows {
            if min.is_empty() {
                min = row.to_vec();
                max = row.to_vec();
                continue;
            }
            if row.len() != min.len() {
                return Err(Error::Shape {
                    expected: format!("{} channels", min.len()),
                    got: format!("{} channels", row.len()),
                });
            }
            for (i, &v) in row.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        Self::new(min, max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.len() != self.max.len() || self.min.is_empty() {
            return Err(Error::Config("channel range needs equal, nonempty bounds".into()));
        }
        for (i, (lo, hi)) in self.min.iter().zip(&self.max).enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!(
                    "degenerate range on channel {i}: [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    pub fn span(&self, ch: usize) -> f64 {
        self.max[ch] - self.min[ch]
    }

    /// Sub-range for channels `lo..hi`.
    pub fn slice(&self, lo: usize, hi: usize) -> ChannelRange {
        ChannelRange {
            min: self.min[lo..hi].to_vec(),
            max: self.max[lo..hi].to_vec(),
        }
    }

    pub fn normalize_row(&self, row: &[f64], out: &mut [f64]) {
        for i in 0..self.len() {
            out[i] = normalize(row[i], self.min[i], self.max[i]);
        }
    }

    pub fn denormalize_row(&self, row: &[f64], out: &mut [f64]) {
        for i in 0..self.len() {
            out[i] = denormalize(row[i], self.min[i], self.max[i]);
        }
    }
}

/// `(d - d_min) / (d_max - d_min)`, unclamped.
pub fn normalize(d: f64, d_min: f64, d_max: f64) -> f64 {
    (d - d_min) / (d_max - d_min)
}

/// `d_n (d_max - d_min) + d_min`.
pub fn denormalize(d_n: f64, d_min: f64, d_max: f64) -> f64 {
    d_n * (d_max - d_min) + d_min
}

/// One-sided DFT magnitude of the mean-removed sequence; frequencies in rad/s.
pub fn magnitude_spectrum(seq: &[f64], dt: f64) -> Result<Vec<(f64, f64)>> {
    if seq.len() < 2 {
        return Err(Error::InvalidArgument("spectrum needs at least 2 samples".into()));
    }
    let n = seq.len();
    let mean = seq.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = seq.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let dw = 2.0 * PI / (n as f64 * dt);
    Ok(buf[..=n / 2]
        .iter()
        .enumerate()
        .map(|(k, c)| (k as f64 * dw, c.norm()))
        .collect())
}

/// Fraction of spectral energy (sum of squared magnitudes) strictly below `omega`.
pub fn energy_fraction_below(spectrum: &[(f64, f64)], omega: f64) -> f64 {
    let total: f64 = spectrum.iter().map(|(_, m)| m * m).sum();
    if total == 0.0 {
        return 0.0;
    }
    spectrum
        .iter()
        .filter(|(w, _)| *w < omega)
        .map(|(_, m)| m * m)
        .sum::<f64>()
        / total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(omega: f64, dt: f64, seconds: f64) -> Vec<f64> {
        (0..(seconds / dt) as usize)
            .map(|k| (omega * k as f64 * dt).sin())
            .collect()
    }

    /// Peak amplitude over the middle half, away from edge effects.
    fn mid_amplitude(x: &[f64]) -> f64 {
        let n = x.len();
        x[n / 4..3 * n / 4].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn cutoff_for_400ms() {
        let g = design_lpf_cutoff(0.4).unwrap();
        assert_eq!(g, PI / 0.4);
        assert_eq!(format!("{g:.2}"), "7.85");
    }

    #[test]
    fn cutoff_unit_and_fast_periods() {
        assert_eq!(design_lpf_cutoff(1.0).unwrap(), PI);
        assert!((design_lpf_cutoff(0.02).unwrap() - 157.079_632_679_489_66).abs() < 1e-9);
        assert!(design_lpf_cutoff(0.0).is_err());
        assert!(design_lpf_cutoff(-1.0).is_err());
    }

    #[test]
    fn lowpass_keeps_constants() {
        let y = lowpass(&[2.5; 200], 7.85, 0.02).unwrap();
        assert!(y.iter().all(|v| (v - 2.5).abs() < 1e-12));
        assert!(lowpass(&[], 1.0, 0.1).is_err());
    }

    #[test]
    fn lowpass_is_minus_3db_at_cutoff() {
        let (g, dt) = (7.85, 0.02);
        let y = lowpass(&sine(g, dt, 60.0), g, dt).unwrap();
        let db = 20.0 * mid_amplitude(&y).log10();
        assert!((db + 3.0).abs() < 0.5, "{db} dB");
    }

    #[test]
    fn lowpass_rejects_a_decade_above() {
        let (g, dt) = (7.85, 0.002);
        let y = lowpass(&sine(10.0 * g, dt, 10.0), g, dt).unwrap();
        let db = 20.0 * mid_amplitude(&y).log10();
        assert!(db <= -20.0, "{db} dB");
    }

    #[test]
    fn decimate_lengths() {
        let x: Vec<usize> = (0..750).collect();
        let d = decimate(&x, 20).unwrap();
        assert_eq!(d.len(), 38);
        assert_eq!(d[1], 20);
        assert_eq!(*d.last().unwrap(), 740);
        assert_eq!(decimate(&vec![0.0; 15_000], 20).unwrap().len(), 750);
        assert_eq!(decimate(&x, 1).unwrap(), x);
        assert!(decimate(&x, 0).is_err());
    }

    #[test]
    fn band_limited_signal_survives_filter_and_decimation() {
        // 20 ms samples, factor 20: content at 1 rad/s is far below pi / 0.4.
        let dt = 0.02;
        let x: Vec<f64> = (0..1500)
            .map(|k| {
                let t = k as f64 * dt;
                (1.0 * t).sin() + 0.5 * (0.4 * t + 1.0).cos()
            })
            .collect();
        let low = lowpass(&x, design_lpf_cutoff(0.4).unwrap(), dt).unwrap();
        let coarse = decimate(&low, 20).unwrap();
        let back = linear_upsample(&coarse, 20, x.len());
        let n = x.len() - 20;
        let err: f64 = (0..n).map(|i| (back[i] - x[i]).powi(2)).sum::<f64>() / n as f64;
        let pow: f64 = x[..n].iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((err / pow).sqrt() < 0.05, "{}", (err / pow).sqrt());
    }

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize(-2.0, -2.0, 3.0), 0.0);
        assert_eq!(normalize(3.0, -2.0, 3.0), 1.0);
        assert!(normalize(4.0, -2.0, 3.0) > 1.0);
        assert!(ChannelRange::new(vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn range_fit_takes_extrema() {
        let rows = [vec![1.0, -1.0], vec![3.0, 0.5], vec![2.0, -4.0]];
        let r = ChannelRange::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        assert_eq!(r.min, vec![1.0, -4.0]);
        assert_eq!(r.max, vec![3.0, 0.5]);
    }

    #[test]
    fn spectrum_peaks_at_tone() {
        let dt = 0.02;
        let n = 1000;
        // bin 25 exactly
        let omega = 2.0 * PI * 25.0 / (n as f64 * dt);
        let x: Vec<f64> = (0..n).map(|k| (omega * k as f64 * dt).sin() + 3.0).collect();
        let s = magnitude_spectrum(&x, dt).unwrap();
        let (w, _) = s
            .iter()
            .copied()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        assert!((w - omega).abs() < 1e-9);
        assert!(s[0].1 < 1e-9);
    }

    #[test]
    fn spectrum_of_constant_is_zero() {
        let s = magnitude_spectrum(&[4.0; 64], 0.01).unwrap();
        assert!(s.iter().all(|(_, m)| *m < 1e-12));
        assert!(magnitude_spectrum(&[1.0], 0.01).is_err());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn denormalize_inverts_normalize(d in -1e3f64..1e3, lo in -10.0f64..0.0, span in 1e-3f64..50.0) {
            let hi = lo + span;
            let back = denormalize(normalize(d, lo, hi), lo, hi);
            prop_assert!((back - d).abs() <= 1e-12 * d.abs().max(1.0));
        }

        #[test]
        fn normalize_is_monotone(a in -100.0f64..100.0, b in -100.0f64..100.0, lo in -5.0f64..0.0, span in 0.1f64..10.0) {
            let hi = lo + span;
            if a < b {
                prop_assert!(normalize(a, lo, hi) < normalize(b, lo, hi));
            }
        }

        #[test]
        fn cutoff_times_period_is_pi(st in 1e-3f64..10.0) {
            let g = design_lpf_cutoff(st).unwrap();
            prop_assert!((g * st - PI).abs() <= 4.0 * f64::EPSILON * PI);
        }
    }
}
