//! Time-synchronized master/slave records and their CSV file format.
//!
//! ```text
//! # format: bilateral-il-trial
//! # version: 1
//! # trial_id: h040_t03
//! # height_mm: 40
//! # seed: 3
//! # period_ms: 1
//! # duration_s: 15
//! t_ms,m_th1,m_th2,m_th3,m_dth1,...,m_tau3,s_th1,...,s_tau3
//! 0,1.2345678901234567e-1,...
//! ```
//!
//! Values are written with 17 significant digits so a save/load cycle is
//! bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::{RobotSample, ROBOT_CHANNELS};

pub const TRIAL_FORMAT: &str = "bilateral-il-trial";
pub const TRIAL_VERSION: u32 = 1;
/// Master 9 + slave 9.
pub const TRIAL_CHANNELS: usize = 18;

pub type TrialRow = [f64; TRIAL_CHANNELS];

#[derive(Debug, Clone, PartialEq)]
pub struct TrialMeta {
    pub trial_id: String,
    pub height_mm: f64,
    pub seed: u64,
    pub period_ms: f64,
    pub duration_s: f64,
}

impl TrialMeta {
    /// Samples a trial with this duration and period holds.
    pub fn expected_rows(&self) -> usize {
        (self.duration_s * 1000.0 / self.period_ms).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub meta: TrialMeta,
    /// Row `k` is the tick at `k * period_ms`; columns 0..9 master, 9..18 slave.
    pub rows: Vec<TrialRow>,
}

/// Column names after `t_ms`.
pub fn channel_names() -> Vec<String> {
    ["m", "s"]
        .iter()
        .flat_map(|side| ROBOT_CHANNELS.iter().map(move |c| format!("{side}_{c}")))
        .collect()
}

impl Trial {
    pub fn new(meta: TrialMeta, rows: Vec<TrialRow>) -> Result<Self> {
        if !(meta.period_ms > 0.0) {
            return Err(Error::InvalidArgument("trial period must be > 0".into()));
        }
        if rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("trial sample"));
        }
        let expected = meta.expected_rows();
        if rows.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "{} rows do not span {} s at {} ms",
                rows.len(),
                meta.duration_s,
                meta.period_ms
            )));
        }
        Ok(Trial { meta, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn master(&self, k: usize) -> &[f64] {
        &self.rows[k][..9]
    }

    pub fn slave(&self, k: usize) -> &[f64] {
        &self.rows[k][9..]
    }

    pub fn master_sample(&self, k: usize) -> RobotSample {
        RobotSample::from_slice(self.master(k))
    }

    pub fn slave_sample(&self, k: usize) -> RobotSample {
        RobotSample::from_slice(self.slave(k))
    }

    pub fn channel(&self, ch: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[ch]).collect()
    }

    pub fn t_ms(&self, k: usize) -> f64 {
        k as f64 * self.meta.period_ms
    }

    pub fn to_csv(&self) -> String {
        let m = &self.meta;
        let mut out = String::new();
        let _ = writeln!(out, "# format: {TRIAL_FORMAT}");
        let _ = writeln!(out, "# version: {TRIAL_VERSION}");
        let _ = writeln!(out, "# trial_id: {}", m.trial_id);
        let _ = writeln!(out, "# height_mm: {}", m.height_mm);
        let _ = writeln!(out, "# seed: {}", m.seed);
        let _ = writeln!(out, "# period_ms: {}", m.period_ms);
        let _ = writeln!(out, "# duration_s: {}", m.duration_s);
        let _ = writeln!(out, "t_ms,{}", channel_names().join(","));
        for (k, row) in self.rows.iter().enumerate() {
            let _ = write!(out, "{}", self.t_ms(k));
            for v in row {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, path)
    }

    /// Parse CSV text; `path` is only used in error messages.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: PathBuf::from(path),
            line,
            msg,
        };
        let mut fields: Vec<(String, String)> = Vec::new();
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
        while let Some((_, l)) = lines.peek() {
            let Some(rest) = l.strip_prefix('#') else { break };
            let (n, _) = lines.next().unwrap();
            let (k, v) = rest
                .split_once(':')
                .ok_or_else(|| err(n, "metadata line without ':'".into()))?;
            fields.push((k.trim().to_string(), v.trim().to_string()));
        }
        let get = |key: &str| fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let need = |key: &str| get(key).ok_or_else(|| err(1, format!("missing metadata '{key}'")));
        if need("format")? != TRIAL_FORMAT {
            return Err(err(1, format!("not a trial file (format '{}')", need("format")?)));
        }
        let version = need("version")?;
        if version != TRIAL_VERSION.to_string() {
            return Err(Error::Version {
                found: version.to_string(),
                expected: TRIAL_VERSION.to_string(),
            });
        }
        let num = |key: &str| -> Result<f64> {
            need(key)?
                .parse::<f64>()
                .map_err(|e| err(1, format!("metadata '{key}': {e}")))
        };
        let meta = TrialMeta {
            trial_id: need("trial_id")?.to_string(),
            height_mm: num("height_mm")?,
            seed: need("seed")?
                .parse()
                .map_err(|e| err(1, format!("metadata 'seed': {e}")))?,
            period_ms: num("period_ms")?,
            duration_s: num("duration_s")?,
        };

        let (hline, header) = lines.next().ok_or_else(|| err(fields.len() + 1, "missing header".into()))?;
        let expected_header = format!("t_ms,{}", channel_names().join(","));
        if header.trim_end() != expected_header {
            return Err(err(hline, "unexpected column header".into()));
        }

        let mut rows = Vec::new();
        let mut last_line = hline;
        for (n, l) in lines {
            last_line = n;
            if l.is_empty() {
                continue;
            }
            let cols: Vec<&str> = l.split(',').collect();
            if cols.len() != TRIAL_CHANNELS + 1 {
                return Err(err(n, format!("expected {} columns, found {}", TRIAL_CHANNELS + 1, cols.len())));
            }
            let t: f64 = cols[0].parse().map_err(|e| err(n, format!("t_ms: {e}")))?;
            let expect_t = rows.len() as f64 * meta.period_ms;
            if (t - expect_t).abs() > 1e-6 * meta.period_ms.max(1.0) {
                return Err(err(n, format!("time stamp {t} out of sequence (expected {expect_t})")));
            }
            let mut row = [0.0; TRIAL_CHANNELS];
            for (i, c) in cols[1..].iter().enumerate() {
                row[i] = c.parse().map_err(|e| err(n, format!("column {}: {e}", i + 1)))?;
            }
            rows.push(row);
        }
        let expected_rows = meta.expected_rows();
        if rows.len() != expected_rows {
            return Err(err(
                last_line,
                format!("expected {expected_rows} rows, found {} (truncated file?)", rows.len()),
            ));
        }
        Trial::new(meta, rows).map_err(|e| err(last_line, e.to_string()))
    }
}
