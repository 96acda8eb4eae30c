use ndarray::{s, Array2};
use rand::Rng;

use crate::error::{Error, Result};

/// An aligned input/target sequence (targets already shifted to the prediction horizon).
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub input: Array2<f64>,
    pub target: Array2<f64>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.input.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.input.nrows() == 0
    }
}

/// A contiguous training slice of a [`Sequence`].
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub input: Array2<f64>,
    pub target: Array2<f64>,
}

/// Mini-batch: for each of `batch` draws pick a sequence uniformly, then a
/// uniform start in `[0, len - window]`; draws are with replacement.
pub fn sample_minibatch<R: Rng + ?Sized>(
    data: &[Sequence],
    window: usize,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<Window>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if let Some((i, s)) = data.iter().enumerate().find(|(_, s)| s.len() < window) {
        return Err(Error::InvalidArgument(format!(
            "sequence {i} has {} samples, shorter than window {window}",
            s.len()
        )));
    }
    Ok((0..batch)
        .map(|_| {
            let seq = &data[rng.random_range(0..data.len())];
            let start = rng.random_range(0..=seq.len() - window);
            Window {
                input: seq.input.slice(s![start..start + window, ..]).to_owned(),
                target: seq.target.slice(s![start..start + window, ..]).to_owned(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// 45 sequences of 750 steps; input column 0 carries the absolute step index.
    fn dataset() -> Vec<Sequence> {
        (0..45)
            .map(|k| Sequence {
                input: Array2::from_shape_fn((750, 9), |(t, c)| if c == 0 { t as f64 } else { k as f64 }),
                target: Array2::zeros((750, 9)),
            })
            .collect()
    }

    #[test]
    fn batch_has_100_windows_of_300() {
        let data = dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_minibatch(&data, 300, 100, &mut rng).unwrap();
        assert_eq!(b.len(), 100);
        assert!(b.iter().all(|w| w.input.dim() == (300, 9) && w.target.dim() == (300, 9)));
    }

    #[test]
    fn starts_stay_in_range_and_windows_are_contiguous() {
        let data = dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut max_start = 0.0f64;
        for _ in 0..50 {
            for w in sample_minibatch(&data, 300, 100, &mut rng).unwrap() {
                let start = w.input[[0, 0]];
                assert!((0.0..=450.0).contains(&start));
                assert_eq!(w.input[[299, 0]], start + 299.0);
                max_start = max_start.max(start);
            }
        }
        assert!(max_start > 400.0);
    }

    #[test]
    fn same_seed_same_batch() {
        let data = dataset();
        let a = sample_minibatch(&data, 300, 100, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = sample_minibatch(&data, 300, 100, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_short_sequence() {
        let mut data = dataset();
        data[3].input = Array2::zeros((299, 9));
        data[3].target = Array2::zeros((299, 9));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_minibatch(&data, 300, 100, &mut rng).is_err());
    }
}
