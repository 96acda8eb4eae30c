use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adam_step, bptt_gradients, sample_minibatch, AdamState, NetworkParams, NetworkShape, Sequence};
use crate::error::Result;

/// Mini-batch Adam schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    /// Number of mini-batch updates.
    pub epochs: usize,
    pub batch: usize,
    pub window: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

/// Fit a fresh network to `data`; `on_epoch(epoch, loss)` is called after every update.
pub fn train_network<F>(
    shape: &NetworkShape,
    data: &[Sequence],
    settings: &TrainSettings,
    mut on_epoch: F,
) -> Result<(NetworkParams, Vec<f64>)>
where
    F: FnMut(usize, f64),
{
    let mut params = NetworkParams::init(shape, settings.seed);
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0xbb67_ae85_84ca_a73b);
    let mut history = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        let batch = sample_minibatch(data, settings.window, settings.batch, &mut rng)?;
        let (grads, loss) = bptt_gradients(&params, &batch)?;
        adam_step(&mut params, &grads, &mut adam, settings.learning_rate);
        history.push(loss);
        on_epoch(epoch, loss);
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::batch_loss;
    use crate::nnet::Window;
    use ndarray::Array2;

    fn tiny() -> Vec<Sequence> {
        (0..4)
            .map(|k| {
                let ph = k as f64 * 0.7;
                Sequence {
                    input: Array2::from_shape_fn((40, 3), |(t, c)| (0.2 * t as f64 + ph + c as f64).sin() * 0.5 + 0.5),
                    target: Array2::from_shape_fn((40, 2), |(t, c)| (0.2 * (t + 1) as f64 + ph + c as f64).sin() * 0.5 + 0.5),
                }
            })
            .collect()
    }

    #[test]
    fn two_hundred_steps_halve_the_loss() {
        let data = tiny();
        let shape = NetworkShape { input: 3, hidden: vec![8, 8], output: 2 };
        let settings = TrainSettings { epochs: 200, batch: 8, window: 20, learning_rate: 1e-2, seed: 4 };
        let full: Vec<Window> = data
            .iter()
            .map(|s| Window { input: s.input.clone(), target: s.target.clone() })
            .collect();
        let before = batch_loss(&NetworkParams::init(&shape, 4), &full).unwrap();
        let (params, hist) = train_network(&shape, &data, &settings, |_, _| {}).unwrap();
        let after = batch_loss(&params, &full).unwrap();
        assert_eq!(hist.len(), 200);
        assert!(after < 0.5 * before, "{before} -> {after}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny();
        let shape = NetworkShape { input: 3, hidden: vec![4], output: 2 };
        let settings = TrainSettings { epochs: 20, batch: 4, window: 10, learning_rate: 1e-2, seed: 9 };
        let a = train_network(&shape, &data, &settings, |_, _| {}).unwrap();
        let b = train_network(&shape, &data, &settings, |_, _| {}).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }
}
