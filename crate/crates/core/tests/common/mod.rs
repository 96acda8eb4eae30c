//! Oracles shared by the integration targets.
use bilateral_il::nnet::{batch_loss, bptt_gradients, NetworkParams, NetworkShape, Window};
use ndarray::Array2;

pub fn reduced_shape() -> NetworkShape {
    NetworkShape {
        input: 9,
        hidden: vec![4, 4],
        output: 9,
    }
}

fn windows(shape: &NetworkShape) -> Vec<Window> {
    (0..2)
        .map(|s| Window {
            input: Array2::from_shape_fn((10, shape.input), |(t, i)| {
                (((t + 1) * (i + 3) + 5 * s) as f64 * 0.53).sin()
            }),
            target: Array2::from_shape_fn((10, shape.output), |(t, i)| {
                (((t + 2) * (i + 1) + s) as f64 * 0.29).cos() * 0.8
            }),
        })
        .collect()
}

/// Central differences over every parameter versus BPTT.
pub fn max_relative_error(seed: u64) -> (f64, usize) {
    let shape = reduced_shape();
    let params = NetworkParams::init(&shape, seed);
    let ws = windows(&shape);
    let (grads, _) = bptt_gradients(&params, &ws).unwrap();
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|(_, _, d)| d.to_vec()).collect();

    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut flat = 0;
    let n_tensors = params.tensors().len();
    for t in 0..n_tensors {
        let len = params.tensors()[t].2.len();
        for i in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[t][i] += eps;
            let mut minus = params.clone();
            minus.tensors_mut()[t][i] -= eps;
            let numeric = (batch_loss(&plus, &ws).unwrap() - batch_loss(&minus, &ws).unwrap()) / (2.0 * eps);
            let a = analytic[flat];
            let denom = a.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max((a - numeric).abs() / denom);
            flat += 1;
        }
    }
    (worst, flat)
}
