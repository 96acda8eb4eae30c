//! Stacked LSTM sequence network trained with full backpropagation through time.
//!
//! Layout: `layers.len()` LSTM layers (tanh cell/output activation, sigmoid
//! gates) followed by an affine output map. Gate rows in every LSTM weight
//! matrix are ordered input, forget, cell, output.

mod adam;
mod batch;
mod bptt;
mod train;

pub use adam::{adam_step, AdamState};
pub use batch::{sample_minibatch, Sequence, Window};
pub use bptt::{batch_loss, batch_outputs, bptt_gradients, Gradients};
pub use train::{train_network, TrainSettings};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl NetworkShape {
    /// 9 -> LSTM 50 -> LSTM 50 -> linear 9.
    pub fn standard() -> Self {
        NetworkShape {
            input: 9,
            hidden: vec![50, 50],
            output: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `4H x I`
    pub w_x: Array2<f64>,
    /// `4H x H`
    pub w_h: Array2<f64>,
    /// `4H`
    pub b: Array1<f64>,
}

impl LstmLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayer {
            w_x: Array2::zeros((4 * hidden, input)),
            w_h: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.ncols()
    }

    pub fn input(&self) -> usize {
        self.w_x.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LstmLayer>,
    /// `O x H_last`
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

impl NetworkParams {
    pub fn zeros(shape: &NetworkShape) -> Self {
        let mut layers = Vec::with_capacity(shape.hidden.len());
        let mut fan = shape.input;
        for &h in &shape.hidden {
            layers.push(LstmLayer::zeros(fan, h));
            fan = h;
        }
        NetworkParams {
            layers,
            w_out: Array2::zeros((shape.output, fan)),
            b_out: Array1::zeros(shape.output),
        }
    }

    /// Uniform in `+-1/sqrt(fan_in)`, forget-gate bias `+1`.
    pub fn init(shape: &NetworkShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(shape);
        for layer in &mut p.layers {
            let h = layer.hidden();
            let bound = 1.0 / ((layer.input() + h) as f64).sqrt();
            layer.w_x.mapv_inplace(|_| rng.random_range(-bound..bound));
            layer.w_h.mapv_inplace(|_| rng.random_range(-bound..bound));
            layer.b.mapv_inplace(|_| rng.random_range(-bound..bound));
            layer.b.slice_mut(ndarray::s![h..2 * h]).fill(1.0);
        }
        let bound = 1.0 / (p.w_out.ncols() as f64).sqrt();
        p.w_out.mapv_inplace(|_| rng.random_range(-bound..bound));
        p.b_out.mapv_inplace(|_| rng.random_range(-bound..bound));
        p
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            input: self.layers.first().map(|l| l.input()).unwrap_or(self.w_out.ncols()),
            hidden: self.layers.iter().map(|l| l.hidden()).collect(),
            output: self.w_out.nrows(),
        }
    }

    /// Named tensors in a fixed order (used by persistence and the optimizer).
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("lstm{i}.w_x"), l.w_x.shape().to_vec(), l.w_x.as_slice().unwrap()));
            out.push((format!("lstm{i}.w_h"), l.w_h.shape().to_vec(), l.w_h.as_slice().unwrap()));
            out.push((format!("lstm{i}.b"), l.b.shape().to_vec(), l.b.as_slice().unwrap()));
        }
        out.push(("out.w".into(), self.w_out.shape().to_vec(), self.w_out.as_slice().unwrap()));
        out.push(("out.b".into(), self.b_out.shape().to_vec(), self.b_out.as_slice().unwrap()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.w_x.as_slice_mut().unwrap());
            out.push(l.w_h.as_slice_mut().unwrap());
            out.push(l.b.as_slice_mut().unwrap());
        }
        out.push(self.w_out.as_slice_mut().unwrap());
        out.push(self.b_out.as_slice_mut().unwrap());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, d)| d.iter().all(|v| v.is_finite()))
    }
}

/// Per-layer `h` and `c`, zero at sequence start.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h: Vec<Array1<f64>>,
    pub c: Vec<Array1<f64>>,
}

impl HiddenState {
    pub fn zeros(params: &NetworkParams) -> Self {
        HiddenState {
            h: params.layers.iter().map(|l| Array1::zeros(l.hidden())).collect(),
            c: params.layers.iter().map(|l| Array1::zeros(l.hidden())).collect(),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One time step for a single sequence.
pub fn forward_step(params: &NetworkParams, hidden: &mut HiddenState, x: &[f64]) -> Result<Vec<f64>> {
    let shape_in = params.layers.first().map(|l| l.input()).unwrap_or(params.w_out.ncols());
    if x.len() != shape_in {
        return Err(Error::Shape {
            expected: format!("input of length {shape_in}"),
            got: format!("length {}", x.len()),
        });
    }
    if hidden.h.len() != params.layers.len() {
        return Err(Error::Shape {
            expected: format!("{} hidden layers", params.layers.len()),
            got: format!("{}", hidden.h.len()),
        });
    }
    let mut input = Array1::from(x.to_vec());
    for (k, layer) in params.layers.iter().enumerate() {
        let h = layer.hidden();
        let z = layer.w_x.dot(&input) + layer.w_h.dot(&hidden.h[k]) + &layer.b;
        let c = &mut hidden.c[k];
        let hh = &mut hidden.h[k];
        for j in 0..h {
            let i_g = sigmoid(z[j]);
            let f_g = sigmoid(z[h + j]);
            let g_g = z[2 * h + j].tanh();
            let o_g = sigmoid(z[3 * h + j]);
            c[j] = f_g * c[j] + i_g * g_g;
            hh[j] = o_g * c[j].tanh();
        }
        input = hh.clone();
    }
    let y = params.w_out.dot(&input) + &params.b_out;
    Ok(y.to_vec())
}

/// Run a whole sequence from a fresh zero state.
pub fn forward_sequence(params: &NetworkParams, inputs: &Array2<f64>) -> Result<Array2<f64>> {
    let mut hidden = HiddenState::zeros(params);
    let mut out = Array2::zeros((inputs.nrows(), params.w_out.nrows()));
    for (t, row) in inputs.outer_iter().enumerate() {
        let y = forward_step(params, &mut hidden, row.as_slice().unwrap())?;
        out.row_mut(t).assign(&Array1::from(y));
    }
    Ok(out)
}
