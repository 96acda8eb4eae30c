//! Batched forward pass and backpropagation through time.
//!
//! A batch of `B` equal-length windows is stored time-major: row `t * B + b`
//! holds step `t` of window `b`, so the input projections and all weight
//! gradients are single matrix products over the whole unrolled batch.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};

use super::{sigmoid, NetworkParams, Window};
use crate::error::{Error, Result};

/// Gradient of the loss with respect to every parameter tensor.
pub type Gradients = NetworkParams;

struct LayerCache {
    /// Gate activations (i, f, g, o), `TB x 4H`.
    acts: Array2<f64>,
    c: Array2<f64>,
    tanh_c: Array2<f64>,
    h: Array2<f64>,
}

fn stack_windows(windows: &[Window], params: &NetworkParams) -> Result<(Array2<f64>, Array2<f64>, usize)> {
    let first = windows
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let steps = first.input.nrows();
    let n_in = params.layers.first().map(|l| l.input()).unwrap_or(params.w_out.ncols());
    let n_out = params.w_out.nrows();
    let batch = windows.len();
    let mut x = Array2::zeros((steps * batch, n_in));
    let mut y = Array2::zeros((steps * batch, n_out));
    for (b, w) in windows.iter().enumerate() {
        if w.input.dim() != (steps, n_in) || w.target.dim() != (steps, n_out) {
            return Err(Error::Shape {
                expected: format!("window {steps}x{n_in} -> {steps}x{n_out}"),
                got: format!("{:?} -> {:?}", w.input.dim(), w.target.dim()),
            });
        }
        for t in 0..steps {
            x.row_mut(t * batch + b).assign(&w.input.row(t));
            y.row_mut(t * batch + b).assign(&w.target.row(t));
        }
    }
    Ok((x, y, batch))
}

fn layer_forward(layer: &super::LstmLayer, x: ArrayView2<f64>, batch: usize) -> LayerCache {
    let rows = x.nrows();
    let steps = rows / batch;
    let hs = layer.hidden();
    let mut acts = Array2::zeros((rows, 4 * hs));
    general_mat_mul(1.0, &x, &layer.w_x.t(), 0.0, &mut acts);
    acts += &layer.b;
    let mut c = Array2::<f64>::zeros((rows, hs));
    let mut tanh_c = Array2::<f64>::zeros((rows, hs));
    let mut h = Array2::<f64>::zeros((rows, hs));
    for t in 0..steps {
        let cur = t * batch..(t + 1) * batch;
        if t > 0 {
            let prev = h.slice(s![(t - 1) * batch..t * batch, ..]);
            let mut z = acts.slice_mut(s![cur.clone(), ..]);
            general_mat_mul(1.0, &prev, &layer.w_h.t(), 1.0, &mut z);
        }
        let a = acts.as_slice_mut().unwrap();
        let cs = c.as_slice_mut().unwrap();
        let tcs = tanh_c.as_slice_mut().unwrap();
        let hv = h.as_slice_mut().unwrap();
        for r in cur {
            let z = &mut a[r * 4 * hs..(r + 1) * 4 * hs];
            for j in 0..hs {
                let ig = sigmoid(z[j]);
                let fg = sigmoid(z[hs + j]);
                let gg = z[2 * hs + j].tanh();
                let og = sigmoid(z[3 * hs + j]);
                z[j] = ig;
                z[hs + j] = fg;
                z[2 * hs + j] = gg;
                z[3 * hs + j] = og;
                let c_prev = if t > 0 { cs[(r - batch) * hs + j] } else { 0.0 };
                let cv = fg * c_prev + ig * gg;
                let tc = cv.tanh();
                cs[r * hs + j] = cv;
                tcs[r * hs + j] = tc;
                hv[r * hs + j] = og * tc;
            }
        }
    }
    LayerCache { acts, c, tanh_c, h }
}

/// Backward through one layer. `dh` is the loss gradient w.r.t. this layer's
/// outputs; returns the gradient w.r.t. its inputs when `want_dx`.
fn layer_backward(
    layer: &super::LstmLayer,
    grad: &mut super::LstmLayer,
    x: ArrayView2<f64>,
    cache: &LayerCache,
    dh: &Array2<f64>,
    batch: usize,
    want_dx: bool,
) -> Option<Array2<f64>> {
    let rows = x.nrows();
    let steps = rows / batch;
    let hs = layer.hidden();
    let mut dz = Array2::<f64>::zeros((rows, 4 * hs));
    let mut dh_next = Array2::<f64>::zeros((batch, hs));
    let mut dc_next = vec![0.0; batch * hs];
    let a = cache.acts.as_slice().unwrap();
    let cs = cache.c.as_slice().unwrap();
    let tcs = cache.tanh_c.as_slice().unwrap();
    let dhs = dh.as_slice().unwrap();
    for t in (0..steps).rev() {
        {
            let dzs = dz.as_slice_mut().unwrap();
            let dhn = dh_next.as_slice().unwrap();
            for b in 0..batch {
                let r = t * batch + b;
                let act = &a[r * 4 * hs..(r + 1) * 4 * hs];
                let out = &mut dzs[r * 4 * hs..(r + 1) * 4 * hs];
                for j in 0..hs {
                    let (ig, fg, gg, og) = (act[j], act[hs + j], act[2 * hs + j], act[3 * hs + j]);
                    let k = b * hs + j;
                    let dhv = dhs[r * hs + j] + dhn[k];
                    let tc = tcs[r * hs + j];
                    let d_o = dhv * tc;
                    let dc = dhv * og * (1.0 - tc * tc) + dc_next[k];
                    let c_prev = if t > 0 { cs[(r - batch) * hs + j] } else { 0.0 };
                    dc_next[k] = dc * fg;
                    out[j] = dc * gg * ig * (1.0 - ig);
                    out[hs + j] = dc * c_prev * fg * (1.0 - fg);
                    out[2 * hs + j] = dc * ig * (1.0 - gg * gg);
                    out[3 * hs + j] = d_o * og * (1.0 - og);
                }
            }
        }
        if t > 0 {
            let dz_t = dz.slice(s![t * batch..(t + 1) * batch, ..]);
            general_mat_mul(1.0, &dz_t, &layer.w_h, 0.0, &mut dh_next);
        }
    }
    general_mat_mul(1.0, &dz.t(), &x, 0.0, &mut grad.w_x);
    if steps > 1 {
        let dz_tail = dz.slice(s![batch.., ..]);
        let h_head = cache.h.slice(s![..rows - batch, ..]);
        general_mat_mul(1.0, &dz_tail.t(), &h_head, 0.0, &mut grad.w_h);
    } else {
        grad.w_h.fill(0.0);
    }
    grad.b = dz.sum_axis(Axis(0));
    want_dx.then(|| dz.dot(&layer.w_x))
}

fn run_forward(params: &NetworkParams, x: &Array2<f64>, batch: usize) -> (Vec<LayerCache>, Array2<f64>) {
    let mut caches: Vec<LayerCache> = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let cache = {
            let input = caches.last().map(|c| c.h.view()).unwrap_or(x.view());
            layer_forward(layer, input, batch)
        };
        caches.push(cache);
    }
    let top = caches.last().map(|c| c.h.view()).unwrap_or(x.view());
    let mut y = top.dot(&params.w_out.t());
    y += &params.b_out;
    (caches, y)
}

/// Mean squared error over every output of every step of every window.
pub fn batch_loss(params: &NetworkParams, windows: &[Window]) -> Result<f64> {
    let (x, target, batch) = stack_windows(windows, params)?;
    let (_, y) = run_forward(params, &x, batch);
    let loss = (&y - &target).mapv(|e| e * e).mean().unwrap_or(0.0);
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    Ok(loss)
}

/// MSE loss and its exact gradient by backpropagation through time.
pub fn bptt_gradients(params: &NetworkParams, windows: &[Window]) -> Result<(Gradients, f64)> {
    let (x, target, batch) = stack_windows(windows, params)?;
    let (caches, y) = run_forward(params, &x, batch);
    let err = &y - &target;
    let count = err.len() as f64;
    let loss = err.iter().map(|e| e * e).sum::<f64>() / count;
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    let dy = err.mapv(|e| 2.0 * e / count);

    let mut grads = NetworkParams::zeros(&params.shape());
    {
        let top = caches.last().map(|c| c.h.view()).unwrap_or(x.view());
        general_mat_mul(1.0, &dy.t(), &top, 0.0, &mut grads.w_out);
    }
    grads.b_out = dy.sum_axis(Axis(0));
    let mut dh = dy.dot(&params.w_out);

    for k in (0..params.layers.len()).rev() {
        let input = if k == 0 { x.view() } else { caches[k - 1].h.view() };
        let dx = layer_backward(
            &params.layers[k],
            &mut grads.layers[k],
            input,
            &caches[k],
            &dh,
            batch,
            k > 0,
        );
        if let Some(dx) = dx {
            dh = dx;
        }
    }
    Ok((grads, loss))
}

/// Final-layer outputs for a batch, reshaped per window (`B` arrays of `T x O`).
pub fn batch_outputs(params: &NetworkParams, windows: &[Window]) -> Result<Vec<Array2<f64>>> {
    let (x, _, batch) = stack_windows(windows, params)?;
    let (_, y) = run_forward(params, &x, batch);
    let steps = y.nrows() / batch;
    Ok((0..batch)
        .map(|b| {
            let mut out = Array2::zeros((steps, y.ncols()));
            for t in 0..steps {
                out.row_mut(t).assign(&y.row(t * batch + b));
            }
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{forward_sequence, NetworkShape};

    fn small_shape() -> NetworkShape {
        NetworkShape {
            input: 9,
            hidden: vec![4, 4],
            output: 9,
        }
    }

    fn window(steps: usize, seed: usize, shape: &NetworkShape) -> Window {
        Window {
            input: Array2::from_shape_fn((steps, shape.input), |(t, i)| {
                (((t + 1) * (i + 2) + seed) as f64 * 0.71).sin()
            }),
            target: Array2::from_shape_fn((steps, shape.output), |(t, i)| {
                (((t + 3) * (i + 1) + 2 * seed) as f64 * 0.37).cos() * 0.5
            }),
        }
    }

    #[test]
    fn batched_forward_matches_stepwise() {
        let shape = small_shape();
        let p = NetworkParams::init(&shape, 5);
        let ws: Vec<Window> = (0..3).map(|s| window(12, s, &shape)).collect();
        let outs = batch_outputs(&p, &ws).unwrap();
        for (w, o) in ws.iter().zip(&outs) {
            let step = forward_sequence(&p, &w.input).unwrap();
            for (a, b) in step.iter().zip(o.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perfect_targets_have_zero_loss_and_gradient() {
        let shape = small_shape();
        let p = NetworkParams::init(&shape, 9);
        let mut w = window(10, 0, &shape);
        w.target = batch_outputs(&p, &[w.clone()]).unwrap().remove(0);
        let (g, loss) = bptt_gradients(&p, &[w]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.tensors().iter().all(|(_, _, d)| d.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn doubling_errors_quadruples_loss() {
        let shape = small_shape();
        let p = NetworkParams::init(&shape, 2);
        let w = window(10, 1, &shape);
        let pred = forward_sequence(&p, &w.input).unwrap();
        let l1 = batch_loss(&p, std::slice::from_ref(&w)).unwrap();
        let doubled = Window {
            input: w.input.clone(),
            target: &pred + &((&w.target - &pred) * 2.0),
        };
        let l2 = batch_loss(&p, &[doubled]).unwrap();
        assert!((l2 / l1 - 4.0).abs() < 1e-10);
    }

    #[test]
    fn gradients_are_deterministic() {
        let shape = small_shape();
        let p = NetworkParams::init(&shape, 4);
        let ws: Vec<Window> = (0..4).map(|s| window(8, s, &shape)).collect();
        let (a, la) = bptt_gradients(&p, &ws).unwrap();
        let (b, lb) = bptt_gradients(&p, &ws).unwrap();
        assert_eq!(la.to_bits(), lb.to_bits());
        assert_eq!(a, b);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let p = NetworkParams::init(&small_shape(), 0);
        assert!(bptt_gradients(&p, &[]).is_err());
    }
}
