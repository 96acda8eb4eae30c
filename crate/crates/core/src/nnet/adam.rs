use super::NetworkParams;

/// First/second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: NetworkParams,
    pub v: NetworkParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        let shape = params.shape();
        AdamState {
            m: NetworkParams::zeros(&shape),
            v: NetworkParams::zeros(&shape),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(params: &mut NetworkParams, grads: &NetworkParams, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let g_all = grads.tensors();
    let m_all = state.m.tensors_mut();
    let v_all = state.v.tensors_mut();
    for (((p, (_, _, g)), m), v) in params.tensors_mut().into_iter().zip(g_all).zip(m_all).zip(v_all) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::NetworkShape;
    use ndarray::Array1;

    fn scalar_net() -> NetworkParams {
        // No LSTM layers: a single output bias acts as a free scalar parameter.
        NetworkParams::zeros(&NetworkShape {
            input: 1,
            hidden: vec![],
            output: 1,
        })
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = NetworkParams::init(&NetworkShape { input: 3, hidden: vec![2], output: 2 }, 1);
        let before = p.clone();
        let g = NetworkParams::zeros(&p.shape());
        let mut s = AdamState::new(&p);
        for _ in 0..10 {
            adam_step(&mut p, &g, &mut s, 1e-3);
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_steps_at_learning_rate() {
        let mut p = scalar_net();
        let mut g = scalar_net();
        g.b_out = Array1::from(vec![0.37]);
        let mut s = AdamState::new(&p);
        let lr = 1e-3;
        let mut prev = 0.0;
        for _ in 0..200 {
            adam_step(&mut p, &g, &mut s, lr);
            let now = p.b_out[0];
            let step = (now - prev).abs();
            assert!((step - lr).abs() / lr < 0.05, "{step}");
            prev = now;
        }
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        let mut p = scalar_net();
        p.b_out[0] = 1.0;
        let mut s = AdamState::new(&p);
        let mut g = scalar_net();
        for _ in 0..500 {
            g.b_out[0] = 2.0 * p.b_out[0];
            adam_step(&mut p, &g, &mut s, 0.05);
        }
        assert!(p.b_out[0].abs() < 0.01, "{}", p.b_out[0]);
    }
}
