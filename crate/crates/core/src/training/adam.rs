use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates for every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update from the accumulated gradients, which are
/// zeroed afterwards.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let c1 = 1.0 - BETA1.powi(state.step as i32);
    let c2 = 1.0 - BETA2.powi(state.step as i32);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = p.grad.data();
        for (i, w) in p.value.data_mut().iter_mut().enumerate() {
            let mi = &mut m.data_mut()[i];
            *mi = BETA1 * *mi + (1.0 - BETA1) * g[i];
            let vi = &mut v.data_mut()[i];
            *vi = BETA2 * *vi + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    params.zero_grad();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::ParamId;

    fn store(values: Vec<f64>) -> ParamStore {
        let mut ps = ParamStore::new();
        ps.push("p", Tensor::vector(values));
        ps
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut ps = store(vec![0.5]);
        ps.get_mut(ParamId(0)).grad = Tensor::vector(vec![1.0]);
        let mut st = AdamState::new(&ps);
        adam_step(&mut ps, &mut st, 1e-3);
        // m̂ = 1, v̂ = 1 ⇒ Δ = -1e-3 / (1 + 1e-8)
        let delta = ps.get(ParamId(0)).value.data()[0] - 0.5;
        assert!((delta + 1e-3).abs() < 1e-6);
        assert_eq!(ps.get(ParamId(0)).grad.data(), &[0.0]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut ps = store(vec![0.5, -2.0]);
        let mut st = AdamState::new(&ps);
        adam_step(&mut ps, &mut st, 1e-3);
        assert_eq!(ps.get(ParamId(0)).value.data(), &[0.5, -2.0]);
    }

    #[test]
    fn identical_streams_stay_identical() {
        let mut ps = ParamStore::new();
        ps.push("a", Tensor::vector(vec![0.3]));
        ps.push("b", Tensor::vector(vec![0.3]));
        let mut st = AdamState::new(&ps);
        for t in 0..50 {
            let g = ((t as f64) * 0.7).sin();
            for i in 0..2 {
                ps.get_mut(ParamId(i)).grad = Tensor::vector(vec![g]);
            }
            adam_step(&mut ps, &mut st, 1e-2);
        }
        assert_eq!(ps.get(ParamId(0)).value, ps.get(ParamId(1)).value);
    }
}
