use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, NnError, ParamStore, Tensor};

/// Per-parameter random streams. Stream `i` depends only on the seed and `i`,
/// so the order parameters are drawn in never changes their values.
#[derive(Debug, Clone, Copy)]
pub struct ParamRng {
    seed: u64,
}

impl ParamRng {
    pub fn new(seed: u64) -> Self {
        ParamRng { seed }
    }

    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

/// `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// A `[rows, cols]` tensor drawn uniformly from `[-a, a)`.
pub fn init_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, a: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(vec![rows, cols], data).expect("positive dims")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

pub fn adam_step(
    store: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), NnError> {
    if !grads.is_finite() {
        return Err(NnError::NonFiniteValue { op: "adam_step" });
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (id, g) in grads.iter() {
        let (m, v) = (&mut state.m[id.index()], &mut state.v[id.index()]);
        let p = store.get_mut(id).data_mut();
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(NnError::NonFiniteValue { op: "adam_step" });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Graph;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::row(&[1.0, -2.0, 3.0]));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store();
        let before = s.clone();
        let g = Gradients::zeros_like(&s);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &g, &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = store();
        let id = s.id("w").unwrap();
        let g = {
            let mut graph = Graph::new(&s);
            let w = graph.param(id);
            let c = graph.input(Tensor::row(&[0.5, -4.0, 2e-3])).unwrap();
            let m = graph.mul(w, c).unwrap();
            let l = graph.sum(m).unwrap();
            graph.backward(l).unwrap()
        };
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &g, &mut st, &cfg).unwrap();
        let moved: Vec<f64> = s.get(id).data().iter().zip([1.0, -2.0, 3.0]).map(|(a, b)| a - b).collect();
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g|+ε).
        for (d, gi) in moved.iter().zip([0.5f64, -4.0, 2e-3]) {
            let expected = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((d - expected).abs() < 1e-15, "{d} vs {expected}");
            assert!((d + cfg.lr * gi.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut s = store();
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(s.id("w").unwrap()).data_mut()[1] = f64::NAN;
        let mut st = AdamState::new(&s);
        assert!(adam_step(&mut s, &g, &mut st, &AdamConfig::default()).is_err());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let r = ParamRng::new(7);
        let a = init_uniform(&mut r.stream(0), 3, 4, 0.5);
        let b = init_uniform(&mut r.stream(0), 3, 4, 0.5);
        let c = init_uniform(&mut r.stream(1), 3, 4, 0.5);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.data().iter().all(|x| (-0.5..0.5).contains(x)));
        assert!((glorot_bound(2, 4) - 1.0).abs() < 1e-15);
    }
}
