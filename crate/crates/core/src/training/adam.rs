use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::model::OptimizerState;
use crate::params::{Gradients, ParamStore};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    state: OptimizerState,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || -> Vec<Array2<f64>> {
            params.ids().map(|id| Array2::zeros(params.get(id).raw_dim())).collect()
        };
        Self {
            state: OptimizerState {
                step: 0,
                first: zeros(),
                second: zeros(),
            },
        }
    }

    pub fn from_state(params: &ParamStore, state: OptimizerState) -> Result<Self> {
        let fits = |moments: &[Array2<f64>]| {
            moments.len() == params.len()
                && params.ids().zip(moments).all(|(id, m)| params.get(id).dim() == m.dim())
        };
        if !fits(&state.first) || !fits(&state.second) {
            return Err(Error::Shape("optimizer state does not match the parameters".into()));
        }
        Ok(Self { state })
    }

    pub fn step(&self) -> u64 {
        self.state.step
    }

    pub fn state(&self) -> OptimizerState {
        self.state.clone()
    }

    /// Bias-corrected Adam update. `weight_decay` adds an L2 term to the
    /// gradient before the moment updates.
    pub fn update(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64, weight_decay: f64) {
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let k = id.index();
            let g = grads.get(id);
            Zip::from(params.get_mut(id))
                .and(&mut self.state.first[k])
                .and(&mut self.state.second[k])
                .and(g)
                .for_each(|p, m, v, &g| {
                    let g = g + weight_decay * *p;
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut store = ParamStore::default();
        let id = store.insert("p", array![[1.0, -2.0, 0.5]]);
        let mut grads = Gradients::zeros_like(&store);
        grads.accumulate(id, &array![[0.3, -4.0, 0.0]]);
        let mut adam = Adam::new(&store);
        adam.update(&mut store, &grads, 0.1, 0.0);
        let p = store.get(id);
        assert!((p[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((p[[0, 1]] + 1.9).abs() < 1e-6);
        assert_eq!(p[[0, 2]], 0.5);
        assert_eq!(adam.step(), 1);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::default();
        let id = store.insert("p", array![[3.0, -1.0]]);
        let mut adam = Adam::new(&store);
        for _ in 0..2000 {
            let mut grads = Gradients::zeros_like(&store);
            let g = store.get(id) * 2.0;
            grads.accumulate(id, &g);
            adam.update(&mut store, &grads, 0.05, 0.0);
        }
        assert!(store.get(id).iter().all(|v| v.abs() < 1e-3));
    }
}
