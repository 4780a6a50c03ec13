use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{ModelParams, ParamKey};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates, keyed like the parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: BTreeMap<ParamKey, Vec<f64>>,
    v: BTreeMap<ParamKey, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One AdamW update. Decay is applied to the weights directly
/// (`θ ← θ(1 − lr·λ)`) before the bias-corrected Adam step. Parameters
/// without a gradient entry only decay.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &BTreeMap<ParamKey, Tensor>,
    state: &mut AdamState,
    opt: &AdamW,
) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    let decay = 1.0 - opt.lr * opt.weight_decay;
    for (key, value) in params.iter_mut() {
        let mut data = value.to_vec();
        let grad = grads.get(key);
        let m = state.m.entry(key.clone()).or_insert_with(|| vec![0.0; data.len()]);
        let v = state.v.entry(key.clone()).or_insert_with(|| vec![0.0; data.len()]);
        for k in 0..data.len() {
            let g = grad.map_or(0.0, |g| g.data()[k]);
            m[k] = opt.beta1 * m[k] + (1.0 - opt.beta1) * g;
            v[k] = opt.beta2 * v[k] + (1.0 - opt.beta2) * g * g;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            data[k] = data[k] * decay - opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
        }
        *value = Tensor::new(value.rows(), value.cols(), data).expect("shape unchanged");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Schema;
    use crate::model::{HyperParams, ModelKind};

    fn small() -> ModelParams {
        let hyper = HyperParams { input_dim: 3, hidden: 4, layers: 1, outputs: 2, ..HyperParams::default() };
        ModelParams::init(ModelKind::Mlp, hyper, &Schema::default(), 5).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut p = small();
        let before = p.clone();
        let opt = AdamW { weight_decay: 0.0, ..AdamW::default() };
        let grads = p.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.rows(), v.cols()))).collect();
        adamw_step(&mut p, &grads, &mut AdamState::new(), &opt);
        assert_eq!(p, before);
    }

    #[test]
    fn decay_only_shrinks_geometrically() {
        let mut p = small();
        let before = p.clone();
        let opt = AdamW::default();
        let mut state = AdamState::new();
        for _ in 0..3 {
            adamw_step(&mut p, &BTreeMap::new(), &mut state, &opt);
        }
        let factor = (1.0 - opt.lr * opt.weight_decay).powi(3);
        for ((_, a), (_, b)) in p.iter().zip(before.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y * factor).abs() <= 1e-15 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = small();
        let before = p.clone();
        let opt = AdamW { weight_decay: 0.0, eps: 1e-14, ..AdamW::default() };
        let grads: BTreeMap<_, _> = p
            .iter()
            .map(|(k, v)| {
                let g = (0..v.len()).map(|i| if i % 2 == 0 { 0.3 } else { -2.0 }).collect();
                (k.clone(), Tensor::new(v.rows(), v.cols(), g).unwrap())
            })
            .collect();
        adamw_step(&mut p, &grads, &mut AdamState::new(), &opt);
        for (k, a) in p.iter() {
            let b = before.get(k).unwrap();
            for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
                let expected = if i % 2 == 0 { -opt.lr } else { opt.lr };
                assert!((x - y - expected).abs() < 1e-10);
            }
        }
    }
}
