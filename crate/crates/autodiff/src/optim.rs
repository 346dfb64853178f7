//! Optimizers: SGD with momentum/weight decay for network weights and Adam
//! for architecture parameters.
//!
//! Both update through `SliceSpec` regions so a weight-shared sub-network
//! trains exactly the store elements it used. State buffers (momentum, Adam
//! moments) are kept at full parameter shape.

use indexmap::IndexMap;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::store::{GradMap, ParamStore, SliceSpec};
use crate::tensor::Tensor;

pub struct Sgd<T: Scalar> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd { lr, momentum, weight_decay, velocity: IndexMap::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &GradMap<T>) -> Result<()> {
        for (name, entry) in grads {
            let full_shape = store.get(name)?.shape();
            if !self.velocity.contains_key(name) {
                self.velocity.insert(name.clone(), Tensor::zeros(full_shape));
            }
            let vel = self.velocity.get_mut(name).unwrap();
            let param = store.get_mut(name)?;
            let (lr, mu, wd) = (T::from_f64(self.lr), T::from_f64(self.momentum), T::from_f64(self.weight_decay));
            entry.slice.for_each_index(full_shape, |full_idx, view_idx| {
                let g = entry.grad.data()[view_idx] + wd * param.data()[full_idx];
                let v = mu * vel.data()[full_idx] + g;
                vel.data_mut()[full_idx] = v;
                param.data_mut()[full_idx] -= lr * v;
            });
        }
        Ok(())
    }
}

pub struct Adam<T: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    m: IndexMap<String, Tensor<T>>,
    v: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step_count: 0, m: IndexMap::new(), v: IndexMap::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &GradMap<T>) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, entry) in grads {
            assert_eq!(entry.slice, SliceSpec::Full, "Adam is used for architecture parameters, which are never sliced");
            let shape = store.get(name)?.shape();
            if !self.m.contains_key(name) {
                self.m.insert(name.clone(), Tensor::zeros(shape));
                self.v.insert(name.clone(), Tensor::zeros(shape));
            }
            let m = self.m.get_mut(name).unwrap();
            let v = self.v.get_mut(name).unwrap();
            let param = store.get_mut(name)?;
            for i in 0..shape.numel() {
                let g = entry.grad.data()[i].to_f64();
                let mi = self.beta1 * m.data()[i].to_f64() + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v.data()[i].to_f64() + (1.0 - self.beta2) * g * g;
                m.data_mut()[i] = T::from_f64(mi);
                v.data_mut()[i] = T::from_f64(vi);
                let update = self.lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                param.data_mut()[i] = T::from_f64(param.data()[i].to_f64() - update);
            }
        }
        Ok(())
    }
}
