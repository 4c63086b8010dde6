use super::params::ParameterStore;
use super::scalar::Scalar;

/// Adam hyper-parameters.
///
/// `l2_weight` adds `2 * l2_weight * w` to each gradient before the moment
/// update, the gradient of an explicit `l2_weight * ||w||^2` loss term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub l2_weight: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2_weight: 0.0,
        }
    }
}

/// One bias-corrected Adam update over every parameter; gradients are zeroed afterwards.
pub fn adam_step<T: Scalar>(store: &mut ParameterStore<T>, cfg: &AdamConfig) {
    store.step += 1;
    let t = store.step as i32;
    let b1 = cfg.beta1;
    let b2 = cfg.beta2;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let l2 = cfg.l2_weight;
    for slot in store.slots_mut() {
        let n = slot.value.len();
        for i in 0..n {
            let w = slot.value.data()[i].as_f64();
            let mut g = slot.grad.data()[i].as_f64();
            if l2 != 0.0 {
                g += 2.0 * l2 * w;
            }
            let m = b1 * slot.m.data()[i].as_f64() + (1.0 - b1) * g;
            let v = b2 * slot.v.data()[i].as_f64() + (1.0 - b2) * g * g;
            slot.m.data_mut()[i] = T::from_f64_lossy(m);
            slot.v.data_mut()[i] = T::from_f64_lossy(v);
            let m_hat = m / c1;
            let v_hat = v / c2;
            let w_new = w - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            slot.value.data_mut()[i] = T::from_f64_lossy(w_new);
            slot.grad.data_mut()[i] = T::zero();
        }
    }
}
