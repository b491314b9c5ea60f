//! Optimizers: Adam and SGD with momentum and milestone learning-rate decay.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::layers::ParamStore;
use super::scalar::Scalar;

/// Declarative optimizer configuration, stored in hyperparameters and
/// checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum OptimizerSpec {
    Adam {
        lr: f64,
    },
    Sgd {
        lr: f64,
        momentum: f64,
        /// Epochs at which the learning rate is multiplied by `gamma`.
        #[serde(default)]
        milestones: Vec<usize>,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
}

fn default_gamma() -> f64 {
    0.1
}

impl OptimizerSpec {
    pub fn base_lr(&self) -> f64 {
        match self {
            OptimizerSpec::Adam { lr } => *lr,
            OptimizerSpec::Sgd { lr, .. } => *lr,
        }
    }

    /// Learning rate in effect at a given epoch (0-based).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        match self {
            OptimizerSpec::Adam { lr } => *lr,
            OptimizerSpec::Sgd {
                lr,
                milestones,
                gamma,
                ..
            } => {
                let hits = milestones.iter().filter(|&&m| epoch >= m).count();
                lr * gamma.powi(hits as i32)
            }
        }
    }
}

enum State<T: Scalar> {
    Adam {
        m: Vec<ArrayD<T>>,
        v: Vec<ArrayD<T>>,
        step: u64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Sgd {
        velocity: Vec<ArrayD<T>>,
        momentum: f64,
    },
}

/// A stateful optimizer bound to one parameter store layout.
pub struct Optimizer<T: Scalar> {
    spec: OptimizerSpec,
    state: State<T>,
    pub lr: f64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(spec: OptimizerSpec, store: &ParamStore<T>) -> Self {
        let zeros: Vec<ArrayD<T>> = store
            .params()
            .iter()
            .map(|p| ArrayD::zeros(p.shape().to_vec()))
            .collect();
        let state = match &spec {
            OptimizerSpec::Adam { .. } => State::Adam {
                m: zeros.clone(),
                v: zeros,
                step: 0,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            OptimizerSpec::Sgd { momentum, .. } => State::Sgd {
                velocity: zeros,
                momentum: *momentum,
            },
        };
        let lr = spec.base_lr();
        Self { spec, state, lr }
    }

    /// Adjust the learning rate for the schedule at this epoch.
    pub fn set_epoch(&mut self, epoch: usize) {
        self.lr = self.spec.lr_at_epoch(epoch);
    }

    /// Apply one update. Parameters whose gradient is `None` are untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<ArrayD<T>>]) {
        let lr = T::from_f64(self.lr);
        match &mut self.state {
            State::Adam {
                m,
                v,
                step,
                beta1,
                beta2,
                eps,
            } => {
                *step += 1;
                let b1 = T::from_f64(*beta1);
                let b2 = T::from_f64(*beta2);
                let one = T::one();
                let bias1 = T::from_f64(1.0 - beta1.powi(*step as i32));
                let bias2 = T::from_f64(1.0 - beta2.powi(*step as i32));
                let eps = T::from_f64(*eps);
                for (i, grad) in grads.iter().enumerate() {
                    let Some(g) = grad else { continue };
                    let mi = &mut m[i];
                    let vi = &mut v[i];
                    ndarray::Zip::from(mi).and(g).for_each(|mv, &gv| {
                        *mv = b1 * *mv + (one - b1) * gv;
                    });
                    ndarray::Zip::from(vi).and(g).for_each(|vv, &gv| {
                        *vv = b2 * *vv + (one - b2) * gv * gv;
                    });
                    let param = &mut store.params_mut()[i];
                    ndarray::Zip::from(param)
                        .and(&m[i])
                        .and(&v[i])
                        .for_each(|p, &mv, &vv| {
                            let m_hat = mv / bias1;
                            let v_hat = vv / bias2;
                            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
                        });
                }
            }
            State::Sgd { velocity, momentum } => {
                let mu = T::from_f64(*momentum);
                for (i, grad) in grads.iter().enumerate() {
                    let Some(g) = grad else { continue };
                    let vel = &mut velocity[i];
                    ndarray::Zip::from(&mut *vel).and(g).for_each(|v, &gv| {
                        *v = mu * *v + gv;
                    });
                    let param = &mut store.params_mut()[i];
                    ndarray::Zip::from(param).and(&*vel).for_each(|p, &v| {
                        *p = *p - lr * v;
                    });
                }
            }
        }
    }
}
