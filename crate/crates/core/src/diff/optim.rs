use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

pub trait Optimizer {
    /// Applies one update from the accumulated gradients.
    fn step(&mut self, store: &mut ParamStore) -> Result<()>;
}

fn check_finite(store: &ParamStore) -> Result<()> {
    for p in store.iter() {
        if !p.grad().all_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {:?}",
                p.name()
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, (0.9, 0.999), 1e-8)
    }

    pub fn with_betas(lr: f64, betas: (f64, f64), eps: f64) -> Self {
        Adam {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

impl Optimizer for Adam {
    fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        check_finite(store)?;
        if self.first.is_empty() {
            self.first = store.iter().map(|p| vec![0.0; p.value().len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let (value, grad) = p.value_and_grad_mut();
            for (((x, &g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Plain gradient descent.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        check_finite(store)?;
        for p in store.iter_mut() {
            let (value, grad) = p.value_and_grad_mut();
            for (x, g) in value.data_mut().iter_mut().zip(grad.data()) {
                *x -= self.lr * g;
            }
        }
        Ok(())
    }
}

pub fn make_optimizer(kind: OptimizerKind, lr: f64) -> Box<dyn Optimizer + Send> {
    match kind {
        OptimizerKind::Adam => Box::new(Adam::new(lr)),
        OptimizerKind::Sgd => Box::new(Sgd { lr }),
    }
}
