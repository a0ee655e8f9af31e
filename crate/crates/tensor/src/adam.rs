use crate::error::{Result, TensorError};
use crate::params::{Gradients, ParameterStore};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction. Moment buffers are keyed like the parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    step: u64,
    first: ParameterStore,
    second: ParameterStore,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            step: 0,
            first: ParameterStore::new(),
            second: ParameterStore::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in `params`; `grads` must cover them all.
    pub fn step(&mut self, params: &mut ParameterStore, grads: &Gradients) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| TensorError::MissingGradient(name.to_string()))?;
            if g.shape() != p.shape() {
                return Err(TensorError::Dimension {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        if self.first.is_empty() {
            self.first = Gradients::zeros_like(params);
            self.second = Gradients::zeros_like(params);
        }
        self.step += 1;
        let t = self.step as i32;
        let correct1 = 1.0 - BETA1.powi(t);
        let correct2 = 1.0 - BETA2.powi(t);

        for (name, p) in params.iter_mut() {
            let g = grads.get(name).expect("checked above").data();
            let m = self
                .first
                .get_mut(name)
                .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?
                .data_mut();
            for (mv, gv) in m.iter_mut().zip(g) {
                *mv = BETA1 * *mv + (1.0 - BETA1) * gv;
            }
            let m = self.first.get(name).expect("present").data();
            let v = self
                .second
                .get_mut(name)
                .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?
                .data_mut();
            for ((w, vv), (gv, mv)) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g.iter().zip(m)) {
                *vv = BETA2 * *vv + (1.0 - BETA2) * gv * gv;
                let m_hat = mv / correct1;
                let v_hat = *vv / correct2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}
