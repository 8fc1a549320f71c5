//! Adam with bias correction and a step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::model::{Gradients, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub base_lr: f64,
    /// Multiplicative decay applied once per `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            base_lr: 2e-5,
            decay: 0.95,
            decay_every: 10,
        }
    }
}

impl AdamHyper {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_schedule(self.base_lr, epoch, self.decay, self.decay_every)
    }
}

/// `base_lr · decay^floor(epoch / every)`.
pub fn lr_schedule(base_lr: f64, epoch: usize, decay: f64, every: usize) -> f64 {
    base_lr * decay.powi((epoch / every.max(1)) as i32)
}

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub hyper: AdamHyper,
    pub step: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>, hyper: AdamHyper) -> Self {
        Self::for_tensors(&params.trainable(), hyper)
    }

    pub fn for_tensors(tensors: &[&Tensor<T>], hyper: AdamHyper) -> Self {
        let zeros: Vec<Tensor<T>> = tensors.iter().map(|t| Tensor::zeros_like(t)).collect();
        Self {
            hyper,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// One Adam update of `params` in place with learning rate `lr`.
    pub fn update(
        &mut self,
        params: Vec<&mut Tensor<T>>,
        grads: &[Tensor<T>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::Usage(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return shape_err(format!(
                    "adam: tensor {i} param {:?} grad {:?}",
                    p.shape(),
                    g.shape()
                ));
            }
        }
        self.step += 1;
        let h = self.hyper;
        let t = self.step as i32;
        let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let c1 = T::of(1.0 - h.beta1.powi(t));
        let c2 = T::of(1.0 - h.beta2.powi(t));
        let lr = T::of(lr);
        let eps = T::of(h.eps);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((w, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam step to the model at the scheduled rate for `epoch`.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    epoch: usize,
) -> Result<()> {
    let lr = state.hyper.lr_at(epoch);
    state.update(params.trainable_mut(), &grads.tensors, lr)
}
