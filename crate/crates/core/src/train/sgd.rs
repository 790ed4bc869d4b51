use crate::error::{Error, Result};
use crate::network::{Gradients, Model, ParamRole};
use crate::real::Real;

use super::TrainConfig;

/// Velocity buffers, one per model tensor in [`Model::tensors`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Momentum<T> {
    pub buffers: Vec<Vec<T>>,
}

impl<T: Real> Momentum<T> {
    pub fn zeros(model: &Model<T>) -> Self {
        Self { buffers: model.tensors().iter().map(|t| vec![T::zero(); t.data.len()]).collect() }
    }

    fn matches(&self, model: &Model<T>) -> bool {
        let t = model.tensors();
        t.len() == self.buffers.len() && t.iter().zip(&self.buffers).all(|(a, b)| a.data.len() == b.len())
    }
}

fn decays(role: ParamRole, cfg: &TrainConfig) -> bool {
    match role {
        ParamRole::Weight | ParamRole::Embedding => true,
        ParamRole::Bias => cfg.decay_biases,
        ParamRole::Tap => cfg.decay_taps,
    }
}

/// One momentum SGD update:
/// `v <- momentum * v - lr * (g + weight_decay * theta)`, `theta <- theta + v`.
///
/// Gradients are checked for finiteness before anything changes. With
/// `clip_norm` set, gradients whose global norm exceeds it are rescaled first.
pub fn sgd_step<T: Real>(
    model: &mut Model<T>,
    grads: &Gradients<T>,
    velocity: &mut Momentum<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if !velocity.matches(model) {
        return Err(Error::shape_msg("sgd step", "momentum buffers do not match the model"));
    }
    let g = grads.tensors();
    {
        let p = model.tensors();
        if g.len() != p.len() || g.iter().zip(&p).any(|(a, b)| a.data.len() != b.data.len()) {
            return Err(Error::shape_msg("sgd step", "gradients do not match the model"));
        }
    }
    if let Some(t) = g.iter().find(|t| t.data.iter().any(|x| !x.is_finite())) {
        return Err(Error::Training(format!("non-finite gradient in tensor {}", t.name)));
    }
    let clip = match cfg.clip_norm {
        Some(max) => {
            let n = grads.norm();
            if n > max {
                T::lit(max / n)
            } else {
                T::one()
            }
        }
        None => T::one(),
    };
    let mu = T::lit(cfg.momentum);
    let lr = T::lit(lr);
    for ((p, g), v) in model.tensors_mut().into_iter().zip(&g).zip(&mut velocity.buffers) {
        let wd = if decays(p.role, cfg) { T::lit(cfg.weight_decay) } else { T::zero() };
        for ((theta, &gi), vi) in p.data.iter_mut().zip(g.data).zip(v.iter_mut()) {
            *vi = mu * *vi - lr * (gi * clip + wd * *theta);
            *theta += *vi;
        }
    }
    Ok(())
}
