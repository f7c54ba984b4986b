use serde::{Deserialize, Serialize};

use super::network::Gradients;
use super::tensor::Scalar;
use super::train::NetworkModel;
use crate::error::{Error, Result};

/// RMSProp hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp {
            lr: 1e-3,
            decay: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// `s <- decay * s + (1 - decay) * g^2; w <- w - lr * g / (sqrt(s) + eps)`
pub fn rmsprop_step<S: Scalar>(
    model: &mut NetworkModel<S>,
    grads: &Gradients<S>,
    hp: &RmsProp,
) -> Result<()> {
    let params = model.net.params_mut();
    if grads.layers.len() != params.len() || model.opt_state.len() != params.len() {
        return Err(Error::Shape {
            expected: vec![params.len()],
            actual: vec![grads.layers.len(), model.opt_state.len()],
        });
    }
    for ((p, g), s) in params.iter_mut().zip(&grads.layers).zip(&mut model.opt_state) {
        if p.weight.len() != g.weight.len()
            || p.bias.len() != g.bias.len()
            || s.weight.len() != p.weight.len()
            || s.bias.len() != p.bias.len()
        {
            return Err(Error::Shape {
                expected: vec![p.weight.len(), p.bias.len()],
                actual: vec![g.weight.len(), g.bias.len()],
            });
        }
        update(&mut p.weight, &g.weight, &mut s.weight, hp);
        update(&mut p.bias, &g.bias, &mut s.bias, hp);
    }
    Ok(())
}

fn update<S: Scalar>(w: &mut [S], g: &[S], s: &mut [S], hp: &RmsProp) {
    for ((w, g), s) in w.iter_mut().zip(g).zip(s.iter_mut()) {
        let gv = g.as_f64();
        let sv = hp.decay * s.as_f64() + (1.0 - hp.decay) * gv * gv;
        *s = S::from_f64(sv);
        *w = S::from_f64(w.as_f64() - hp.lr * gv / (sv.sqrt() + hp.epsilon));
    }
}
