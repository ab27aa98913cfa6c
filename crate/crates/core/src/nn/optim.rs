use crate::error::{Error, Result};

use super::model::{Gradients, ModelState, Velocity};

/// Heavy-ball SGD: `v ← momentum·v + g`, `p ← p − lr·v`.
///
/// The whole step is rejected, leaving model and velocity untouched, if any
/// gradient element is non-finite.
pub fn sgd_step(
    model: &mut ModelState,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
    velocity: &mut Velocity,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::invalid(format!("momentum must be in [0, 1), got {momentum}")));
    }
    grads.ensure_congruent(model)?;
    if velocity.tensors.len() != grads.tensors.len() {
        return Err(Error::invalid("velocity does not match model"));
    }
    for (v, g) in velocity.tensors.iter().zip(&grads.tensors) {
        v.ensure_shape("velocity", g.shape())?;
    }
    if let Some((p, _)) = model
        .params()
        .iter()
        .zip(&grads.tensors)
        .find(|(_, g)| !g.is_finite())
    {
        return Err(Error::NonFinite(format!("gradient of {}", p.name)));
    }
    for ((p, g), v) in model
        .params_mut()
        .iter_mut()
        .zip(&grads.tensors)
        .zip(&mut velocity.tensors)
    {
        for ((pv, &gv), vv) in p.tensor.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}
