//! Central-difference gradient oracle.
//!
//! Cost is two forward passes per scalar parameter, so this is meant for the
//! tiny configurations used in tests and the `gradcheck` command.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

use super::loss::cross_entropy;
use super::model::{init_model, random_batch, ArchDescriptor, Gradients, ModelState};
use super::network::{backward, forward};

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {eps}")));
    }
    Ok(())
}

/// `(f(p+eps) - f(p-eps)) / 2eps` for every coordinate of `params`.
pub fn central_difference<F>(params: &mut [f64], eps: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    check_eps(eps)?;
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + eps;
        let up = f(params);
        params[i] = orig - eps;
        let down = f(params);
        params[i] = orig;
        out.push((up - down) / (2.0 * eps));
    }
    Ok(out)
}

/// Finite-difference estimate of the mean cross-entropy gradient.
pub fn finite_diff_gradients(
    model: &ModelState,
    batch: &Tensor,
    labels: &[usize],
    eps: f64,
) -> Result<Gradients> {
    check_eps(eps)?;
    // Validate shapes once so the probe closure can unwrap.
    let logits = forward(model, batch)?.logits;
    cross_entropy(&logits, labels)?;

    let mut probe = model.clone();
    let mut grads = Gradients::zeros_like(model);
    for (pi, g) in grads.tensors.iter_mut().enumerate() {
        for j in 0..g.len() {
            let orig = probe.params()[pi].tensor.data()[j];
            let mut eval = |value: f64| {
                probe.params_mut()[pi].tensor.data_mut()[j] = value;
                let t = forward(&probe, batch).expect("validated shapes");
                cross_entropy(&t.logits, labels).expect("validated labels").0
            };
            let up = eval(orig + eps);
            let down = eval(orig - eps);
            probe.params_mut()[pi].tensor.data_mut()[j] = orig;
            g.data_mut()[j] = (up - down) / (2.0 * eps);
        }
    }
    Ok(grads)
}

/// `|a - b| / max(|a|, |b|, 1e-7)`; the floor keeps near-zero gradients from
/// turning round-off into large ratios.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

#[derive(Debug, Clone)]
pub struct GradCheckOutcome {
    pub descriptor: ArchDescriptor,
    pub batch: usize,
    pub parameters: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
}

/// Compares analytic and finite-difference gradients on one model and batch.
pub fn compare(model: &ModelState, batch: &Tensor, labels: &[usize], eps: f64) -> Result<GradCheckOutcome> {
    let trace = forward(model, batch)?;
    let (_, dlogits) = cross_entropy(&trace.logits, labels)?;
    let analytic = backward(model, &trace, &dlogits)?;
    let numeric = finite_diff_gradients(model, batch, labels, eps)?;
    let mut max_rel_err = 0.0;
    let mut worst_param = String::new();
    for ((p, a), n) in model.params().iter().zip(&analytic.tensors).zip(&numeric.tensors) {
        for (&x, &y) in a.data().iter().zip(n.data()) {
            let e = relative_error(x, y);
            if e > max_rel_err {
                max_rel_err = e;
                worst_param = p.name.clone();
            }
        }
    }
    Ok(GradCheckOutcome {
        descriptor: *model.descriptor(),
        batch: labels.len(),
        parameters: model.param_count(),
        max_rel_err,
        worst_param,
    })
}

/// Random tiny configuration on an 8×8 input.
pub fn random_tiny_descriptor(rng: &mut impl Rng) -> ArchDescriptor {
    ArchDescriptor {
        input_side: 8,
        kernel: 2,
        conv_widths: [rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(2..=5)],
        fc_width: rng.random_range(3..=8),
        classes: rng.random_range(2..=4),
    }
}

/// Runs the gradient oracle over `configs` random tiny networks.
pub fn run_suite(configs: usize, seed: u64, eps: f64) -> Result<Vec<GradCheckOutcome>> {
    (0..configs as u64)
        .map(|i| {
            let mut rng = rng::stream(seed, Purpose::Cell, &[i]);
            let d = random_tiny_descriptor(&mut rng);
            let model = init_model(d, rng.random())?;
            let batch_size = rng.random_range(1..=3);
            let batch = random_batch(&mut rng, batch_size, d.input_side);
            let labels: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..d.classes)).collect();
            compare(&model, &batch, &labels, eps)
        })
        .collect()
}
