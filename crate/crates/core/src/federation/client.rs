use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::nn::loss::{cross_entropy, mse, softmax, softmax_backward};
use crate::nn::{backward_with_penultimate, forward, sgd_step, ForwardTrace, ModelState, Velocity};
use crate::rng::StreamRng;
use crate::tensor::Tensor;

/// Which activation a client exposes as its per-sample representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepresentationMode {
    #[default]
    Logits,
    Probabilities,
    Penultimate,
}

impl RepresentationMode {
    pub fn width(self, model: &ModelState) -> usize {
        let d = model.descriptor();
        match self {
            RepresentationMode::Logits | RepresentationMode::Probabilities => d.classes,
            RepresentationMode::Penultimate => d.fc_width,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RepresentationMode::Logits => "logits",
            RepresentationMode::Probabilities => "probabilities",
            RepresentationMode::Penultimate => "penultimate",
        }
    }

    /// Representation of sample `i` of a traced batch.
    pub fn extract(self, trace: &ForwardTrace, i: usize) -> Vec<f64> {
        match self {
            RepresentationMode::Logits => trace.logits.row(i).to_vec(),
            RepresentationMode::Probabilities => softmax(trace.logits.row(i)),
            RepresentationMode::Penultimate => trace.penultimate.row(i).to_vec(),
        }
    }
}

impl std::str::FromStr for RepresentationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logits" => Ok(RepresentationMode::Logits),
            "probabilities" | "probs" | "softmax" => Ok(RepresentationMode::Probabilities),
            "penultimate" | "prototype" => Ok(RepresentationMode::Penultimate),
            other => Err(Error::invalid(format!("unknown representation mode `{other}`"))),
        }
    }
}

/// How the per-sample distillation terms of a mini-batch are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistillReduction {
    /// `Σ_i MSE_i`: every distilled sample adds a full MSE term.
    #[default]
    Sum,
    /// `(1/m) Σ_i MSE_i` over the `m` distilled samples of the batch.
    Mean,
}

impl std::str::FromStr for DistillReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(DistillReduction::Sum),
            "mean" => Ok(DistillReduction::Mean),
            other => Err(Error::invalid(format!("unknown distillation reduction `{other}`"))),
        }
    }
}

/// Optimizer and local-loop settings shared by every strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub distill_reduction: DistillReduction,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            local_epochs: 1,
            distill_reduction: DistillReduction::Sum,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub shard: ClientShard,
    pub model: ModelState,
    pub velocity: Velocity,
}

impl ClientState {
    pub fn new(shard: ClientShard, model: ModelState) -> Self {
        ClientState {
            id: shard.client_id,
            velocity: Velocity::zeros_like(&model),
            shard,
            model,
        }
    }

    pub fn expertise(&self) -> usize {
        self.shard.expertise
    }

    /// Mean representation over the given local samples, in chunks of `chunk`.
    pub fn mean_representation(&self, indices: &[usize], mode: RepresentationMode, chunk: usize) -> Result<Vec<f64>> {
        let mut reps = Vec::with_capacity(indices.len());
        for part in indices.chunks(chunk.max(1)) {
            let (x, _) = self.shard.dataset.batch(part);
            let trace = forward(&self.model, &x)?;
            reps.extend((0..part.len()).map(|i| mode.extract(&trace, i)));
        }
        average_representations(&reps)
    }
}

/// Element-wise arithmetic mean of equally sized vectors.
pub fn average_representations(reps: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = reps.first().ok_or_else(|| Error::invalid("cannot average an empty sample"))?;
    let mut sum = vec![0.0; first.len()];
    for r in reps {
        if r.len() != sum.len() {
            return Err(Error::ShapeMismatch {
                context: "representation average",
                expected: vec![sum.len()],
                actual: vec![r.len()],
            });
        }
        for (s, v) in sum.iter_mut().zip(r) {
            *s += v;
        }
    }
    let inv = 1.0 / reps.len() as f64;
    Ok(sum.into_iter().map(|s| s * inv).collect())
}

/// Per-sample distillation targets used during local training.
#[derive(Debug, Clone, Copy)]
pub enum DistillTargets<'a> {
    None,
    /// Only samples labelled `class` are pulled toward `target`.
    Class { class: usize, target: &'a [f64] },
    /// Samples labelled `y` are pulled toward `targets[y]` when present.
    PerClass(&'a [Option<Vec<f64>>]),
}

impl DistillTargets<'_> {
    fn for_label(&self, y: usize) -> Option<&[f64]> {
        match *self {
            DistillTargets::None => None,
            DistillTargets::Class { class, target } => (class == y).then_some(target),
            DistillTargets::PerClass(t) => t.get(y).and_then(|v| v.as_deref()),
        }
    }
}

/// Loss terms averaged over the mini-batches of a local update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub ce: f64,
    pub distill: f64,
    pub total: f64,
    pub batches: usize,
}

/// Loss and logit/penultimate gradients for one mini-batch.
///
/// `loss = CE(batch) + λ · Σ_{i: target(y_i) exists} MSE(rep(x_i), target(y_i))`,
/// the sum divided by the number of distilled samples under [`DistillReduction::Mean`].
/// With `λ = 0` the distillation term is still reported but contributes no gradient.
pub fn batch_loss(
    trace: &ForwardTrace,
    labels: &[usize],
    lambda: f64,
    mode: RepresentationMode,
    targets: &DistillTargets,
    reduction: DistillReduction,
) -> Result<(f64, f64, Tensor, Option<Tensor>)> {
    let (ce, mut dlogits) = cross_entropy(&trace.logits, labels)?;
    let members = labels.iter().filter(|&&y| targets.for_label(y).is_some()).count();
    let scale = match reduction {
        DistillReduction::Mean if members > 0 => 1.0 / members as f64,
        _ => 1.0,
    };
    let mut distill = 0.0;
    let mut dpen: Option<Tensor> = None;
    for (i, &y) in labels.iter().enumerate() {
        let Some(target) = targets.for_label(y) else {
            continue;
        };
        let rep = mode.extract(trace, i);
        let (loss, grad) = mse(&rep, target)?;
        distill += scale * loss;
        if lambda == 0.0 {
            continue;
        }
        let grad: Vec<f64> = grad.into_iter().map(|g| lambda * scale * g).collect();
        match mode {
            RepresentationMode::Logits => {
                for (d, g) in dlogits.row_mut(i).iter_mut().zip(grad) {
                    *d += g;
                }
            }
            RepresentationMode::Probabilities => {
                let dz = softmax_backward(&rep, &grad);
                for (d, g) in dlogits.row_mut(i).iter_mut().zip(dz) {
                    *d += g;
                }
            }
            RepresentationMode::Penultimate => {
                let dp = dpen.get_or_insert_with(|| Tensor::zeros(trace.penultimate.shape()));
                for (d, g) in dp.row_mut(i).iter_mut().zip(grad) {
                    *d += g;
                }
            }
        }
    }
    Ok((ce, distill, dlogits, dpen))
}

/// Runs `hyper.local_epochs` shuffled passes over the client's data.
pub fn train_local(
    client: &mut ClientState,
    hyper: &TrainHyper,
    lambda: f64,
    mode: RepresentationMode,
    targets: &DistillTargets,
    rng: &mut StreamRng,
    round: usize,
) -> Result<LossSummary> {
    if hyper.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut order: Vec<usize> = (0..client.shard.dataset.len()).collect();
    let mut summary = LossSummary::default();
    for _ in 0..hyper.local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(hyper.batch_size) {
            let (x, y) = client.shard.dataset.batch(chunk);
            let trace = forward(&client.model, &x)?;
            let (ce, distill, dlogits, dpen) = batch_loss(&trace, &y, lambda, mode, targets, hyper.distill_reduction)?;
            let total = ce + lambda * distill;
            if !total.is_finite() {
                return Err(Error::Diverged {
                    round,
                    detail: format!("client {} loss {total}", client.id),
                });
            }
            let grads = backward_with_penultimate(&client.model, &trace, &dlogits, dpen.as_ref())?;
            sgd_step(&mut client.model, &grads, hyper.lr, hyper.momentum, &mut client.velocity).map_err(|e| {
                Error::Diverged {
                    round,
                    detail: format!("client {}: {e}", client.id),
                }
            })?;
            summary.ce += ce;
            summary.distill += distill;
            summary.total += total;
            summary.batches += 1;
        }
    }
    if summary.batches > 0 {
        let inv = 1.0 / summary.batches as f64;
        summary.ce *= inv;
        summary.distill *= inv;
        summary.total *= inv;
    }
    Ok(summary)
}
