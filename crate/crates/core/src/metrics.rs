//! Minority-class accuracy and robustness summaries.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::federation::ClientState;
use crate::nn::{forward, predict, ModelState};

/// Standard-deviation convention used for the across-skew summary.
pub const SD_CONVENTION: &str = "population";

const EVAL_CHUNK: usize = 128;

/// Argmax predictions (lowest index on ties) for every image of `data`.
pub fn predict_dataset(model: &ModelState, data: &Dataset) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for part in all.chunks(EVAL_CHUNK) {
        let (x, _) = data.batch(part);
        out.extend(predict(&forward(model, &x)?.logits));
    }
    Ok(out)
}

/// `confusion[true][predicted]` counts.
pub fn confusion_matrix(model: &ModelState, data: &Dataset) -> Result<Vec<Vec<usize>>> {
    let classes = model.descriptor().classes;
    let mut m = vec![vec![0; classes]; classes];
    for (&y, p) in data.labels().iter().zip(predict_dataset(model, data)?) {
        m[y][p] += 1;
    }
    Ok(m)
}

fn accuracy_from_confusion(confusion: &[Vec<usize>], class: usize) -> Result<(usize, usize)> {
    let total: usize = confusion.get(class).map_or(0, |row| row.iter().sum());
    if total == 0 {
        return Err(Error::invalid(format!("evaluation set has no images of class {class}")));
    }
    Ok((confusion[class][class], total))
}

/// Correctly classified minority images / all minority images.
pub fn minority_accuracy(model: &ModelState, eval: &Dataset, minority: usize) -> Result<f64> {
    let (correct, total) = accuracy_from_confusion(&confusion_matrix(model, eval)?, minority)?;
    Ok(correct as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEval {
    pub client: usize,
    pub minority: usize,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalMeta {
    pub strategy: String,
    pub skew: u32,
    pub images_per_class: usize,
    pub clients: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub clients: Vec<ClientEval>,
    pub mean_accuracy: f64,
    pub meta: EvalMeta,
}

/// Mean of a non-empty slice.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn report_from_accuracies(clients: Vec<ClientEval>, meta: EvalMeta) -> Result<EvalReport> {
    if clients.is_empty() {
        return Err(Error::invalid("no clients to report"));
    }
    let accs: Vec<f64> = clients.iter().map(|c| c.accuracy).collect();
    Ok(EvalReport {
        mean_accuracy: mean(&accs),
        clients,
        meta,
    })
}

/// Each client's model scored on the holdout images of that client's minority class.
pub fn evaluate_run(clients: &[ClientState], holdout: &Dataset, meta: EvalMeta) -> Result<EvalReport> {
    let evals = clients
        .iter()
        .map(|c| {
            let confusion = confusion_matrix(&c.model, holdout)?;
            let (correct, total) = accuracy_from_confusion(&confusion, c.shard.minority)?;
            Ok(ClientEval {
                client: c.id,
                minority: c.shard.minority,
                correct,
                total,
                accuracy: correct as f64 / total as f64,
                confusion,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    report_from_accuracies(evals, meta)
}

/// Population standard deviation of accuracies (as fractions) across skews.
pub fn std_across_skews(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::invalid(format!(
            "standard deviation needs at least 2 values, got {}",
            values.len()
        )));
    }
    // Shifted by the first value so identical inputs give exactly zero.
    let n = values.len() as f64;
    let d: Vec<f64> = values.iter().map(|v| v - values[0]).collect();
    let m = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt())
}
