use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            context: "cross_entropy logits",
            expected: vec![labels.len(), 0],
            actual: logits.shape().to_vec(),
        });
    }
    let (n, classes) = (logits.rows(), logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            context: "cross_entropy labels",
            expected: vec![n],
            actual: vec![labels.len()],
        });
    }
    let mut grad = Tensor::zeros(&[n, classes]);
    let mut loss = 0.0;
    let scale = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::InvalidLabel { label: y, classes });
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        let g = grad.row_mut(i);
        for (c, gv) in g.iter_mut().enumerate() {
            *gv = (row[c] - log_z).exp() * scale;
        }
        g[y] -= scale;
    }
    Ok((loss * scale, grad))
}

/// Mean squared error over all elements and its gradient w.r.t. `a`.
pub fn mse(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>)> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch {
            context: "mse",
            expected: vec![a.len()],
            actual: vec![b.len()],
        });
    }
    let inv = 1.0 / a.len() as f64;
    let mut loss = 0.0;
    let grad = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            loss += d * d;
            2.0 * d * inv
        })
        .collect();
    Ok((loss * inv, grad))
}

/// Tensor form of [`mse`]; shapes must match exactly.
pub fn mse_tensor(a: &Tensor, b: &Tensor) -> Result<(f64, Tensor)> {
    b.ensure_shape("mse", a.shape())?;
    let (loss, grad) = mse(a.data(), b.data())?;
    Ok((loss, Tensor::new(a.shape().to_vec(), grad)?))
}

/// Pulls a gradient on softmax probabilities back to the logits.
pub fn softmax_backward(probs: &[f64], dprobs: &[f64]) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(dprobs).map(|(p, g)| p * g).sum();
    probs.iter().zip(dprobs).map(|(p, g)| p * (g - inner)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln2() {
        let l = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        for y in 0..2 {
            let (loss, _) = cross_entropy(&l, &[y]).unwrap();
            assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn confident_logits_are_stable() {
        let l = Tensor::from_rows(&[vec![1000.0, 0.0]]).unwrap();
        let (loss, g) = cross_entropy(&l, &[0]).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(g.is_finite());
        let l = Tensor::from_rows(&[vec![-1e4, 1e4]]).unwrap();
        let (loss, g) = cross_entropy(&l, &[0]).unwrap();
        assert!(loss.is_finite() && (loss - 2e4).abs() < 1e-6);
        assert!(g.is_finite());
    }

    #[test]
    fn out_of_range_label_rejected() {
        let l = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            cross_entropy(&l, &[2]),
            Err(Error::InvalidLabel { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn mse_hand_values() {
        assert_eq!(mse(&[1.5, -2.0], &[1.5, -2.0]).unwrap().0, 0.0);
        let (loss, g) = mse(&[2.0, 4.0], &[0.0, 0.0]).unwrap();
        assert_eq!(loss, 10.0);
        assert_eq!(g, vec![2.0, 4.0]);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        let a = Tensor::zeros(&[2, 2]);
        assert!(mse_tensor(&a, &Tensor::zeros(&[4, 1])).is_err());
    }
}
