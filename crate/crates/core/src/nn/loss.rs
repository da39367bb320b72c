use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean softmax cross-entropy over the batch and its gradient with respect to the logits.
pub fn cross_entropy_loss(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (batch, classes) = logits.dim();
    if labels.len() != batch {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: batch,
            got: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut loss = 0.0;
    for (row, &label) in logits.rows().into_iter().zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += log_sum - row[label];
    }
    let mut grad = softmax(logits);
    for (mut row, &label) in grad.rows_mut().into_iter().zip(labels) {
        row[label] -= 1.0;
    }
    let n = batch as f64;
    Ok((loss / n, grad / n))
}

pub fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

pub fn row_sums(m: &Array2<f64>) -> Array1<f64> {
    m.sum_axis(Axis(1))
}
