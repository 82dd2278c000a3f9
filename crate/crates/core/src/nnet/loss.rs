/// Clamp applied inside the logarithm of the cross-entropy.
pub const LOG_EPS: f64 = 1e-12;

/// Numerically stable softmax of one row of logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of one probability row against a one-hot (or soft) target.
pub fn sample_cross_entropy(probs: &[f64], target: &[f64]) -> f64 {
    -probs
        .iter()
        .zip(target)
        .map(|(&p, &y)| if y == 0.0 { 0.0 } else { y * p.max(LOG_EPS).ln() })
        .sum::<f64>()
}

/// Batch-mean cross-entropy over rows of `probs` and `onehot`.
pub fn cross_entropy(probs: &[Vec<f64>], onehot: &[Vec<f64>]) -> f64 {
    assert_eq!(probs.len(), onehot.len(), "batch size mismatch");
    if probs.is_empty() {
        return 0.0;
    }
    probs
        .iter()
        .zip(onehot)
        .map(|(p, y)| sample_cross_entropy(p, y))
        .sum::<f64>()
        / probs.len() as f64
}

/// Gradient of the batch-mean loss w.r.t. one row of logits:
/// `(softmax(z) - y) / batch`.
pub fn logits_grad(probs: &[f64], class: usize, batch: usize) -> Vec<f64> {
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| (p - if i == class { 1.0 } else { 0.0 }) / batch as f64)
        .collect()
}

pub fn one_hot(class: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[class] = 1.0;
    v
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
