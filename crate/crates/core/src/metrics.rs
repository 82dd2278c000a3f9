//! Confusion-matrix based evaluation: accuracy, support-weighted F1 and the
//! Matthews correlation coefficient (binary and the multiclass R_K form).
//!
//! Rows index the true class, columns the predicted class. Every metric
//! returns 0 where its denominator vanishes instead of NaN, so fold averages
//! stay total.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let c = class_names.len();
        Self {
            counts: vec![vec![0; c]; c],
            class_names,
        }
    }

    pub fn with_classes(n: usize) -> Self {
        Self::new((0..n).map(|i| i.to_string()).collect())
    }

    pub fn from_counts(counts: Vec<Vec<u64>>, class_names: Vec<String>) -> Result<Self> {
        let c = class_names.len();
        if counts.len() != c || counts.iter().any(|r| r.len() != c) {
            return Err(Error::ShapeMismatch {
                expected: vec![c, c],
                got: vec![counts.len(), counts.first().map_or(0, Vec::len)],
            });
        }
        Ok(Self {
            counts,
            class_names,
        })
    }

    /// Builds the matrix from parallel `(true, predicted)` index streams.
    pub fn from_pairs(truth: &[usize], predicted: &[usize], class_names: Vec<String>) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![truth.len()],
                got: vec![predicted.len()],
            });
        }
        let mut cm = Self::new(class_names);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let c = self.n_classes();
        if truth >= c || predicted >= c {
            return Err(Error::InvalidParameter(format!(
                "class index out of range: ({truth}, {predicted}) with {c} classes"
            )));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Row sum: number of examples whose true class is `k`.
    pub fn support(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    /// Column sum: number of examples predicted as `k`.
    pub fn predicted_count(&self, k: usize) -> u64 {
        self.counts.iter().map(|r| r[k]).sum()
    }

    pub fn true_positives(&self, k: usize) -> u64 {
        self.counts[k][k]
    }

    pub fn false_positives(&self, k: usize) -> u64 {
        self.predicted_count(k) - self.counts[k][k]
    }

    pub fn false_negatives(&self, k: usize) -> u64 {
        self.support(k) - self.counts[k][k]
    }

    pub fn true_negatives(&self, k: usize) -> u64 {
        self.total() - self.support(k) - self.false_positives(k)
    }

    /// Applies a class relabelling `perm[old] = new` to rows, columns and names.
    pub fn permuted(&self, perm: &[usize]) -> ConfusionMatrix {
        let c = self.n_classes();
        let mut counts = vec![vec![0; c]; c];
        let mut names = vec![String::new(); c];
        for i in 0..c {
            names[perm[i]] = self.class_names[i].clone();
            for j in 0..c {
                counts[perm[i]][perm[j]] = self.counts[i][j];
            }
        }
        ConfusionMatrix {
            counts,
            class_names: names,
        }
    }

    /// One-vs-rest accuracy of class `k`: (TP + TN) / total.
    pub fn class_accuracy(&self, k: usize) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (self.true_positives(k) + self.true_negatives(k)) as f64 / total as f64
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .class_names
            .iter()
            .map(String::len)
            .chain(self.counts.iter().flatten().map(|c| c.to_string().len()))
            .max()
            .unwrap_or(1)
            .max(4);
        write!(f, "{:>width$}", "")?;
        for name in &self.class_names {
            write!(f, " {name:>width$}")?;
        }
        writeln!(f)?;
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            write!(f, "{name:>width$}")?;
            for c in row {
                write!(f, " {c:>width$}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix"));
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Support-weighted mean of per-class F1. Classes with no true, predicted or
/// missed examples score 0 (with zero weight, so they do not matter).
pub fn weighted_f1(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix"));
    }
    let mut acc = 0.0;
    for k in 0..cm.n_classes() {
        let tp = cm.true_positives(k) as f64;
        let denom = 2.0 * tp + cm.false_positives(k) as f64 + cm.false_negatives(k) as f64;
        let f1 = if denom > 0.0 { 2.0 * tp / denom } else { 0.0 };
        acc += cm.support(k) as f64 * f1;
    }
    Ok(acc / total as f64)
}

/// Binary MCC. Any zero marginal makes the coefficient 0.
pub fn mcc_binary(tp: u64, fp: u64, tn: u64, fn_: u64) -> f64 {
    let (tp, fp, tn, fn_) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    (tp * tn - fp * fn_) / denom.sqrt()
}

/// Multiclass MCC (Gorodkin's R_K).
pub fn mcc_multiclass(cm: &ConfusionMatrix) -> Result<f64> {
    let s = cm.total();
    if s == 0 {
        return Err(Error::Empty("confusion matrix"));
    }
    let s = s as f64;
    let c = cm.trace() as f64;
    let mut pt = 0.0;
    let mut pp = 0.0;
    let mut tt = 0.0;
    for k in 0..cm.n_classes() {
        let t = cm.support(k) as f64;
        let p = cm.predicted_count(k) as f64;
        pt += p * t;
        pp += p * p;
        tt += t * t;
    }
    let denom = (s * s - pp) * (s * s - tt);
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((c * s - pt) / denom.sqrt())
}

/// The three headline numbers reported per experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub mcc: f64,
}

pub fn scores(cm: &ConfusionMatrix) -> Result<Scores> {
    Ok(Scores {
        accuracy: accuracy(cm)?,
        weighted_f1: weighted_f1(cm)?,
        mcc: mcc_multiclass(cm)?,
    })
}
