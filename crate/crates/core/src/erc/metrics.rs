//! Classification metrics: confusion matrix, per-class and macro F1,
//! weighted accuracy, and the paired t-test used across repeated runs.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Square count matrix: rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn count(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth][predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes()).map(|c| self.counts[c][c]).sum()
    }

    pub fn true_count(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn predicted_count(&self, class: usize) -> usize {
        self.counts.iter().map(|row| row[class]).sum()
    }
}

/// Per-class F1 and their unweighted mean. A class absent from both truth
/// and predictions scores 0, which keeps the macro average conservative.
pub fn macro_f1(m: &ConfusionMatrix) -> Result<(f64, Vec<f64>)> {
    if m.total() == 0 {
        return Err(Error::EmptyConfusionMatrix);
    }
    let per_class: Vec<f64> = (0..m.classes())
        .map(|c| {
            let tp = m.count(c, c) as f64;
            let predicted = m.predicted_count(c) as f64;
            let truth = m.true_count(c) as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if truth > 0.0 { tp / truth } else { 0.0 };
            if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            }
        })
        .collect();
    let macro_avg = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok((macro_avg, per_class))
}

/// Per-class recall weighted by each class's share of true instances.
/// Algebraically this equals trace/total; the summed form is kept because
/// it is the definition being reported.
pub fn weighted_accuracy(m: &ConfusionMatrix) -> Result<f64> {
    let total = m.total();
    if total == 0 {
        return Err(Error::EmptyConfusionMatrix);
    }
    let mut acc = 0.0;
    for c in 0..m.classes() {
        let truth = m.true_count(c);
        if truth == 0 {
            continue;
        }
        let share = truth as f64 / total as f64;
        let recall = m.count(c, c) as f64 / truth as f64;
        acc += share * recall;
    }
    Ok(acc)
}

/// Two-tailed paired t-test over equal-length samples. Degenerate inputs:
/// all-zero differences give (t=0, p=1); zero variance with a non-zero mean
/// gives (t=±inf, p=0).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::SampleLengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::TooFewSamples { n: a.len() });
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        });
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid dof");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok((t, p))
}
