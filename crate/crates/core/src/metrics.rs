//! Confusion matrices and per-class / macro-averaged precision and recall.
//!
//! Per class `k`: `TP = cm[k][k]`, `FP = sum_{j != k} cm[j][k]`,
//! `FN = sum_{j != k} cm[k][j]`. Precision `TP / (TP + FP)` and recall
//! `TP / (TP + FN)` are `None` when their denominator is zero, and such
//! classes are left out of the corresponding mean.

use crate::error::{Error, Result};

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    class_names: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let k = class_names.len();
        ConfusionMatrix {
            class_names,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(class_names: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = class_names.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::dim(format!("confusion matrix must be {k}x{k}")));
        }
        Ok(ConfusionMatrix { class_names, counts })
    }

    /// Counts `(true, predicted)` class-name pairs.
    pub fn accumulate<S: AsRef<str>>(class_names: Vec<String>, pairs: &[(S, S)]) -> Result<Self> {
        let mut cm = ConfusionMatrix::new(class_names);
        for (t, p) in pairs {
            let t = cm.index_of(t.as_ref())?;
            let p = cm.index_of(p.as_ref())?;
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.class_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn precision_recall(&self) -> PrecisionRecall {
        let k = self.class_names.len();
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let tp = self.counts[c][c];
                let fp = (0..k).filter(|&j| j != c).map(|j| self.counts[j][c]).sum();
                let fn_ = (0..k).filter(|&j| j != c).map(|j| self.counts[c][j]).sum();
                ClassMetrics {
                    class_name: self.class_names[c].clone(),
                    tp,
                    fp,
                    fn_,
                    precision: ratio(tp, tp + fp),
                    recall: ratio(tp, tp + fn_),
                }
            })
            .collect();
        let mean_precision = mean_defined(per_class.iter().map(|m| m.precision));
        let mean_recall = mean_defined(per_class.iter().map(|m| m.recall));
        PrecisionRecall {
            per_class,
            mean_precision,
            mean_recall,
        }
    }
}

/// `num / den`, or `None` for a zero denominator.
pub fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class_name: String,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionRecall {
    pub per_class: Vec<ClassMetrics>,
    /// Unweighted mean over classes with a defined precision.
    pub mean_precision: Option<f64>,
    pub mean_recall: Option<f64>,
}

impl PrecisionRecall {
    /// True when some class had an undefined precision or recall.
    pub fn has_undefined(&self) -> bool {
        self.per_class
            .iter()
            .any(|m| m.precision.is_none() || m.recall.is_none())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        ["block", "cone", "sphere", "cylinder"][..k]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn empty_and_all_correct() {
        let cm = ConfusionMatrix::accumulate::<&str>(names(4), &[]).unwrap();
        assert_eq!(cm.total(), 0);
        let pairs = vec![("cone", "cone"); 10];
        let cm = ConfusionMatrix::accumulate(names(4), &pairs).unwrap();
        assert_eq!(cm.counts()[1][1], 10);
        assert_eq!(cm.total(), 10);
    }

    #[test]
    fn unknown_class() {
        assert!(matches!(
            ConfusionMatrix::accumulate(names(2), &[("block", "mine")]),
            Err(Error::UnknownClass(_))
        ));
    }

    #[test]
    fn order_independent() {
        let mut pairs = vec![("block", "cone"), ("cone", "cone"), ("block", "block"), ("cone", "block")];
        let a = ConfusionMatrix::accumulate(names(2), &pairs).unwrap();
        pairs.reverse();
        assert_eq!(a, ConfusionMatrix::accumulate(names(2), &pairs).unwrap());
    }

    #[test]
    fn nine_one_one() {
        // class 0: TP 9, FP 1, FN 1
        let cm = ConfusionMatrix::from_counts(names(2), vec![vec![9, 1], vec![1, 0]]).unwrap();
        let pr = cm.precision_recall();
        assert_eq!(pr.per_class[0].precision, Some(0.9));
        assert_eq!(pr.per_class[0].recall, Some(0.9));
    }

    #[test]
    fn never_predicted_class_is_undefined() {
        let cm = ConfusionMatrix::from_counts(names(2), vec![vec![5, 0], vec![3, 0]]).unwrap();
        let pr = cm.precision_recall();
        assert_eq!(pr.per_class[1].precision, None);
        assert_eq!(pr.per_class[1].recall, Some(0.0));
        assert_eq!(pr.mean_precision, Some(5.0 / 8.0));
        assert!(pr.has_undefined());
    }
}
