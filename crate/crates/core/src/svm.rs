//! One-vs-rest linear SVM over standardized feature vectors.
//!
//! Each binary problem minimizes the L1-loss (hinge) primal
//!
//! ```text
//! P(w, b) = 0.5 * (|w|^2 + b^2) + C * sum_i max(0, 1 - y_i (w . x_i + b))
//! ```
//!
//! with the bias folded in as a constant-1 feature (so it is regularized
//! along with `w`). It is solved by dual coordinate descent on
//! `max_a sum(a) - 0.5 a^T Q a, 0 <= a_i <= C`, visiting coordinates in a
//! fresh seeded permutation each epoch and stopping once the duality gap
//! falls below the tolerance.
//!
//! Normalized scores are the softmax of the K decision values. The
//! detector's threshold is expressed on that scale.

use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::softmax;

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_EPOCHS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    class_names: Vec<String>,
    vectors: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl FeatureSet {
    pub fn new(class_names: Vec<String>, vectors: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(Error::arg(format!(
                "{} vectors but {} labels",
                vectors.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::arg(format!("label {l} out of range for {} classes", class_names.len())));
        }
        if let Some(first) = vectors.first() {
            if vectors.iter().any(|v| v.len() != first.len()) {
                return Err(Error::dim("feature vectors differ in length"));
            }
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        Ok(FeatureSet {
            class_names,
            vectors,
            labels,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, indices: &[usize]) -> FeatureSet {
        FeatureSet {
            class_names: self.class_names.clone(),
            vectors: indices.iter().map(|&i| self.vectors[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    pub seed: u64,
    /// Stop when the duality gap drops below this.
    pub tolerance: f64,
    pub max_epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: DEFAULT_C,
            seed: 0,
            tolerance: DEFAULT_TOLERANCE,
            max_epochs: DEFAULT_MAX_EPOCHS,
        }
    }
}

/// Result of one binary (class vs rest) problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution {
    pub w: Vec<f64>,
    pub b: f64,
    pub alpha: Vec<f64>,
    pub epochs: usize,
    /// Primal objective after each epoch.
    pub primal_history: Vec<f64>,
    pub duality_gap: f64,
}

/// Primal objective of `(w, b)` on `xs` with `±1` labels `ys`.
pub fn primal_objective(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[f64], c: f64) -> f64 {
    let reg = 0.5 * (dot(w, w) + b * b);
    let loss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| (1.0 - y * (dot(w, x) + b)).max(0.0))
        .sum();
    reg + c * loss
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dual coordinate descent for one binary problem. `ys` must be `±1`.
pub fn solve_binary(xs: &[Vec<f64>], ys: &[f64], c: f64, seed: u64, tolerance: f64, max_epochs: usize) -> BinarySolution {
    let n = xs.len();
    let dim = xs.first().map_or(0, Vec::len);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut alpha = vec![0.0; n];
    // diagonal of Q for the bias-augmented vectors
    let qd: Vec<f64> = xs.iter().map(|x| dot(x, x) + 1.0).collect();
    let mut rng = SplitMix64::new(seed);
    let mut primal_history = Vec::new();
    let mut gap = f64::INFINITY;
    let mut epochs = 0;
    while epochs < max_epochs {
        epochs += 1;
        for i in rng.permutation(n) {
            let (x, y) = (&xs[i], ys[i]);
            let g = y * (dot(&w, x) + b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                g
            };
            if pg == 0.0 {
                continue;
            }
            let old = alpha[i];
            alpha[i] = (old - g / qd[i]).clamp(0.0, c);
            let step = (alpha[i] - old) * y;
            if step != 0.0 {
                for (wj, xj) in w.iter_mut().zip(x) {
                    *wj += step * xj;
                }
                b += step;
            }
        }
        let primal = primal_objective(&w, b, xs, ys, c);
        let dual = alpha.iter().sum::<f64>() - 0.5 * (dot(&w, &w) + b * b);
        gap = primal - dual;
        primal_history.push(primal);
        if gap < tolerance {
            break;
        }
    }
    BinarySolution {
        w,
        b,
        alpha,
        epochs,
        primal_history,
        duality_gap: gap,
    }
}

/// Per-dimension standardization statistics; population variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Dimensions with (numerically) zero variance; their scale is 1.
    pub constant_dims: Vec<usize>,
}

impl Standardizer {
    pub fn fit(vectors: &[Vec<f64>]) -> Standardizer {
        let dim = vectors.first().map_or(0, Vec::len);
        let n = vectors.len() as f64;
        let mut mean = vec![0.0; dim];
        for v in vectors {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for v in vectors {
            for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let mut constant_dims = Vec::new();
        let scale = var
            .iter()
            .zip(&mean)
            .enumerate()
            .map(|(j, (s, m))| {
                let sd = (s / n).sqrt();
                if sd <= 1e-12 * m.abs().max(1.0) {
                    constant_dims.push(j);
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Standardizer {
            mean,
            scale,
            constant_dims,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_index: usize,
    pub class_name: String,
    /// Normalized (softmax) score of the winning class.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    class_names: Vec<String>,
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    c: f64,
    mean: Vec<f64>,
    scale: Vec<f64>,
    constant_dims: Vec<usize>,
}

impl SvmModel {
    pub fn from_parts(
        class_names: Vec<String>,
        weights: Vec<Vec<f64>>,
        biases: Vec<f64>,
        c: f64,
        mean: Vec<f64>,
        scale: Vec<f64>,
    ) -> Result<Self> {
        let k = class_names.len();
        if k < 2 {
            return Err(Error::arg(format!("SVM needs at least 2 classes, got {k}")));
        }
        if weights.len() != k || biases.len() != k {
            return Err(Error::dim("one weight vector and bias per class required"));
        }
        let dim = mean.len();
        if scale.len() != dim || weights.iter().any(|w| w.len() != dim) {
            return Err(Error::dim("weight, mean and scale vectors must share one dimension"));
        }
        if scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::arg("standardization scales must be positive and finite"));
        }
        if weights.iter().flatten().chain(&biases).chain(&mean).any(|v| !v.is_finite()) || !(c > 0.0) {
            return Err(Error::NonFinite("SVM parameters"));
        }
        Ok(SvmModel {
            class_names,
            weights,
            biases,
            c,
            mean,
            scale,
            constant_dims: Vec::new(),
        })
    }

    pub fn train(features: &FeatureSet, config: &SvmConfig) -> Result<Self> {
        Self::train_with_negatives(features, &[], config)
    }

    /// Like [`SvmModel::train`], with extra vectors that belong to no class
    /// (e.g. empty seabed) added as negatives to every one-vs-rest problem.
    /// They also enter the standardization statistics.
    pub fn train_with_negatives(features: &FeatureSet, negatives: &[Vec<f64>], config: &SvmConfig) -> Result<Self> {
        let k = features.class_names().len();
        if let Some(bad) = negatives.iter().find(|v| v.len() != features.dim()) {
            return Err(Error::dim(format!(
                "negative vector has length {}, features have {}",
                bad.len(),
                features.dim()
            )));
        }
        if negatives.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("negative feature vector"));
        }
        if !(config.c > 0.0 && config.c.is_finite()) {
            return Err(Error::arg(format!("C must be positive, got {}", config.c)));
        }
        if k < 2 {
            return Err(Error::Training(format!("need at least 2 classes, got {k}")));
        }
        let mut counts = vec![0usize; k];
        for &l in features.labels() {
            counts[l] += 1;
        }
        if let Some(j) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Training(format!(
                "class {:?} has no training examples",
                features.class_names()[j]
            )));
        }
        let all: Vec<Vec<f64>> = features.vectors().iter().chain(negatives).cloned().collect();
        let std = Standardizer::fit(&all);
        if !std.constant_dims.is_empty() {
            log::warn!(
                "{} zero-variance feature dimension(s); scale forced to 1",
                std.constant_dims.len()
            );
        }
        let xs: Vec<Vec<f64>> = all.iter().map(|v| std.apply(v)).collect();
        let mut weights = Vec::with_capacity(k);
        let mut biases = Vec::with_capacity(k);
        for class in 0..k {
            let ys: Vec<f64> = features
                .labels()
                .iter()
                .map(|&l| if l == class { 1.0 } else { -1.0 })
                .chain(std::iter::repeat(-1.0).take(negatives.len()))
                .collect();
            let sol = solve_binary(
                &xs,
                &ys,
                config.c,
                derive_seed(config.seed, class as u64),
                config.tolerance,
                config.max_epochs,
            );
            if sol.duality_gap >= config.tolerance {
                log::warn!(
                    "class {:?}: duality gap {:.3e} after {} epochs",
                    features.class_names()[class],
                    sol.duality_gap,
                    sol.epochs
                );
            }
            weights.push(sol.w);
            biases.push(sol.b);
        }
        Ok(SvmModel {
            class_names: features.class_names().to_vec(),
            weights,
            biases,
            c: config.c,
            mean: std.mean,
            scale: std.scale,
            constant_dims: std.constant_dims,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Dimensions found constant during training (empty for loaded models).
    pub fn constant_dims(&self) -> &[usize] {
        &self.constant_dims
    }

    pub fn standardize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dim(format!(
                "feature length {} does not match model dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }

    /// Scores of an already standardized vector.
    pub fn scores_standardized(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::dim(format!(
                "feature length {} does not match model dimension {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| dot(w, z) + b)
            .collect())
    }

    /// `w_k . standardize(x) + b_k` for every class.
    pub fn decision_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.scores_standardized(&self.standardize(x)?)
    }

    /// Softmax over the decision scores.
    pub fn normalized_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.decision_scores(x)?))
    }

    /// Argmax of the decision scores (lowest index on ties) and its normalized score.
    pub fn classify(&self, x: &[f64]) -> Result<Prediction> {
        let scores = self.decision_scores(x)?;
        let (class_index, _) = crate::argmax(&scores);
        let norm = softmax(&scores);
        Ok(Prediction {
            class_index,
            class_name: self.class_names[class_index].clone(),
            score: norm[class_index],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn one_dimensional_symmetric_pair() {
        let fs = FeatureSet::new(names(2), vec![vec![-1.0], vec![1.0]], vec![0, 1]).unwrap();
        let m = SvmModel::train(&fs, &SvmConfig::default()).unwrap();
        assert!(m.weights()[1][0] > 0.0);
        assert!(m.weights()[0][0] < 0.0);
        // boundary of class 1 at x = 0
        assert!(m.decision_scores(&[0.0]).unwrap()[1].abs() < 1e-6);
        assert_eq!(m.classify(&[0.3]).unwrap().class_index, 1);
        assert_eq!(m.classify(&[-0.3]).unwrap().class_index, 0);
    }

    #[test]
    fn single_class_is_rejected() {
        let fs = FeatureSet::new(names(1), vec![vec![0.0]], vec![0]).unwrap();
        assert!(matches!(SvmModel::train(&fs, &SvmConfig::default()), Err(Error::Training(_))));
        let fs = FeatureSet::new(names(3), vec![vec![0.0], vec![1.0]], vec![0, 1]).unwrap();
        assert!(matches!(SvmModel::train(&fs, &SvmConfig::default()), Err(Error::Training(_))));
    }

    #[test]
    fn zero_variance_dims_get_unit_scale() {
        let fs = FeatureSet::new(
            names(2),
            vec![vec![0.0, 3.0], vec![1.0, 3.0], vec![2.0, 3.0]],
            vec![0, 0, 1],
        )
        .unwrap();
        let m = SvmModel::train(&fs, &SvmConfig::default()).unwrap();
        assert_eq!(m.constant_dims(), &[1]);
        assert_eq!(m.scale()[1], 1.0);
    }

    #[test]
    fn zero_weights_score_to_bias() {
        let m = SvmModel::from_parts(
            names(3),
            vec![vec![0.0; 2]; 3],
            vec![0.5, -1.0, 2.0],
            1.0,
            vec![0.0; 2],
            vec![1.0; 2],
        )
        .unwrap();
        assert_eq!(m.decision_scores(&[4.0, -7.0]).unwrap(), vec![0.5, -1.0, 2.0]);
        assert!(m.decision_scores(&[1.0]).is_err());
    }

    #[test]
    fn normalized_score_cases() {
        let m = SvmModel::from_parts(names(4), vec![vec![0.0]; 4], vec![5.0, 0.0, 0.0, 0.0], 1.0, vec![0.0], vec![1.0])
            .unwrap();
        let s = m.normalized_scores(&[1.0]).unwrap();
        // e^5 / (e^5 + 3), evaluated at high precision
        assert!((s[0] - 0.980_186_662_653_490_9).abs() < 1e-15);
        let u = SvmModel::from_parts(names(4), vec![vec![0.0]; 4], vec![1.5; 4], 1.0, vec![0.0], vec![1.0]).unwrap();
        assert_eq!(u.normalized_scores(&[0.0]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn classify_argmax_and_ties() {
        let m = SvmModel::from_parts(names(4), vec![vec![0.0]; 4], vec![0.1, 0.9, 0.2, 0.3], 1.0, vec![0.0], vec![1.0])
            .unwrap();
        assert_eq!(m.classify(&[0.0]).unwrap().class_index, 1);
        let t = SvmModel::from_parts(names(3), vec![vec![0.0]; 3], vec![0.7, 0.1, 0.7], 1.0, vec![0.0], vec![1.0]).unwrap();
        assert_eq!(t.classify(&[0.0]).unwrap().class_index, 0);
    }

    #[test]
    fn scores_are_linear_in_standardized_input() {
        let m = SvmModel::from_parts(
            names(2),
            vec![vec![1.0, -2.0], vec![0.5, 0.25]],
            vec![0.0, 0.0],
            1.0,
            vec![3.0, 1.0],
            vec![2.0, 0.5],
        )
        .unwrap();
        let z = [0.4, -1.1];
        let s1 = m.scores_standardized(&z).unwrap();
        let s3 = m.scores_standardized(&[1.2, -3.3]).unwrap();
        for (a, b) in s1.iter().zip(&s3) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn from_parts_validation() {
        assert!(SvmModel::from_parts(names(2), vec![vec![0.0]; 2], vec![0.0; 2], 1.0, vec![0.0], vec![0.0]).is_err());
        assert!(SvmModel::from_parts(names(2), vec![vec![0.0], vec![0.0, 1.0]], vec![0.0; 2], 1.0, vec![0.0], vec![1.0]).is_err());
    }
}
