//! Labeled image chips and seeded train/test partitioning.

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledChip {
    pub image: Raster,
    /// Index into the owning set's `class_names`.
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledChipSet {
    class_names: Vec<String>,
    chips: Vec<LabeledChip>,
}

/// Disjoint index lists into a [`LabeledChipSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl LabeledChipSet {
    pub fn new(class_names: Vec<String>, chips: Vec<LabeledChip>) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::arg("chip set needs at least one class"));
        }
        if let Some(c) = chips.iter().find(|c| c.label >= class_names.len()) {
            return Err(Error::arg(format!(
                "label {} out of range for {} classes",
                c.label,
                class_names.len()
            )));
        }
        if let Some(first) = chips.first() {
            let (w, h) = (first.image.width(), first.image.height());
            if chips.iter().any(|c| c.image.width() != w || c.image.height() != h) {
                return Err(Error::dim("all chips in a set must share one size"));
            }
        }
        Ok(LabeledChipSet { class_names, chips })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn chips(&self) -> &[LabeledChip] {
        &self.chips
    }

    pub fn len(&self) -> usize {
        self.chips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chips.is_empty()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for c in &self.chips {
            counts[c.label] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledChipSet {
        LabeledChipSet {
            class_names: self.class_names.clone(),
            chips: indices.iter().map(|&i| self.chips[i].clone()).collect(),
        }
    }

    /// Per-class seeded shuffle; the first `train_per_class` indices of each
    /// class go to train, the next `test_per_class` to test.
    pub fn split(&self, train_per_class: usize, test_per_class: usize, seed: u64) -> Result<Split> {
        let mut rng = SplitMix64::new(seed);
        let mut split = Split {
            train: Vec::new(),
            test: Vec::new(),
        };
        for (label, name) in self.class_names.iter().enumerate() {
            let mut idx: Vec<usize> = (0..self.chips.len())
                .filter(|&i| self.chips[i].label == label)
                .collect();
            if idx.len() < train_per_class + test_per_class {
                return Err(Error::TrainingData(format!(
                    "class {name:?} has {} chips, need {train_per_class} train + {test_per_class} test",
                    idx.len()
                )));
            }
            rng.shuffle(&mut idx);
            split.train.extend_from_slice(&idx[..train_per_class]);
            split
                .test
                .extend_from_slice(&idx[train_per_class..train_per_class + test_per_class]);
        }
        split.train.sort_unstable();
        split.test.sort_unstable();
        Ok(split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(per_class: usize) -> LabeledChipSet {
        let chips = (0..3 * per_class)
            .map(|i| LabeledChip {
                image: Raster::filled(2, 2, i as f64).unwrap(),
                label: i % 3,
            })
            .collect();
        LabeledChipSet::new(vec!["a".into(), "b".into(), "c".into()], chips).unwrap()
    }

    #[test]
    fn split_is_disjoint_balanced_and_seeded() {
        let set = toy(30);
        let s = set.split(20, 10, 5).unwrap();
        assert_eq!(s.train.len(), 60);
        assert_eq!(s.test.len(), 30);
        assert!(s.train.iter().all(|i| !s.test.contains(i)));
        assert_eq!(set.subset(&s.test).class_counts(), vec![10, 10, 10]);
        assert_eq!(s, set.split(20, 10, 5).unwrap());
        assert_ne!(s, set.split(20, 10, 6).unwrap());
    }

    #[test]
    fn split_rejects_small_classes() {
        assert!(matches!(toy(5).split(4, 2, 0), Err(Error::TrainingData(_))));
    }

    #[test]
    fn rejects_bad_labels_and_mixed_sizes() {
        let bad = LabeledChip {
            image: Raster::filled(2, 2, 0.0).unwrap(),
            label: 3,
        };
        assert!(LabeledChipSet::new(vec!["a".into()], vec![bad]).is_err());
        let a = LabeledChip {
            image: Raster::filled(2, 2, 0.0).unwrap(),
            label: 0,
        };
        let b = LabeledChip {
            image: Raster::filled(3, 2, 0.0).unwrap(),
            label: 0,
        };
        assert!(LabeledChipSet::new(vec!["a".into()], vec![a, b]).is_err());
    }
}
