//! Sonar automatic target recognition: a small CNN used as a feature
//! extractor, a one-vs-rest linear SVM over its penultimate features, an
//! overlapping-patch detector, Rayleigh speckle corruption and a synthetic
//! sonar chip/scene generator.

pub mod benchmark;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod metrics;
pub mod network;
pub mod noise;
pub mod raster;
pub mod rng;
pub mod svm;
pub mod synthgen;
pub mod tensor;
pub mod weights_io;

pub use dataset::{LabeledChip, LabeledChipSet};
pub use error::{Error, Result};
pub use network::{FineTuneConfig, Network, NetworkSpec};
pub use raster::{GrayImage, Raster};
pub use svm::{FeatureSet, SvmConfig, SvmModel};
pub use tensor::Tensor;

/// Index and value of the largest element; the lowest index wins ties.
///
/// # Panics
/// On an empty slice.
pub fn argmax(values: &[f64]) -> (usize, f64) {
    assert!(!values.is_empty(), "argmax of empty slice");
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}
