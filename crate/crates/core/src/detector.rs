//! Overlapping-patch target detection.
//!
//! Every patch of a regular grid is pushed through the network, its
//! penultimate features are scored by the one-vs-rest SVM, and the patch is
//! flagged when the largest normalized score reaches the threshold `tau`.
//! Patches whose size differs from the network input are bilinearly resized
//! first. Patch scoring is independent per patch and runs in parallel;
//! results are always reported in grid order (row-major by origin).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::ratio;
use crate::network::Network;
use crate::raster::{GrayImage, Raster};
use crate::benchmark::cnn_features;
use crate::rng::derive_seed;
use crate::svm::{SvmConfig, SvmModel};
use crate::synthgen::{generate_backgrounds, generate_dataset_with, BoundingBox, DatasetParams, GroundTruth};
use crate::tensor::softmax;

pub const DEFAULT_TAU: f64 = 0.9;
pub const DEFAULT_PATCH: usize = 64;
/// Fraction of a ground-truth box a region must cover to count as a hit.
pub const MIN_TRUTH_OVERLAP: f64 = 0.25;
/// Brightening factor for flagged pixels in overlays.
pub const OVERLAY_GAIN: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub width: usize,
    pub height: usize,
    pub patch_size: usize,
    pub stride: usize,
    /// `(x, y)` origins, row-major.
    pub origins: Vec<(usize, usize)>,
}

pub fn build_grid(width: usize, height: usize, patch_size: usize, stride: usize) -> Result<PatchGrid> {
    if patch_size == 0 || patch_size > width || patch_size > height {
        return Err(Error::dim(format!(
            "patch size {patch_size} does not fit a {width}x{height} scene"
        )));
    }
    if stride == 0 || stride > patch_size {
        return Err(Error::arg(format!("stride must be in 1..={patch_size}, got {stride}")));
    }
    let nx = (width - patch_size) / stride + 1;
    let ny = (height - patch_size) / stride + 1;
    let origins = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i * stride, j * stride)))
        .collect();
    Ok(PatchGrid {
        width,
        height,
        patch_size,
        stride,
        origins,
    })
}

impl PatchGrid {
    pub fn patch_box(&self, origin: (usize, usize)) -> BoundingBox {
        BoundingBox {
            x: origin.0,
            y: origin.1,
            width: self.patch_size,
            height: self.patch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchScore {
    pub origin: (usize, usize),
    pub raw_scores: Vec<f64>,
    pub normalized: Vec<f64>,
    pub class_index: usize,
    pub max_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub origin_x: usize,
    pub origin_y: usize,
    pub patch_size: usize,
    pub class_index: usize,
    pub class_name: String,
    /// Normalized score of the winning class; at least the scan threshold.
    pub score: f64,
    pub raw_scores: Vec<f64>,
}

impl Detection {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox {
            x: self.origin_x,
            y: self.origin_y,
            width: self.patch_size,
            height: self.patch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub class_name: String,
    pub bbox: BoundingBox,
    /// Highest member score.
    pub score: f64,
    pub members: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub scene_id: String,
    pub tau: f64,
    pub patch_size: usize,
    pub stride: usize,
    pub detections: Vec<Detection>,
    pub regions: Option<Vec<Region>>,
}

fn patch_input(scene: &Raster, grid: &PatchGrid, origin: (usize, usize), net: &Network) -> Result<crate::tensor::Tensor> {
    let [c, h, w] = net.spec().input_shape;
    if c != 1 {
        return Err(Error::dim(format!("network expects {c} channels; scenes have 1")));
    }
    let patch = scene.crop(origin.0, origin.1, grid.patch_size, grid.patch_size)?;
    Ok(patch.resize_bilinear(w, h)?.to_tensor())
}

/// SVM scores of every patch, in grid order.
pub fn score_patches(scene: &Raster, net: &Network, svm: &SvmModel, grid: &PatchGrid) -> Result<Vec<PatchScore>> {
    if svm.dim() != net.feature_dim() {
        return Err(Error::dim(format!(
            "SVM expects {}-d features, network produces {}",
            svm.dim(),
            net.feature_dim()
        )));
    }
    if scene.width() != grid.width || scene.height() != grid.height {
        return Err(Error::dim(format!(
            "grid built for {}x{}, scene is {}x{}",
            grid.width,
            grid.height,
            scene.width(),
            scene.height()
        )));
    }
    grid.origins
        .par_iter()
        .map(|&origin| {
            let features = net.extract_features(&patch_input(scene, grid, origin, net)?)?;
            let raw_scores = svm.decision_scores(&features)?;
            let normalized = softmax(&raw_scores);
            let (class_index, _) = crate::argmax(&raw_scores);
            Ok(PatchScore {
                origin,
                max_score: normalized[class_index],
                class_index,
                raw_scores,
                normalized,
            })
        })
        .collect()
}

/// Keeps the patches whose maximal normalized score is at least `tau`.
pub fn threshold(scores: &[PatchScore], tau: f64, patch_size: usize, class_names: &[String]) -> Vec<Detection> {
    scores
        .iter()
        .filter(|s| s.max_score >= tau)
        .map(|s| Detection {
            origin_x: s.origin.0,
            origin_y: s.origin.1,
            patch_size,
            class_index: s.class_index,
            class_name: class_names[s.class_index].clone(),
            score: s.max_score,
            raw_scores: s.raw_scores.clone(),
        })
        .collect()
}

pub fn scan(scene: &Raster, net: &Network, svm: &SvmModel, grid: &PatchGrid, tau: f64) -> Result<DetectionReport> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::arg(format!("tau must be positive, got {tau}")));
    }
    let scores = score_patches(scene, net, svm, grid)?;
    Ok(DetectionReport {
        scene_id: String::new(),
        tau,
        patch_size: grid.patch_size,
        stride: grid.stride,
        detections: threshold(&scores, tau, grid.patch_size, svm.class_names()),
        regions: None,
    })
}

/// Unions same-class detections whose patches overlap into connected
/// regions (bounding box of each component, max member score).
pub fn merge_regions(report: &DetectionReport) -> Vec<Region> {
    let seeds = report
        .detections
        .iter()
        .map(|d| Region {
            class_name: d.class_name.clone(),
            bbox: d.bbox(),
            score: d.score,
            members: 1,
        })
        .collect();
    merge_region_list(seeds)
}

/// Repeatedly fuses intersecting same-class regions until none remain, so
/// the result is a fixed point: merging it again changes nothing.
pub fn merge_region_list(mut regions: Vec<Region>) -> Vec<Region> {
    loop {
        let mut merged_any = false;
        let mut out: Vec<Region> = Vec::with_capacity(regions.len());
        for r in regions {
            if let Some(existing) = out
                .iter_mut()
                .find(|e| e.class_name == r.class_name && e.bbox.intersects(&r.bbox))
            {
                existing.bbox = existing.bbox.union(&r.bbox);
                existing.score = existing.score.max(r.score);
                existing.members += r.members;
                merged_any = true;
            } else {
                out.push(r);
            }
        }
        regions = out;
        if !merged_any {
            break;
        }
    }
    regions.sort_by(|a, b| {
        (a.bbox.y, a.bbox.x, &a.class_name)
            .cmp(&(b.bbox.y, b.bbox.x, &b.class_name))
    });
    regions
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEvaluation {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// A region hits a truth of its class when it covers at least
/// `min_overlap` of the truth box. Regions without a hit are false
/// positives; truths without a hit are false negatives.
pub fn evaluate_detection(regions: &[Region], truth: &[GroundTruth], min_overlap: f64) -> DetectionEvaluation {
    let hits = |r: &Region, t: &GroundTruth| {
        r.class_name == t.class.name()
            && r.bbox.intersection_area(&t.bbox) as f64 >= min_overlap * t.bbox.area() as f64
    };
    let tp = regions.iter().filter(|r| truth.iter().any(|t| hits(r, t))).count() as u64;
    let found = truth.iter().filter(|t| regions.iter().any(|r| hits(r, t))).count() as u64;
    let fp = regions.len() as u64 - tp;
    let fn_ = truth.len() as u64 - found;
    DetectionEvaluation {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        precision: ratio(tp, tp + fp),
        recall: ratio(found, found + fn_),
    }
}

/// Scene scaled to 8 bits by its peak, with pixels under any flagged patch
/// brightened by [`OVERLAY_GAIN`] and clipped.
pub fn render_overlay(scene: &Raster, detections: &[Detection]) -> GrayImage {
    let mut gray = scene.to_gray(scene.max());
    let w = scene.width();
    let mut flagged = vec![false; gray.pixels.len()];
    for d in detections {
        for y in d.origin_y..(d.origin_y + d.patch_size).min(scene.height()) {
            flagged[y * w + d.origin_x..y * w + (d.origin_x + d.patch_size).min(w)].fill(true);
        }
    }
    for (p, f) in gray.pixels.iter_mut().zip(flagged) {
        if f {
            *p = (f64::from(*p) * OVERLAY_GAIN).round().min(255.0) as u8;
        }
    }
    gray
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationPoint {
    pub tau: f64,
    pub detections: usize,
    pub evaluation: DetectionEvaluation,
}

/// Thresholds `0.50, 0.51, ..., 0.99`.
pub fn default_tau_sweep() -> Vec<f64> {
    (50..100).map(|i| i as f64 / 100.0).collect()
}

/// Evaluates each threshold on pre-computed patch scores.
pub fn sweep_thresholds(
    scores: &[PatchScore],
    grid: &PatchGrid,
    class_names: &[String],
    truth: &[GroundTruth],
    taus: &[f64],
) -> Vec<CalibrationPoint> {
    taus.iter()
        .map(|&tau| {
            let detections = threshold(scores, tau, grid.patch_size, class_names);
            let report = DetectionReport {
                scene_id: String::new(),
                tau,
                patch_size: grid.patch_size,
                stride: grid.stride,
                detections,
                regions: None,
            };
            let regions = merge_regions(&report);
            CalibrationPoint {
                tau,
                detections: report.detections.len(),
                evaluation: evaluate_detection(&regions, truth, MIN_TRUTH_OVERLAP),
            }
        })
        .collect()
}

/// Best recall first, then best precision; among equals the lowest tau,
/// which leans towards fewer missed targets.
pub fn choose_tau(points: &[CalibrationPoint]) -> Option<f64> {
    let key = |p: &CalibrationPoint| {
        (
            p.evaluation.recall.unwrap_or(0.0),
            p.evaluation.precision.unwrap_or(0.0),
        )
    };
    let mut best: Option<&CalibrationPoint> = None;
    for p in points {
        match best {
            None => best = Some(p),
            Some(b) => {
                let (kp, kb) = (key(p), key(b));
                if kp > kb || (kp == kb && p.tau < b.tau) {
                    best = Some(p);
                }
            }
        }
    }
    best.map(|p| p.tau)
}

/// Training recipe for the detection SVM. Chips are jittered by up to
/// `chips.jitter_px`, which should cover half the scan stride, and
/// target-free chips are added as negatives to every one-vs-rest problem so
/// that plain seabed scores low for all classes.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorTraining {
    pub per_class: usize,
    pub chips: DatasetParams,
    pub negatives: usize,
    pub negative_clutter: f64,
    pub svm: SvmConfig,
    pub seed: u64,
}

impl Default for DetectorTraining {
    fn default() -> Self {
        DetectorTraining {
            per_class: 150,
            chips: DatasetParams {
                jitter_px: 14.0,
                speckle_range: (0.15, 0.8),
                ..DatasetParams::default()
            },
            negatives: 1000,
            negative_clutter: 3.0,
            svm: SvmConfig {
                c: 100.0,
                ..SvmConfig::default()
            },
            seed: 1,
        }
    }
}

pub fn train_detection_svm(net: &Network, config: &DetectorTraining) -> Result<SvmModel> {
    let chips = generate_dataset_with(config.per_class, derive_seed(config.seed, 0), &config.chips)?;
    let features = cnn_features(net, &chips)?;
    let negatives = generate_backgrounds(
        config.negatives,
        config.chips.chip_size,
        config.chips.speckle_range,
        config.negative_clutter,
        derive_seed(config.seed, 1),
    )
    .par_iter()
    .map(|bg| net.extract_features(&bg.to_tensor()))
    .collect::<Result<Vec<_>>>()?;
    SvmModel::train_with_negatives(
        &features,
        &negatives,
        &SvmConfig {
            seed: derive_seed(config.seed, 2),
            ..config.svm.clone()
        },
    )
}
