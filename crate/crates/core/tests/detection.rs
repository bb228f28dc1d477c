use sonar_atr::benchmark::cnn_features;
use sonar_atr::detector::*;
use sonar_atr::network::{Network, NetworkSpec};
use sonar_atr::svm::{SvmConfig, SvmModel};
use sonar_atr::synthgen::{class_names, generate_dataset, generate_scene, BoundingBox, SceneSpec};

/// Untrained network plus an SVM fitted on its features: enough to exercise
/// the scanning machinery without a long training run.
fn quick_pipeline() -> (Network, SvmModel) {
    let names = class_names();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let net = Network::init(NetworkSpec::mini_cnn(&refs), 5).unwrap();
    let data = generate_dataset(6, 12).unwrap();
    let svm = SvmModel::train(&cnn_features(&net, &data).unwrap(), &SvmConfig::default()).unwrap();
    (net, svm)
}

#[test]
fn grid_covers_the_standard_scene() {
    let grid = build_grid(320, 192, 64, 32).unwrap();
    assert_eq!(grid.origins.len(), 9 * 5);
    assert_eq!(grid.origins[0], (0, 0));
    assert_eq!(*grid.origins.last().unwrap(), (256, 128));
    assert!(build_grid(320, 192, 64, 0).is_err());
    assert!(build_grid(32, 192, 64, 32).is_err());
}

#[test]
fn scan_thresholds_are_nested_and_deterministic() {
    let (net, svm) = quick_pipeline();
    let scene = generate_scene(&SceneSpec::standard(4)).unwrap();
    let grid = build_grid(scene.image.width(), scene.image.height(), 64, 32).unwrap();
    let scores = score_patches(&scene.image, &net, &svm, &grid).unwrap();
    assert_eq!(scores.len(), grid.origins.len());
    for s in &scores {
        assert!((s.normalized.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(s.max_score, s.normalized[s.class_index]);
    }
    let mut previous: Option<Vec<Detection>> = None;
    for tau in [0.95, 0.9, 0.6, 0.3, 0.25] {
        let dets = threshold(&scores, tau, 64, svm.class_names());
        assert!(dets.iter().all(|d| d.score >= tau));
        if let Some(stricter) = &previous {
            assert!(stricter.iter().all(|d| dets.contains(d)));
        }
        previous = Some(dets);
    }
    let a = scan(&scene.image, &net, &svm, &grid, 0.3).unwrap();
    let b = scan(&scene.image, &net, &svm, &grid, 0.3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn larger_patches_are_resized() {
    let (net, svm) = quick_pipeline();
    let scene = generate_scene(&SceneSpec::standard(4)).unwrap();
    let grid = build_grid(scene.image.width(), scene.image.height(), 96, 48).unwrap();
    let report = scan(&scene.image, &net, &svm, &grid, 0.25).unwrap();
    assert!(report.detections.iter().all(|d| d.patch_size == 96));
}

#[test]
fn merged_regions_are_a_fixed_point() {
    let det = |x, y, class: &str| Detection {
        origin_x: x,
        origin_y: y,
        patch_size: 64,
        class_index: 0,
        class_name: class.into(),
        score: 0.95,
        raw_scores: vec![],
    };
    let report = DetectionReport {
        scene_id: "s".into(),
        tau: 0.9,
        patch_size: 64,
        stride: 32,
        detections: vec![det(0, 0, "block"), det(32, 0, "block"), det(64, 0, "block"), det(200, 100, "block"), det(32, 0, "cone")],
        regions: None,
    };
    let regions = merge_regions(&report);
    assert_eq!(regions.len(), 3);
    let block = regions.iter().find(|r| r.class_name == "block" && r.members == 3).unwrap();
    assert_eq!(block.bbox, BoundingBox { x: 0, y: 0, width: 128, height: 64 });
    assert_eq!(merge_region_list(regions.clone()), regions);
}

#[test]
fn calibration_prefers_recall_then_precision() {
    let (net, svm) = quick_pipeline();
    let scene = generate_scene(&SceneSpec::standard(4)).unwrap();
    let grid = build_grid(scene.image.width(), scene.image.height(), 64, 32).unwrap();
    let scores = score_patches(&scene.image, &net, &svm, &grid).unwrap();
    let points = sweep_thresholds(&scores, &grid, svm.class_names(), &scene.truth, &default_tau_sweep());
    assert_eq!(points.len(), 50);
    for w in points.windows(2) {
        assert!(w[1].detections <= w[0].detections);
    }
    let tau = choose_tau(&points).unwrap();
    let chosen = points.iter().find(|p| p.tau == tau).unwrap();
    let best_recall = points.iter().map(|p| p.evaluation.recall.unwrap_or(0.0)).fold(0.0, f64::max);
    assert_eq!(chosen.evaluation.recall.unwrap_or(0.0), best_recall);
}

#[test]
fn overlay_matches_scene_size() {
    let scene = generate_scene(&SceneSpec::standard(4)).unwrap();
    let d = Detection {
        origin_x: 10,
        origin_y: 10,
        patch_size: 64,
        class_index: 0,
        class_name: "block".into(),
        score: 0.99,
        raw_scores: vec![],
    };
    let plain = scene.image.to_gray(scene.image.max());
    let img = render_overlay(&scene.image, &[d]);
    assert_eq!((img.width, img.height), (320, 192));
    let w = 320;
    assert!(img.pixels[20 * w + 20] >= plain.pixels[20 * w + 20]);
    assert_eq!(img.pixels[150 * w + 300], plain.pixels[150 * w + 300]);
}
