use std::fs;
use std::path::{Path, PathBuf};

use sonar_atr::benchmark::{self as bench, BenchmarkConfig, Method, PretrainConfig};
use sonar_atr::detector::{self, DetectionReport, PatchGrid};
use sonar_atr::noise::{corrupt_rayleigh, NoiseConfig, NoiseLevel, PixelRange};
use sonar_atr::rng::derive_seed;
use sonar_atr::synthgen::{self, DatasetParams, SceneSpec};
use sonar_atr::weights_io::{
    is_pgm, load_model, load_svm, read_image, save_model, save_svm, write_pgm, write_results_csv, write_sasr, Cell,
    ResultsTable,
};
use sonar_atr::{FineTuneConfig, Network, NetworkSpec, Raster, SvmConfig, SvmModel};

use crate::files::{at, read_features, read_manifest, read_truth, write_features, write_manifest, write_truth};
use crate::{
    Benchmark, Calibrate, Classify, CliError, CliResult, Corrupt, Detect, DumpActivations, ExtractFeatures, FineTune,
    GenData, GenScene, Pretrain, ScanArgs, TrainSvm,
};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Writes a raster as SASR, or as 8-bit PGM scaled to its own peak when the
/// path ends in `.pgm`.
fn write_raster(path: &Path, r: &Raster) -> CliResult<()> {
    if is_pgm(path) {
        write_pgm(path, &r.to_gray(r.max()))?;
    } else {
        write_sasr(path, r)?;
    }
    Ok(())
}

fn write_loss(path: &Path, losses: &[f64]) -> CliResult<()> {
    let mut table = ResultsTable::new(&["epoch", "loss"]);
    for (i, &l) in losses.iter().enumerate() {
        table.push(vec![Cell::Int(i as i64), Cell::Real(l)])?;
    }
    Ok(write_results_csv(path, &table)?)
}

fn write_table_or_print(path: Option<&Path>, table: &ResultsTable) -> CliResult<()> {
    match path {
        Some(p) => write_results_csv(p, table)?,
        None => print!("{}", String::from_utf8_lossy(&table.to_csv()?)),
    }
    Ok(())
}

pub fn gen_data(a: GenData) -> CliResult<()> {
    let mut params = if a.noise_free {
        DatasetParams::noise_free()
    } else {
        DatasetParams::default()
    };
    params.chip_size = a.chip_size;
    if let Some(j) = a.jitter {
        params.jitter_px = j;
    }
    let (lo, hi) = params.speckle_range;
    params.speckle_range = (a.speckle_min.unwrap_or(lo), a.speckle_max.unwrap_or(hi));
    if params.speckle_range.0 > params.speckle_range.1 {
        return Err(usage("--speckle-min must not exceed --speckle-max"));
    }
    if let Some(c) = a.clutter {
        params.clutter_density = c;
    }
    if a.per_class == 0 && a.background == 0 {
        return Err(usage("--per-class and --background are both zero"));
    }

    let chip_dir = a.out.join("chips");
    create_dir(&chip_dir)?;
    let mut rows = Vec::new();
    if a.per_class > 0 {
        let set = synthgen::generate_dataset_with(a.per_class, derive_seed(a.seed, 0), &params)?;
        let mut counters = vec![0usize; set.class_names().len()];
        for chip in set.chips() {
            let name = &set.class_names()[chip.label];
            let rel = PathBuf::from("chips").join(format!("{name}_{:04}.sasr", counters[chip.label]));
            counters[chip.label] += 1;
            write_sasr(a.out.join(&rel), &chip.image)?;
            rows.push((rel, name.clone()));
        }
    }
    let backgrounds = synthgen::generate_backgrounds(
        a.background,
        a.chip_size,
        params.speckle_range,
        a.background_clutter,
        derive_seed(a.seed, 1),
    );
    for (i, image) in backgrounds.iter().enumerate() {
        let rel = PathBuf::from("chips").join(format!("{}_{i:04}.sasr", bench::BACKGROUND_CLASS));
        write_sasr(a.out.join(&rel), image)?;
        rows.push((rel, bench::BACKGROUND_CLASS.to_string()));
    }
    write_manifest(&a.out.join("manifest.csv"), &rows)?;
    println!("wrote {} chips to {}", rows.len(), a.out.display());
    Ok(())
}

pub fn gen_scene(a: GenScene) -> CliResult<()> {
    let mut spec = SceneSpec::standard(a.seed);
    if let Some(s) = a.speckle {
        spec.speckle_sigma = s;
    }
    if let Some(c) = a.clutter {
        spec.clutter_density = c;
    }
    let scene = synthgen::generate_scene(&spec)?;
    write_raster(&a.out, &scene.image)?;
    write_truth(&a.truth, &scene.truth)?;
    Ok(())
}

pub fn pretrain(a: Pretrain) -> CliResult<()> {
    let mut cfg = PretrainConfig {
        per_class: a.per_class,
        seed: a.seed,
        ..PretrainConfig::default()
    };
    if let Some(e) = a.epochs {
        cfg.fine_tune.epochs = e;
    }
    let (net, losses) = bench::pretrain_base(&cfg)?;
    save_model(&a.out, &net)?;
    if let Some(p) = &a.loss_csv {
        write_loss(p, &losses)?;
    }
    if let Some(l) = losses.last() {
        println!("final loss {l:.6}");
    }
    Ok(())
}

pub fn fine_tune(a: FineTune) -> CliResult<()> {
    let set = read_manifest(&a.manifest)?;
    let names = set.class_names().to_vec();
    let mut net = match &a.model {
        Some(p) => at(p, load_model(p))?,
        None => {
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            Network::init(NetworkSpec::mini_cnn(&refs), derive_seed(a.seed, 0))?
        }
    };
    if !names.iter().all(|n| net.class_names().contains(n)) {
        log::info!("replacing head for classes {names:?}");
        net = net.replace_head(&names, derive_seed(a.seed, 1))?;
    }
    let cfg = FineTuneConfig {
        learning_rate: a.lr,
        momentum: a.momentum,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: derive_seed(a.seed, 2),
        freeze_depth: a.freeze_depth,
    };
    let out = net.fine_tune(&set, &cfg)?;
    save_model(&a.out, &out.network)?;
    if let Some(p) = &a.loss_csv {
        write_loss(p, &out.loss_history)?;
    }
    if let Some(l) = out.loss_history.last() {
        println!("final loss {l:.6}");
    }
    Ok(())
}

pub fn extract_features(a: ExtractFeatures) -> CliResult<()> {
    let set = read_manifest(&a.manifest)?;
    let net = at(&a.model, load_model(&a.model))?;
    let layer = a.layer.unwrap_or_else(|| net.feature_layer());
    if layer >= net.num_layers() {
        return Err(usage(format!("--layer {layer} out of range ({} layers)", net.num_layers())));
    }
    let vectors = set
        .chips()
        .iter()
        .map(|c| net.extract_features_at(&c.image.to_tensor(), layer))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<&str> = set.chips().iter().map(|c| set.class_names()[c.label].as_str()).collect();
    write_features(&a.out, &labels, &vectors)
}

pub fn train_svm(a: TrainSvm) -> CliResult<()> {
    let (features, negatives) = read_features(&a.features, a.background_label.as_deref())?;
    let cfg = SvmConfig {
        c: a.c,
        seed: a.seed,
        tolerance: a.tolerance,
        max_epochs: a.max_epochs,
    };
    let model = SvmModel::train_with_negatives(&features, &negatives, &cfg)?;
    save_svm(&a.out, &model)?;
    Ok(())
}

fn load_pair(model: &Path, svm: &Path) -> CliResult<(Network, SvmModel)> {
    let net = at(model, load_model(model))?;
    let svm_model = at(svm, load_svm(svm))?;
    if svm_model.dim() != net.feature_dim() {
        return Err(CliError::Data(format!(
            "{}: SVM expects {} features but {} produces {}",
            svm.display(),
            svm_model.dim(),
            model.display(),
            net.feature_dim()
        )));
    }
    Ok((net, svm_model))
}

pub fn classify(a: Classify) -> CliResult<()> {
    let (net, svm) = load_pair(&a.model, &a.svm)?;
    let chip = at(&a.chip, read_image(&a.chip))?;
    let features = net.extract_features(&chip.to_tensor()).map_err(|e| {
        CliError::Data(format!("{}: {e}", a.chip.display()))
    })?;
    let p = svm.classify(&features)?;
    println!("{},{:.6}", p.class_name, p.score);
    Ok(())
}

pub fn corrupt(a: Corrupt) -> CliResult<()> {
    let level = match (a.psnr, a.sigma) {
        (Some(db), None) => NoiseLevel::TargetPsnr(db),
        (None, Some(s)) => NoiseLevel::Sigma(s),
        _ => return Err(usage("exactly one of --psnr and --sigma is required")),
    };
    let pgm_in = is_pgm(&a.input);
    if pgm_in != is_pgm(&a.out) {
        return Err(usage("--out must use the same format (.pgm or .sasr) as --input"));
    }
    let image = at(&a.input, read_image(&a.input))?;
    let range = if pgm_in { PixelRange::EightBit } else { PixelRange::Real };
    let out = corrupt_rayleigh(&image, &NoiseConfig { level, seed: a.seed }, range)?;
    if pgm_in {
        // 8-bit values pass through unscaled
        write_pgm(&a.out, &out.image.to_gray(255.0))?;
    } else {
        write_sasr(&a.out, &out.image)?;
    }
    println!("sigma {:.6} psnr {:.3} dB", out.sigma, out.achieved_psnr);
    Ok(())
}

fn scan_setup(s: &ScanArgs) -> CliResult<(Raster, Network, SvmModel, PatchGrid)> {
    let scene = at(&s.scene, read_image(&s.scene))?;
    let (net, svm) = load_pair(&s.model, &s.svm)?;
    let grid = detector::build_grid(scene.width(), scene.height(), s.patch, s.stride)?;
    Ok((scene, net, svm, grid))
}

pub fn detect(a: Detect) -> CliResult<()> {
    if !(0.0..=1.0).contains(&a.tau) {
        return Err(usage("--tau must lie in [0, 1]"));
    }
    let (scene, net, svm, grid) = scan_setup(&a.scan)?;
    let mut report: DetectionReport = detector::scan(&scene, &net, &svm, &grid, a.tau)?;
    report.scene_id = a.scan.scene.display().to_string();

    let mut table = ResultsTable::new(&["origin_x", "origin_y", "size", "class", "score"]);
    for d in &report.detections {
        table.push(vec![
            Cell::Int(d.origin_x as i64),
            Cell::Int(d.origin_y as i64),
            Cell::Int(d.patch_size as i64),
            Cell::Text(d.class_name.clone()),
            Cell::Real(d.score),
        ])?;
    }
    write_table_or_print(a.out.as_deref(), &table)?;

    if a.merge {
        let regions = detector::merge_regions(&report);
        let mut rt = ResultsTable::new(&["class", "x", "y", "width", "height", "score", "members"]);
        for r in &regions {
            rt.push(vec![
                Cell::Text(r.class_name.clone()),
                Cell::Int(r.bbox.x as i64),
                Cell::Int(r.bbox.y as i64),
                Cell::Int(r.bbox.width as i64),
                Cell::Int(r.bbox.height as i64),
                Cell::Real(r.score),
                Cell::Int(r.members as i64),
            ])?;
        }
        write_table_or_print(a.regions.as_deref(), &rt)?;
    }
    if let Some(p) = &a.overlay {
        if !is_pgm(p) {
            return Err(usage("--overlay must name a .pgm file"));
        }
        write_pgm(p, &detector::render_overlay(&scene, &report.detections))?;
    }
    log::info!("{} detections at tau {}", report.detections.len(), a.tau);
    Ok(())
}

fn opt_cell(v: Option<f64>) -> Cell {
    v.map_or(Cell::Undefined, Cell::Real)
}

pub fn calibrate(a: Calibrate) -> CliResult<()> {
    let truth = read_truth(&a.truth)?;
    let (scene, net, svm, grid) = scan_setup(&a.scan)?;
    let scores = detector::score_patches(&scene, &net, &svm, &grid)?;
    let points = detector::sweep_thresholds(&scores, &grid, svm.class_names(), &truth, &detector::default_tau_sweep());
    let mut table = ResultsTable::new(&["tau", "detections", "tp", "fp", "fn", "precision", "recall"]);
    for p in &points {
        let e = &p.evaluation;
        table.push(vec![
            Cell::Real(p.tau),
            Cell::Int(p.detections as i64),
            Cell::Int(e.true_positives as i64),
            Cell::Int(e.false_positives as i64),
            Cell::Int(e.false_negatives as i64),
            opt_cell(e.precision),
            opt_cell(e.recall),
        ])?;
    }
    if let Some(p) = &a.out {
        write_results_csv(p, &table)?;
    }
    let tau = detector::choose_tau(&points).expect("sweep is non-empty");
    println!("tau {tau:.2}");
    Ok(())
}

pub fn benchmark(a: Benchmark) -> CliResult<()> {
    let methods = a.methods.iter().map(|m| Method::parse(m.trim())).collect::<Result<Vec<_>, _>>()?;
    let dataset = match &a.manifest {
        Some(p) => read_manifest(p)?,
        None => bench::standard_dataset()?,
    };
    let base = at(&a.model, load_model(&a.model))?;
    let cfg = BenchmarkConfig {
        trials: a.trials,
        train_per_class: a.train_per_class,
        test_per_class: a.test_per_class,
        methods: methods.clone(),
        master_seed: a.seed,
        svm: SvmConfig {
            c: a.c,
            ..SvmConfig::default()
        },
        fine_tune: FineTuneConfig {
            epochs: a.epochs,
            ..BenchmarkConfig::default().fine_tune
        },
    };
    let report = bench::benchmark(&dataset, &base, &cfg)?;
    for t in report.trials.iter().filter(|t| t.method == methods[0]) {
        println!("trial {} seed {}", t.trial, t.seed);
    }
    write_results_csv(&a.out, &report.to_table()?)?;
    for m in methods {
        let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
        println!(
            "{} precision {} recall {}",
            m.as_str(),
            fmt(report.mean_precision(m)),
            fmt(report.mean_recall(m))
        );
    }
    Ok(())
}

pub fn dump_activations(a: DumpActivations) -> CliResult<()> {
    let net = at(&a.model, load_model(&a.model))?;
    let chip = at(&a.chip, read_image(&a.chip))?;
    let images = net.dump_activations(&chip.to_tensor(), &a.layers)?;
    create_dir(&a.out_dir)?;
    for img in &images {
        let path = a.out_dir.join(format!("layer{}_ch{}.pgm", img.layer_index, img.channel));
        write_pgm(&path, &img.image)?;
    }
    println!("wrote {} images to {}", images.len(), a.out_dir.display());
    Ok(())
}
