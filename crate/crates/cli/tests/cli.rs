use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sonar-atr"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn sonar-atr")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small chip set, a briefly trained model and an SVM with background negatives.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let data = root.join("data");
        ok(&["gen-data", "--out", s(&data), "--per-class", "4", "--background", "4", "--seed", "5"]);
        let manifest = data.join("manifest.csv");
        ok(&["fine-tune", "--manifest", s(&manifest), "--out", s(&root.join("m.satr")), "--epochs", "2", "--seed", "1"]);
        ok(&[
            "extract-features",
            "--manifest",
            s(&manifest),
            "--model",
            s(&root.join("m.satr")),
            "--out",
            s(&root.join("f.csv")),
        ]);
        ok(&[
            "train-svm",
            "--features",
            s(&root.join("f.csv")),
            "--out",
            s(&root.join("s.ssvm")),
            "--background-label",
            "background",
        ]);
        ok(&["gen-scene", "--out", s(&root.join("scene.sasr")), "--truth", s(&root.join("truth.csv")), "--seed", "3"]);
        Fixture { _dir: dir, root }
    }

    fn p(&self, name: &str) -> String {
        s(&self.root.join(name)).to_string()
    }
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let out = run(&["classify", "--chip", "x.sasr"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model"));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["corrupt", "--input", "a.sasr", "--out", "b.sasr"]).status.code(), Some(1));
}

#[test]
fn bad_files_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("junk.satr");
    fs::write(&garbage, b"not a model at all").unwrap();
    let out = run(&["classify", "--chip", "x.sasr", "--model", s(&garbage), "--svm", "y.ssvm"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.contains("junk.satr"), "{err}");

    let missing = dir.path().join("absent.csv");
    let out = run(&["train-svm", "--features", s(&missing), "--out", s(&dir.path().join("o.ssvm"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.csv"));
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["gen-data", "--out", s(d), "--per-class", "2", "--background", "1", "--seed", "9"]);
    }
    let manifest = fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert!(manifest.starts_with("path,label\n"));
    assert_eq!(manifest.lines().count(), 1 + 4 * 2 + 1);
    assert!(manifest.contains("chips/background_0000.sasr,background"));
    for line in manifest.lines().skip(1) {
        let rel = line.split(',').next().unwrap();
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn pipeline_classify_detect_and_calibrate() {
    let f = Fixture::new();
    let chip = f.root.join("data/chips/sphere_0000.sasr");
    let line = ok(&["classify", "--chip", s(&chip), "--model", &f.p("m.satr"), "--svm", &f.p("s.ssvm")]);
    let (class, score) = line.trim().split_once(',').expect("class,score");
    assert!(["block", "cone", "cylinder", "sphere"].contains(&class), "{line}");
    let score: f64 = score.parse().unwrap();
    assert!((0.0..=1.0).contains(&score));

    let detect = |out: &str| {
        ok(&[
            "detect", "--scene", &f.p("scene.sasr"), "--model", &f.p("m.satr"), "--svm", &f.p("s.ssvm"), "--tau",
            "0.3", "--out", &f.p(out), "--merge", "--regions", &f.p("regions.csv"), "--overlay", &f.p("o.pgm"),
        ]);
        fs::read_to_string(f.root.join(out)).unwrap()
    };
    let first = detect("d1.csv");
    assert_eq!(first, detect("d2.csv"));
    assert!(first.starts_with("origin_x,origin_y,size,class,score\n"));
    for row in first.lines().skip(1) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[2], "64");
        assert!(cols[4].parse::<f64>().unwrap() >= 0.3);
    }
    assert!(fs::read_to_string(f.root.join("regions.csv")).unwrap().starts_with("class,x,y,width,height"));
    assert!(fs::read(f.root.join("o.pgm")).unwrap().starts_with(b"P5"));

    let tau = ok(&[
        "calibrate", "--scene", &f.p("scene.sasr"), "--truth", &f.p("truth.csv"), "--model", &f.p("m.satr"), "--svm",
        &f.p("s.ssvm"), "--out", &f.p("sweep.csv"),
    ]);
    assert!(tau.starts_with("tau "));
    assert_eq!(fs::read_to_string(f.root.join("sweep.csv")).unwrap().lines().count(), 51);
}

#[test]
fn corrupt_hits_target_psnr_and_is_seeded() {
    let f = Fixture::new();
    let go = |out: &str| {
        let msg = ok(&["corrupt", "--input", &f.p("scene.sasr"), "--out", &f.p(out), "--psnr", "30", "--seed", "4"]);
        let db: f64 = msg.split_whitespace().nth(3).unwrap().parse().unwrap();
        assert!((db - 30.0).abs() <= 0.5, "{msg}");
        fs::read(f.root.join(out)).unwrap()
    };
    assert_eq!(go("n1.sasr"), go("n2.sasr"));
    let out = run(&["corrupt", "--input", &f.p("scene.sasr"), "--out", &f.p("n.pgm"), "--sigma", "0.1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn dump_activations_writes_one_pgm_per_channel() {
    let f = Fixture::new();
    let chip = f.root.join("data/chips/cone_0001.sasr");
    ok(&[
        "dump-activations", "--chip", s(&chip), "--model", &f.p("m.satr"), "--layers", "0,3", "--out-dir", &f.p("act"),
    ]);
    let n = fs::read_dir(f.root.join("act")).unwrap().count();
    assert_eq!(n, 8 + 16);
    assert!(f.root.join("act/layer3_ch15.pgm").exists());
}

#[test]
fn benchmark_writes_results_table() {
    let f = Fixture::new();
    let data = f.root.join("bench");
    ok(&["gen-data", "--out", s(&data), "--per-class", "6", "--seed", "2"]);
    let args = |out: &str| {
        ok(&[
            "benchmark", "--manifest", s(&data.join("manifest.csv")), "--model", &f.p("m.satr"), "--out", &f.p(out),
            "--trials", "2", "--train-per-class", "3", "--test-per-class", "3", "--methods", "cnn_svm,raw_svm",
            "--seed", "11",
        ]);
        fs::read_to_string(f.root.join(out)).unwrap()
    };
    let table = args("r1.csv");
    assert_eq!(table, args("r2.csv"));
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("method,class,precision,recall,trial,tp,fp,fn"));
    // per method: a row per class and a mean row for each trial, then the
    // trial-averaged class rows and overall mean
    assert_eq!(lines.count(), 2 * (2 * (4 + 1) + 4 + 1));
}
