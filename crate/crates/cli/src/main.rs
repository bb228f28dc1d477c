//! `sonar-atr` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error.

mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "sonar-atr", version, about = "Sonar target recognition with CNN features and linear SVMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled chip set (SASR files plus manifest.csv).
    GenData(GenData),
    /// Generate a two-target scene and its ground-truth CSV.
    GenScene(GenScene),
    /// Train the reference base network on synthetic targets plus background.
    Pretrain(Pretrain),
    /// Fine-tune a network on a manifest (or train the mini-CNN from scratch).
    FineTune(FineTune),
    /// Write penultimate-layer features of every chip in a manifest to CSV.
    ExtractFeatures(ExtractFeatures),
    /// Train a one-vs-rest linear SVM on a features CSV.
    TrainSvm(TrainSvm),
    /// Classify one chip; prints "class,score".
    Classify(Classify),
    /// Apply Rayleigh speckle at a target PSNR or sigma.
    Corrupt(Corrupt),
    /// Scan a scene with overlapping patches.
    Detect(Detect),
    /// Sweep the detection threshold on a validation scene.
    Calibrate(Calibrate),
    /// Run the multi-trial recognition benchmark.
    Benchmark(Benchmark),
    /// Write every channel of selected layer outputs as PGM images.
    DumpActivations(DumpActivations),
}

#[derive(Args, Debug)]
struct GenData {
    /// Output directory; chips go to <out>/chips, the manifest to <out>/manifest.csv.
    #[arg(long)]
    out: PathBuf,
    /// Chips per target class.
    #[arg(long, default_value_t = 60)]
    per_class: usize,
    /// Chip side length in pixels.
    #[arg(long, default_value_t = 64)]
    chip_size: usize,
    /// Maximum target offset from the chip centre, in pixels.
    #[arg(long)]
    jitter: Option<f64>,
    /// Lower end of the per-chip speckle sigma range.
    #[arg(long)]
    speckle_min: Option<f64>,
    /// Upper end of the per-chip speckle sigma range.
    #[arg(long)]
    speckle_max: Option<f64>,
    /// Clutter blobs per 64x64 area.
    #[arg(long)]
    clutter: Option<f64>,
    /// Pixel-identical templates: no jitter, rotation, scaling, clutter or speckle.
    #[arg(long, conflicts_with_all = ["jitter", "speckle_min", "speckle_max", "clutter"])]
    noise_free: bool,
    /// Also write this many target-free chips labeled "background".
    #[arg(long, default_value_t = 0)]
    background: usize,
    /// Clutter density of the background chips.
    #[arg(long, default_value_t = 3.0)]
    background_clutter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GenScene {
    /// Scene raster (.sasr, or .pgm for an 8-bit copy).
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth CSV (class,x,y,width,height).
    #[arg(long)]
    truth: PathBuf,
    /// Speckle sigma of the scene.
    #[arg(long)]
    speckle: Option<f64>,
    /// Clutter blobs per 64x64 area.
    #[arg(long)]
    clutter: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct Pretrain {
    /// Output model (.satr).
    #[arg(long)]
    out: PathBuf,
    /// Chips per class, background included.
    #[arg(long, default_value_t = 400)]
    per_class: usize,
    #[arg(long)]
    epochs: Option<usize>,
    /// Optional CSV of per-epoch loss.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long, default_value_t = sonar_atr::benchmark::STANDARD_PRETRAIN_SEED)]
    seed: u64,
}

#[derive(Args, Debug)]
struct FineTune {
    /// Training manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Starting network; when omitted a mini-CNN is initialized from --seed.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output model (.satr).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Layers with a lower index are not updated.
    #[arg(long, default_value_t = 0)]
    freeze_depth: usize,
    /// Optional CSV of per-epoch loss.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ExtractFeatures {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Output CSV (label,f0,f1,...).
    #[arg(long)]
    out: PathBuf,
    /// Layer whose output is used; defaults to the penultimate representation.
    #[arg(long)]
    layer: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainSvm {
    /// Features CSV from extract-features.
    #[arg(long)]
    features: PathBuf,
    /// Output SVM (.ssvm).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Rows with this label are used as negatives for every class.
    #[arg(long)]
    background_label: Option<String>,
    #[arg(long, default_value_t = sonar_atr::svm::DEFAULT_TOLERANCE)]
    tolerance: f64,
    #[arg(long, default_value_t = sonar_atr::svm::DEFAULT_MAX_EPOCHS)]
    max_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct Classify {
    /// Chip (.sasr or .pgm) matching the network input size.
    #[arg(long)]
    chip: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    svm: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("level").required(true).args(["psnr", "sigma"])))]
struct Corrupt {
    /// Input image (.sasr or .pgm).
    #[arg(long)]
    input: PathBuf,
    /// Output image; same format as the input.
    #[arg(long)]
    out: PathBuf,
    /// Target PSNR in dB.
    #[arg(long)]
    psnr: Option<f64>,
    /// Rayleigh sigma, used as given.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ScanArgs {
    /// Scene raster (.sasr or .pgm).
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    svm: PathBuf,
    #[arg(long, default_value_t = 64)]
    patch: usize,
    #[arg(long, default_value_t = 32)]
    stride: usize,
}

#[derive(Args, Debug)]
struct Detect {
    #[command(flatten)]
    scan: ScanArgs,
    #[arg(long, default_value_t = sonar_atr::detector::DEFAULT_TAU)]
    tau: f64,
    /// Detections CSV (origin_x,origin_y,size,class,score); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Merge overlapping same-class detections into regions.
    #[arg(long)]
    merge: bool,
    /// Regions CSV when --merge is given; stdout when omitted.
    #[arg(long, requires = "merge")]
    regions: Option<PathBuf>,
    /// PGM overlay with flagged patches brightened.
    #[arg(long)]
    overlay: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct Calibrate {
    #[command(flatten)]
    scan: ScanArgs,
    /// Ground-truth CSV from gen-scene.
    #[arg(long)]
    truth: PathBuf,
    /// Sweep CSV (tau,detections,tp,fp,fn,precision,recall).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct Benchmark {
    /// Dataset manifest; the built-in standard synthetic set when omitted.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Base network for the CNN arms.
    #[arg(long)]
    model: PathBuf,
    /// Results CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    trials: usize,
    #[arg(long, default_value_t = 20)]
    train_per_class: usize,
    #[arg(long, default_value_t = 10)]
    test_per_class: usize,
    /// Comma-separated subset of cnn_svm, raw_svm, finetuned_cnn.
    #[arg(long, value_delimiter = ',', default_value = "cnn_svm,raw_svm,finetuned_cnn")]
    methods: Vec<String>,
    /// SVM regularization for the SVM arms.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Fine-tuning epochs of the finetuned_cnn arm.
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    /// Master seed; trial seeds are derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct DumpActivations {
    #[arg(long)]
    chip: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated layer indices with spatial outputs.
    #[arg(long, value_delimiter = ',', required = true)]
    layers: Vec<usize>,
    /// Directory for layer<L>_ch<C>.pgm files.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl From<sonar_atr::Error> for CliError {
    fn from(e: sonar_atr::Error) -> Self {
        match e {
            sonar_atr::Error::Argument(msg) => CliError::Usage(msg),
            other => CliError::Data(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::GenScene(a) => commands::gen_scene(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::FineTune(a) => commands::fine_tune(a),
        Command::ExtractFeatures(a) => commands::extract_features(a),
        Command::TrainSvm(a) => commands::train_svm(a),
        Command::Classify(a) => commands::classify(a),
        Command::Corrupt(a) => commands::corrupt(a),
        Command::Detect(a) => commands::detect(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::DumpActivations(a) => commands::dump_activations(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
